"""Targeted adversarial attacks on time-series forecasters."""

__version__ = "0.1.0"

from .attacks import AttackConfig, AttackResult, attack_dataset, fgsm, mapgd_tsf, pgd
from .data import WindowedDataset, load_csv, prepare_windows, synth_series
from .evaluation import grouped_rmse, ks_statistic, ks_pvalue, ks_table
from .models import ForecastModel, ModelConfig, TrainConfig, train
from .targets import AttackTargetSpec, build_target

__all__ = [
    "AttackConfig", "AttackResult", "AttackTargetSpec", "ForecastModel", "ModelConfig",
    "TrainConfig", "WindowedDataset", "attack_dataset", "build_target", "fgsm", "grouped_rmse",
    "ks_pvalue", "ks_statistic", "ks_table", "load_csv", "mapgd_tsf", "pgd", "prepare_windows",
    "synth_series", "train",
]
