import json
from pathlib import Path

import numpy as np
import pytest

from tsattack import cli
from tsattack.attacks import AttackResult, check_invariants
from tsattack.config import load_config, parse_config
from tsattack.data import load_dataset
from tsattack.errors import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, ConfigError
from tsattack.io import read_csv_rows, read_json
from tsattack.models import load_checkpoint

from test_data import write_power_file

REPO = Path(__file__).resolve().parents[1]

SMALL = """
[run]
seed = 3
output = out

[dataset]
source = synthetic
synthetic_kind = ar1
length = {length}
window = 5
train_fraction = 0.8

[model]
kind = {kind}
hidden = 8
epochs = 5
learning_rate = 0.01

[attack]
epsilons = {eps}
control = {control}
tau_quantile = 0.7
tta_window = 5, 10
n_iter = 8

[eval]
group_size = 5
bins = 6
table_epsilon = 0.1
"""


def small_config(tmp_path, length=200, kind="linear_ar", eps="0.01, 0.1", control="yes"):
    path = tmp_path / "run.ini"
    path.write_text(SMALL.format(length=length, kind=kind, eps=eps, control=control))
    return path


def run(cmd, cfg, *extra):
    return cli.main([cmd, "--config", str(cfg), *extra])


def test_config_defaults_and_overrides(tmp_path):
    path = small_config(tmp_path)
    cfg = load_config(path)
    assert cfg.seed == 3 and cfg.output == tmp_path / "out"
    assert cfg.attack.all_epsilons == (0.0, 0.01, 0.1)
    assert cfg.attack.methods == ("fgsm", "pgd", "mapgd")
    assert len(cfg.attack.targets) == 6
    cfg2 = load_config(path, seed=9, output=tmp_path / "x")
    assert cfg2.seed == 9 and cfg2.model.seed == 9 and cfg2.output == tmp_path / "x"


@pytest.mark.parametrize("text,field", [
    ("[bogus]\nx = 1\n", "bogus"),
    ("[dataset]\nsource = csv\npath = nowhere.csv\n", "dataset.path"),
    ("[dataset]\nsource = ftp\n", "dataset.source"),
    ("[dataset]\nwindow = five\n", "dataset.window"),
    ("[attack]\nepsilons =\n", "attack.epsilons"),
    ("[attack]\ntargets = dta-sideways\n", "attack.targets"),
    ("[attack]\nmethods = cw\n", "attack.methods"),
    ("[attack]\ntau = nan\n", "attack.tau"),
    ("[attack]\ntta_window = 4\n", "attack.tta_window"),
    ("[attack]\ncontrol = maybe\n", "attack.control"),
    ("[eval]\nreference = median\n", "eval.reference"),
])
def test_config_errors_name_the_field(text, field, tmp_path):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(text, tmp_path)


def test_shipped_configs_parse(tmp_path):
    cfg = load_config(REPO / "configs" / "synthetic-ci.ini")
    assert cfg.attack.control and cfg.attack.tau_quantile == 0.7
    for name, preset_cols in (("power-style.ini", 7), ("google-style.ini", 5)):
        text = (REPO / "configs" / name).read_text()
        data = tmp_path / "data"
        data.mkdir(exist_ok=True)
        (tmp_path / "configs").mkdir(exist_ok=True)
        for f in ("household_power_consumption.txt", "google_stock.csv"):
            (data / f).touch()
        cfg = parse_config(text, tmp_path / "configs")
        assert len(cfg.dataset.schema.feature_columns) == preset_cols
        assert cfg.attack.all_epsilons == (0.01, 0.1, 0.5, 1.0, 1.5)


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["prepare", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,a\n2020-01-01,1\n")
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[dataset]\nsource = csv\npath = {bad}\nfeature_columns = a, b\n"
                   "target_column = a\n")
    assert run("prepare", cfg) == EXIT_DATA
    assert "b" in capsys.readouterr().err.split("missing required column(s):")[1]
    assert run("train", small_config(tmp_path), "--out", str(tmp_path / "empty")) == EXIT_DATA


def test_power_style_prepare_resamples(tmp_path):
    data = write_power_file(tmp_path / "power.txt")
    cfg = tmp_path / "p.ini"
    cfg.write_text(f"[run]\noutput = out\n[dataset]\nsource = csv\npath = {data}\n"
                   "preset = household_power\nresample = 1h\nwindow = 2\ntrain_fraction = 0.5\n")
    assert run("prepare", cfg) == 0
    summary = read_json(tmp_path / "out" / "dataset" / "summary.json")
    assert summary["loaded_rows"] == 600 and summary["rows"] == 10
    assert summary["train_samples"] + summary["test_samples"] == 8


def test_pipeline_outputs_round_trip(tmp_path):
    cfg = small_config(tmp_path)
    for cmd in ("prepare", "train", "attack", "evaluate", "report"):
        assert run(cmd, cfg) == 0, cmd
    out = tmp_path / "out"
    te = load_dataset(out / "dataset" / "test.json")
    load_checkpoint(out / "model" / "checkpoint.json")
    log = read_csv_rows(out / "model" / "train_log.csv")
    assert list(log[0]) == ["epoch", "train_rmse", "val_rmse", "early_stop"]

    results = sorted((out / "attacks").glob("*.json"))
    assert len(results) == 7 * 3 * 3
    for f in results:
        res = AttackResult.load(f)
        assert check_invariants(res) == []
        assert res.untargeted == f.name.startswith("untargeted")
        assert len(read_csv_rows(f.with_name(f.name[:-5] + ".csv"))) == len(te)
        assert json.loads(f.read_text())["schema_version"] == 1

    rows = read_csv_rows(out / "eval" / "ks_eps0.1.csv")
    assert len(rows) == 6 and len(rows[0]) == 10
    for row in rows:
        assert all(0.0 <= float(v) <= 1.0 for k, v in row.items() if k != "attack")
    control = read_csv_rows(out / "eval" / "ks_eps0.0.csv")
    assert all(float(r[f"{m}_O-T"]) == 0.0 for r in control for m in ("fgsm", "pgd", "mapgd"))

    hist = read_csv_rows(out / "eval" / "histograms" / "ata__pgd__eps0.1.csv")
    assert list(hist[0]) == list(cli.HIST_HEADER) and len(hist) == 6
    n_groups = len(te) // 5
    for key in ("count_original", "count_targeted", "count_untargeted"):
        assert sum(int(r[key]) for r in hist) == n_groups
    sweep = read_csv_rows(out / "eval" / "sweep.csv")
    assert len(sweep) == 7 * 3 * 3
    assert read_json(out / "eval" / "sweep.json")["kind"] == "tsattack.sweep"
    assert len(read_json(out / "eval" / "ks.json")["tables"]) == 3

    report = (out / "report.md").read_text()
    assert "seed: 3" in report and "[attack]" in report
    assert report.count("targeted statistically closer than untargeted:") == 18
    assert "mAPGD step-size halvings" in report and "- none" in report


def test_full_attack_matrix_file_count(tmp_path):
    cfg = small_config(tmp_path, length=120, eps="0.01, 0.1, 0.5, 1.0, 1.5", control="no")
    for cmd in ("prepare", "train", "attack"):
        assert run(cmd, cfg) == 0
    files = list((tmp_path / "out" / "attacks").glob("*.json"))
    targeted = [f for f in files if not f.name.startswith("untargeted")]
    assert len(targeted) == 90
    assert len(files) - len(targeted) == 15


def test_window_failures_give_numeric_exit(tmp_path, monkeypatch, capsys):
    cfg = small_config(tmp_path, length=120, eps="0.1", control="no")
    for cmd in ("prepare", "train"):
        assert run(cmd, cfg) == 0
    real = cli.attack_dataset

    def failing(*args, **kwargs):
        res = real(*args, **kwargs)
        res.errors.append({"window": 0, "iteration": 2, "error": "non-finite gradient"})
        return res

    monkeypatch.setattr(cli, "attack_dataset", failing)
    assert run("attack", cfg) == EXIT_NUMERIC
    assert "window 0 failed" in capsys.readouterr().err
    assert len(list((tmp_path / "out" / "attacks").glob("*.json"))) == 21


def test_evaluate_lists_missing_results(tmp_path, capsys):
    cfg = small_config(tmp_path, length=120, eps="0.1", control="no")
    for cmd in ("prepare", "train", "attack"):
        assert run(cmd, cfg) == 0
    (tmp_path / "out" / "attacks" / "ata__pgd__eps0.1.json").unlink()
    assert run("evaluate", cfg) == EXIT_DATA
    assert "ata__pgd__eps0.1.json" in capsys.readouterr().err


def test_seed_flag_changes_data_and_training(tmp_path):
    cfg = small_config(tmp_path, length=120)
    assert run("prepare", cfg, "--out", str(tmp_path / "a")) == 0
    assert run("prepare", cfg, "--out", str(tmp_path / "b"), "--seed", "4") == 0
    a = load_dataset(tmp_path / "a" / "dataset" / "train.json")
    b = load_dataset(tmp_path / "b" / "dataset" / "train.json")
    assert not np.array_equal(a.X, b.X)
