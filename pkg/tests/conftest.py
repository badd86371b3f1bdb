import numpy as np
import pytest

from tsattack.data import prepare_windows, synth_series
from tsattack.models import ForecastModel, ModelConfig, TrainConfig, train

# trained on AR(1) data; shared by attack, evaluation and acceptance tests
AR1_SETUP = dict(kind="ar1", length=1200, noise=1.0, seed=0)
CI_TRAIN = TrainConfig(epochs=50, learning_rate=1e-2, patience=10)


@pytest.fixture(scope="session")
def ar1_model():
    series = synth_series(**AR1_SETUP)
    tr, te, _ = prepare_windows(series, window=5, train_fraction=0.8)
    model, log = train(ModelConfig("gru", window=5, num_features=1, hidden=32, seed=0), tr,
                       CI_TRAIN)
    return model, tr, te, log


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_model(kind: str, seed: int, window: int = 5, features: int = 1, hidden: int = 6
                 ) -> ForecastModel:
    return ForecastModel.initialize(ModelConfig(kind, window, features, hidden, seed))


def linear_model(weights, bias: float = 0.0) -> ForecastModel:
    w = np.asarray(weights, dtype=np.float64)
    return ForecastModel(ModelConfig("linear_ar", window=len(w), num_features=1),
                         {"weight": w, "bias": np.float64(bias)})


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` over every coordinate of ``x``."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
