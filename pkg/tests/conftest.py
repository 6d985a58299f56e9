import numpy as np
import pytest

from onebit_irs.channel_model import SystemConfig, build_dictionaries, generate_channels
from onebit_irs.measurement import build_pilot_frame, observe
from onebit_irs.numerics import RandomSource


def small_config(**overrides) -> SystemConfig:
    base = dict(M=4, Nx=1, Ny=2, K=2, Q=8, Gr=4, Gtx=1, Gty=2, LG=1, Lr=1, snr_db=10.0)
    base.update(overrides)
    return SystemConfig(**base)


def scenario(cfg: SystemConfig, seed: int = 0, phase_mode: str = "random", noise_var=None):
    rng = RandomSource(seed)
    dicts = build_dictionaries(cfg)
    real = generate_channels(cfg, rng)
    frame = build_pilot_frame(cfg, dicts, rng, phase_mode)
    obs = observe(real, frame, cfg, rng, noise_var=noise_var)
    return dicts, real, frame, obs


def random_hpd(rng: np.random.Generator, n: int, cond: float = 10.0) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    w = np.geomspace(1.0, cond, n)
    return (q * w) @ q.conj().T


def crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
