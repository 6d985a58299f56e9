"""Fast self-checks against independent reference computations."""

from __future__ import annotations

import sys
from typing import Callable

import numpy as np
from scipy import integrate, stats

from ..bsbl import BsblControls, bsbl_covariance, bsbl_estimate
from ..channel_model import SystemConfig, build_dictionaries, generate_channels
from ..fast_inverse import assemble_structured_E, diag_blk_inv
from ..measurement import build_pilot_frame, observe
from ..numerics import RandomSource, gauss_ratio
from ..sbl import SblControls, e_step_covariance, posterior_y_mean, sbl_estimate

_SMALL = dict(M=4, Nx=1, Ny=2, K=2, Q=8, Gr=4, Gtx=1, Gty=2, LG=1, Lr=1)


def _truncated_mean(mean: float, sd: float, sign: float) -> float:
    # E[x | sign(x) = sign] for x ~ N(mean, sd^2), by quadrature
    lo, hi = (0.0, np.inf) if sign > 0 else (-np.inf, 0.0)
    pdf = stats.norm(mean, sd).pdf
    num = integrate.quad(lambda t: t * pdf(t), lo, hi, epsabs=1e-13, epsrel=1e-12)[0]
    den = integrate.quad(pdf, lo, hi, epsabs=1e-15, epsrel=1e-12)[0]
    return num / den


def check_gauss_ratio() -> float:
    x = np.linspace(-8.0, 8.0, 33)
    ref = stats.norm.pdf(x) / stats.norm.cdf(x)
    return float(np.max(np.abs(gauss_ratio(x) - ref) / ref))


def check_truncated_mean() -> float:
    err = 0.0
    for sigma2 in (0.1, 1.0, 10.0):
        sd = np.sqrt(sigma2 / 2.0)
        for zr in (-2.0, 0.0, 1.5):
            for r in (1 + 1j, -1 - 1j):
                got = posterior_y_mean(np.array([r]), np.array([zr + 0.5j]), sigma2)[0]
                ref = _truncated_mean(zr, sd, r.real) + 1j * _truncated_mean(0.5, sd, r.imag)
                err = max(err, abs(got - ref))
    return err


def check_sbl_routes() -> float:
    rng = np.random.default_rng(1)
    xi = rng.standard_normal((12, 20)) + 1j * rng.standard_normal((12, 20))
    alpha = rng.uniform(0.1, 2.0, 20)
    a = e_step_covariance(xi, alpha, 0.5, route="direct")
    b = e_step_covariance(xi, alpha, 0.5, route="lemma")
    return float(np.linalg.norm(a - b) / np.linalg.norm(a))


def check_bsbl_routes() -> float:
    rng = np.random.default_rng(2)
    kn = 3
    ups = rng.standard_normal((10, 4 * kn)) + 1j * rng.standard_normal((10, 4 * kn))
    gamma = rng.uniform(0.1, 2.0, 4)
    A = rng.standard_normal((kn, kn)) + 1j * rng.standard_normal((kn, kn))
    B = A @ A.conj().T + np.eye(kn)
    a = bsbl_covariance(ups, gamma, B, 0.5, route="direct")
    b = bsbl_covariance(ups, gamma, B, 0.5, route="lemma")
    return float(np.linalg.norm(a - b) / np.linalg.norm(a))


def check_fast_inverse() -> float:
    cfg = SystemConfig(M=4, Nx=1, Ny=4, K=3, Q=12, Gr=4, Gtx=1, Gty=4, LG=1, Lr=1)
    rng = RandomSource(3)
    frame = build_pilot_frame(cfg, build_dictionaries(cfg), rng, "structured")
    alpha = rng.uniform(0.5, 2.0, cfg.K * cfg.M * cfg.N)
    E = assemble_structured_E(alpha, frame, 0.7, cfg)
    dense = np.diag(1.0 / alpha) + frame.xi.conj().T @ frame.xi / 0.7
    assembly = np.linalg.norm(E.to_dense() - dense) / np.linalg.norm(dense)
    ident = np.linalg.norm(dense @ diag_blk_inv(E).to_dense() - np.eye(dense.shape[0]))
    return float(max(assembly, ident))


def check_degenerate_bsbl() -> float:
    cfg = SystemConfig(M=4, Nx=1, Ny=1, K=1, Q=6, Gr=4, Gtx=1, Gty=1, LG=1, Lr=1, snr_db=5.0)
    rng = RandomSource(4)
    dicts = build_dictionaries(cfg)
    real = generate_channels(cfg, rng)
    frame = build_pilot_frame(cfg, dicts, rng)
    obs = observe(real, frame, cfg, rng)
    a = sbl_estimate(frame.xi, obs.r, obs.noise_var, SblControls(max_em_iters=20))
    b = bsbl_estimate(frame.upsilon, obs.r_bar, obs.noise_var, 1, BsblControls(max_em_iters=20))
    # u_r kron delta^T and phi^T kron u_r coincide up to the measurement ordering
    perm = np.arange(cfg.Q * cfg.M).reshape(cfg.Q, cfg.M).T.ravel()
    assert np.allclose(frame.upsilon, frame.xi[perm])
    return float(np.max(np.abs(a.h - b.h)) / max(np.max(np.abs(a.h)), 1e-300))


def check_forward_model() -> float:
    cfg = SystemConfig(**_SMALL)
    rng = RandomSource(5)
    dicts = build_dictionaries(cfg)
    real = generate_channels(cfg, rng)
    frame = build_pilot_frame(cfg, dicts, rng)
    obs = observe(real, frame, cfg, rng, noise_var=0.0)
    h = np.concatenate([Ht.ravel(order="F") for Ht in real.H_tilde])
    return float(np.linalg.norm(frame.xi @ h - obs.y) / np.linalg.norm(obs.y))


CHECKS: dict[str, tuple[Callable[[], float], float]] = {
    "gauss-ratio": (check_gauss_ratio, 1e-12),
    "truncated-mean": (check_truncated_mean, 1e-8),
    "sbl-routes": (check_sbl_routes, 1e-10),
    "bsbl-routes": (check_bsbl_routes, 1e-10),
    "fast-inverse": (check_fast_inverse, 1e-10),
    "degenerate-bsbl": (check_degenerate_bsbl, 1e-8),
    "forward-model": (check_forward_model, 1e-12),
}


def run_checks(stream=None) -> bool:
    stream = stream or sys.stdout
    ok = True
    for name, (fn, tol) in CHECKS.items():
        try:
            err = fn()
            passed = bool(err <= tol)
            msg = f"{err:.3e} (tol {tol:.0e})"
        except Exception as exc:
            passed, msg = False, f"{type(exc).__name__}: {exc}"
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {msg}", file=stream)
    return ok
