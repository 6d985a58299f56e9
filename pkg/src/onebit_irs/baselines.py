"""Comparison estimators: EM with an l1-regularized M-step, and a support oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel_model import ChannelRealization, SystemConfig
from .errors import EstimationError, UnsupportedModeError
from .sbl import (
    SblControls, factored_covariance, inner_updates, posterior_y_mean, pseudo_inverse_init,
    recover_cascaded, relative_change,
)

POWER_ITERS = 30
LIPSCHITZ_MARGIN = 1.1


@dataclass
class FistaControls:
    eta: float = 0.6
    max_inner_iters: int = 200
    tol: float = 1e-6
    power_iters: int = POWER_ITERS
    margin: float = LIPSCHITZ_MARGIN
    max_em_iters: int = 150
    em_tol: float = 1e-3
    warm_start: bool = True
    keep_objective: bool = False

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.margin < 1.0:
            raise ValueError("margin must be >= 1")

    @classmethod
    def from_config(cls, cfg: SystemConfig, **overrides) -> "FistaControls":
        base = dict(eta=cfg.eta, max_em_iters=cfg.max_em_iters, em_tol=cfg.em_tol)
        base.update(overrides)
        return cls(**base)


def soft_threshold(x, tau: float):
    """Complex soft-threshold ``x * max(|x| - tau, 0) / |x|``."""
    x = np.asarray(x)
    mag = np.abs(x)
    scale = np.maximum(mag - tau, 0.0) / np.where(mag > 0, mag, 1.0)
    return x * scale


def power_lambda_max(gram: np.ndarray, iters: int = POWER_ITERS, seed: int = 0) -> float:
    """Rayleigh-quotient estimate of the top eigenvalue of a Hermitian PSD matrix."""
    n = gram.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = gram @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
    return float(np.real(np.vdot(v, gram @ v)))


@dataclass
class FistaResult:
    x: np.ndarray
    iterations: int
    objective: list = field(default_factory=list)


def bpdn_objective(gram, b, y_norm2, x, lam) -> float:
    """``||A x - y||^2 + lam ||x||_1`` from ``gram = A^H A`` and ``b = A^H y``."""
    gx = gram @ x
    return float(np.real(np.vdot(x, gx)) - 2.0 * np.real(np.vdot(b, x)) + y_norm2
                 + lam * np.sum(np.abs(x)))


def bpdn_fista(gram: np.ndarray, b: np.ndarray, y_norm2: float, lam: float, lipschitz: float,
               x0: Optional[np.ndarray] = None, max_iter: int = 200, tol: float = 1e-6,
               keep_objective: bool = False) -> FistaResult:
    """Monotone FISTA for ``min ||A x - y||^2 + lam ||x||_1``.

    Works on the normal-equation data only. The candidate step is accepted
    only if it does not raise the objective, so the objective sequence is
    non-increasing. One product with ``gram`` per iteration: products at the
    extrapolated point are linear combinations of cached ones.

    Parameters
    ----------
    gram, b, y_norm2 : ``A^H A``, ``A^H y`` and ``||y||^2``.
    lam : l1 weight.
    lipschitz : bound on the gradient Lipschitz constant, ``>= 2 lambda_max(gram)``.
    x0 : start point, zero by default.
    tol : stop on relative objective change below this.
    """
    n = gram.shape[0]
    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    gx = gram @ x

    def objective(v, gv):
        return (float(np.real(np.vdot(v, gv))) - 2.0 * float(np.real(np.vdot(b, v)))
                + y_norm2 + lam * float(np.sum(np.abs(v))))

    fx = objective(x, gx)
    hist = [fx] if keep_objective else []
    y, gy = x.copy(), gx.copy()
    x_prev, gx_prev = x.copy(), gx.copy()
    t = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        z = soft_threshold(y - (2.0 / lipschitz) * (gy - b), lam / lipschitz)
        gz = gram @ z
        fz = objective(z, gz)
        f_old = fx
        x_prev, gx_prev = x, gx
        if fz <= fx:
            x, gx, fx = z, gz, fz
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        a, c = t / t_next, (t - 1.0) / t_next
        y = x + a * (z - x) + c * (x - x_prev)
        gy = gx + a * (gz - gx) + c * (gx - gx_prev)
        t = t_next
        if keep_objective:
            hist.append(fx)
        if abs(f_old - fx) <= tol * max(abs(f_old), np.finfo(float).tiny) and fz <= f_old:
            break
    return FistaResult(x=x, iterations=it, objective=hist)


@dataclass
class EmBpdnResult:
    h: np.ndarray
    y_hat: np.ndarray
    iterations: int
    converged: bool
    change: float
    inner_iterations: list = field(default_factory=list)
    objective: list = field(default_factory=list)


def em_bpdn_estimate(xi: np.ndarray, r: np.ndarray, noise_var: float,
                     controls: Optional[FistaControls] = None,
                     h0: Optional[np.ndarray] = None) -> EmBpdnResult:
    """EM for the Laplace-prior MAP estimate from one-bit data.

    E-step: ``y_hat = E[y | r, h]`` through the truncated-Gaussian mean.
    M-step: ``h = argmin ||xi h - y_hat||^2 + noise_var * eta * ||h||_1``
    by monotone FISTA, warm-started at the current ``h`` unless
    ``controls.warm_start`` is False. Stops on relative sup-norm change of
    ``h`` below ``em_tol``.
    """
    c = controls or FistaControls()
    xi_h = xi.conj().T
    gram = xi_h @ xi
    lipschitz = c.margin * 2.0 * power_lambda_max(gram, c.power_iters)
    if lipschitz <= 0:
        raise EstimationError("sensing operator is zero", 0)
    lam = noise_var * c.eta
    h = pseudo_inverse_init(xi, r) if h0 is None else np.array(h0, dtype=complex)
    y_hat = r
    inner, obj = [], []
    change = np.inf
    converged = False
    it = 0
    for it in range(1, c.max_em_iters + 1):
        y_hat = posterior_y_mean(r, xi @ h, noise_var)
        res = bpdn_fista(gram, xi_h @ y_hat, float(np.vdot(y_hat, y_hat).real), lam, lipschitz,
                         x0=h if c.warm_start else None, max_iter=c.max_inner_iters,
                         tol=c.tol, keep_objective=c.keep_objective)
        if not np.all(np.isfinite(res.x)):
            raise EstimationError(f"non-finite iterate at EM iteration {it}", it)
        inner.append(res.iterations)
        if c.keep_objective:
            obj.append(res.objective)
        change = relative_change(res.x, h)
        h = res.x
        if change < c.em_tol:
            converged = True
            break
    return EmBpdnResult(h=h, y_hat=y_hat, iterations=it, converged=converged, change=change,
                        inner_iterations=inner, objective=obj)


def support_columns(real: ChannelRealization, cfg: SystemConfig) -> np.ndarray:
    """Indices into ``Vec([H~_1 ... H~_K])`` of the true nonzero entries, ascending."""
    if not real.on_grid or real.col_supports is None:
        raise UnsupportedModeError("the oracle needs an on-grid realization with known support")
    rows = real.path_params["rows"]
    idx = []
    for k in range(cfg.K):
        for l1, row in enumerate(rows):
            for col in real.col_supports[k, l1]:
                idx.append((k * cfg.Gt + int(col)) * cfg.Gr + int(row))
    return np.sort(np.asarray(idx, dtype=int))


def angular_entry_variance(cfg: SystemConfig) -> float:
    """Prior variance of a nonzero ``H~`` entry when all path gains are CN(0, 1)."""
    return cfg.M * cfg.N / (cfg.LG * cfg.Lr)


@dataclass
class OracleResult:
    H: list
    h: np.ndarray
    support: np.ndarray
    iterations: int
    converged: bool


def oracle_map_estimate(xi: np.ndarray, r: np.ndarray, noise_var: float,
                        real: ChannelRealization, cfg: SystemConfig, dicts,
                        prior_var: Optional[float] = None, controls: Optional[SblControls] = None,
                        y: Optional[np.ndarray] = None) -> OracleResult:
    """Posterior-mean gains on the known support.

    The variational E-step runs on the columns of ``xi`` at the true support
    with the prior variance fixed at ``prior_var`` and no hyperparameter
    update. The default is the variance of a nonzero angular entry under
    unit-power path gains, ``M N / (L_G L_r)``. Passing the unquantized
    ``y`` switches to the linear Gaussian posterior mean on those columns
    instead.
    """
    idx = support_columns(real, cfg)
    c = controls or SblControls.from_config(cfg)
    sub = xi[:, idx]
    if prior_var is None:
        prior_var = angular_entry_variance(cfg)
    alpha = np.full(idx.size, float(prior_var))
    cov = factored_covariance(sub, alpha, noise_var)
    sub_h = sub.conj().T
    iters, converged = 0, False
    if y is not None:
        mu = (cov @ (sub_h @ y)) / noise_var
        iters, converged = 1, True
    else:
        mu = pseudo_inverse_init(sub, r)
        for iters in range(1, c.max_em_iters + 1):
            new_mu, _ = inner_updates(sub, sub_h, r, cov, mu, noise_var, c.p_max)
            change = relative_change(new_mu, mu)
            mu = new_mu
            if change < c.em_tol:
                converged = True
                break
    h = np.zeros(xi.shape[1], dtype=complex)
    h[idx] = mu
    return OracleResult(H=recover_cascaded(h, dicts, cfg), h=h, support=idx,
                        iterations=iters, converged=converged)
