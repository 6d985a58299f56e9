"""Elementwise sparse Bayesian learning from one-bit measurements.

Variational EM: the E-step alternates the truncated-Gaussian mean of the
unquantized signal with the Gaussian posterior of the angular channel, the
M-step refreshes the per-coefficient prior variances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .channel_model import SystemConfig, VadDictionaries
from .errors import EstimationError, SingularMatrixError
from .numerics import CholeskyFactor, gauss_ratio, hermitian_inverse, hermitian_solve

ALPHA_FLOOR = 1e-12
ALPHA_INIT = 1e-3
LEMMA_RATIO = 0.8
RIDGE = 1e-6


@dataclass
class SblControls:
    p_max: int = 5
    max_em_iters: int = 150
    em_tol: float = 1e-3
    alpha_init: float = ALPHA_INIT
    alpha_floor: float = ALPHA_FLOOR
    route: str = "auto"
    keep_trace: bool = False

    @classmethod
    def from_config(cls, cfg: SystemConfig, **overrides) -> "SblControls":
        base = dict(p_max=cfg.p_max, max_em_iters=cfg.max_em_iters, em_tol=cfg.em_tol)
        base.update(overrides)
        return cls(**base)


@dataclass
class SblResult:
    h: np.ndarray
    alpha: np.ndarray
    mu_y: np.ndarray
    iterations: int
    converged: bool
    alpha_change: float
    trace: list = field(default_factory=list)


def select_route(n_rows: int, n_cols: int, route: str = "auto") -> str:
    if route == "auto":
        return "lemma" if n_rows < LEMMA_RATIO * n_cols else "direct"
    if route not in ("direct", "lemma"):
        raise ValueError(f"unknown covariance route {route!r}")
    return route


def _direct_covariance(gram: np.ndarray, alpha: np.ndarray, noise_var: float) -> np.ndarray:
    # (A^-1 + G/s2)^-1 == A^1/2 (I + A^1/2 G A^1/2 / s2)^-1 A^1/2, which keeps
    # the Cholesky factorization well scaled when some alpha sit at the floor.
    d = np.sqrt(alpha)
    inner = (d[:, None] * gram * d[None, :]) / noise_var
    inner[np.diag_indices_from(inner)] += 1.0
    return d[:, None] * hermitian_inverse(inner) * d[None, :]


def _lemma_covariance(xi: np.ndarray, alpha: np.ndarray, noise_var: float) -> np.ndarray:
    xa = xi * alpha[None, :]
    inner = xa @ xi.conj().T
    inner[np.diag_indices_from(inner)] += noise_var
    sigma = -(xa.conj().T @ hermitian_solve(inner, xa))
    sigma[np.diag_indices_from(sigma)] += alpha
    return 0.5 * (sigma + sigma.conj().T)


def e_step_covariance(xi: np.ndarray, alpha: np.ndarray, noise_var: float,
                      route: str = "auto", gram: Optional[np.ndarray] = None) -> np.ndarray:
    """Posterior covariance ``(Diag(alpha)^-1 + xi^H xi / noise_var)^-1``.

    ``route="auto"`` uses the matrix inversion lemma when the operator has
    fewer than ``0.8 x`` as many rows as columns, and the direct Hermitian
    inverse otherwise.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("alpha must be positive")
    route = select_route(*xi.shape, route)
    if route == "lemma":
        return _lemma_covariance(xi, alpha, noise_var)
    if gram is None:
        gram = xi.conj().T @ xi
    return _direct_covariance(gram, alpha, noise_var)


class DirectCovariance:
    """Factored ``(Diag(alpha)^-1 + G/s2)^-1`` exposing ``@`` and ``diagonal()``.

    Keeps the Cholesky factor of the scaled inner matrix instead of the
    dense inverse; the EM loop only needs products and the diagonal.
    """

    def __init__(self, gram: np.ndarray, alpha: np.ndarray, noise_var: float):
        self._d = np.sqrt(alpha)
        inner = (self._d[:, None] * gram * self._d[None, :]) / noise_var
        inner[np.diag_indices_from(inner)] += 1.0
        self._chol = CholeskyFactor(inner, symmetrize=False)

    def __matmul__(self, v):
        d = self._d if np.ndim(v) == 1 else self._d[:, None]
        return d * self._chol.solve(d * v)

    def diagonal(self) -> np.ndarray:
        return self._d ** 2 * self._chol.inverse_diagonal()


class LemmaCovariance:
    """Factored ``A - A xi^H (s2 I + xi A xi^H)^-1 xi A``."""

    def __init__(self, xi: np.ndarray, alpha: np.ndarray, noise_var: float):
        self._alpha = alpha
        self._xa = xi * alpha[None, :]
        inner = self._xa @ xi.conj().T
        inner[np.diag_indices_from(inner)] += noise_var
        self._chol = CholeskyFactor(inner, symmetrize=False)

    def __matmul__(self, v):
        a = self._alpha if np.ndim(v) == 1 else self._alpha[:, None]
        return a * v - self._xa.conj().T @ self._chol.solve(self._xa @ v)

    def diagonal(self) -> np.ndarray:
        w = self._chol.half_solve(self._xa)
        return self._alpha - np.einsum("ij,ij->j", w, w.conj()).real


def factored_covariance(xi: np.ndarray, alpha: np.ndarray, noise_var: float,
                        route: str = "auto", gram: Optional[np.ndarray] = None):
    """Same posterior covariance as :func:`e_step_covariance`, kept factored."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("alpha must be positive")
    route = select_route(*xi.shape, route)
    if route == "lemma":
        return LemmaCovariance(xi, alpha, noise_var)
    if gram is None:
        gram = xi.conj().T @ xi
    return DirectCovariance(gram, alpha, noise_var)


def posterior_y_mean(r: np.ndarray, z: np.ndarray, noise_var: float) -> np.ndarray:
    """Elementwise mean of the unquantized signal given its sign and prediction.

    Each real and imaginary part is a Gaussian with mean ``Re/Im z`` and
    variance ``noise_var / 2`` truncated to the half-line selected by the
    matching part of ``r``.
    """
    s = np.sqrt(noise_var / 2.0)
    rr, ri = np.real(r), np.imag(r)
    chi_r = rr * np.real(z) / s
    chi_i = ri * np.imag(z) / s
    return s * (rr * gauss_ratio(chi_r) + 1j * ri * gauss_ratio(chi_i)) + z


def m_step_alpha(mu: np.ndarray, sigma, floor: float = ALPHA_FLOOR) -> np.ndarray:
    """``alpha_n = |mu_n|^2 + Sigma_nn``, clamped below at ``floor``.

    ``sigma`` may be the full covariance or just its diagonal.
    """
    sigma = np.asarray(sigma)
    diag = np.real(np.diagonal(sigma)) if sigma.ndim == 2 else np.real(sigma)
    return np.maximum(np.abs(mu) ** 2 + diag, floor)


def pseudo_inverse_init(xi: np.ndarray, r: np.ndarray, ridge: float = RIDGE) -> np.ndarray:
    """Ridge-regularized least-squares stand-in for ``pinv(xi) @ r``.

    The ridge is ``ridge * trace(xi^H xi) / n_cols``; the smaller of the two
    normal-equation systems is solved.
    """
    n_rows, n_cols = xi.shape
    scale = np.vdot(xi.ravel(), xi.ravel()).real / n_cols
    lam = ridge * max(scale, np.finfo(float).tiny)
    if n_rows >= n_cols:
        normal = xi.conj().T @ xi
        normal[np.diag_indices_from(normal)] += lam
        return hermitian_solve(normal, xi.conj().T @ r)
    outer = xi @ xi.conj().T
    outer[np.diag_indices_from(outer)] += lam
    return xi.conj().T @ hermitian_solve(outer, r)


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    """Relative sup-norm change ``||new - old||_inf / ||old||_inf``."""
    denom = np.max(np.abs(old))
    return float(np.max(np.abs(new - old)) / denom) if denom > 0 else float(np.inf)


def inner_updates(xi: np.ndarray, xi_h: np.ndarray, r: np.ndarray, cov, mu: np.ndarray,
                  noise_var: float, p_max: int):
    """``p_max`` alternations of the signal mean and the channel mean."""
    mu_y = None
    for _ in range(p_max):
        mu_y = posterior_y_mean(r, xi @ mu, noise_var)
        mu = (cov @ (xi_h @ mu_y)) / noise_var
    return mu, mu_y


def sbl_estimate(xi: np.ndarray, r: np.ndarray, noise_var: float,
                 controls: Optional[SblControls] = None,
                 covariance: Optional[Callable[[np.ndarray], object]] = None,
                 alpha0: Optional[np.ndarray] = None,
                 mu0: Optional[np.ndarray] = None) -> SblResult:
    """Run the variational EM SBL estimator on ``r = sgn(xi h + w)``.

    Parameters
    ----------
    xi : (QM, n) sensing operator.
    r : (QM,) one-bit measurements.
    noise_var : known noise variance per complex sample.
    controls : iteration controls; defaults to :class:`SblControls`.
    covariance : optional ``alpha -> Sigma`` callable replacing the dense
        E-step. The returned object needs ``@`` and ``.diagonal()``.
    alpha0, mu0 : optional warm start; default ``alpha_init * 1`` and the
        ridge pseudo-inverse of ``r``.

    Returns
    -------
    SblResult
        ``h`` is the posterior mean computed under the last E-step.
    """
    c = controls or SblControls()
    n = xi.shape[1]
    xi_h = xi.conj().T
    if covariance is None:
        route = select_route(*xi.shape, c.route)
        gram = xi_h @ xi if route == "direct" else None

        def covariance(a):
            return factored_covariance(xi, a, noise_var, route=route, gram=gram)

    alpha = np.full(n, c.alpha_init) if alpha0 is None else np.array(alpha0, dtype=float)
    mu = pseudo_inverse_init(xi, r) if mu0 is None else np.array(mu0, dtype=complex)
    trace = []
    converged = False
    change = np.inf
    mu_y = r
    it = 0
    for it in range(1, c.max_em_iters + 1):
        try:
            cov = covariance(alpha)
        except (SingularMatrixError, np.linalg.LinAlgError) as exc:
            raise EstimationError(f"E-step failed at EM iteration {it}: {exc}", it) from exc
        mu, mu_y = inner_updates(xi, xi_h, r, cov, mu, noise_var, c.p_max)
        if not np.all(np.isfinite(mu)):
            raise EstimationError(f"non-finite posterior mean at EM iteration {it}", it)
        if c.keep_trace:
            trace.append(mu.copy())
        new_alpha = m_step_alpha(mu, np.asarray(cov.diagonal()), c.alpha_floor)
        change = relative_change(new_alpha, alpha)
        alpha = new_alpha
        if change < c.em_tol:
            converged = True
            break
    return SblResult(h=mu, alpha=alpha, mu_y=mu_y, iterations=it, converged=converged,
                     alpha_change=change, trace=trace)


def recover_cascaded(h: np.ndarray, dicts: VadDictionaries, cfg: SystemConfig) -> list:
    """Map ``Vec([H~_1 ... H~_K])`` back to ``H_k = U_R H~_k U_T^H``."""
    expected = cfg.K * cfg.Gr * cfg.Gt
    if h.size != expected:
        raise ValueError(f"h has length {h.size}, expected {expected}")
    Ht = h.reshape(cfg.Gr, cfg.K * cfg.Gt, order="F")
    U_Th = dicts.U_T.conj().T
    return [dicts.U_R @ Ht[:, k * cfg.Gt:(k + 1) * cfg.Gt] @ U_Th for k in range(cfg.K)]
