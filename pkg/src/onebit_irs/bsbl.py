"""Block-sparse SBL on the row-ordered one-bit model.

All users see the IRS through the same BS-side paths, so the stacked
channel ``H_bar = [H~_1 U_T^H, ..., H~_K U_T^H]`` shares one row support.
``h_bar = Vec(H_bar^T)`` is then block sparse with ``G_r`` blocks of length
``K N``, and the prior is ``CN(0, Diag(gamma) kron B)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel_model import SystemConfig, VadDictionaries
from .errors import EstimationError, SingularMatrixError
from .numerics import CholeskyFactor
from .sbl import LEMMA_RATIO, inner_updates, pseudo_inverse_init, relative_change, select_route

GAMMA_FLOOR = 1e-12
GAMMA_INIT = 1e-3
B_JITTER = 1e-10
B_COND_CAP = 1e12
B_SHRINK = 0.01


@dataclass
class BsblControls:
    p_max: int = 5
    max_em_iters: int = 150
    em_tol: float = 1e-3
    gamma_init: float = GAMMA_INIT
    gamma_floor: float = GAMMA_FLOOR
    route: str = "auto"
    normalize: bool = True
    keep_trace: bool = False

    @classmethod
    def from_config(cls, cfg: SystemConfig, **overrides) -> "BsblControls":
        base = dict(p_max=cfg.p_max, max_em_iters=cfg.max_em_iters, em_tol=cfg.em_tol)
        base.update(overrides)
        return cls(**base)


@dataclass
class BsblResult:
    h: np.ndarray
    gamma: np.ndarray
    B: np.ndarray
    mu_y: np.ndarray
    iterations: int
    converged: bool
    change: float
    gamma_trace: list = field(default_factory=list)


def regularize_correlation(B: np.ndarray, jitter: float = B_JITTER) -> np.ndarray:
    """Symmetrize, cap the condition number and floor the spectrum of ``B``.

    Ill-conditioned estimates (``cond > 1e12`` or a non-positive eigenvalue)
    are shrunk as ``(1 - rho) B + rho mean(diag B) I`` with ``rho = 0.01``.
    Eigenvalues are then clipped from below at ``jitter * tr(B) / KN``. A
    zero matrix is replaced by the identity. Flooring rather than adding
    the jitter leaves well-conditioned ``B`` untouched.
    """
    B = 0.5 * (B + B.conj().T)
    kn = B.shape[0]
    if not np.real(np.trace(B)) > np.finfo(float).tiny * kn:
        # every block collapsed to zero: no correlation information left
        return np.eye(kn, dtype=complex)
    w = np.linalg.eigvalsh(B)
    if w[0] <= 0 or w[-1] > B_COND_CAP * w[0]:
        B = (1.0 - B_SHRINK) * B + B_SHRINK * np.mean(np.real(np.diag(B))) * np.eye(kn)
    w, V = np.linalg.eigh(B)
    floor = jitter * max(np.real(np.trace(B)), np.finfo(float).tiny) / kn
    if w[0] < floor:
        w = np.maximum(w, floor)
        B = (V * w) @ V.conj().T
        B = 0.5 * (B + B.conj().T)
    return B


def _sqrt_psd(B: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (B + B.conj().T))
    return V * np.sqrt(np.maximum(w, 0.0))


def prior_covariance(gamma: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Dense ``Diag(gamma) kron B``."""
    return np.kron(np.diag(gamma), B)


def _blockdiag_right(X: np.ndarray, S: np.ndarray) -> np.ndarray:
    # X @ blockdiag(S, ..., S)
    rows = X.shape[0]
    kn = S.shape[0]
    return (X.reshape(rows, -1, kn) @ S).reshape(rows, -1)


class BlockCovariance:
    """Factored ``(Sigma_0^-1 + upsilon^H upsilon / s2)^-1``.

    ``Sigma_0 = L L^H`` with ``L = Diag(sqrt(gamma)) kron B^1/2``. The direct
    route factors ``I + L^H G L / s2``; the lemma route factors
    ``s2 I + upsilon Sigma_0 upsilon^H``.
    """

    def __init__(self, upsilon: np.ndarray, gamma: np.ndarray, B: np.ndarray,
                 noise_var: float, route: str = "auto", gram: Optional[np.ndarray] = None):
        gamma = np.asarray(gamma, dtype=float)
        if np.any(gamma <= 0):
            raise ValueError("gamma must be positive")
        self.kn = B.shape[0]
        self.n_blocks = gamma.size
        if upsilon.shape[1] != self.kn * self.n_blocks:
            raise ValueError("operator width does not match gamma and B")
        self.route = select_route(*upsilon.shape, route)
        self._gamma = gamma
        self._B = B
        S = _sqrt_psd(B)
        self._S = S
        self._g = np.repeat(np.sqrt(gamma), self.kn)
        if self.route == "direct":
            if gram is None:
                gram = upsilon.conj().T @ upsilon
            x = _blockdiag_right(gram, S)
            inner = _blockdiag_right(x.conj().T, S).conj().T
            inner = (self._g[:, None] * inner * self._g[None, :]) / noise_var
            inner[np.diag_indices_from(inner)] += 1.0
            self._chol = CholeskyFactor(inner)
        else:
            # upsilon Sigma_0, column block n is gamma_n upsilon_n B
            self._us = _blockdiag_right(upsilon, B) * np.repeat(gamma, self.kn)[None, :]
            inner = self._us @ upsilon.conj().T
            inner[np.diag_indices_from(inner)] += noise_var
            self._chol = CholeskyFactor(inner)

    def _apply_L(self, v):
        # L v for L = Diag(sqrt gamma) kron S
        blocks = v.reshape(self.n_blocks, self.kn, *v.shape[1:])
        out = np.einsum("ij,nj...->ni...", self._S, blocks).reshape(v.shape)
        g = self._g if v.ndim == 1 else self._g[:, None]
        return g * out

    def _apply_LH(self, v):
        g = self._g if v.ndim == 1 else self._g[:, None]
        blocks = (g * v).reshape(self.n_blocks, self.kn, *v.shape[1:])
        return np.einsum("ji,nj...->ni...", self._S.conj(), blocks).reshape(v.shape)

    def _apply_prior(self, v):
        blocks = v.reshape(self.n_blocks, self.kn, *v.shape[1:])
        out = np.einsum("ij,nj...->ni...", self._B, blocks)
        out = out * self._gamma.reshape((-1,) + (1,) * (out.ndim - 1))
        return out.reshape(v.shape)

    def __matmul__(self, v):
        v = np.asarray(v)
        if self.route == "direct":
            return self._apply_L(self._chol.solve(self._apply_LH(v)))
        return self._apply_prior(v) - self._us.conj().T @ self._chol.solve(self._us @ v)

    def diagonal_blocks(self) -> np.ndarray:
        """The ``G_r`` diagonal blocks ``Sigma_n`` as an array (G_r, KN, KN)."""
        nb, kn = self.n_blocks, self.kn
        if self.route == "direct":
            uinv, info = self._chol._trtri(self._chol.u, lower=False)
            if info != 0:
                raise SingularMatrixError(f"singular triangular factor (pivot {info})",
                                          pivot=int(info))
            w = uinv.reshape(nb, kn, -1)
            # [P^-1]_nn = W_n W_n^H, then Sigma_n = gamma_n S [P^-1]_nn S^H
            pinv = np.einsum("nik,njk->nij", w, w.conj())
            out = self._S[None] @ pinv @ self._S.conj().T[None]
            return out * self._gamma[:, None, None]
        w = self._chol.half_solve(self._us).reshape(-1, nb, kn)
        corr = np.einsum("qni,qnj->nij", w.conj(), w)
        return self._gamma[:, None, None] * self._B[None] - corr

    def diagonal(self) -> np.ndarray:
        return np.real(np.einsum("nii->ni", self.diagonal_blocks())).ravel()

    def to_dense(self) -> np.ndarray:
        n = self.kn * self.n_blocks
        out = self @ np.eye(n, dtype=complex)
        return 0.5 * (out + out.conj().T)


def bsbl_covariance(upsilon: np.ndarray, gamma: np.ndarray, B: np.ndarray, noise_var: float,
                    route: str = "auto", gram: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense posterior covariance ``(Sigma_0^-1 + upsilon^H upsilon / noise_var)^-1``."""
    return BlockCovariance(upsilon, gamma, B, noise_var, route=route, gram=gram).to_dense()


def _extract_blocks(sigma, n_blocks: int, kn: int) -> np.ndarray:
    sigma = np.asarray(sigma)
    if sigma.ndim == 3:
        return sigma
    s4 = sigma.reshape(n_blocks, kn, n_blocks, kn)
    idx = np.arange(n_blocks)
    return s4[idx, :, idx, :]


def bsbl_m_step(mu: np.ndarray, sigma, B_prev: np.ndarray,
                gamma_floor: float = GAMMA_FLOOR, jitter: float = B_JITTER,
                normalize: bool = True):
    """Block variance and correlation updates.

    ``gamma_n = Tr(B_prev^-1 C_n) / KN`` with ``C_n = Sigma_n + mu_n mu_n^H``,
    followed by ``B = mean_n C_n / gamma_n`` using the fresh ``gamma``.
    ``(c gamma, B / c)`` is the same prior, and left alone the scale of ``B``
    drifts from one iteration to the next. With ``normalize`` the pair is
    rescaled so that ``Tr(B) = KN``; ``gamma_n`` is then the mean prior
    variance of block ``n``, which is what support thresholds compare
    against. The rescaling leaves every later prior unchanged.

    Parameters
    ----------
    mu : (G_r*KN,) posterior mean.
    sigma : full posterior covariance or its diagonal blocks (G_r, KN, KN).
    B_prev : (KN, KN) correlation matrix from the previous iteration.

    Returns
    -------
    gamma : (G_r,) floored at ``gamma_floor``.
    B : (KN, KN) regularized Hermitian positive definite matrix.
    """
    kn = B_prev.shape[0]
    n_blocks = mu.size // kn
    blocks = _extract_blocks(sigma, n_blocks, kn)
    m = mu.reshape(n_blocks, kn)
    C = blocks + m[:, :, None] * m[:, None, :].conj()
    B_inv = np.linalg.inv(0.5 * (B_prev + B_prev.conj().T))
    # Tr(B^-1 C_n) = sum_ij [B^-1]_ij [C_n]_ji
    gamma = np.real(np.einsum("ij,nji->n", B_inv, C)) / kn
    gamma = np.maximum(gamma, gamma_floor)
    B = regularize_correlation(np.mean(C / gamma[:, None, None], axis=0), jitter)
    if normalize:
        scale = float(np.real(np.trace(B))) / kn
        B = B / scale
        gamma = np.maximum(gamma * scale, gamma_floor)
    return gamma, B


def bsbl_e_step(upsilon: np.ndarray, gamma: np.ndarray, B: np.ndarray, noise_var: float,
                r_bar: np.ndarray, mu: np.ndarray, p_max: int, route: str = "auto",
                gram: Optional[np.ndarray] = None):
    """Posterior covariance plus ``p_max`` mean alternations.

    A failed factorization is retried once with ``B`` jittered by
    ``1e-8 * mean(diag B)``.

    Returns
    -------
    mu : updated posterior mean of ``h_bar``.
    cov : :class:`BlockCovariance`.
    mu_y : posterior mean of the unquantized ``y_bar``.
    """
    try:
        cov = BlockCovariance(upsilon, gamma, B, noise_var, route=route, gram=gram)
    except SingularMatrixError:
        bump = 1e-8 * np.mean(np.real(np.diag(B)))
        cov = BlockCovariance(upsilon, gamma, B + bump * np.eye(B.shape[0]), noise_var,
                              route=route, gram=gram)
    mu, mu_y = inner_updates(upsilon, upsilon.conj().T, r_bar, cov, mu, noise_var, p_max)
    return mu, cov, mu_y


def bsbl_estimate(upsilon: np.ndarray, r_bar: np.ndarray, noise_var: float, kn: int,
                  controls: Optional[BsblControls] = None,
                  mu0: Optional[np.ndarray] = None) -> BsblResult:
    """Variational EM for the block-sparse model ``r_bar = sgn(upsilon h_bar + w)``.

    Parameters
    ----------
    upsilon : (QM, G_r*KN) block operator.
    r_bar : (QM,) one-bit measurements in row order.
    noise_var : noise variance per complex sample.
    kn : block length ``K*N``.
    controls : iteration controls.
    mu0 : optional initial mean; default is the ridge pseudo-inverse.

    Stops when both the relative sup-norm change of ``gamma`` and the
    relative Frobenius change of ``B`` fall below ``em_tol``.
    """
    c = controls or BsblControls()
    n = upsilon.shape[1]
    if n % kn:
        raise ValueError(f"operator width {n} is not a multiple of the block size {kn}")
    n_blocks = n // kn
    route = select_route(*upsilon.shape, c.route)
    gram = upsilon.conj().T @ upsilon if route == "direct" else None
    gamma = np.full(n_blocks, c.gamma_init)
    B = np.eye(kn, dtype=complex)
    mu = pseudo_inverse_init(upsilon, r_bar) if mu0 is None else np.array(mu0, dtype=complex)
    mu_y = r_bar
    trace = []
    change = np.inf
    converged = False
    it = 0
    for it in range(1, c.max_em_iters + 1):
        try:
            mu, cov, mu_y = bsbl_e_step(upsilon, gamma, B, noise_var, r_bar, mu, c.p_max,
                                        route=route, gram=gram)
            blocks = cov.diagonal_blocks()
        except (SingularMatrixError, np.linalg.LinAlgError) as exc:
            raise EstimationError(f"E-step failed at EM iteration {it}: {exc}", it) from exc
        if not np.all(np.isfinite(mu)):
            raise EstimationError(f"non-finite posterior mean at EM iteration {it}", it)
        new_gamma, new_B = bsbl_m_step(mu, blocks, B, c.gamma_floor, normalize=c.normalize)
        change = max(relative_change(new_gamma, gamma),
                     float(np.linalg.norm(new_B - B) / np.linalg.norm(B)))
        gamma, B = new_gamma, new_B
        if c.keep_trace:
            trace.append(gamma.copy())
        if change < c.em_tol:
            converged = True
            break
    return BsblResult(h=mu, gamma=gamma, B=B, mu_y=mu_y, iterations=it, converged=converged,
                      change=change, gamma_trace=trace)


def block_to_matrix(h_bar: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """``H_bar = (Vec^-1(h_bar))^T`` of shape ``G_r x K N``."""
    kn = cfg.K * cfg.N
    if h_bar.size != cfg.Gr * kn:
        raise ValueError(f"h_bar has length {h_bar.size}, expected {cfg.Gr * kn}")
    return h_bar.reshape(kn, cfg.Gr, order="F").T


def recover_cascaded_block(h_bar: np.ndarray, dicts: VadDictionaries, cfg: SystemConfig) -> list:
    """``H_k = U_R H_bar_k`` with ``H_bar_k`` the k-th width-N column slice."""
    Hb = block_to_matrix(h_bar, cfg)
    N = cfg.N
    return [dicts.U_R @ Hb[:, k * N:(k + 1) * N] for k in range(cfg.K)]


def block_ground_truth(H_tilde: list, dicts: VadDictionaries) -> np.ndarray:
    """``h_bar = Vec(H_bar^T)`` for ``H_bar_k = H~_k U_T^H``."""
    Hb = np.concatenate([Hk @ dicts.U_T.conj().T for Hk in H_tilde], axis=1)
    return Hb.T.ravel(order="F")


__all__ = [
    "BsblControls", "BsblResult", "BlockCovariance", "LEMMA_RATIO",
    "bsbl_covariance", "bsbl_e_step", "bsbl_m_step", "bsbl_estimate",
    "block_to_matrix", "block_ground_truth", "prior_covariance",
    "recover_cascaded_block", "regularize_correlation",
]
