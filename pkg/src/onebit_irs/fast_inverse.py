"""Recursive inversion of K x K grids of diagonal blocks.

With ``G_r = M``, ``G_t = N`` and IRS phases cycling through the columns of
``U_T``, both dictionaries are unitary and ``U_T^H theta_q`` is a unit
vector. ``xi^H xi`` then splits into ``K x K`` blocks, each diagonal of
size ``MN``, and so does ``E = Diag(alpha)^-1 + xi^H xi / noise_var``.
Block inversion keeps that form at every level, so every product is
elementwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .channel_model import SystemConfig
from .errors import ConfigError, SingularMatrixError, UnsupportedModeError
from .measurement import PilotFrame, structured_slot_columns

PIVOT_RTOL = 1e-14


@dataclass(frozen=True)
class DiagBlockMatrix:
    """``K x K`` grid of diagonal ``L x L`` blocks stored as ``blocks[i, j, :]``."""

    blocks: np.ndarray

    def __post_init__(self):
        b = self.blocks
        if b.ndim != 3 or b.shape[0] != b.shape[1]:
            raise ValueError(f"blocks must have shape (K, K, L), got {b.shape}")

    @property
    def K(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_size(self) -> int:
        return self.blocks.shape[2]

    @property
    def shape(self):
        n = self.K * self.block_size
        return (n, n)

    def to_dense(self) -> np.ndarray:
        K, L = self.K, self.block_size
        out = np.zeros((K, L, K, L), dtype=self.blocks.dtype)
        idx = np.arange(L)
        for i in range(K):
            for j in range(K):
                out[i, idx, j, idx] = self.blocks[i, j]
        return out.reshape(K * L, K * L)

    def diagonal(self) -> np.ndarray:
        return np.concatenate([self.blocks[i, i] for i in range(self.K)])

    def __matmul__(self, other):
        if isinstance(other, DiagBlockMatrix):
            return DiagBlockMatrix(block_product(self.blocks, other.blocks))
        v = np.asarray(other)
        K, L = self.K, self.block_size
        parts = v.reshape(K, L, *v.shape[1:])
        if v.ndim == 1:
            out = np.einsum("ijm,jm->im", self.blocks, parts)
        else:
            out = np.einsum("ijm,jmc->imc", self.blocks, parts)
        return out.reshape(v.shape)

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        b = self.blocks
        return bool(np.allclose(b, np.conj(np.transpose(b, (1, 0, 2))), atol=atol, rtol=0))


def block_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two diagonal-block grids, ``(p, q, L) x (q, r, L) -> (p, r, L)``."""
    # explicit loops over the (small) block grid keep every operation a
    # length-L vector multiply, which scales linearly in L; einsum does not
    p, q, _ = a.shape
    r = b.shape[1]
    out = np.zeros((p, r, a.shape[2]), dtype=np.result_type(a, b))
    # one scratch row avoids a fresh large temporary per multiply
    tmp = np.empty(a.shape[2], dtype=out.dtype)
    for i in range(p):
        for j in range(r):
            acc = out[i, j]
            for l in range(q):
                np.multiply(a[i, l], b[l, j], out=tmp)
                acc += tmp
    return out


def _check_structured(frame: PilotFrame, cfg: SystemConfig):
    if frame.phase_mode != "structured":
        raise UnsupportedModeError("the structured inverse needs a structured phase schedule")
    if cfg.Gr != cfg.M or cfg.Gt != cfg.N:
        raise UnsupportedModeError(
            f"the structured inverse needs Gr == M and Gt == N (got Gr={cfg.Gr}, M={cfg.M}, "
            f"Gt={cfg.Gt}, N={cfg.N})")


def slot_multiplicities(Q: int, N: int) -> np.ndarray:
    """How often each dictionary column is used: ``a + 1`` for the first ``b``, else ``a``."""
    a, b = divmod(Q, N)
    return np.array([a + 1] * b + [a] * (N - b), dtype=float)


def gram_blocks(S: np.ndarray, M: int, N: int) -> np.ndarray:
    """Diagonal blocks of ``xi^H xi`` for the cyclic schedule, shape (K, K, M*N).

    Block ``(i, j)`` at position ``c*M + m`` is the sum of ``conj(s_qi) s_qj``
    over the slots ``q`` that use dictionary column ``c``.
    """
    Q, K = S.shape
    cols = structured_slot_columns(Q, N)
    cross = np.conj(S)[:, :, None] * S[:, None, :]          # (Q, K, K)
    per_col = np.zeros((N, K, K), dtype=complex)
    np.add.at(per_col, cols, cross)
    return np.repeat(np.transpose(per_col, (1, 2, 0)), M, axis=2)


def assemble_structured_E(alpha: np.ndarray, frame: PilotFrame, noise_var: float,
                          cfg: SystemConfig) -> DiagBlockMatrix:
    """``Diag(alpha)^-1 + xi^H xi / noise_var`` as a diagonal-block grid."""
    _check_structured(frame, cfg)
    alpha = np.asarray(alpha, dtype=float)
    K, L = cfg.K, cfg.M * cfg.N
    if alpha.size != K * L:
        raise ValueError(f"alpha has length {alpha.size}, expected {K * L}")
    blocks = gram_blocks(frame.S, cfg.M, cfg.N) / noise_var
    for i in range(K):
        blocks[i, i] = blocks[i, i] + 1.0 / alpha[i * L:(i + 1) * L]
    return DiagBlockMatrix(blocks)


def _check_pivot(d: np.ndarray, scale: float, where: int):
    bad = np.abs(d) < PIVOT_RTOL * scale
    if np.any(bad):
        raise SingularMatrixError(
            f"vanishing pivot in diagonal block {where} at entry {int(np.argmax(bad))}",
            pivot=where)


def diag_blk_inv(E: DiagBlockMatrix, out: Optional[np.ndarray] = None,
                 work: Optional[np.ndarray] = None) -> DiagBlockMatrix:
    """Invert ``E`` by recursive 2 x 2 partitioning off the last block.

    ``[[A, B], [C, D]]^-1`` with ``S = D - C A^-1 B`` is
    ``[[A^-1 + A^-1 B S^-1 C A^-1, -A^-1 B S^-1], [-S^-1 C A^-1, S^-1]]``.
    The recursion is unrolled: the inverse of the leading ``k x k`` grid
    is grown in place one block row/column at a time, so a call allocates
    only the output and ``O(K L)`` scratch.

    Parameters
    ----------
    E : DiagBlockMatrix
        Grid of ``K x K`` diagonal blocks of length ``L``.
    out : ndarray, optional
        Complex ``(K, K, L)`` array that receives the inverse blocks.
    work : ndarray, optional
        Complex scratch of shape ``(2 K + 2, L)``. Passing ``out`` and
        ``work`` makes repeated calls allocation free.

    Raises
    ------
    SingularMatrixError
        If a diagonal entry of a base block or Schur complement is below
        ``1e-14`` times the largest diagonal magnitude. ``pivot`` is the
        0-based block index.
    """
    b = E.blocks
    K, L = b.shape[0], b.shape[2]
    scale = float(np.max(np.abs(np.einsum("iim->im", b)))) if b.size else 0.0
    if out is None:
        out = np.empty((K, K, L), dtype=complex)        # every entry is assigned below
    if work is None:
        work = np.empty((2 * K + 2, L), dtype=complex)
    if out.shape != b.shape or work.shape != (2 * K + 2, L):
        raise ValueError("out must match E.blocks and work must be (2 K + 2, L)")
    AiB, CAi = work[:K], work[K:2 * K]                  # A^-1 B column, C A^-1 row
    tmp, S_inv = work[2 * K], work[2 * K + 1]
    for k in range(K):
        np.copyto(S_inv, b[k, k])
        for i in range(k):
            AiB[i] = 0.0
            CAi[i] = 0.0
            for l in range(k):
                np.multiply(out[i, l], b[l, k], out=tmp)
                AiB[i] += tmp
                np.multiply(b[k, l], out[l, i], out=tmp)
                CAi[i] += tmp
        for l in range(k):
            np.multiply(b[k, l], AiB[l], out=tmp)
            S_inv -= tmp
        _check_pivot(S_inv, scale, k)
        np.reciprocal(S_inv, out=S_inv)
        for i in range(k):
            AiB[i] *= S_inv                              # now A^-1 B S^-1
            for j in range(k):
                np.multiply(AiB[i], CAi[j], out=tmp)
                out[i, j] += tmp
            np.negative(AiB[i], out=out[i, k])
            np.multiply(S_inv, CAi[i], out=out[k, i])
            out[k, i] *= -1.0
        out[k, k] = S_inv
    return DiagBlockMatrix(out)


def structured_covariance(frame: PilotFrame, cfg: SystemConfig, noise_var: float):
    """``alpha -> E^-1`` using the recursive inverse, for :func:`sbl_estimate`.

    The Gram blocks are computed once; each call only refreshes the
    ``Diag(alpha)^-1`` part.
    """
    _check_structured(frame, cfg)
    base = gram_blocks(frame.S, cfg.M, cfg.N) / noise_var
    K, L = cfg.K, cfg.M * cfg.N

    def covariance(alpha):
        alpha = np.asarray(alpha, dtype=float)
        blocks = base.copy()
        for i in range(K):
            blocks[i, i] = blocks[i, i] + 1.0 / alpha[i * L:(i + 1) * L]
        return diag_blk_inv(DiagBlockMatrix(blocks))

    return covariance


def random_structured_E(K: int, M: int, N: int, Q: int, rng: np.random.Generator,
                        noise_var: float = 1.0) -> DiagBlockMatrix:
    """Structured ``E`` for random QPSK pilots and ``alpha ~ U(0.5, 2)``."""
    S = (rng.choice([-1.0, 1.0], (Q, K)) + 1j * rng.choice([-1.0, 1.0], (Q, K))) / np.sqrt(2)
    blocks = gram_blocks(S, M, N) / noise_var
    alpha = rng.uniform(0.5, 2.0, K * M * N)
    L = M * N
    for i in range(K):
        blocks[i, i] = blocks[i, i] + 1.0 / alpha[i * L:(i + 1) * L]
    return DiagBlockMatrix(blocks)


def _time_call(fn, repeats: int) -> float:
    fn()                                        # warm-up
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return float(np.median(samples))


def complexity_probe(K_list: Iterable[int], M: int, N_list: Sequence[int], repeats: int = 20,
                     dense: bool = False, seed: int = 0) -> list:
    """Median wall time of :func:`diag_blk_inv` over a (K, N) grid.

    Returns rows ``{"K", "M", "N", "elapsed_ns", "route"}``. With
    ``dense=True`` each instance is also timed through a dense inverse.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for K in K_list:
        for N in N_list:
            if K < 1 or M < 1 or N < 1:
                raise ConfigError("probe dimensions must be >= 1")
            E = random_structured_E(K, M, N, max(K * N, 2 * N), rng)
            # reused buffers keep allocator page faults out of the timing
            out = np.empty(E.blocks.shape, dtype=complex)
            work = np.empty((2 * K + 2, M * N), dtype=complex)
            ns = _time_call(lambda: diag_blk_inv(E, out, work), repeats)
            rows.append({"K": K, "M": M, "N": N, "elapsed_ns": ns, "route": "structured"})
            if dense:
                Ed = E.to_dense()
                ns = _time_call(lambda: np.linalg.inv(Ed), max(1, repeats // 4))
                rows.append({"K": K, "M": M, "N": N, "elapsed_ns": ns, "route": "dense"})
    return rows
