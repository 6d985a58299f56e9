"""Complex-valued numerical kernels shared by the channel model and estimators."""

from __future__ import annotations

import numpy as np
from scipy import special
from scipy.linalg import lapack

from .errors import ConfigError, SingularMatrixError

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def steering_vector(size: int, freq: float) -> np.ndarray:
    """Array response ``[1, e^{-j pi f}, ..., e^{-j pi f (size-1)}]``.

    The conjugated phasor convention matches a Hermitian-transposed
    steering vector, so ``steering_vector(4, 0.5) == [1, -1j, -1, 1j]``.
    """
    if size < 1:
        raise ConfigError(f"array size must be >= 1, got {size}")
    return np.exp(-1j * np.pi * freq * np.arange(size))


def upa_response(nx: int, ny: int, u: float, v: float) -> np.ndarray:
    """UPA response as the Kronecker product of the two axis responses."""
    return np.kron(steering_vector(nx, u), steering_vector(ny, v))


def gauss_ratio(x):
    """Evaluate ``phi(x) / Phi(x)`` for the standard normal pdf/cdf.

    For negative arguments the scaled complementary error function gives
    ``sqrt(2/pi) / erfcx(-x/sqrt(2))``, which stays finite down to
    ``x = -1e8`` where the naive quotient is ``0/0``. For ``x >= 0`` the
    cdf is at least one half and the direct quotient is exact; it
    underflows to zero past ``x ~ 38.6``.

    Parameters
    ----------
    x : float or array_like
        Finite real argument(s).

    Returns
    -------
    float or ndarray
        Same shape as ``x``.
    """
    xa = np.asarray(x, dtype=float)
    if np.isnan(xa).any():
        raise ValueError("gauss_ratio: NaN input")
    out = np.empty_like(xa)
    neg = xa < 0
    out[neg] = _SQRT_2_OVER_PI / special.erfcx(-xa[neg] / np.sqrt(2.0))
    pos = ~neg
    xp = xa[pos]
    with np.errstate(under="ignore"):
        out[pos] = _INV_SQRT_2PI * np.exp(-0.5 * xp * xp) / special.ndtr(xp)
    if out.ndim == 0:
        return float(out)
    return out


def sign_quantize(z):
    """One-bit I/Q quantizer onto ``{+-1 +- 1j}`` with ``sgn(0) = -1``."""
    z = np.asarray(z)
    re = np.where(np.real(z) > 0, 1.0, -1.0)
    im = np.where(np.imag(z) > 0, 1.0, -1.0)
    out = re + 1j * im
    if out.ndim == 0:
        return complex(out)
    return out


def hermitian_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a Hermitian positive definite matrix via Cholesky.

    The input is symmetrized as ``(A + A^H)/2`` first. A non-positive pivot
    raises :class:`SingularMatrixError` whose ``pivot`` is the 1-based
    leading-minor order that failed.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    sym = 0.5 * (a + a.conj().T)
    if np.iscomplexobj(sym):
        potrf, potri = lapack.zpotrf, lapack.zpotri
    else:
        potrf, potri = lapack.dpotrf, lapack.dpotri
    c, info = potrf(sym, lower=False, clean=True)
    if info > 0:
        raise SingularMatrixError(
            f"matrix is not positive definite (pivot {info})", pivot=int(info)
        )
    if info < 0:
        raise ValueError(f"potrf: illegal argument {-info}")
    inv, info = potri(c, lower=False)
    if info != 0:
        raise SingularMatrixError(
            f"triangular factor is singular (pivot {info})", pivot=int(info)
        )
    # potri writes the upper triangle; the lower one is zero after clean=True
    full = inv + inv.conj().T
    full[np.diag_indices_from(full)] = np.real(np.diagonal(inv))
    return full


class CholeskyFactor:
    """Upper Cholesky factor ``A = U^H U`` of a Hermitian positive definite matrix.

    Gives solves and the diagonal of ``A^-1`` without forming the inverse.
    Only the upper triangle is read when ``symmetrize=False``.
    """

    def __init__(self, a: np.ndarray, symmetrize: bool = True):
        a = np.asarray(a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        sym = 0.5 * (a + a.conj().T) if symmetrize else a
        self._complex = np.iscomplexobj(sym)
        prefix = "z" if self._complex else "d"
        self._potrs = getattr(lapack, prefix + "potrs")
        self._trtri = getattr(lapack, prefix + "trtri")
        self._trtrs = getattr(lapack, prefix + "trtrs")
        u, info = getattr(lapack, prefix + "potrf")(sym, lower=False, clean=True)
        if info > 0:
            raise SingularMatrixError(
                f"matrix is not positive definite (pivot {info})", pivot=int(info)
            )
        if info < 0:
            raise ValueError(f"potrf: illegal argument {-info}")
        self.u = u

    @property
    def n(self) -> int:
        return self.u.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.result_type(self.u, b))
        x, info = self._potrs(self.u, b, lower=False)
        if info != 0:
            raise ValueError(f"potrs: illegal argument {-info}")
        return x

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """``U^-H b``, so that ``b^H A^-1 b == ||U^-H b||^2``."""
        b = np.asarray(b, dtype=np.result_type(self.u, b))
        trans = 2 if self._complex else 1
        x, info = self._trtrs(self.u, b, lower=False, trans=trans)
        if info != 0:
            raise SingularMatrixError(f"singular triangular factor (pivot {info})", pivot=int(info))
        return x

    def inverse_diagonal(self) -> np.ndarray:
        uinv, info = self._trtri(self.u, lower=False)
        if info != 0:
            raise SingularMatrixError(f"singular triangular factor (pivot {info})", pivot=int(info))
        # A^-1 = U^-1 U^-H, so diag is the squared row norms of U^-1
        return np.einsum("ij,ij->i", uinv, uinv.conj()).real


def hermitian_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for Hermitian positive definite ``A``."""
    return CholeskyFactor(a).solve(b)


def derive_seed(master: int, *keys: int) -> int:
    """Deterministic 64-bit child seed for ``(master, *keys)``.

    Built on :class:`numpy.random.SeedSequence`, so the mapping depends only
    on the integers passed in and never on scheduling order.
    """
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class RandomSource:
    """Seeded stream of uniform, real and circular complex Gaussian draws.

    One instance per Monte-Carlo worker; instances are not thread-safe.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def complex_normal(self, size=None, var=1.0):
        """CN(0, var) draws: ``var/2`` per real dimension."""
        scale = np.sqrt(var / 2.0)
        return scale * (self._gen.standard_normal(size) + 1j * self._gen.standard_normal(size))

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``."""
        return self._gen.choice(n, size=k, replace=False)

    def unit_phases(self, size=None):
        return np.exp(2j * np.pi * self._gen.uniform(0.0, 1.0, size))

    def qpsk(self, size):
        """Unit-power QPSK symbols ``(+-1 +- 1j)/sqrt(2)``."""
        re = 2.0 * self._gen.integers(0, 2, size) - 1.0
        im = 2.0 * self._gen.integers(0, 2, size) - 1.0
        return (re + 1j * im) / np.sqrt(2.0)
