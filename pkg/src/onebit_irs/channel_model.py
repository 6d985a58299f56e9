"""Geometric IRS channels, VAD dictionaries and angular-sparse representations.

Vectorization follows the column-major convention throughout:
``Vec(A) == A.ravel(order="F")``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, UnsupportedModeError
from .numerics import RandomSource, steering_vector, upa_response


@dataclass(frozen=True)
class SystemConfig:
    """Scenario dimensions, path counts and iteration controls.

    Defaults are the full-size simulation settings (M=32, N=4x4, K=3,
    G_r=64, G_t=4x8, L_G=2, L_r=6). Noise variance follows from the SNR
    with unit pilot power.
    """

    M: int = 32
    Nx: int = 4
    Ny: int = 4
    K: int = 3
    Q: int = 88
    Gr: int = 64
    Gtx: int = 4
    Gty: int = 8
    LG: int = 2
    Lr: int = 6
    snr_db: float = 0.0
    on_grid: bool = True
    gamma_th: float = 1e-3
    p_max: int = 5
    max_em_iters: int = 150
    em_tol: float = 1e-3
    eta: float = 0.6
    seed: int = 0

    def __post_init__(self):
        for name in ("M", "Nx", "Ny", "K", "Q", "Gr", "Gtx", "Gty", "LG", "Lr",
                     "p_max", "max_em_iters"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.Gr < self.M:
            raise ConfigError(f"Gr={self.Gr} must be >= M={self.M}")
        if self.Gt < self.N:
            raise ConfigError(f"Gt={self.Gt} must be >= N={self.N}")
        if self.LG > min(self.M, self.N):
            raise ConfigError(f"LG={self.LG} must be <= min(M, N)={min(self.M, self.N)}")
        if self.Lr > self.N:
            raise ConfigError(f"Lr={self.Lr} must be <= N={self.N}")
        if not np.isfinite(self.snr_db):
            raise ConfigError("snr_db must be finite")
        if self.gamma_th <= 0 or self.em_tol <= 0 or self.eta <= 0:
            raise ConfigError("gamma_th, em_tol and eta must be positive")

    @property
    def N(self) -> int:
        return self.Nx * self.Ny

    @property
    def Gt(self) -> int:
        return self.Gtx * self.Gty

    @property
    def noise_var(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


def desk_profile(**overrides) -> SystemConfig:
    """Laptop-scale scenario: M=16, N=2x4, K=2, G_r=32, G_t=4x4, L_G=2, L_r=3."""
    base = dict(M=16, Nx=2, Ny=4, K=2, Q=64, Gr=32, Gtx=4, Gty=4, LG=2, Lr=3)
    base.update(overrides)
    return SystemConfig(**base)


def paper_profile(**overrides) -> SystemConfig:
    return SystemConfig(**overrides)


@dataclass(frozen=True)
class VadDictionaries:
    U_R: np.ndarray
    U_Tx: np.ndarray
    U_Ty: np.ndarray
    U_T: np.ndarray


def _grid_dictionary(size: int, resolution: int) -> np.ndarray:
    grid = -1.0 + 2.0 * np.arange(resolution) / resolution
    cols = [steering_vector(size, g) for g in grid]
    return np.stack(cols, axis=1) / np.sqrt(size)


def build_dictionaries(cfg: SystemConfig) -> VadDictionaries:
    """Steering-vector dictionaries on the uniform grid ``-1 + 2g/G``."""
    U_R = _grid_dictionary(cfg.M, cfg.Gr)
    U_Tx = _grid_dictionary(cfg.Nx, cfg.Gtx)
    U_Ty = _grid_dictionary(cfg.Ny, cfg.Gty)
    return VadDictionaries(U_R=U_R, U_Tx=U_Tx, U_Ty=U_Ty, U_T=np.kron(U_Tx, U_Ty))


@dataclass(frozen=True)
class ChannelRealization:
    """Ground truth for one Monte-Carlo draw.

    ``H_tilde``, ``row_support`` and ``col_supports`` are only populated in
    on-grid mode. ``G`` and ``h_r`` are only populated in grid-mismatch
    mode, where the physical per-hop channels exist; on-grid draws sample
    the cascaded grid indices directly.
    """

    H: list
    on_grid: bool
    H_tilde: Optional[list] = None
    row_support: Optional[np.ndarray] = None
    col_supports: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    h_r: Optional[list] = None
    path_params: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.H)

    def support_mask(self) -> np.ndarray:
        """Boolean mask over ``Vec([H~_1 ... H~_K])`` marking true nonzeros."""
        if not self.on_grid:
            raise UnsupportedModeError("support is undefined under grid mismatch")
        return np.abs(angular_ground_truth(self)).ravel(order="F") > 0


def generate_channels(cfg: SystemConfig, rng: RandomSource) -> ChannelRealization:
    """Draw one multiuser cascaded channel realization.

    On-grid: ``L_G`` distinct BS-side grid rows shared by all users, and for
    each (row, user) pair ``L_r`` distinct cascaded-AoD grid columns. The
    entry gain is ``zeta_G[l1] * zeta_r[k, l2]`` with all gains CN(0, 1),
    scaled so that ``H_k = U_R H~_k U_T^H`` equals the geometric sum over
    unit-modulus steering vectors with ``1/sqrt(L_G L_r)`` normalization.

    Grid mismatch: angles uniform on ``[-pi/2, pi/2]`` and
    ``H_k = G Diag(h_r,k)`` built from the per-hop geometric channels.
    """
    if cfg.on_grid:
        return _generate_on_grid(cfg, rng)
    return _generate_mismatch(cfg, rng)


def _generate_on_grid(cfg: SystemConfig, rng: RandomSource) -> ChannelRealization:
    if cfg.LG > cfg.Gr or cfg.Lr > cfg.Gt:
        raise ConfigError("on-grid mode needs LG <= Gr and Lr <= Gt")
    dicts = build_dictionaries(cfg)
    rows = rng.choice(cfg.Gr, cfg.LG)
    zeta_G = rng.complex_normal(cfg.LG)
    zeta_r = rng.complex_normal((cfg.K, cfg.Lr))
    scale = np.sqrt(cfg.M * cfg.N / (cfg.LG * cfg.Lr))
    cols = np.empty((cfg.K, cfg.LG, cfg.Lr), dtype=int)
    H_tilde, H = [], []
    for k in range(cfg.K):
        Hk = np.zeros((cfg.Gr, cfg.Gt), dtype=complex)
        for l1, row in enumerate(rows):
            cols[k, l1] = rng.choice(cfg.Gt, cfg.Lr)
            Hk[row, cols[k, l1]] = scale * zeta_G[l1] * zeta_r[k]
        H_tilde.append(Hk)
        H.append(dicts.U_R @ Hk @ dicts.U_T.conj().T)
    return ChannelRealization(
        H=H,
        on_grid=True,
        H_tilde=H_tilde,
        row_support=np.sort(rows),
        col_supports=cols,
        path_params={"rows": rows, "zeta_G": zeta_G, "zeta_r": zeta_r},
    )


def _generate_mismatch(cfg: SystemConfig, rng: RandomSource) -> ChannelRealization:
    half_pi = np.pi / 2
    aoa_bs = rng.uniform(-half_pi, half_pi, cfg.LG)
    elev_d = rng.uniform(-half_pi, half_pi, cfg.LG)
    azim_d = rng.uniform(-half_pi, half_pi, cfg.LG)
    elev_a = rng.uniform(-half_pi, half_pi, (cfg.K, cfg.Lr))
    azim_a = rng.uniform(-half_pi, half_pi, (cfg.K, cfg.Lr))
    zeta_G = rng.complex_normal(cfg.LG)
    zeta_r = rng.complex_normal((cfg.K, cfg.Lr))

    G = np.zeros((cfg.M, cfg.N), dtype=complex)
    for l1 in range(cfg.LG):
        a = steering_vector(cfg.M, np.sin(aoa_bs[l1]))
        u = np.sin(elev_d[l1]) * np.sin(azim_d[l1])
        v = np.cos(elev_d[l1])
        b = upa_response(cfg.Nx, cfg.Ny, u, v)
        G += zeta_G[l1] * np.outer(a, b.conj())
    G /= np.sqrt(cfg.LG)

    h_r, H = [], []
    for k in range(cfg.K):
        hk = np.zeros(cfg.N, dtype=complex)
        for l2 in range(cfg.Lr):
            u = np.sin(elev_a[k, l2]) * np.sin(azim_a[k, l2])
            v = np.cos(elev_a[k, l2])
            hk += zeta_r[k, l2] * upa_response(cfg.Nx, cfg.Ny, u, v)
        hk /= np.sqrt(cfg.Lr)
        h_r.append(hk)
        H.append(G * hk[None, :])
    return ChannelRealization(
        H=H,
        on_grid=False,
        G=G,
        h_r=h_r,
        path_params={
            "aoa_bs": aoa_bs, "elev_aod": elev_d, "azim_aod": azim_d,
            "elev_aoa": elev_a, "azim_aoa": azim_a,
            "zeta_G": zeta_G, "zeta_r": zeta_r,
        },
    )


def angular_ground_truth(real: ChannelRealization) -> np.ndarray:
    """Stacked angular channel ``[H~_1, ..., H~_K]`` of shape ``G_r x K G_t``."""
    if not real.on_grid or real.H_tilde is None:
        raise UnsupportedModeError("angular ground truth requires an on-grid realization")
    return np.concatenate(real.H_tilde, axis=1)


def dump_realization(real: ChannelRealization, path) -> None:
    """Write the realization as a plain-text dump.

    Each matrix is introduced by ``#matrix <name> <rows> <cols>`` and
    followed by one ``re,im`` line per entry in row-major order.
    """
    mats = {f"H_{k}": Hk for k, Hk in enumerate(real.H)}
    if real.H_tilde is not None:
        mats.update({f"H_tilde_{k}": Hk for k, Hk in enumerate(real.H_tilde)})
    if real.G is not None:
        mats["G"] = real.G
        mats.update({f"h_r_{k}": h[:, None] for k, h in enumerate(real.h_r)})
    lines = [f"#realization on_grid={int(real.on_grid)} K={real.K}"]
    for name, mat in mats.items():
        mat = np.atleast_2d(mat)
        lines.append(f"#matrix {name} {mat.shape[0]} {mat.shape[1]}")
        lines.extend(f"{float(z.real)!r},{float(z.imag)!r}" for z in mat.ravel())
    Path(path).write_text("\n".join(lines) + "\n")


def load_dump(path) -> dict:
    """Read a dump written by :func:`dump_realization` into ``{name: array}``."""
    out, name, shape, buf = {}, None, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#matrix"):
            if name is not None:
                out[name] = np.array(buf, dtype=complex).reshape(shape)
            _, name, rows, cols = line.split()
            shape, buf = (int(rows), int(cols)), []
        elif line.startswith("#") or not line.strip():
            continue
        else:
            re, im = line.split(",")
            buf.append(complex(float(re), float(im)))
    if name is not None:
        out[name] = np.array(buf, dtype=complex).reshape(shape)
    return out
