"""Pilot frames, IRS phase schedules, sensing operators and one-bit observations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .channel_model import ChannelRealization, SystemConfig, VadDictionaries
from .errors import ConfigError
from .numerics import RandomSource, sign_quantize

PHASE_MODES = ("random", "structured")


@dataclass(frozen=True)
class PilotFrame:
    """Training schedule and the operators it induces.

    Attributes
    ----------
    S : (Q, K) pilot symbols.
    theta : (N, Q) IRS reflection vectors, one column per slot.
    phi : (K*G_t, Q) with ``phi_q = (s_q kron I) U_T^H theta_q``.
    delta : (K*N, Q) with ``delta_q = (s_q kron I) theta_q``.
    xi : (Q*M, K*G_r*G_t) SMV operator ``phi^T kron U_R``.
    upsilon : (Q*M, K*G_r*N) block-SMV operator ``U_R kron delta^T``.
    slot_columns : 0-based dictionary column per slot in structured mode.
    """

    S: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    delta: np.ndarray
    xi: np.ndarray
    upsilon: np.ndarray
    phase_mode: str
    dicts: VadDictionaries
    slot_columns: Optional[np.ndarray] = None

    @property
    def Q(self) -> int:
        return self.S.shape[0]

    @property
    def K(self) -> int:
        return self.S.shape[1]


@dataclass(frozen=True)
class QuantizedObservation:
    """One-bit measurements in both orderings plus the unquantized signals.

    ``y`` and ``y_bar`` exist for oracle tests only; estimators read ``r``
    and ``r_bar``.
    """

    r: np.ndarray
    r_bar: np.ndarray
    y: np.ndarray
    y_bar: np.ndarray
    noise_var: float


def structured_slot_columns(Q: int, N: int) -> np.ndarray:
    """Cyclic schedule ``b_q = ((q-1) mod N) + 1``, returned 0-based."""
    return np.arange(Q) % N


def _stack_users(S: np.ndarray, per_slot: np.ndarray) -> np.ndarray:
    # column q is s_q kron per_slot[:, q]
    Q, K = S.shape
    return (S.T[:, None, :] * per_slot[None, :, :]).reshape(K * per_slot.shape[0], Q)


def build_pilot_frame(cfg: SystemConfig, dicts: VadDictionaries, rng: RandomSource,
                      phase_mode: str = "random") -> PilotFrame:
    """Draw QPSK pilots and IRS phases and assemble both sensing operators.

    ``phase_mode="structured"`` sets ``theta_q`` to dictionary column
    ``b_q`` of ``U_T`` and requires ``G_t == N``.
    """
    if phase_mode not in PHASE_MODES:
        raise ConfigError(f"unknown phase mode {phase_mode!r}")
    S = rng.qpsk((cfg.Q, cfg.K))
    slot_columns = None
    if phase_mode == "structured":
        if cfg.Gt != cfg.N:
            raise ConfigError(f"structured phases need Gt == N, got Gt={cfg.Gt}, N={cfg.N}")
        slot_columns = structured_slot_columns(cfg.Q, cfg.N)
        theta = dicts.U_T[:, slot_columns]
    else:
        theta = rng.unit_phases((cfg.N, cfg.Q))
    phi = _stack_users(S, dicts.U_T.conj().T @ theta)
    delta = _stack_users(S, theta)
    xi = np.kron(phi.T, dicts.U_R)
    upsilon = np.kron(dicts.U_R, delta.T)
    return PilotFrame(S=S, theta=theta, phi=phi, delta=delta, xi=xi, upsilon=upsilon,
                      phase_mode=phase_mode, dicts=dicts, slot_columns=slot_columns)


def block_permutation(M: int, Q: int) -> np.ndarray:
    """Index map with ``Vec(Y^T) == Vec(Y)[perm]`` for ``Y`` of shape ``M x Q``."""
    return np.arange(Q * M).reshape(Q, M).T.ravel()


def observe(real: ChannelRealization, frame: PilotFrame, cfg: SystemConfig,
            rng: RandomSource, direct: Optional[Sequence[np.ndarray]] = None,
            noise_var: Optional[float] = None) -> QuantizedObservation:
    """Noisy received signal over all slots and its one-bit quantization.

    ``y_q = sum_k (H_k theta_q + h_d,k) s_qk + w_q`` with
    ``w_q ~ CN(0, noise_var I)``; the direct term is omitted when
    ``direct`` is None.
    """
    sigma2 = cfg.noise_var if noise_var is None else float(noise_var)
    Y = np.zeros((cfg.M, frame.Q), dtype=complex)
    for k, Hk in enumerate(real.H):
        Y += (Hk @ frame.theta) * frame.S[:, k][None, :]
    if direct is not None:
        for k, hd in enumerate(direct):
            Y += np.outer(hd, frame.S[:, k])
    if sigma2 > 0:
        Y += rng.complex_normal((cfg.M, frame.Q), var=sigma2)
    y = Y.ravel(order="F")
    y_bar = Y.ravel(order="C")
    return QuantizedObservation(r=sign_quantize(y), r_bar=sign_quantize(y_bar),
                                y=y, y_bar=y_bar, noise_var=sigma2)


def direct_link_operator(frame: PilotFrame) -> np.ndarray:
    """``[s_1, ..., s_Q]^T kron U_R``, of shape ``Q*M x K*G_r``."""
    return np.kron(frame.S, frame.dicts.U_R)


def extend_with_direct_link(frame: PilotFrame, cfg: SystemConfig) -> np.ndarray:
    """Augmented operator ``[xi, xi_d]`` for the stacked unknown ``[h; h_d]``."""
    xi_d = direct_link_operator(frame)
    if xi_d.shape != (cfg.Q * cfg.M, cfg.K * cfg.Gr):
        raise ConfigError("frame dimensions do not match the configuration")
    return np.hstack([frame.xi, xi_d])
