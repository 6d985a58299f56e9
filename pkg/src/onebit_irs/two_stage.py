"""Row-support detection from block variances followed by reduced SBL."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bsbl import BsblControls, BsblResult, bsbl_estimate, recover_cascaded_block
from .channel_model import SystemConfig, VadDictionaries
from .errors import EmptySupportError
from .measurement import PilotFrame, QuantizedObservation
from .sbl import SblControls, SblResult, sbl_estimate


@dataclass(frozen=True)
class SupportSet:
    rows: np.ndarray
    threshold: float
    gamma: np.ndarray

    def __len__(self) -> int:
        return int(self.rows.size)


def detect_support(gamma: np.ndarray, gamma_th: float) -> SupportSet:
    """``{n : gamma_n > gamma_th}`` as 0-based ascending row indices.

    Raises
    ------
    EmptySupportError
        When no block variance exceeds the threshold.
    """
    if not gamma_th > 0:
        raise ValueError(f"gamma_th must be positive, got {gamma_th}")
    gamma = np.asarray(gamma, dtype=float)
    rows = np.flatnonzero(gamma > gamma_th)
    if rows.size == 0:
        raise EmptySupportError(f"no block variance above {gamma_th:g} (max {gamma.max():.3g})")
    return SupportSet(rows=rows, threshold=float(gamma_th), gamma=gamma)


def reduced_operator(frame: PilotFrame, rows) -> np.ndarray:
    """``phi^T kron U_R[:, rows]``."""
    rows = np.asarray(rows, dtype=int)
    if rows.size == 0:
        raise EmptySupportError("reduced operator needs at least one row")
    return np.kron(frame.phi.T, frame.dicts.U_R[:, rows])


def embed_rows(h_omega: np.ndarray, rows, cfg: SystemConfig) -> np.ndarray:
    """Zero-padded stacked angular matrix with ``[H~]_{rows,:} = Vec^-1(h_omega)``."""
    rows = np.asarray(rows, dtype=int)
    width = cfg.K * cfg.Gt
    Ht = np.zeros((cfg.Gr, width), dtype=complex)
    Ht[rows, :] = h_omega.reshape(rows.size, width, order="F")
    return Ht


def project_angular(Ht: np.ndarray, dicts: VadDictionaries, cfg: SystemConfig) -> list:
    U_Th = dicts.U_T.conj().T
    Gt = cfg.Gt
    return [dicts.U_R @ Ht[:, k * Gt:(k + 1) * Gt] @ U_Th for k in range(cfg.K)]


@dataclass
class TwoStageResult:
    H: list
    H_tilde: Optional[np.ndarray]
    support: Optional[SupportSet]
    stage1: BsblResult
    stage2: Optional[SblResult]
    fallback: bool
    iterations: int
    diagnostics: dict = field(default_factory=dict)


def run_stage_one(frame: PilotFrame, obs: QuantizedObservation, cfg: SystemConfig,
                  controls: Optional[BsblControls] = None) -> BsblResult:
    c = controls or BsblControls.from_config(cfg)
    return bsbl_estimate(frame.upsilon, obs.r_bar, obs.noise_var, cfg.K * cfg.N, c)


def two_stage_estimate(frame: PilotFrame, obs: QuantizedObservation, cfg: SystemConfig,
                       gamma_th: Optional[float] = None,
                       stage1: Optional[BsblResult] = None,
                       bsbl_controls: Optional[BsblControls] = None,
                       sbl_controls: Optional[SblControls] = None) -> TwoStageResult:
    """BSBL on ``(upsilon, r_bar)``, threshold ``gamma``, then SBL on ``(xi_Omega, r)``.

    ``stage1`` may carry an already computed BSBL result for the same
    observation, which lets threshold sweeps share one first stage. An empty
    support falls back to the BSBL channel estimate with ``fallback=True``.
    """
    th = cfg.gamma_th if gamma_th is None else float(gamma_th)
    if stage1 is None:
        stage1 = run_stage_one(frame, obs, cfg, bsbl_controls)
    try:
        support = detect_support(stage1.gamma, th)
    except EmptySupportError as exc:
        H = recover_cascaded_block(stage1.h, frame.dicts, cfg)
        return TwoStageResult(H=H, H_tilde=None, support=None, stage1=stage1, stage2=None,
                              fallback=True, iterations=stage1.iterations,
                              diagnostics={"reason": str(exc)})
    xi_omega = reduced_operator(frame, support.rows)
    sc = sbl_controls or SblControls.from_config(cfg)
    stage2 = sbl_estimate(xi_omega, obs.r, obs.noise_var, sc)
    Ht = embed_rows(stage2.h, support.rows, cfg)
    return TwoStageResult(
        H=project_angular(Ht, frame.dicts, cfg),
        H_tilde=Ht,
        support=support,
        stage1=stage1,
        stage2=stage2,
        fallback=False,
        iterations=stage1.iterations + stage2.iterations,
        diagnostics={"support_size": len(support), "stage2_dim": xi_omega.shape[1]},
    )
