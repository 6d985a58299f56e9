"""Per-run error and support-detection metrics."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


def nmse(true_channels: Sequence[np.ndarray], est_channels: Sequence[np.ndarray]) -> float:
    """User-averaged ``||H_k - H^_k||_F^2 / ||H_k||_F^2`` for one run."""
    if len(true_channels) != len(est_channels):
        raise ValueError(f"{len(true_channels)} true channels vs {len(est_channels)} estimates")
    if len(true_channels) == 0:
        raise ValueError("no channels given")
    ratios = []
    for H, Hh in zip(true_channels, est_channels):
        H = np.asarray(H)
        Hh = np.asarray(Hh)
        if H.shape != Hh.shape:
            raise ValueError(f"shape mismatch {H.shape} vs {Hh.shape}")
        den = np.linalg.norm(H) ** 2
        if den == 0:
            raise ValueError("true channel is identically zero")
        ratios.append(np.linalg.norm(H - Hh) ** 2 / den)
    return float(np.mean(ratios))


def nmse_db(value: float) -> float:
    return float(10.0 * np.log10(value)) if value > 0 else float("-inf")


def support_accuracy(true_rows: Iterable[int], detected: Iterable[int], n_rows: int) -> float:
    """``(TP + TN) / n_rows`` over per-row binary decisions."""
    truth = np.zeros(n_rows, dtype=bool)
    det = np.zeros(n_rows, dtype=bool)
    t = np.asarray(list(true_rows), dtype=int)
    d = np.asarray(list(detected), dtype=int)
    for name, idx in (("true_rows", t), ("detected", d)):
        if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
            raise ValueError(f"{name} has indices outside [0, {n_rows})")
    truth[t] = True
    det[d] = True
    return float(np.mean(truth == det))
