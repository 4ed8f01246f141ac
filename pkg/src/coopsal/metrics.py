"""Evaluation: MAE, adaptive-threshold F-measure, and predictive entropy.

The F-measure binarizes predictions at t = min(2 * mean(pred), 1) with a
strict comparison, the saliency community's usual convention; an
all-background ground truth has no defined F and is reported as skipped.
Uncertainty is the per-pixel binary entropy of the mean of several sampled
predictions, together with helpers that split it into a 1-px boundary band
versus the eroded foreground interior.  S-measure and E-measure are out of
scope and intentionally absent from reports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "mae", "f_measure", "uncertainty_map", "dilate3x3", "erode3x3",
    "boundary_band", "interior_mask", "boundary_interior_entropy",
    "ImageEval", "EvalReport", "evaluate", "write_report_csv",
]

ENTROPY_EPS = 1e-6


def _check_unit_range(name: str, arr: np.ndarray) -> None:
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute error over all pixels."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    _check_unit_range("pred", pred)
    _check_unit_range("gt", gt)
    return float(np.abs(pred.astype(np.float64) - gt.astype(np.float64)).mean())


def f_measure(pred: np.ndarray, gt: np.ndarray, beta_sq: float = 0.3) -> float | None:
    """Adaptive-threshold F-measure; None for an all-background ground truth."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    _check_unit_range("pred", pred)
    if not np.all((gt == 0) | (gt == 1)):
        raise ValueError("ground truth must be binary")
    positives = gt == 1
    if not positives.any():
        return None
    threshold = min(2.0 * float(pred.mean()), 1.0)
    detected = pred > threshold
    true_pos = float((detected & positives).sum())
    precision = true_pos / detected.sum() if detected.any() else 0.0
    recall = true_pos / positives.sum()
    denom = beta_sq * precision + recall
    if denom == 0.0:
        return 0.0
    return float((1.0 + beta_sq) * precision * recall / denom)


def uncertainty_map(samples) -> np.ndarray:
    """Binary entropy of the pixelwise mean prediction, in float64.

    ``samples`` stacks m >= 1 prediction batches on the leading axis; the
    mean is clamped to [eps, 1-eps] before the logs so the result lies in
    [0, ln 2] exactly.
    """
    arr = np.asarray(samples)
    if arr.size == 0 or arr.shape[0] < 1:
        raise ValueError("need at least one prediction sample")
    _check_unit_range("samples", arr)
    p = np.clip(arr.astype(np.float64).mean(axis=0), ENTROPY_EPS, 1.0 - ENTROPY_EPS)
    return -p * np.log(p) - (1.0 - p) * np.log1p(-p)


# ---------------------------------------------------------------------------
# boundary vs interior entropy
# ---------------------------------------------------------------------------

def _neighborhood_any(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    out = np.zeros_like(mask)
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            out |= padded[dr:dr + mask.shape[0], dc:dc + mask.shape[1]]
    return out


def dilate3x3(mask: np.ndarray) -> np.ndarray:
    """Binary dilation by the full 3x3 neighborhood."""
    return _neighborhood_any(np.asarray(mask, dtype=bool))


def erode3x3(mask: np.ndarray) -> np.ndarray:
    """Binary erosion by the full 3x3 neighborhood."""
    return ~_neighborhood_any(~np.asarray(mask, dtype=bool))


def boundary_band(gt: np.ndarray) -> np.ndarray:
    """1-px band around the object contour: dilation minus erosion."""
    mask = np.asarray(gt, dtype=bool)
    return dilate3x3(mask) & ~erode3x3(mask)


def interior_mask(gt: np.ndarray) -> np.ndarray:
    """Foreground that survives a 1-px erosion."""
    return erode3x3(np.asarray(gt, dtype=bool))


def boundary_interior_entropy(entropy: np.ndarray, gt: np.ndarray):
    """Mean entropy over the boundary band and the interior, or None when a
    region is empty (thin shapes can erode away)."""
    entropy, gt = np.asarray(entropy), np.asarray(gt)
    if entropy.shape != gt.shape:
        raise ValueError(f"shape mismatch: {entropy.shape} vs {gt.shape}")
    band = boundary_band(gt)
    inner = interior_mask(gt)
    if not band.any() or not inner.any():
        return None
    return float(entropy[band].mean()), float(entropy[inner].mean())


# ---------------------------------------------------------------------------
# corpus reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageEval:
    index: int
    mae: float
    f_beta: float | None
    mean_entropy: float | None


@dataclass
class EvalReport:
    rows: list
    mean_mae: float
    mean_f_beta: float | None     # skipped images excluded
    skipped_f: int
    mean_entropy: float | None

    def summary(self) -> str:
        lines = [f"images evaluated: {len(self.rows)}",
                 f"mean MAE: {self.mean_mae:.6f}"]
        if self.mean_f_beta is None:
            lines.append("mean F-beta: undefined (all images skipped)")
        else:
            lines.append(f"mean F-beta: {self.mean_f_beta:.6f} "
                         f"({self.skipped_f} skipped)")
        if self.mean_entropy is not None:
            lines.append(f"mean entropy: {self.mean_entropy:.6f}")
        lines.append("S-measure / E-measure: not computed (out of scope)")
        return "\n".join(lines)


def evaluate(pred: np.ndarray, gt: np.ndarray, samples=None) -> EvalReport:
    """Per-image metrics over [N,1,H,W] batches.

    ``samples`` ([m,N,1,H,W]) adds a per-image mean-entropy column.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    entropy = None
    if samples is not None:
        entropy = uncertainty_map(samples)
    rows = []
    for i in range(pred.shape[0]):
        rows.append(ImageEval(
            index=i,
            mae=mae(pred[i], gt[i]),
            f_beta=f_measure(pred[i], gt[i]),
            mean_entropy=float(entropy[i].mean()) if entropy is not None else None,
        ))
    defined = [r.f_beta for r in rows if r.f_beta is not None]
    entropies = [r.mean_entropy for r in rows if r.mean_entropy is not None]
    return EvalReport(
        rows=rows,
        mean_mae=float(np.mean([r.mae for r in rows])) if rows else 0.0,
        mean_f_beta=float(np.mean(defined)) if defined else None,
        skipped_f=len(rows) - len(defined),
        mean_entropy=float(np.mean(entropies)) if entropies else None,
    )


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_index", "mae", "f_beta", "mean_entropy"])
        for r in report.rows:
            writer.writerow([
                r.index,
                repr(r.mae),
                "" if r.f_beta is None else repr(r.f_beta),
                "" if r.mean_entropy is None else repr(r.mean_entropy),
            ])
