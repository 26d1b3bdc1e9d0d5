"""PSNR, SSIM, a deterministic k-means proxy segmenter and multiclass Dice."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DegenerateClusteringError, DomainError, ShapeError, SizeError
from .volgrid import LabelVolume, Volume

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
DEFAULT_CLASSES = 4
KMEANS_MAX_ITER = 50

CONDITION_ORIGINAL = "original"


def downsampled_condition(s: float) -> str:
    return f"downsampled_s{s:g}"


def condition_label(condition: str) -> str:
    """Human-readable condition name in the style of the supplementary tables."""
    if condition == CONDITION_ORIGINAL:
        return "Original resolution"
    if condition.startswith("downsampled_s"):
        return f"Downsampled (s={condition[len('downsampled_s'):]})"
    return condition


def _arrays(pred, ref) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred.data if isinstance(pred, Volume) else pred, dtype=np.float64)
    r = np.asarray(ref.data if isinstance(ref, Volume) else ref, dtype=np.float64)
    if p.shape != r.shape:
        raise ShapeError(f"prediction {p.shape} and reference {r.shape} differ")
    return p, r


def data_range(ref) -> float:
    r = np.asarray(ref.data if isinstance(ref, Volume) else ref, dtype=np.float64)
    return float(r.max() - r.min())


def psnr(pred, ref) -> float:
    """``10 log10(R^2 / MSE)`` with ``R = max(ref) - min(ref)``; ``inf`` when MSE is 0."""
    p, r = _arrays(pred, ref)
    mse = float(np.mean((p - r) ** 2))
    if mse == 0.0:
        return math.inf
    return psnr_from_mse(mse, data_range(r))


def psnr_from_mse(mse: float, peak: float) -> float:
    return 10.0 * math.log10(peak**2 / mse)


def gaussian_window_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _local_mean(a: np.ndarray, g: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    for ax in axes:
        a = correlate1d(a, g, axis=ax, mode="nearest")
    return a


def ssim_map(p: np.ndarray, r: np.ndarray, peak: float, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA,
             axes: Sequence[int] = None) -> np.ndarray:
    """Local SSIM at every position where the full Gaussian window fits (valid region)."""
    axes = tuple(range(p.ndim)) if axes is None else tuple(axes)
    if any(p.shape[ax] < size for ax in axes):
        raise SizeError(f"shape {p.shape} is smaller than the {size}-voxel SSIM window")
    g = gaussian_window_1d(size, sigma)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_p = _local_mean(p, g, axes)
    mu_r = _local_mean(r, g, axes)
    var_p = _local_mean(p * p, g, axes) - mu_p**2
    var_r = _local_mean(r * r, g, axes) - mu_r**2
    cov = _local_mean(p * r, g, axes) - mu_p * mu_r
    s = ((2 * mu_p * mu_r + c1) * (2 * cov + c2)) / ((mu_p**2 + mu_r**2 + c1) * (var_p + var_r + c2))
    half = (size - 1) // 2
    crop = tuple(slice(half, n - half) if ax in axes else slice(None) for ax, n in enumerate(p.shape))
    return s[crop]


def ssim(pred, ref, mode: str = "3d", window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean local SSIM with a Gaussian window.

    ``mode="3d"`` uses a full 3D window; ``mode="2d"`` averages slice-wise 2D
    SSIM over the last axis. Constants use the reference data range (1 if the
    reference is constant).
    """
    p, r = _arrays(pred, ref)
    peak = data_range(r) or 1.0
    if mode == "3d":
        return float(ssim_map(p, r, peak, window, sigma).mean())
    if mode == "2d":
        return float(ssim_map(p, r, peak, window, sigma, axes=(0, 1)).mean())
    raise ValueError(f"unknown SSIM mode {mode!r}")


def segment_proxy(v, k: int = DEFAULT_CLASSES) -> LabelVolume:
    """1D k-means on intensity; deterministic stand-in for a learned brain segmenter.

    Centres start at the evenly spaced quantiles ``(i + 0.5) / k`` (falling back
    to quantiles of the distinct values if those coincide), iterate at most 50
    times, and labels are ordered by ascending centre. A cluster left empty is
    re-seeded at the value farthest from its assigned centre.
    """
    x = np.asarray(v.data if isinstance(v, Volume) else v, dtype=np.float64)
    if k < 2:
        raise ValueError("need at least two clusters")
    if x.min() < 0.0 or x.max() > 1.0:
        raise DomainError("segment_proxy expects intensities in [0, 1]")
    flat = x.ravel()
    distinct = np.unique(flat)
    if distinct.size < k:
        raise DegenerateClusteringError(f"{distinct.size} distinct intensities cannot form {k} clusters")
    qs = (np.arange(k) + 0.5) / k
    centres = np.quantile(flat, qs)
    if np.unique(centres).size < k:
        centres = np.quantile(distinct, qs)
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        centres = np.sort(centres)
        bounds = (centres[1:] + centres[:-1]) / 2.0
        new_labels = np.searchsorted(bounds, flat, side="left")
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        sums = np.bincount(labels, weights=flat, minlength=k)
        occupied = counts > 0
        centres = np.where(occupied, sums / np.maximum(counts, 1), centres)
        if not occupied.all():
            # move each empty cluster onto the value farthest from its current centre
            dist = np.abs(flat - centres[labels])
            for c in np.flatnonzero(~occupied):
                far = int(np.argmax(dist))
                centres[c] = flat[far]
                dist[flat == flat[far]] = -1.0
            labels = None
    order = np.argsort(centres, kind="stable")
    rank = np.empty(k, dtype=np.int64)
    rank[order] = np.arange(k)
    return LabelVolume(rank[labels].reshape(x.shape), k)


def multiclass_dice(a: LabelVolume, b: LabelVolume) -> Tuple[List[float], float]:
    """Per-class Dice and their mean; classes absent from both volumes are NaN and skipped."""
    if a.shape != b.shape or a.num_classes != b.num_classes:
        raise ShapeError("label volumes must share shape and class count")
    per_class = []
    for c in range(a.num_classes):
        in_a = a.labels == c
        in_b = b.labels == c
        denom = int(in_a.sum()) + int(in_b.sum())
        if denom == 0:
            per_class.append(math.nan)
            continue
        per_class.append(2.0 * int(np.logical_and(in_a, in_b).sum()) / denom)
    present = [d for d in per_class if not math.isnan(d)]
    return per_class, float(np.mean(present)) if present else math.nan


@dataclass
class MetricReport:
    subject_id: str
    ssim: float
    psnr_db: float
    dice_per_class: List[float] = field(default_factory=list)
    dice_mean: float = math.nan
    condition: str = CONDITION_ORIGINAL
    fold: int = 0

    @property
    def psnr_infinite(self) -> bool:
        return math.isinf(self.psnr_db)


def evaluate_pair(pred, ref, k: int = DEFAULT_CLASSES, subject_id: str = "", condition: str = CONDITION_ORIGINAL,
                  fold: int = 0, ssim_mode: str = "3d") -> MetricReport:
    """PSNR, SSIM and proxy-segmentation Dice of ``pred`` against ``ref``."""
    p, r = _arrays(pred, ref)
    per_class, mean = multiclass_dice(segment_proxy(np.clip(p, 0.0, 1.0), k), segment_proxy(r, k))
    return MetricReport(subject_id, ssim(p, r, ssim_mode), psnr(p, r), per_class, mean, condition, fold)


# CSV --------------------------------------------------------------------------

METRIC_COLUMNS = ("ssim", "psnr_db", "dice_mean")
#: decimals used for the mean +/- std aggregate cells
TABLE_DECIMALS = {"ssim": 3, "psnr_db": 2, "dice_mean": 3}
AGGREGATE_ID = "mean ± std"


def csv_header(num_classes: int) -> List[str]:
    return ["subject_id", "fold", "condition", *METRIC_COLUMNS] + [f"dice_c{c}" for c in range(num_classes)]


def _fmt(x: float) -> str:
    return repr(float(x))


def aggregate(reports: Sequence[MetricReport]) -> Dict[str, Dict[str, Tuple[float, float]]]:
    """``{condition: {metric: (mean, sample std)}}`` in first-seen condition order."""
    out: Dict[str, Dict[str, Tuple[float, float]]] = {}
    for cond in dict.fromkeys(r.condition for r in reports):
        rows = [r for r in reports if r.condition == cond]
        stats = {}
        for m in METRIC_COLUMNS:
            vals = np.array([getattr(r, m) for r in rows], dtype=np.float64)
            if not np.all(np.isfinite(vals)):
                # infinite PSNR (identical volumes): the spread is undefined
                stats[m] = (float(np.mean(vals)), math.nan)
                continue
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            stats[m] = (float(np.mean(vals)), std)
        out[cond] = stats
    return out


def format_mean_std(mean: float, std: float, decimals: int) -> str:
    return f"{mean:.{decimals}f} ± {std:.{decimals}f}"


def write_reports_csv(reports: Sequence[MetricReport], path, with_aggregate: bool = True) -> None:
    """Per-subject rows at full precision, then one ``mean ± std`` row per condition."""
    k = max((len(r.dice_per_class) for r in reports), default=DEFAULT_CLASSES)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(k))
        for r in reports:
            dice = [_fmt(d) for d in r.dice_per_class] + [""] * (k - len(r.dice_per_class))
            w.writerow([r.subject_id, r.fold, r.condition, _fmt(r.ssim), _fmt(r.psnr_db), _fmt(r.dice_mean), *dice])
        if with_aggregate:
            for cond, stats in aggregate(reports).items():
                cells = [format_mean_std(*stats[m], TABLE_DECIMALS[m]) for m in METRIC_COLUMNS]
                w.writerow([AGGREGATE_ID, "all", cond, *cells] + [""] * k)


def read_reports_csv(path) -> Tuple[List[MetricReport], List[dict]]:
    """Parse a report CSV back into per-subject reports and raw aggregate rows."""
    reports, aggregates = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["subject_id"] == AGGREGATE_ID:
                aggregates.append(row)
                continue
            dice = [float(row[c]) for c in row if c.startswith("dice_c") and row[c] != ""]
            reports.append(MetricReport(row["subject_id"], float(row["ssim"]), float(row["psnr_db"]), dice,
                                        float(row["dice_mean"]), row["condition"], int(row["fold"])))
    return reports, aggregates
