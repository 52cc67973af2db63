"""
Fusion-quality metrics and the normalized evaluation index.

Every metric works on 8-bit grayscale images (2-D uint8 arrays) and
computes in float64. Three-image metrics take the two sources ``a`` and
``b`` first and the fused image last.
"""

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import convolve2d

from src.amfusion.errors import DataIOError, FormatError, NumericError, ShapeError
from src.amfusion.losses import SsimConfig, ssim
from src.amfusion.tensor import Tensor
from src.utils.math_utils import pearson_r, safe_divide, shannon_entropy

logger = logging.getLogger(__name__)

METRIC_NAMES = ("EN", "AG", "MI", "SD", "SF", "Qabf", "SSIM", "VIF", "SCD")
GRAY_LEVELS = 256

SSIM_METRIC_CONFIG = SsimConfig(dynamic_range=255.0, scales=1)

# edge-preservation logistic constants
QABF_GAMMA_G, QABF_K_G, QABF_SIGMA_G = 0.9994, -15.0, 0.5
QABF_GAMMA_A, QABF_K_A, QABF_SIGMA_A = 0.9879, -22.0, 0.8
_SOBEL_V = np.array([[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]])
_SOBEL_H = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])

VIF_SCALES = 4
VIF_NOISE_VAR = 2.0
VIF_EPS = 1e-10


def as_gray(img) -> np.ndarray:
    """
    Validate an 8-bit grayscale image and return it as float64.

    Raises:
        ShapeError: If the image is not 2-D, smaller than 2x2 or outside 0..255
    """
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ShapeError(f"metrics need a 2-D image of at least 2x2, got shape {arr.shape}")
    arr = arr.astype(np.float64)
    if arr.min() < 0 or arr.max() > 255:
        raise ShapeError("metric input values must lie in [0, 255]")
    return arr


def _as_triple(a, b, fused):
    a, b, fused = as_gray(a), as_gray(b), as_gray(fused)
    if not a.shape == b.shape == fused.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape}, {b.shape}, {fused.shape}")
    return a, b, fused


# single-image metrics


def en(img) -> float:
    """Shannon entropy of the 256-bin histogram (bits)."""
    levels = np.clip(np.rint(as_gray(img)), 0, 255).astype(np.int64)
    return shannon_entropy(np.bincount(levels.ravel(), minlength=GRAY_LEVELS))


def sd(img) -> float:
    """Population standard deviation."""
    return float(np.std(as_gray(img)))


def ag(img) -> float:
    """Mean of sqrt((dx^2 + dy^2) / 2) over the (H-1) x (W-1) forward-difference grid."""
    x = as_gray(img)
    dx = x[:-1, 1:] - x[:-1, :-1]
    dy = x[1:, :-1] - x[:-1, :-1]
    return float(np.mean(np.sqrt((dx * dx + dy * dy) / 2.0)))


def sf(img) -> float:
    """Spatial frequency sqrt(RF^2 + CF^2)."""
    x = as_gray(img)
    rf2 = np.mean((x[:, 1:] - x[:, :-1]) ** 2)
    cf2 = np.mean((x[1:, :] - x[:-1, :]) ** 2)
    return float(np.sqrt(rf2 + cf2))


# two-source metrics


def _mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    xi = np.clip(np.rint(x), 0, 255).astype(np.int64).ravel()
    yi = np.clip(np.rint(y), 0, 255).astype(np.int64).ravel()
    joint = np.bincount(xi * GRAY_LEVELS + yi, minlength=GRAY_LEVELS * GRAY_LEVELS)
    joint = joint.reshape(GRAY_LEVELS, GRAY_LEVELS)
    return shannon_entropy(joint.sum(axis=1)) + shannon_entropy(joint.sum(axis=0)) - shannon_entropy(joint)


def mi(a, b, fused) -> float:
    """MI(a, fused) + MI(b, fused) from 256 x 256 joint histograms (bits)."""
    a, b, fused = _as_triple(a, b, fused)
    return _mutual_information(a, fused) + _mutual_information(b, fused)


def edge_maps(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sobel edge strength and orientation ('same'-size, mirrored border)."""
    sx = convolve2d(img, _SOBEL_H, mode="same", boundary="symm")
    sy = convolve2d(img, _SOBEL_V, mode="same", boundary="symm")
    strength = np.sqrt(sx * sx + sy * sy)
    angle = np.full_like(img, math.pi / 2)
    nz = sx != 0
    angle[nz] = np.arctan(sy[nz] / sx[nz])
    return strength, angle


def _edge_preservation(g_src, a_src, g_fused, a_fused) -> np.ndarray:
    rel = np.ones_like(g_src)
    lo = g_src > g_fused
    hi = g_src < g_fused
    rel[lo] = g_fused[lo] / g_src[lo]
    rel[hi] = g_src[hi] / g_fused[hi]
    orient = 1.0 - np.abs(a_src - a_fused) / (math.pi / 2)
    q_g = QABF_GAMMA_G / (1.0 + np.exp(QABF_K_G * (rel - QABF_SIGMA_G)))
    q_a = QABF_GAMMA_A / (1.0 + np.exp(QABF_K_A * (orient - QABF_SIGMA_A)))
    return q_g * q_a


def qabf(a, b, fused) -> float:
    """
    Edge-preservation quality weighted by source edge strength.

    Returns 0.0 when neither source has any edge.
    """
    a, b, fused = _as_triple(a, b, fused)
    g_a, ang_a = edge_maps(a)
    g_b, ang_b = edge_maps(b)
    g_f, ang_f = edge_maps(fused)
    denom = float(np.sum(g_a + g_b))
    q_af = _edge_preservation(g_a, ang_a, g_f, ang_f)
    q_bf = _edge_preservation(g_b, ang_b, g_f, ang_f)
    return safe_divide(np.sum(q_af * g_a + q_bf * g_b), denom)


def _ssim_pair(x: np.ndarray, y: np.ndarray) -> float:
    tx = Tensor(x[None, None], dtype=np.float64)
    ty = Tensor(y[None, None], dtype=np.float64)
    return ssim(tx, ty, SSIM_METRIC_CONFIG).item()


def ssim_metric(a, b, fused) -> float:
    """Mean of windowed SSIM(a, fused) and SSIM(b, fused) with dynamic range 255."""
    a, b, fused = _as_triple(a, b, fused)
    return (_ssim_pair(a, fused) + _ssim_pair(b, fused)) / 2.0


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = (size - 1) / 2.0
    y, x = np.ogrid[-r:r + 1, -r:r + 1]
    h = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0
    return h / h.sum()


def _vif_window(scale: int) -> int:
    return 2 ** (VIF_SCALES - scale + 1) + 1


def vif_single(ref: np.ndarray, dist: np.ndarray) -> float:
    """
    Pixel-domain multi-scale VIF of ``dist`` against ``ref``.

    Evaluation starts at the first scale whose window fits the full
    image, so small images are scored on their finer windows only; later
    scales stop once the downsampled image no longer holds the window.
    Returns 0.0 when the reference carries no information at any
    evaluated scale.
    """
    first = next((s for s in range(1, VIF_SCALES + 1) if min(ref.shape) >= _vif_window(s)), None)
    if first is None:
        logger.warning("vif: image %s smaller than every window, scoring 0", ref.shape)
        return 0.0
    if first > 1:
        logger.warning("vif: image %s smaller than %dx%d window, starting at scale %d",
                       ref.shape, _vif_window(1), _vif_window(1), first)
    num = den = 0.0
    for scale in range(first, VIF_SCALES + 1):
        n = _vif_window(scale)
        win = gaussian_kernel(n, n / 5.0)
        if scale > first and min(ref.shape) >= n:
            ref = convolve2d(ref, win, mode="valid")[::2, ::2]
            dist = convolve2d(dist, win, mode="valid")[::2, ::2]
        if min(ref.shape) < n:
            logger.warning("vif: image %s smaller than %dx%d window, stopping at scale %d", ref.shape, n, n, scale)
            break
        mu1 = convolve2d(ref, win, mode="valid")
        mu2 = convolve2d(dist, win, mode="valid")
        s1 = convolve2d(ref * ref, win, mode="valid") - mu1 * mu1
        s2 = convolve2d(dist * dist, win, mode="valid") - mu2 * mu2
        s12 = convolve2d(ref * dist, win, mode="valid") - mu1 * mu2
        s1[s1 < 0] = 0
        s2[s2 < 0] = 0

        g = s12 / (s1 + VIF_EPS)
        sv = s2 - g * s12
        flat_ref = s1 < VIF_EPS
        g[flat_ref] = 0
        sv[flat_ref] = s2[flat_ref]
        s1[flat_ref] = 0
        flat_dist = s2 < VIF_EPS
        g[flat_dist] = 0
        sv[flat_dist] = 0
        neg = g < 0
        sv[neg] = s2[neg]
        g[neg] = 0
        sv[sv <= VIF_EPS] = VIF_EPS

        num += float(np.sum(np.log10(1.0 + g * g * s1 / (sv + VIF_NOISE_VAR))))
        den += float(np.sum(np.log10(1.0 + s1 / VIF_NOISE_VAR)))
    return safe_divide(num, den)


def vif(a, b, fused) -> float:
    """Mean of VIF(a -> fused) and VIF(b -> fused)."""
    a, b, fused = _as_triple(a, b, fused)
    return (vif_single(a, fused) + vif_single(b, fused)) / 2.0


def scd(a, b, fused) -> float:
    """r(fused - b, a) + r(fused - a, b); zero-variance correlations count as 0."""
    a, b, fused = _as_triple(a, b, fused)
    return pearson_r(fused - b, a) + pearson_r(fused - a, b)


def evaluate_pair(a, b, fused) -> Dict[str, float]:
    """All nine metrics for one (a, b, fused) triple, keyed by METRIC_NAMES."""
    values = {
        "EN": en(fused),
        "AG": ag(fused),
        "MI": mi(a, b, fused),
        "SD": sd(fused),
        "SF": sf(fused),
        "Qabf": qabf(a, b, fused),
        "SSIM": ssim_metric(a, b, fused),
        "VIF": vif(a, b, fused),
        "SCD": scd(a, b, fused),
    }
    bad = [k for k, v in values.items() if not math.isfinite(v)]
    if bad:
        raise NumericError(f"non-finite metric values: {', '.join(bad)}", {"metrics": bad})
    return values


# reports


@dataclass
class MetricReport:
    """Per-pair metric rows plus their arithmetic mean."""

    rows: List[Tuple[str, Dict[str, float]]] = field(default_factory=list)

    def add(self, pair_id: str, values: Mapping[str, float]):
        missing = [m for m in METRIC_NAMES if m not in values]
        if missing:
            raise FormatError(f"pair {pair_id} is missing metrics {missing}")
        self.rows.append((pair_id, {m: float(values[m]) for m in METRIC_NAMES}))

    def mean(self) -> Dict[str, float]:
        if not self.rows:
            raise NumericError("cannot average an empty metric report")
        return {m: float(np.mean([row[m] for _, row in self.rows])) for m in METRIC_NAMES}

    def __len__(self):
        return len(self.rows)


def default_threads() -> int:
    raw = os.environ.get("AMFUSE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning("ignoring non-integer AMFUSE_THREADS=%r", raw)
    return max(1, min(8, os.cpu_count() or 1))


def evaluate_pairs(triples: Sequence[Tuple[str, np.ndarray, np.ndarray, np.ndarray]],
                   threads: Optional[int] = None) -> MetricReport:
    """
    Evaluate (pair_id, a, b, fused) triples, in parallel when threads > 1.

    Results are merged in input order, so the report does not depend on the
    thread count.
    """
    workers = threads if threads is not None else default_threads()
    if workers <= 1 or len(triples) <= 1:
        results = [evaluate_pair(a, b, f) for _, a, b, f in triples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda t: evaluate_pair(t[1], t[2], t[3]), triples))
    report = MetricReport()
    for (pair_id, _, _, _), values in zip(triples, results):
        report.add(pair_id, values)
    logger.info("evaluated pairs=%d threads=%d", len(report), workers)
    return report


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def write_report_csv(report: MetricReport, path: Union[str, Path]):
    """Header ``pair,EN,...,SCD``, one row per pair and a final ``mean`` row."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("pair",) + METRIC_NAMES)
            for pair_id, values in report.rows:
                writer.writerow([pair_id] + [_fmt(values[m]) for m in METRIC_NAMES])
            mean = report.mean()
            writer.writerow(["mean"] + [_fmt(mean[m]) for m in METRIC_NAMES])
    except OSError as exc:
        raise DataIOError(f"cannot write report {path}: {exc}") from exc


def read_report_summary(path: Union[str, Path]) -> Dict[str, float]:
    """
    Read the nine metric means from a report CSV.

    A report's ``mean`` row is used when present; otherwise the file must
    hold exactly one data row.

    Raises:
        DataIOError: If the file cannot be read
        FormatError: If the header or values are malformed
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataIOError(f"cannot read report {path}: {exc}") from exc
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise FormatError(f"{path}: empty report")
    header = [cell.strip() for cell in rows[0]]
    missing = [m for m in METRIC_NAMES if m not in header]
    if missing:
        raise FormatError(f"{path}: header lacks metric columns {missing}")
    body = rows[1:]
    chosen = [r for r in body if r[0].strip() == "mean"]
    if chosen:
        row = chosen[-1]
    elif len(body) == 1:
        row = body[0]
    else:
        raise FormatError(f"{path}: expected a 'mean' row or a single summary row, found {len(body)} rows")
    if len(row) != len(header):
        raise FormatError(f"{path}: row has {len(row)} fields, header has {len(header)}")
    try:
        return {m: float(row[header.index(m)]) for m in METRIC_NAMES}
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric metric value ({exc})") from exc


# normalized evaluation index


def normalized_index(table: Mapping[str, Mapping[str, float]]) -> Dict[str, float]:
    """
    Sum over metric columns of value / column maximum, per method.

    Args:
        table: method -> metric name -> mean value; every method must carry
            the same metric columns

    Returns:
        method -> index in (0, number of columns]

    Raises:
        NumericError: If the table is empty or a column maximum is not positive
    """
    if not table:
        raise NumericError("normalized index needs at least one method")
    columns = list(next(iter(table.values())))
    for method, row in table.items():
        if set(row) != set(columns):
            raise FormatError(f"method {method} has metric columns {list(row)}, expected {columns}")
    maxima = {}
    for col in columns:
        top = max(float(row[col]) for row in table.values())
        if not top > 0:
            raise NumericError(f"column {col} has nonpositive maximum {top}", {"column": col})
        maxima[col] = top
    return {method: float(sum(float(row[col]) / maxima[col] for col in columns)) for method, row in table.items()}


def ranking_rows(table: Mapping[str, Mapping[str, float]]) -> List[Tuple[str, Dict[str, float], float]]:
    """Methods with their metrics and index, best index first (ties keep input order)."""
    index = normalized_index(table)
    rows = [(method, dict(table[method]), index[method]) for method in table]
    return sorted(rows, key=lambda r: -r[2])


def write_ranking_csv(table: Mapping[str, Mapping[str, float]], path: Union[str, Path]):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("method",) + METRIC_NAMES + ("xi",))
            for method, values, xi in ranking_rows(table):
                writer.writerow([method] + [_fmt(values[m]) for m in METRIC_NAMES] + [f"{xi:.4f}"])
    except OSError as exc:
        raise DataIOError(f"cannot write ranking {path}: {exc}") from exc


def format_ranking(table: Mapping[str, Mapping[str, float]]) -> str:
    """Aligned plain-text ranking table."""
    header = ["method", *METRIC_NAMES, "xi"]
    body = [[method] + [f"{values[m]:.4f}" for m in METRIC_NAMES] + [f"{xi:.4f}"]
            for method, values, xi in ranking_rows(table)]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
