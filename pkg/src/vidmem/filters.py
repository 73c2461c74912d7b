"""Stage-1 frame filtering: cheap quality and redundancy gates.

The cascade runs strictly in order blur -> static-diff -> structural
similarity -> histogram, short-circuiting at the first rejection, so the
expensive comparisons only ever see frames that already moved enough in
raw pixel terms. All measurements operate on BT.601 grayscale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import FilterConfig
from .errors import DegenerateImage, ShapeMismatch
from .frames import Frame

# standard SSIM stabilisers for 8-bit dynamic range
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


def to_gray(image: np.ndarray) -> np.ndarray:
    """BT.601 luma as float64. 2-D input is treated as already-gray."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        return arr.astype(np.float64)
    if arr.ndim == 3 and arr.shape[2] == 3:
        a = arr.astype(np.float64)
        return 0.299 * a[..., 0] + 0.587 * a[..., 1] + 0.114 * a[..., 2]
    raise ShapeMismatch(f"expected HxW or HxWx3 image, got {arr.shape}")


def laplacian_sharpness(image: np.ndarray) -> float:
    """Population variance of the interior 3x3 Laplacian response.

    Kernel [[0,1,0],[1,-4,1],[0,1,0]], applied only where the full
    neighbourhood exists (no padding). Constant images score 0.

    Raises DegenerateImage when either side is below 3.
    """
    g = to_gray(image)
    if min(g.shape) < 3:
        raise DegenerateImage(f"image {g.shape} too small for 3x3 kernel")
    resp = (
        g[:-2, 1:-1]
        + g[2:, 1:-1]
        + g[1:-1, :-2]
        + g[1:-1, 2:]
        - 4.0 * g[1:-1, 1:-1]
    )
    return float(np.var(resp))


def mean_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute grayscale difference between two equal-shape images."""
    ga, gb = to_gray(a), to_gray(b)
    if ga.shape != gb.shape:
        raise ShapeMismatch(f"{ga.shape} vs {gb.shape}")
    return float(np.mean(np.abs(ga - gb)))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8) -> float:
    """Mean structural similarity over uniform sliding windows (stride 1).

    Grayscale, population statistics per window, standard C1/C2 for 8-bit
    range. Raises ShapeMismatch for unequal shapes and DegenerateImage
    when either side is smaller than the window.
    """
    ga, gb = to_gray(a), to_gray(b)
    if ga.shape != gb.shape:
        raise ShapeMismatch(f"{ga.shape} vs {gb.shape}")
    if min(ga.shape) < window:
        raise DegenerateImage(
            f"image {ga.shape} smaller than {window}x{window} window"
        )
    wa = sliding_window_view(ga, (window, window))
    wb = sliding_window_view(gb, (window, window))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    # population moments: E[x^2]-mu^2 and E[xy]-mu_a*mu_b
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b * mu_b
    wab = sliding_window_view(ga * gb, (window, window))
    cov = wab.mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def gray_histogram(image: np.ndarray, bins: int = 256) -> np.ndarray:
    """Normalized 256-bin grayscale histogram (sums to 1)."""
    g = to_gray(image)
    idx = np.clip(np.floor(g), 0, bins - 1).astype(np.intp)
    counts = np.bincount(idx.ravel(), minlength=bins).astype(np.float64)
    return counts / g.size


def histogram_dissimilarity(a: np.ndarray, b: np.ndarray) -> float:
    """1 - histogram intersection; 0 for identical distributions."""
    ga, gb = to_gray(a), to_gray(b)
    if ga.shape != gb.shape:
        raise ShapeMismatch(f"{ga.shape} vs {gb.shape}")
    return float(1.0 - np.minimum(gray_histogram(ga), gray_histogram(gb)).sum())


@dataclass
class FilterVerdict:
    """Outcome of the stage-1 cascade for one frame.

    reason is "kept" or the name of the first gate that fired. measures
    holds the value of every gate that was actually evaluated.
    """

    keep: bool
    reason: str
    measures: dict[str, float] = field(default_factory=dict)


def filter_frame(
    frame: Frame,
    last_kept: Optional[Frame],
    config: FilterConfig,
) -> FilterVerdict:
    """Run the fixed-order cascade against the previous kept frame.

    Pure function of its inputs. With last_kept None only the blur gate
    runs (first frame of a stream). tau_hist == 0.0 disables the
    histogram gate entirely.
    """
    measures: dict[str, float] = {}

    sharpness = laplacian_sharpness(frame.pixels)
    measures["sharpness"] = sharpness
    if sharpness < config.tau_blur:
        return FilterVerdict(False, "blur", measures)

    if last_kept is None:
        return FilterVerdict(True, "kept", measures)

    diff = mean_abs_diff(frame.pixels, last_kept.pixels)
    measures["mean_diff"] = diff
    if diff < config.tau_diff:
        return FilterVerdict(False, "static", measures)

    similarity = ssim(frame.pixels, last_kept.pixels, window=config.ssim_window)
    measures["ssim"] = similarity
    if similarity > config.tau_ssim:
        return FilterVerdict(False, "ssim_duplicate", measures)

    if config.tau_hist > 0.0:
        dissim = histogram_dissimilarity(frame.pixels, last_kept.pixels)
        measures["hist_dissim"] = dissim
        if dissim < config.tau_hist:
            return FilterVerdict(False, "hist_duplicate", measures)

    return FilterVerdict(True, "kept", measures)
