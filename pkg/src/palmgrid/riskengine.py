"""Transition risk between two palm-frequency epochs.

The per-pixel joint distribution of the two Bernoulli indicators (palm in the
earlier epoch, palm in the later epoch) is estimated from the two marginal
probability grids and a local rank-correlation grid: the joint probability of
palm-in-both is rho * sqrt(v1 * v2) + m1 * m2 clamped to the Frechet-Hoeffding
bounds, and the other three cells follow by marginal subtraction, which keeps
the row/column identities exact. Local correlation comes from a windowed
Spearman statistic (midranks over jointly valid pairs in a square window,
clipped at grid edges, unweighted).

Float64 array cores (`windowed_spearman_array`, `joint_probability_arrays`)
carry the numeric contracts; BandGrid wrappers round to the float32 storage
format. Two Spearman implementations share one definition: an exact
counting path over integral images when both grids take at most four distinct
valid values (binary indicator fields and the like), and a general path over
sliding windows with midrank ranking otherwise. Rank sums are integer-valued
in float64 either way, so both paths are exact up to the final division.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import SchemaError
from .rastercore import (
    BandGrid,
    GridHeader,
    MaskGrid,
    RegionOfInterest,
    map_row_blocks,
    nodata_mask,
    rasterize_roi,
    row_areas_ha,
    valid_mask,
)

WINDOW_DEFAULT = 31
MIN_VALID_DEFAULT = 10
_FAST_PATH_MAX_LEVELS = 4
_GENERAL_PATH_CELL_BUDGET = 2_000_000


# ---------------------------------------------------------------------------
# Windowed Spearman correlation


def _box_sum(img: np.ndarray, window: int) -> np.ndarray:
    """Sum of img over a window x window box centered at each pixel, clipped
    at the edges. Exact for integer-valued float64 input."""
    h, w = img.shape
    half = window // 2
    s = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(img, axis=0, out=s[1:, 1:])
    np.cumsum(s[1:, 1:], axis=1, out=s[1:, 1:])
    r0 = np.clip(np.arange(h) - half, 0, h)
    r1 = np.clip(np.arange(h) + half + 1, 0, h)
    c0 = np.clip(np.arange(w) - half, 0, w)
    c1 = np.clip(np.arange(w) + half + 1, 0, w)
    return s[np.ix_(r1, c1)] - s[np.ix_(r0, c1)] - s[np.ix_(r1, c0)] + s[np.ix_(r0, c0)]


def _rho_from_sums(n, srx, sry, srx2, sry2, srxy, min_valid):
    """Pearson correlation from raw rank sums; zero where the window has too
    few pairs or either side has no rank variance."""
    num = n * srxy - srx * sry
    var_x = n * srx2 - srx * srx
    var_y = n * sry2 - sry * sry
    ok = (n >= min_valid) & (var_x > 0) & (var_y > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = num / np.sqrt(var_x * var_y)
    rho = np.where(ok, rho, 0.0)
    return np.clip(rho, -1.0, 1.0)


def _spearman_counts_path(prev, curr, joint_valid, window, min_valid):
    """Exact path for low-cardinality grids: windowed per-level and joint
    counts via integral images give closed-form midranks and rank sums."""
    levels_a = np.unique(prev[joint_valid])
    levels_b = np.unique(curr[joint_valid])
    ind_a = [((prev == v) & joint_valid).astype(np.float64) for v in levels_a]
    ind_b = [((curr == v) & joint_valid).astype(np.float64) for v in levels_b]
    counts_a = [_box_sum(i, window) for i in ind_a]
    counts_b = [_box_sum(i, window) for i in ind_b]
    n = np.sum(counts_a, axis=0)

    def midranks(counts):
        ranks = []
        below = np.zeros_like(counts[0])
        for c in counts:
            ranks.append(below + (c + 1.0) / 2.0)
            below = below + c
        return ranks

    ranks_a = midranks(counts_a)
    ranks_b = midranks(counts_b)
    srx = sum(c * r for c, r in zip(counts_a, ranks_a))
    sry = sum(c * r for c, r in zip(counts_b, ranks_b))
    srx2 = sum(c * r * r for c, r in zip(counts_a, ranks_a))
    sry2 = sum(c * r * r for c, r in zip(counts_b, ranks_b))
    srxy = np.zeros_like(n)
    for ia, ra in zip(ind_a, ranks_a):
        for ib, rb in zip(ind_b, ranks_b):
            joint = _box_sum(ia * ib, window)
            srxy += joint * ra * rb
    return _rho_from_sums(n, srx, sry, srx2, sry2, srxy, min_valid)


def _spearman_general_path(prev, curr, joint_valid, window, min_valid, threads):
    """Sliding-window midrank path for arbitrary values."""
    h, w = prev.shape
    half = window // 2
    a = np.where(joint_valid, prev, np.nan)
    b = np.where(joint_valid, curr, np.nan)
    pa = np.pad(a, half, constant_values=np.nan)
    pb = np.pad(b, half, constant_values=np.nan)
    out = np.empty((h, w), dtype=np.float64)
    block = max(1, _GENERAL_PATH_CELL_BUDGET // (w * window * window))

    def run(r0: int, r1: int) -> None:
        rows = r1 - r0
        wa = np.lib.stride_tricks.sliding_window_view(
            pa[r0 : r1 + 2 * half, :], (window, window)
        ).reshape(rows * w, window * window)
        wb = np.lib.stride_tricks.sliding_window_view(
            pb[r0 : r1 + 2 * half, :], (window, window)
        ).reshape(rows * w, window * window)
        m = np.isfinite(wa)  # identical pattern for both after joint masking
        n = m.sum(axis=1).astype(np.float64)
        with np.errstate(invalid="ignore"):
            ra = rankdata(wa, axis=1, method="average", nan_policy="omit")
            rb = rankdata(wb, axis=1, method="average", nan_policy="omit")
        ra = np.where(m, ra, 0.0)
        rb = np.where(m, rb, 0.0)
        srx = ra.sum(axis=1)
        sry = rb.sum(axis=1)
        srx2 = (ra * ra).sum(axis=1)
        sry2 = (rb * rb).sum(axis=1)
        srxy = (ra * rb).sum(axis=1)
        out[r0:r1] = _rho_from_sums(n, srx, sry, srx2, sry2, srxy, min_valid).reshape(rows, w)

    map_row_blocks(h, block, run, threads=threads)
    return out


def windowed_spearman_array(
    prev,
    curr,
    window: int = WINDOW_DEFAULT,
    min_valid: int = MIN_VALID_DEFAULT,
    threads: int = 1,
) -> np.ndarray:
    """Windowed Spearman correlation of two fields, float64 output.

    Inputs are arrays with NaN marking invalid pixels; a pair is valid only
    where both are finite. Each output pixel correlates the midranks of the
    jointly valid pairs inside its window-by-window neighborhood (clipped at
    edges, all pairs weighted equally). Windows with fewer than min_valid
    pairs, or with no rank variance on either side, give 0."""
    prev = np.asarray(prev, dtype=np.float64)
    curr = np.asarray(curr, dtype=np.float64)
    if prev.shape != curr.shape or prev.ndim != 2:
        raise ValueError(f"fields must share a 2-D shape, got {prev.shape} vs {curr.shape}")
    window = int(window)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    min_valid = int(min_valid)
    if min_valid < 2:
        raise ValueError("min_valid must be at least 2")
    joint_valid = np.isfinite(prev) & np.isfinite(curr)
    if joint_valid.any():
        few_a = np.unique(prev[joint_valid]).size <= _FAST_PATH_MAX_LEVELS
        few_b = np.unique(curr[joint_valid]).size <= _FAST_PATH_MAX_LEVELS
        if few_a and few_b:
            return _spearman_counts_path(prev, curr, joint_valid, window, min_valid)
    else:
        return np.zeros(prev.shape, dtype=np.float64)
    return _spearman_general_path(prev, curr, joint_valid, window, min_valid, threads)


def windowed_spearman(
    f_prev: BandGrid,
    f_curr: BandGrid,
    window: int = WINDOW_DEFAULT,
    min_valid: int = MIN_VALID_DEFAULT,
    threads: int = 1,
) -> BandGrid:
    """BandGrid wrapper over windowed_spearman_array (float32 storage)."""
    if not f_prev.header.aligned_with(f_curr.header):
        raise SchemaError("epoch grids are not aligned")
    prev = np.where(nodata_mask(f_prev), np.nan, f_prev.values.astype(np.float64))
    curr = np.where(nodata_mask(f_curr), np.nan, f_curr.values.astype(np.float64))
    rho = windowed_spearman_array(prev, curr, window=window, min_valid=min_valid, threads=threads)
    return BandGrid(replace(f_prev.header, band_name="rho"), rho.astype(np.float32))


# ---------------------------------------------------------------------------
# Joint transition probabilities


def _coerce_years(years) -> tuple[int, int] | None:
    if years is None:
        return None
    out = (int(years[0]), int(years[1]))
    if out[0] >= out[1]:
        raise ValueError(f"years must be increasing, got {out}")
    return out


@dataclass(frozen=True)
class EpochPair:
    """Aligned palm-frequency grids for two epochs, values in [0, 1]."""

    f_prev: BandGrid
    f_curr: BandGrid
    years: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "years", _coerce_years(self.years))
        if not self.f_prev.header.aligned_with(self.f_curr.header):
            raise SchemaError("epoch grids are not aligned")
        for name, grid in (("f_prev", self.f_prev), ("f_curr", self.f_curr)):
            vals = grid.values[valid_mask(grid)]
            if vals.size and (np.isnan(vals).any() or vals.min() < 0.0 or vals.max() > 1.0):
                raise ValueError(f"{name} has values outside [0, 1]")


def joint_probability_arrays(m_prev, m_curr, rho):
    """Joint Bernoulli cell probabilities from marginals and correlation,
    float64: (p11, p10, p01, p00).

    p11 is the correlation identity rho * sqrt(v1 v2) + m1 m2 clamped into the
    Frechet-Hoeffding interval [max(0, m1 + m2 - 1), min(m1, m2)]; the rest
    follow by marginal subtraction, so row and column sums reproduce the
    marginals to float64 rounding. NaN inputs yield NaN cells."""
    m1 = np.asarray(m_prev, dtype=np.float64)
    m2 = np.asarray(m_curr, dtype=np.float64)
    r = np.asarray(rho, dtype=np.float64)
    for name, m in (("m_prev", m1), ("m_curr", m2)):
        finite = np.isfinite(m)
        if finite.any() and ((m[finite] < 0).any() or (m[finite] > 1).any()):
            raise ValueError(f"{name} has values outside [0, 1]")
    finite_r = np.isfinite(r)
    if finite_r.any() and (np.abs(r[finite_r]) > 1.0 + 1e-9).any():
        raise ValueError("rho has values outside [-1, 1]")
    r = np.clip(r, -1.0, 1.0)

    v1 = m1 * (1.0 - m1)
    v2 = m2 * (1.0 - m2)
    p11 = r * np.sqrt(v1 * v2) + m1 * m2
    lower = np.maximum(0.0, m1 + m2 - 1.0)
    upper = np.minimum(m1, m2)
    p11 = np.clip(p11, lower, upper)
    p10 = m1 - p11
    p01 = m2 - p11
    p00 = 1.0 - p11 - p10 - p01
    clip = lambda p: np.clip(p, 0.0, 1.0)
    return clip(p11), clip(p10), clip(p01), clip(p00)


@dataclass(frozen=True)
class JointProbGrids:
    """Aligned per-pixel transition probabilities (p11 stay-palm, p10 loss,
    p01 gain, p00 stay-other) plus the correlation grid they came from."""

    p11: BandGrid
    p10: BandGrid
    p01: BandGrid
    p00: BandGrid
    rho: BandGrid
    years: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "years", _coerce_years(self.years))
        grids = (self.p11, self.p10, self.p01, self.p00, self.rho)
        first = grids[0].header
        for g in grids[1:]:
            if not first.aligned_with(g.header):
                raise SchemaError("joint probability grids are not aligned")

    @property
    def header(self) -> GridHeader:
        return self.p11.header


def joint_probabilities(pair: EpochPair, rho: BandGrid) -> JointProbGrids:
    """Per-pixel joint distribution for an epoch pair. Output pixels are
    nodata where either marginal (or the correlation grid) is nodata; the
    float64 identities are rounded into float32 grids for storage."""
    if not pair.f_prev.header.aligned_with(rho.header):
        raise SchemaError("correlation grid is not aligned with the epoch grids")
    hdr = pair.f_prev.header
    ok = valid_mask(pair.f_prev) & valid_mask(pair.f_curr) & valid_mask(rho)
    m1 = np.where(ok, pair.f_prev.values.astype(np.float64), np.nan)
    m2 = np.where(ok, pair.f_curr.values.astype(np.float64), np.nan)
    r = np.where(ok, rho.values.astype(np.float64), 0.0)
    p11, p10, p01, p00 = joint_probability_arrays(m1, m2, r)

    def wrap(vals: np.ndarray, name: str) -> BandGrid:
        arr = np.where(ok, vals, hdr.nodata).astype(np.float32)
        return BandGrid(replace(hdr, band_name=name), arr)

    return JointProbGrids(
        p11=wrap(p11, "p11"),
        p10=wrap(p10, "p10"),
        p01=wrap(p01, "p01"),
        p00=wrap(p00, "p00"),
        rho=BandGrid(replace(hdr, band_name="rho"), np.where(ok, rho.values, hdr.nodata).astype(np.float32)),
        years=pair.years,
    )


def stable_palm(joint: JointProbGrids) -> BandGrid:
    """The stay-palm probability surface: p11 under its own band name."""
    return BandGrid(replace(joint.header, band_name="stable_palm"), joint.p11.values)


# ---------------------------------------------------------------------------
# Aggregation to areas


@dataclass(frozen=True)
class StratumRisk:
    area_ha: float
    to_palm_ha: float | None
    from_palm_ha: float | None


@dataclass(frozen=True)
class RoiRisk:
    roi_id: str
    forest: StratumRisk
    non_forest: StratumRisk
    excluded_ha: float


@dataclass(frozen=True)
class TransitionRiskReport:
    years: tuple[int, int] | None
    rois: tuple[RoiRisk, ...]

    def to_json_dict(self) -> dict:
        def stratum(s: StratumRisk) -> dict:
            return {
                "area_ha": s.area_ha,
                "to_palm_ha": "N/A" if s.to_palm_ha is None else s.to_palm_ha,
                "from_palm_ha": "N/A" if s.from_palm_ha is None else s.from_palm_ha,
            }

        return {
            "schema_version": 1,
            "years": None if self.years is None else list(self.years),
            "rois": [
                {
                    "roi_id": r.roi_id,
                    "forest": stratum(r.forest),
                    "non_forest": stratum(r.non_forest),
                    "excluded_ha": r.excluded_ha,
                }
                for r in self.rois
            ],
        }

    def to_csv_text(self) -> str:
        """Transition-matrix layout: one column per region, six value rows."""

        def cell(v: float | None) -> str:
            return "N/A" if v is None else repr(float(v))

        rows = [
            ("Forest", lambda r: cell(r.forest.area_ha)),
            ("To-palm risk (forest)", lambda r: cell(r.forest.to_palm_ha)),
            ("From-palm risk (forest)", lambda r: cell(r.forest.from_palm_ha)),
            ("Non-forest", lambda r: cell(r.non_forest.area_ha)),
            ("To-palm risk (non-forest)", lambda r: cell(r.non_forest.to_palm_ha)),
            ("From-palm risk (non-forest)", lambda r: cell(r.non_forest.from_palm_ha)),
        ]
        lines = ["# schema_version=1"]
        lines.append(",".join(["Areas (ha)"] + [r.roi_id for r in self.rois]))
        for label, get in rows:
            lines.append(",".join([label] + [get(r) for r in self.rois]))
        return "\n".join(lines) + "\n"


def risk_aggregate(
    joint: JointProbGrids,
    rois: Sequence[RegionOfInterest],
    forest: MaskGrid,
) -> TransitionRiskReport:
    """Expected transition areas per region and forest stratum.

    For each region and stratum (forest mask 1, non-forest 0): area is the sum
    of pixel areas, to-palm risk the area-weighted sum of p01, from-palm risk
    of p10, in hectares, float64 in fixed pixel order. Pixels inside a region
    whose joint probabilities are nodata or whose mask is 255 count only
    toward excluded_ha. Empty strata report N/A risks."""
    hdr = joint.header
    if not hdr.aligned_with(forest.header):
        raise SchemaError("forest mask is not aligned with the joint grids")
    areas = np.broadcast_to(row_areas_ha(hdr)[:, None], hdr.shape)
    joint_ok = valid_mask(joint.p01) & valid_mask(joint.p10)
    mask_ok = forest.values != 255
    p01 = joint.p01.values.astype(np.float64)
    p10 = joint.p10.values.astype(np.float64)

    out = []
    for roi in rois:
        member = rasterize_roi(roi, hdr).values == 1
        excluded = member & ~(joint_ok & mask_ok)
        excluded_ha = float(np.sum(areas[excluded]))
        strata = {}
        for name, sval in (("forest", 1), ("non_forest", 0)):
            sel = member & joint_ok & (forest.values == sval)
            area = float(np.sum(areas[sel]))
            if sel.any():
                strata[name] = StratumRisk(
                    area_ha=area,
                    to_palm_ha=float(np.sum(areas[sel] * p01[sel])),
                    from_palm_ha=float(np.sum(areas[sel] * p10[sel])),
                )
            else:
                strata[name] = StratumRisk(area_ha=0.0, to_palm_ha=None, from_palm_ha=None)
        out.append(RoiRisk(roi.roi_id, strata["forest"], strata["non_forest"], excluded_ha))
    return TransitionRiskReport(joint.years, tuple(out))


# ---------------------------------------------------------------------------
# Probability-surface areas


def _roi_member(header: GridHeader, roi: RegionOfInterest | None) -> np.ndarray:
    if roi is None:
        return np.ones(header.shape, dtype=bool)
    return rasterize_roi(roi, header).values == 1


def expected_area_ha(prob: BandGrid, roi: RegionOfInterest | None = None) -> float:
    """Probability-weighted area: sum of pixel_area * p over valid pixels
    (optionally restricted to a region)."""
    sel = valid_mask(prob) & _roi_member(prob.header, roi)
    areas = np.broadcast_to(row_areas_ha(prob.header)[:, None], prob.header.shape)
    return float(np.sum(areas[sel] * prob.values.astype(np.float64)[sel]))


def thresholded_area_ha(
    prob: BandGrid, threshold: float, roi: RegionOfInterest | None = None
) -> float:
    """Area of valid pixels with p >= threshold (score-meets-threshold rule)."""
    threshold = float(threshold)
    if math.isnan(threshold):
        raise ValueError("threshold must not be NaN")
    sel = valid_mask(prob) & _roi_member(prob.header, roi)
    sel &= prob.values.astype(np.float64) >= threshold
    areas = np.broadcast_to(row_areas_ha(prob.header)[:, None], prob.header.shape)
    return float(np.sum(areas[sel]))
