"""Synthetic data generators.

Everything the test suite and the demo pipeline feed the engine is built
here: a separable 24-channel training set, bivariate-Bernoulli indicator
fields with known joint structure, the frozen enumeration of admissible
transition settings, smooth synthetic terrain, and a complete on-disk demo
input tree (scene manifests, DEM, samples, forest mask, regions).
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import replace

import numpy as np

from .compositor import OPTICAL_BANDS
from .dataset import SamplePoint, write_samples
from .rastercore import (
    BandGrid,
    GridHeader,
    MaskGrid,
    atomic_write_text,
    pixel_center_x,
    pixel_center_y,
    write_grid,
)
from .riskengine import joint_probability_arrays

MARGINAL_LEVELS = (0.2, 0.5, 0.8)
RHO_LEVELS = (-0.5, 0.0, 0.5, 0.8)


def admissible_transition_settings() -> tuple[tuple[float, float, float], ...]:
    """The frozen (m_prev, m_curr, rho) enumeration for transition-recovery
    checks: every member of the MARGINAL_LEVELS x MARGINAL_LEVELS x RHO_LEVELS
    grid whose implied stay-palm probability lies strictly inside the
    Frechet-Hoeffding interval. Strict interiority means the requested rho is
    exactly attained, the clamp is inactive, and all four joint cells are
    positive, which is what a relative-error recovery test needs."""
    out = []
    for m1, m2, rho in itertools.product(MARGINAL_LEVELS, MARGINAL_LEVELS, RHO_LEVELS):
        p11 = rho * math.sqrt(m1 * (1 - m1) * m2 * (1 - m2)) + m1 * m2
        lower = max(0.0, m1 + m2 - 1.0)
        upper = min(m1, m2)
        if lower + 1e-12 < p11 < upper - 1e-12:
            out.append((m1, m2, rho))
    return tuple(out)


def bivariate_bernoulli_fields(
    m_prev: float,
    m_curr: float,
    rho: float,
    shape: tuple[int, int],
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a pair of indicator fields whose per-pixel joint distribution has
    the given marginals and correlation (pixels independent of one another).
    Returns float64 0/1 arrays (prev, curr)."""
    p11, p10, p01, p00 = (float(p) for p in joint_probability_arrays(m_prev, m_curr, rho))
    cum = np.cumsum([p11, p10, p01, p00])
    cum[-1] = 1.0
    rng = np.random.default_rng(seed)
    cell = np.searchsorted(cum, rng.random(shape), side="right")
    prev = (cell <= 1).astype(np.float64)
    curr = ((cell == 0) | (cell == 2)).astype(np.float64)
    return prev, curr


def separable_samples(
    n: int, seed: int, n_features: int = 24, informative: tuple[int, int] = (0, 1)
) -> tuple[np.ndarray, np.ndarray]:
    """A two-blob binary dataset in [0, 1]^n_features with two informative
    channels (class centers 0.3 / 0.7, sd 0.08) and noise elsewhere. Easily
    separable: a trained classifier should exceed 0.95 held-out accuracy."""
    if n < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.5).astype(np.float64)
    x = rng.uniform(0.0, 1.0, size=(n, n_features))
    centers = np.where(y == 1.0, 0.7, 0.3)
    for dim in informative:
        x[:, dim] = np.clip(centers + rng.normal(0.0, 0.08, size=n), 0.0, 1.0)
    return x, y


def smooth_dem(header: GridHeader, seed: int, base_m: float = 120.0, relief_m: float = 40.0) -> BandGrid:
    """A smooth, non-flat elevation surface (sum of low-frequency sinusoids
    with seeded phases) on a projected grid."""
    rng = np.random.default_rng(seed)
    ph = rng.uniform(0.0, 2.0 * math.pi, size=3)
    yy = np.linspace(0.0, 1.0, header.height)[:, None]
    xx = np.linspace(0.0, 1.0, header.width)[None, :]
    z = (
        base_m
        + relief_m * np.sin(2 * math.pi * (1.7 * xx + 0.3 * yy) + ph[0])
        + 0.75 * relief_m * np.cos(2 * math.pi * (0.4 * xx + 1.2 * yy) + ph[1])
        + 0.6 * relief_m * np.sin(2 * math.pi * (0.9 * xx + 0.9 * yy) + ph[2])
    )
    return BandGrid(replace(header, band_name="dem"), z.astype(np.float32))


# ---------------------------------------------------------------------------
# Demo input tree


def _demo_header(size: int, band_name: str) -> GridHeader:
    return GridHeader(
        width=size,
        height=size,
        origin_x=101.0,
        origin_y=1.0,
        pixel_size_x=1e-4,
        pixel_size_y=1e-4,
        crs_tag="degrees",
        nodata=-9999.0,
        band_name=band_name,
    )


def _latent_fields(size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    ph = rng.uniform(0.0, 2.0 * math.pi, size=6)
    yy = np.linspace(0.0, 1.0, size)[:, None]
    xx = np.linspace(0.0, 1.0, size)[None, :]
    g = (
        np.sin(2 * math.pi * (1.3 * xx + 0.7 * yy) + ph[0])
        + 0.6 * np.sin(2 * math.pi * (2.1 * xx - 1.1 * yy) + ph[1])
        + 0.4 * np.sin(2 * math.pi * (0.5 * xx + 2.3 * yy) + ph[2])
    )
    h = (
        np.sin(2 * math.pi * (0.8 * xx + 1.9 * yy) + ph[3])
        + 0.5 * np.sin(2 * math.pi * (2.4 * xx + 0.6 * yy) + ph[4])
    )
    return g, h


# Per-band additive response of palm pixels, on top of a spread of base levels.
_OPTICAL_BASE = {b: 0.15 + 0.025 * i for i, b in enumerate(OPTICAL_BANDS)}
_OPTICAL_PALM_AMP = {
    "B1": 0.02, "B2": -0.10, "B3": -0.08, "B4": -0.12,
    "B5": 0.18, "B6": 0.22, "B7": 0.24, "B8": 0.25, "B8A": 0.25,
    "B9": 0.03, "B10": 0.02, "B11": 0.10, "B12": 0.08,
}


def _write_band(path: str, header: GridHeader, name: str, values: np.ndarray) -> str:
    write_grid(BandGrid(replace(header, band_name=name), values.astype(np.float32)), path)
    return os.path.basename(path)


def write_demo_inputs(
    out_dir: str,
    size: int = 64,
    years: tuple[int, int] = (2020, 2023),
    seed: int = 11,
) -> dict:
    """Build a self-contained synthetic input tree for the demo pipeline.

    Produces, under out_dir: per-year optical and SAR scene manifests (three
    dated scenes each, clouds and nodata holes included), six years of L-band
    mosaics with seeded gaps, a co-registered projected DEM, a labeled sample
    file covering both epochs, a forest mask, and two rectangular regions.
    Returns the path map. The palm pattern grows between the epochs and a
    small patch reverts, so both transition directions are exercised."""
    years = (int(years[0]), int(years[1]))
    if years[0] >= years[1]:
        raise ValueError(f"years must be increasing, got {years}")
    os.makedirs(out_dir, exist_ok=True)
    scenes_dir = os.path.join(out_dir, "scenes")
    os.makedirs(scenes_dir, exist_ok=True)
    hdr = _demo_header(size, "")
    rng = np.random.default_rng(seed)

    g, h = _latent_fields(size, seed)
    palm_prev = (g > np.quantile(g, 0.72)) | (h < np.quantile(h, 0.08))
    palm_curr = g > np.quantile(g, 0.60)
    palm_of_year = lambda y: palm_prev if y <= years[0] + 1 else palm_curr

    def noisy(base: np.ndarray, sd: float) -> np.ndarray:
        return np.clip(base + rng.normal(0.0, sd, size=base.shape), 0.0, 1.0)

    paths: dict = {"dir": out_dir, "optical": {}, "sar": {}}

    # --- optical scene manifests, three dated acquisitions per year
    cloud_centers = [(0.25, 0.3), (0.7, 0.65), (0.45, 0.85)]
    yy = np.linspace(0.0, 1.0, size)[:, None]
    xx = np.linspace(0.0, 1.0, size)[None, :]
    for year in years:
        entries = []
        palm = palm_of_year(year).astype(np.float64)
        for si, (cx, cy) in enumerate(cloud_centers):
            date = f"{year}-0{3 + 2 * si}-15"
            bands = {}
            for b in OPTICAL_BANDS:
                vals = noisy(_OPTICAL_BASE[b] + _OPTICAL_PALM_AMP[b] * palm, 0.015)
                if si == 1:
                    vals = vals.copy()
                    vals[2:5, 2:5] = hdr.nodata  # a missing-data hole in one scene
                fname = f"opt_{year}_{si}_{b}.fgrd"
                bands[b] = _write_band(os.path.join(scenes_dir, fname), hdr, b, vals)
            quality = np.ones((size, size), dtype=np.float64)
            cloud = (xx - cx) ** 2 + (yy - cy) ** 2 < 0.04
            quality[cloud] = 0.3
            qname = f"opt_{year}_{si}_quality.fgrd"
            _write_band(os.path.join(scenes_dir, qname), hdr, "quality", quality)
            entries.append(
                {
                    "timestamp": date,
                    "bands": {b: f"scenes/{p}" for b, p in bands.items()},
                    "quality": f"scenes/{qname}",
                }
            )
        mpath = os.path.join(out_dir, f"optical_{year}.json")
        atomic_write_text(mpath, json.dumps(entries, indent=2) + "\n")
        paths["optical"][year] = mpath

    # --- C-band SAR scene manifests (linear backscatter power)
    sar_db = {"VV": (-14.0, 5.0), "VH": (-20.0, 4.0)}
    for year in years:
        entries = []
        palm = palm_of_year(year).astype(np.float64)
        for si in range(3):
            date = f"{year}-0{2 + 3 * si}-07"
            bands = {}
            for pol, (base_db, amp_db) in sar_db.items():
                db = base_db + amp_db * palm + rng.normal(0.0, 0.4, size=(size, size))
                linear = np.power(10.0, db / 10.0)
                fname = f"sar_{year}_{si}_{pol}.fgrd"
                bands[pol] = _write_band(os.path.join(scenes_dir, fname), hdr, pol, linear)
            entries.append(
                {"timestamp": date, "bands": {p: f"scenes/{f}" for p, f in bands.items()}, "quality": None}
            )
        mpath = os.path.join(out_dir, f"sar_{year}.json")
        atomic_write_text(mpath, json.dumps(entries, indent=2) + "\n")
        paths["sar"][year] = mpath

    # --- L-band yearly mosaics with seeded gaps, spanning both epochs
    lband_db = {"HH": (-9.0, 4.0), "HV": (-15.0, 3.0)}
    palsar_years = list(range(years[0] - 2, years[1] + 1))
    palsar_index: dict = {}
    for yi, year in enumerate(palsar_years):
        palm = palm_of_year(year).astype(np.float64)
        r0 = (7 * yi) % (size - 12)
        c0 = (11 * yi) % (size - 14)
        per_pol = {}
        for pol, (base_db, amp_db) in lband_db.items():
            db = base_db + amp_db * palm + rng.normal(0.0, 0.3, size=(size, size))
            linear = np.power(10.0, db / 10.0)
            linear[r0 : r0 + 10, c0 : c0 + 12] = hdr.nodata  # seeded acquisition gap
            fname = f"palsar_{year}_{pol}.fgrd"
            per_pol[pol] = f"scenes/{_write_band(os.path.join(scenes_dir, fname), hdr, pol, linear)}"
        palsar_index[str(year)] = per_pol
    paths["palsar"] = os.path.join(out_dir, "palsar.json")
    atomic_write_text(paths["palsar"], json.dumps(palsar_index, indent=2) + "\n")

    # --- co-registered projected DEM (same pixel counts, 10 m cells)
    dem_hdr = GridHeader(
        width=size,
        height=size,
        origin_x=500_000.0,
        origin_y=100_000.0,
        pixel_size_x=10.0,
        pixel_size_y=10.0,
        crs_tag="meters",
        nodata=-9999.0,
        band_name="dem",
    )
    paths["dem"] = os.path.join(out_dir, "dem.fgrd")
    write_grid(smooth_dem(dem_hdr, seed + 1), paths["dem"])

    # --- labeled samples at pixel centers, both epochs pooled
    lon = pixel_center_x(hdr)
    lat = pixel_center_y(hdr)
    points = []
    for year in years:
        palm = palm_of_year(year)
        flat = rng.choice(size * size, size=220, replace=False)
        for idx in flat:
            r, c = divmod(int(idx), size)
            points.append(
                SamplePoint(
                    lon=float(lon[c]),
                    lat=float(lat[r]),
                    label=float(palm[r, c]),
                    year=year,
                    source="synthetic-demo",
                    weight=1.0,
                )
            )
    paths["samples"] = os.path.join(out_dir, "samples.csv")
    write_samples(points, paths["samples"])

    # --- forest mask (1 = forest, 0 = other, 255 = unknown)
    forest = ((~palm_prev) & (~palm_curr) & (g > np.quantile(g, 0.30))).astype(np.uint8)
    unknown = rng.random((size, size)) < 0.01
    forest[unknown] = 255
    paths["forest"] = os.path.join(out_dir, "forest.fgrd")
    write_grid(MaskGrid(replace(hdr, band_name="forest"), forest), paths["forest"])

    # --- two rectangular regions splitting the footprint
    x0, y1 = hdr.origin_x, hdr.origin_y
    x1 = x0 + size * hdr.pixel_size_x
    y0 = y1 - size * hdr.pixel_size_y
    xm = x0 + (size // 2) * hdr.pixel_size_x
    rois = [
        {"id": "west", "ring": [[x0, y0], [xm, y0], [xm, y1], [x0, y1]]},
        {"id": "east", "ring": [[xm, y0], [x1, y0], [x1, y1], [xm, y1]]},
    ]
    paths["rois"] = os.path.join(out_dir, "rois.json")
    atomic_write_text(paths["rois"], json.dumps(rois, indent=2) + "\n")

    paths["years"] = years
    return paths
