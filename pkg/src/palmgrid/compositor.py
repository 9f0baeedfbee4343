"""Annual predictor compositing: cloud-masked optical means, SAR backscatter
statistics stretched to scaled decibels, gap-filled L-band mosaics, and terrain
slope, assembled into a fixed 24-channel stack per year.

Scene lists are canonically reordered by timestamp before any accumulation, so
composites are permutation-invariant over the input order (exactly so when
timestamps are distinct). Per-pixel nodata observations are treated as missing
rather than poisoning the composite; a pixel with no qualifying observation at
all is nodata in the output.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ParseError, SchemaError
from .rastercore import (
    BandGrid,
    GridHeader,
    atomic_write_text,
    nodata_mask,
    read_grid,
    write_grid,
)

CLOUD_THRESHOLD_DEFAULT = 0.6
C_BAND_DB_RANGE = (-30.0, 5.0)
L_BAND_DB_RANGE = (-40.0, 0.0)
GAPFILL_WINDOW_DEFAULT = 3

OPTICAL_BANDS = ("B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B10", "B11", "B12")
SAR_STATS = ("min", "max", "mean", "sd")
CHANNEL_ORDER = (
    "VVmin", "VVmax", "VVmean", "VVsd",
    "VHmin", "VHmax", "VHmean", "VHsd",
    *OPTICAL_BANDS,
    "HH", "HV", "slope",
)
N_CHANNELS = len(CHANNEL_ORDER)  # 24


@dataclass(frozen=True)
class Scene:
    """One acquisition: a timestamp, named bands, and an optional per-pixel
    quality grid (cloud-score CDF style, higher is clearer). All grids must be
    mutually aligned."""

    timestamp: dt.date
    bands: Mapping[str, BandGrid]
    quality: BandGrid | None = None

    def __post_init__(self):
        if not isinstance(self.timestamp, dt.date):
            raise ValueError("timestamp must be a datetime.date")
        if not self.bands:
            raise ValueError("scene needs at least one band")
        object.__setattr__(self, "bands", dict(self.bands))
        grids = list(self.bands.values())
        if self.quality is not None:
            grids.append(self.quality)
        first = grids[0].header
        for g in grids[1:]:
            if not first.aligned_with(g.header):
                raise SchemaError(f"scene {self.timestamp.isoformat()}: grids are not aligned")

    @property
    def header(self) -> GridHeader:
        return next(iter(self.bands.values())).header


@dataclass(frozen=True)
class AnnualStack:
    """The 24 aligned predictor channels for one year, in CHANNEL_ORDER."""

    year: int
    channels: tuple[BandGrid, ...] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "year", int(self.year))
        object.__setattr__(self, "channels", tuple(self.channels))
        if len(self.channels) != N_CHANNELS:
            raise SchemaError(f"stack needs {N_CHANNELS} channels, got {len(self.channels)}")
        first = self.channels[0].header
        for i, g in enumerate(self.channels[1:], start=1):
            if not first.aligned_with(g.header):
                raise SchemaError(f"stack channel {CHANNEL_ORDER[i]} is not aligned with {CHANNEL_ORDER[0]}")

    @property
    def header(self) -> GridHeader:
        return self.channels[0].header

    def channel(self, name: str) -> BandGrid:
        try:
            return self.channels[CHANNEL_ORDER.index(name)]
        except ValueError:
            raise KeyError(f"no channel named {name!r}") from None

    def to_array(self) -> np.ndarray:
        """(24, height, width) float32 view of the channel values."""
        return np.stack([c.values for c in self.channels])


def _ordered(scenes: Sequence[Scene]) -> list[Scene]:
    if not scenes:
        raise ValueError("need at least one scene")
    first = scenes[0].header
    for i, s in enumerate(scenes[1:], start=1):
        if not first.aligned_with(s.header):
            raise SchemaError(f"scene {i} is not aligned with scene 0")
    return sorted(scenes, key=lambda s: s.timestamp.toordinal())


def masked_annual_mean(
    scenes: Sequence[Scene],
    band: str,
    cloud_threshold: float = CLOUD_THRESHOLD_DEFAULT,
) -> BandGrid:
    """Per-pixel mean of a band over the scenes that pass the cloud screen.

    An observation qualifies when the band value is not nodata and, if the
    scene carries a quality grid, the quality value is not nodata and is at
    least cloud_threshold (scenes without a quality grid always qualify).
    Pixels with no qualifying observation come out nodata."""
    ordered = _ordered(scenes)
    for i, s in enumerate(ordered):
        if band not in s.bands:
            raise SchemaError(f"scene {i} ({s.timestamp.isoformat()}) lacks band {band!r}")
    hdr = ordered[0].header
    total = np.zeros(hdr.shape, dtype=np.float64)
    count = np.zeros(hdr.shape, dtype=np.int64)
    for s in ordered:
        g = s.bands[band]
        ok = ~nodata_mask(g)
        if s.quality is not None:
            q = s.quality
            ok &= ~nodata_mask(q) & (q.values >= np.float32(cloud_threshold))
        total += np.where(ok, g.values, 0.0)
        count += ok
    with np.errstate(invalid="ignore"):
        mean = total / count
    out = np.where(count > 0, mean, hdr.nodata).astype(np.float32)
    return BandGrid(replace(hdr, band_name=band), out)


def _scaled_db(linear: np.ndarray, db_range: tuple[float, float]) -> np.ndarray:
    """10*log10 then affine stretch of [lo, hi] dB onto [0, 1], clipped.
    Zeros map to the scaled floor (0.0); callers handle negatives."""
    lo, hi = db_range
    with np.errstate(divide="ignore", invalid="ignore"):
        db = 10.0 * np.log10(linear)
    scaled = (db - lo) / (hi - lo)
    scaled = np.where(linear <= 0, 0.0, scaled)
    return np.clip(scaled, 0.0, 1.0)


def _check_db_range(db_range: tuple[float, float]) -> tuple[float, float]:
    lo, hi = float(db_range[0]), float(db_range[1])
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
        raise ConfigError(f"dB range must be finite with lo < hi, got ({lo}, {hi})")
    return lo, hi


def sar_annual_stats(
    scenes: Sequence[Scene],
    polarization: str,
    db_range: tuple[float, float] = C_BAND_DB_RANGE,
) -> tuple[BandGrid, BandGrid, BandGrid, BandGrid]:
    """Min, max, mean, and population standard deviation of linear-power
    backscatter across the year, each converted to dB and stretched onto
    [0, 1] over db_range.

    Statistics are computed in the linear domain first. A nonpositive linear
    observation marks the pixel nodata in all four outputs (backscatter power
    must be positive); a zero standard deviation maps to the scaled value of
    the dB floor, i.e. 0.0. Scenes lacking the polarization are skipped; at
    least one scene must carry it."""
    db_range = _check_db_range(db_range)
    ordered = [s for s in _ordered(scenes) if polarization in s.bands]
    if not ordered:
        raise SchemaError(f"no scene carries polarization {polarization!r}")
    hdr = ordered[0].bands[polarization].header
    vals = np.stack([s.bands[polarization].values for s in ordered]).astype(np.float64)
    valid = np.stack([~nodata_mask(s.bands[polarization]) for s in ordered])
    poison = np.any(valid & (vals <= 0), axis=0)
    n = valid.sum(axis=0)
    usable = (n > 0) & ~poison

    vals_or_nan = np.where(valid, vals, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN slices on empty pixels
        mn = np.nanmin(vals_or_nan, axis=0)
        mx = np.nanmax(vals_or_nan, axis=0)
        mean = np.nansum(vals_or_nan, axis=0) / n
        sd = np.sqrt(np.nansum(np.where(valid, (vals - mean) ** 2, 0.0), axis=0) / n)

    out = []
    for stat_name, stat in zip(SAR_STATS, (mn, mx, mean, sd)):
        scaled = _scaled_db(np.where(usable, stat, 1.0), db_range)
        arr = np.where(usable, scaled, hdr.nodata).astype(np.float32)
        out.append(BandGrid(replace(hdr, band_name=f"{polarization}{stat_name}"), arr))
    return tuple(out)


def to_scaled_db(grid: BandGrid, db_range: tuple[float, float] = L_BAND_DB_RANGE) -> BandGrid:
    """Convert a linear-power grid to scaled dB on [0, 1]. Nonpositive or
    nodata inputs come out nodata."""
    db_range = _check_db_range(db_range)
    ok = ~nodata_mask(grid) & (grid.values > 0)
    scaled = _scaled_db(np.where(ok, grid.values.astype(np.float64), 1.0), db_range)
    out = np.where(ok, scaled, grid.header.nodata).astype(np.float32)
    return BandGrid(grid.header, out)


def gapfill_rolling_mean(
    yearly: Mapping[int, BandGrid],
    target_year: int,
    window: int = GAPFILL_WINDOW_DEFAULT,
) -> BandGrid:
    """Fill nodata pixels of the target year's grid with the mean of available
    values from the years within a centered window (window odd, in years).

    Pixels that already have data pass through bit-exactly; pixels with no
    data anywhere in the window stay nodata. Applying the fill twice is a
    no-op. Filling happens in the grid's native (linear) domain."""
    window = int(window)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    half = window // 2
    years = sorted(y for y in yearly if target_year - half <= y <= target_year + half)
    if not years:
        raise ValueError(f"no grids within {window}-year window of {target_year}")
    grids = [yearly[y] for y in years]
    hdr = grids[0].header
    for y, g in zip(years[1:], grids[1:]):
        if not hdr.aligned_with(g.header):
            raise SchemaError(f"gap-fill input for year {y} is not aligned")

    total = np.zeros(hdr.shape, dtype=np.float64)
    count = np.zeros(hdr.shape, dtype=np.int64)
    for g in grids:
        ok = ~nodata_mask(g)
        total += np.where(ok, g.values, 0.0)
        count += ok
    with np.errstate(invalid="ignore"):
        fill = (total / count).astype(np.float32)

    if target_year in yearly:
        base = yearly[target_year]
        hdr = base.header
        base_ok = ~nodata_mask(base)
        out = np.where(base_ok, base.values, np.where(count > 0, fill, np.float32(hdr.nodata)))
    else:
        out = np.where(count > 0, fill, np.float32(hdr.nodata))
    return BandGrid(hdr, out)


def slope_from_dem(dem: BandGrid) -> BandGrid:
    """Terrain slope by Horn's 3x3 kernel, in degrees scaled to [0, 1] by /90.

    Requires a projected grid (crs_tag "meters"); edges are handled by
    replicating the border row/column. Any nodata cell in the 3x3 neighborhood
    makes the output pixel nodata."""
    hdr = dem.header
    if hdr.crs_tag != "meters":
        raise ConfigError(f"slope needs a projected grid in meters, got crs_tag {hdr.crs_tag!r}")
    z = np.pad(dem.values.astype(np.float64), 1, mode="edge")
    bad = np.pad(nodata_mask(dem), 1, mode="edge")

    def win(dr, dc):
        return z[1 + dr : 1 + dr + hdr.height, 1 + dc : 1 + dc + hdr.width]

    def badwin(dr, dc):
        return bad[1 + dr : 1 + dr + hdr.height, 1 + dc : 1 + dc + hdr.width]

    any_bad = np.zeros(hdr.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            any_bad |= badwin(dr, dc)

    dzdx = (
        (win(-1, 1) + 2.0 * win(0, 1) + win(1, 1))
        - (win(-1, -1) + 2.0 * win(0, -1) + win(1, -1))
    ) / (8.0 * hdr.pixel_size_x)
    dzdy = (
        (win(1, -1) + 2.0 * win(1, 0) + win(1, 1))
        - (win(-1, -1) + 2.0 * win(-1, 0) + win(-1, 1))
    ) / (8.0 * hdr.pixel_size_y)
    slope_deg = np.degrees(np.arctan(np.hypot(dzdx, dzdy)))
    scaled = np.clip(slope_deg / 90.0, 0.0, 1.0)
    out = np.where(any_bad, hdr.nodata, scaled).astype(np.float32)
    return BandGrid(replace(hdr, band_name="slope"), out)


def assemble_annual_stack(year: int, channels: Mapping[str, BandGrid]) -> AnnualStack:
    """Build a stack from channels keyed by CHANNEL_ORDER names. Missing or
    unexpected names, or misaligned grids, raise SchemaError."""
    missing = [n for n in CHANNEL_ORDER if n not in channels]
    extra = [n for n in channels if n not in CHANNEL_ORDER]
    if missing or extra:
        raise SchemaError(f"channel set mismatch: missing={missing} extra={extra}")
    return AnnualStack(year, tuple(channels[n] for n in CHANNEL_ORDER))


# ---------------------------------------------------------------------------
# Stack and manifest I/O


def save_stack(stack: AnnualStack, dir_path: str) -> None:
    """Write the 24 channel grids plus an index.json into dir_path."""
    os.makedirs(dir_path, exist_ok=True)
    entries = []
    for i, (name, grid) in enumerate(zip(CHANNEL_ORDER, stack.channels)):
        fname = f"{i:02d}_{name}.fgrd"
        write_grid(grid, os.path.join(dir_path, fname))
        entries.append({"name": name, "path": fname})
    index = {"schema_version": 1, "year": stack.year, "channels": entries}
    atomic_write_text(os.path.join(dir_path, "index.json"), json.dumps(index, indent=2) + "\n")


def load_stack(dir_path: str) -> AnnualStack:
    index_path = os.path.join(dir_path, "index.json")
    try:
        with open(index_path, "rb") as fh:
            index = json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(f"{index_path}: not valid JSON: {e}") from e
    if not isinstance(index, dict) or "year" not in index or "channels" not in index:
        raise SchemaError(f"{index_path}: expected an object with 'year' and 'channels'")
    by_name = {}
    for entry in index["channels"]:
        if not isinstance(entry, dict) or "name" not in entry or "path" not in entry:
            raise SchemaError(f"{index_path}: channel entries need 'name' and 'path'")
        grid = read_grid(os.path.join(dir_path, entry["path"]))
        if not isinstance(grid, BandGrid):
            raise SchemaError(f"{index_path}: channel {entry['name']!r} is not a float band")
        by_name[entry["name"]] = grid
    return assemble_annual_stack(int(index["year"]), by_name)


def load_scene_manifest(path: str) -> list[Scene]:
    """Read a scene manifest: a JSON array of
    {"timestamp": "YYYY-MM-DD", "bands": {name: fgrd path}, "quality": path or null},
    paths relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "rb") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(obj, list):
        raise ParseError(f"{path}: expected a JSON array of scenes")
    scenes = []
    for i, entry in enumerate(obj):
        if not isinstance(entry, dict) or "timestamp" not in entry or "bands" not in entry:
            raise ParseError(f"{path}: scene {i} needs 'timestamp' and 'bands'")
        try:
            ts = dt.date.fromisoformat(entry["timestamp"])
        except (TypeError, ValueError) as e:
            raise ParseError(f"{path}: scene {i}: bad timestamp: {e}") from e
        if not isinstance(entry["bands"], dict) or not entry["bands"]:
            raise ParseError(f"{path}: scene {i}: 'bands' must be a non-empty object")
        bands = {}
        for name, rel in entry["bands"].items():
            grid = read_grid(os.path.join(base, rel))
            if not isinstance(grid, BandGrid):
                raise SchemaError(f"{path}: scene {i} band {name!r} is not a float band")
            bands[name] = grid
        quality = None
        qrel = entry.get("quality")
        if qrel is not None:
            qgrid = read_grid(os.path.join(base, qrel))
            if not isinstance(qgrid, BandGrid):
                raise SchemaError(f"{path}: scene {i} quality grid is not a float band")
            quality = qgrid
        scenes.append(Scene(ts, bands, quality))
    return scenes
