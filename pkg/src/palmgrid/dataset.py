"""Training samples, pseudo-absence sampling, and geographic 3-fold
partitioning on a hexagonal tessellation.

Points are projected with a Lambert cylindrical equal-area projection on the
authalic sphere (R = 6371.0072 km), binned into pointy-top hexagons of a
nominal cell area, and each hexagon is assigned one of three folds by hashing
its axial coordinates with a seed (blake2b). All points in a hexagon land in
the same fold, so folds are spatially blocked; the largest fold becomes the
training fold (ties break to the lowest fold index).
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .compositor import AnnualStack
from .errors import CapacityError, ParseError, SchemaError
from .rastercore import MaskGrid, nodata_mask

AUTHALIC_RADIUS_KM = 6371.0072
CELL_AREA_KM2_DEFAULT = 26_000.0
N_FOLDS = 3

SAMPLE_CSV_HEADER = ("lon", "lat", "label", "year", "source", "weight")


@dataclass(frozen=True)
class SamplePoint:
    """One labeled location: lon/lat in degrees, palm frequency label in
    [0, 1], observation year, provenance tag, nonnegative weight."""

    lon: float
    lat: float
    label: float
    year: int
    source: str = "manual"
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lon", float(self.lon))
        object.__setattr__(self, "lat", float(self.lat))
        object.__setattr__(self, "label", float(self.label))
        object.__setattr__(self, "year", int(self.year))
        object.__setattr__(self, "weight", float(self.weight))
        if not -180.0 <= self.lon < 180.0:
            raise ValueError(f"lon {self.lon} outside [-180, 180)")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"lat {self.lat} outside [-90, 90]")
        if not 0.0 <= self.label <= 1.0 or math.isnan(self.label):
            raise ValueError(f"label {self.label} outside [0, 1]")
        if not self.weight >= 0.0 or math.isinf(self.weight):
            raise ValueError(f"weight {self.weight} must be finite and nonnegative")
        if not isinstance(self.source, str) or not self.source:
            raise ValueError("source must be a non-empty string")


@dataclass(frozen=True)
class HexGridSpec:
    """Hexagon tessellation parameters. Orientation (pointy-top) and the
    equal-area projection are fixed; cell area and origin offsets vary."""

    cell_area_km2: float = CELL_AREA_KM2_DEFAULT
    origin_x_km: float = 0.0
    origin_y_km: float = 0.0

    def __post_init__(self):
        if not self.cell_area_km2 > 0:
            raise ValueError(f"cell_area_km2 must be positive, got {self.cell_area_km2}")

    @property
    def edge_km(self) -> float:
        # hexagon area = (3*sqrt(3)/2) * s^2
        return math.sqrt(2.0 * self.cell_area_km2 / (3.0 * math.sqrt(3.0)))


def project_equal_area(lon, lat) -> tuple[np.ndarray, np.ndarray]:
    """Lambert cylindrical equal-area on the authalic sphere, km east/north."""
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    x = AUTHALIC_RADIUS_KM * np.radians(lon)
    y = AUTHALIC_RADIUS_KM * np.sin(np.radians(lat))
    return x, y


def _axial_round(qf: np.ndarray, rf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cube-coordinate rounding of fractional axial coordinates."""
    x = qf
    z = rf
    y = -x - z
    rx = np.rint(x)
    ry = np.rint(y)
    rz = np.rint(z)
    dx = np.abs(rx - x)
    dy = np.abs(ry - y)
    dz = np.abs(rz - z)
    fix_x = (dx > dy) & (dx > dz)
    fix_z = ~fix_x & (dz >= dy)  # when dy is largest, y absorbs the repair and q/r stand
    rx = np.where(fix_x, -ry - rz, rx)
    rz = np.where(fix_z, -rx - ry, rz)
    return rx.astype(np.int64), rz.astype(np.int64)


def hex_cells_of(lons, lats, spec: HexGridSpec = HexGridSpec()) -> tuple[np.ndarray, np.ndarray]:
    """Axial (q, r) hexagon coordinates for arrays of lon/lat degrees."""
    x, y = project_equal_area(lons, lats)
    x = x - spec.origin_x_km
    y = y - spec.origin_y_km
    s = spec.edge_km
    qf = (math.sqrt(3.0) / 3.0 * x - y / 3.0) / s
    rf = (2.0 / 3.0 * y) / s
    return _axial_round(np.asarray(qf, dtype=np.float64), np.asarray(rf, dtype=np.float64))


def hex_cell_of(lon: float, lat: float, spec: HexGridSpec = HexGridSpec()) -> tuple[int, int]:
    q, r = hex_cells_of(np.array([lon]), np.array([lat]), spec)
    return int(q[0]), int(r[0])


def hex_cell_center(q: int, r: int, spec: HexGridSpec = HexGridSpec()) -> tuple[float, float]:
    """Projected km coordinates of a cell center (pointy-top axial layout)."""
    s = spec.edge_km
    x = s * math.sqrt(3.0) * (q + r / 2.0) + spec.origin_x_km
    y = s * 1.5 * r + spec.origin_y_km
    return x, y


def fold_of_cell(q: int, r: int, seed: int) -> int:
    """Deterministic fold in {0, 1, 2} from hashed cell coordinates."""
    digest = hashlib.blake2b(struct.pack("<qqq", int(q), int(r), int(seed)), digest_size=8).digest()
    return int.from_bytes(digest, "little") % N_FOLDS


@dataclass(frozen=True)
class FoldAssignment:
    """Fold index per point plus the per-fold census."""

    folds: np.ndarray = field(repr=False)  # int8, one entry per point
    counts: tuple[int, int, int]
    positive_fraction: tuple[float | None, float | None, float | None]
    training_fold: int
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "folds": [
                {
                    "index": i,
                    "points": self.counts[i],
                    "positive_fraction": self.positive_fraction[i],
                }
                for i in range(N_FOLDS)
            ],
            "training_fold": self.training_fold,
        }


def assign_folds(
    points: Sequence[SamplePoint],
    seed: int = 0,
    spec: HexGridSpec = HexGridSpec(),
) -> FoldAssignment:
    """Partition points into 3 geographic folds by hexagon hash.

    positive_fraction counts labels >= 0.5 (None for an empty fold). Folds are
    reported as-is, with no rebalancing; the training fold is the largest."""
    if not points:
        raise ValueError("need at least one point")
    lons = np.array([p.lon for p in points], dtype=np.float64)
    lats = np.array([p.lat for p in points], dtype=np.float64)
    labels = np.array([p.label for p in points], dtype=np.float64)
    q, r = hex_cells_of(lons, lats, spec)

    cell_fold_cache: dict[tuple[int, int], int] = {}
    folds = np.empty(len(points), dtype=np.int8)
    for i, cell in enumerate(zip(q.tolist(), r.tolist())):
        f = cell_fold_cache.get(cell)
        if f is None:
            f = fold_of_cell(cell[0], cell[1], seed)
            cell_fold_cache[cell] = f
        folds[i] = f

    counts = tuple(int(np.sum(folds == k)) for k in range(N_FOLDS))
    pos = []
    for k in range(N_FOLDS):
        sel = folds == k
        pos.append(float(np.mean(labels[sel] >= 0.5)) if sel.any() else None)
    training_fold = int(np.argmax(counts))  # first max, so ties go to the lowest index
    return FoldAssignment(folds, counts, tuple(pos), training_fold, int(seed))


def pseudo_absence_sample(
    non_tree: MaskGrid,
    stable_forest: MaskGrid,
    n_non_tree: int,
    n_forest: int,
    seed: int,
    year: int,
) -> list[SamplePoint]:
    """Draw label-0 samples uniformly without replacement from two strata.

    Eligible pixels are mask value 1 (255/nodata never eligible). Each stratum
    draws from its own counter-based Philox stream keyed (seed, stratum), so
    strata can be sampled independently or together with identical results.
    Points are pixel centers with source "pseudo_absence" and weight 1. Masks
    are expected on a geographic grid (lon/lat ranges are enforced by
    SamplePoint). Requesting more points than a stratum holds raises
    CapacityError."""
    if not non_tree.header.aligned_with(stable_forest.header):
        raise SchemaError("pseudo-absence masks are not aligned")
    if n_non_tree < 0 or n_forest < 0:
        raise ValueError("sample counts must be nonnegative")
    hdr = non_tree.header
    points: list[SamplePoint] = []
    strata = (("non_tree", non_tree, n_non_tree), ("stable_forest", stable_forest, n_forest))
    for stratum_index, (name, mask, n) in enumerate(strata):
        eligible = np.flatnonzero(mask.values.ravel() == 1)
        if n > eligible.size:
            raise CapacityError(
                f"stratum '{name}': requested {n} points but only {eligible.size} eligible pixels"
            )
        rng = np.random.Generator(np.random.Philox(key=[int(seed), stratum_index]))
        chosen = rng.choice(eligible, size=n, replace=False, shuffle=False)
        rows, cols = np.divmod(chosen, hdr.width)
        for rr, cc in zip(rows.tolist(), cols.tolist()):
            lon = hdr.origin_x + (cc + 0.5) * hdr.pixel_size_x
            lat = hdr.origin_y - (rr + 0.5) * hdr.pixel_size_y
            points.append(
                SamplePoint(lon=lon, lat=lat, label=0.0, year=year, source="pseudo_absence")
            )
    return points


# ---------------------------------------------------------------------------
# Sample CSV I/O


def write_samples(points: Iterable[SamplePoint], path: str) -> None:
    """lon,lat,label,year,source,weight rows; floats in repr precision."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SAMPLE_CSV_HEADER)
    for p in points:
        writer.writerow([repr(p.lon), repr(p.lat), repr(p.label), p.year, p.source, repr(p.weight)])
    from .rastercore import atomic_write_text

    atomic_write_text(path, buf.getvalue())


def read_samples(path: str) -> list[SamplePoint]:
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(head) != SAMPLE_CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(SAMPLE_CSV_HEADER)}, got {','.join(head)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise ParseError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            try:
                points.append(
                    SamplePoint(
                        lon=float(row[0]),
                        lat=float(row[1]),
                        label=float(row[2]),
                        year=int(row[3]),
                        source=row[4],
                        weight=float(row[5]),
                    )
                )
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from e
    return points


# ---------------------------------------------------------------------------
# Feature extraction


def extract_features(
    stack: AnnualStack,
    points: Sequence[SamplePoint],
) -> tuple[np.ndarray, np.ndarray]:
    """Sample the 24 stack channels at each point's pixel.

    Returns (features, kept): features is float64 (n_kept, 24) in channel
    order; kept is a boolean array over the input points, False where a point
    falls outside the grid or any channel is nodata there. Points are matched
    to pixels by the containing-cell rule on the stack's own coordinate
    space."""
    hdr = stack.header
    lons = np.array([p.lon for p in points], dtype=np.float64)
    lats = np.array([p.lat for p in points], dtype=np.float64)
    cols = np.floor((lons - hdr.origin_x) / hdr.pixel_size_x).astype(np.int64)
    rows = np.floor((hdr.origin_y - lats) / hdr.pixel_size_y).astype(np.int64)
    kept = (cols >= 0) & (cols < hdr.width) & (rows >= 0) & (rows < hdr.height)

    safe_rows = np.where(kept, rows, 0)
    safe_cols = np.where(kept, cols, 0)
    feats = np.empty((len(points), len(stack.channels)), dtype=np.float64)
    for ci, grid in enumerate(stack.channels):
        feats[:, ci] = grid.values[safe_rows, safe_cols]
        kept &= ~nodata_mask(grid)[safe_rows, safe_cols]
    return feats[kept], kept
