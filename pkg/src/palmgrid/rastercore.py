"""Single-band raster grids, the FGRD on-disk format, and region rasterization.

FGRD layout (one band per file):

    b"FGRD1\\n"                         ASCII magic
    one line of JSON header text        keys in this fixed order:
                                        width, height, origin_x, origin_y,
                                        pixel_size_x, pixel_size_y, crs_tag,
                                        nodata, band_name, dtype
    b"\\n"
    row-major little-endian payload     dtype "f32" (BandGrid) or "u8" (MaskGrid)

The origin is the outer corner of the top-left pixel; rows run north to south.
Writing the same grid twice produces identical bytes, and read->write round-trips
are bit-exact (NaN payloads included). Mask grids use 255 as their nodata value
by convention regardless of the header's nodata field, so a rasterized mask can
stay aligned with the float band it was derived from.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigError, GridFormatError, SchemaError, TruncationError

NODATA_DEFAULT = -9999.0
MASK_NODATA = 255
METERS_PER_DEGREE = 111_320.0

_MAGIC = b"FGRD1\n"
_HEADER_KEYS = (
    "width",
    "height",
    "origin_x",
    "origin_y",
    "pixel_size_x",
    "pixel_size_y",
    "crs_tag",
    "nodata",
    "band_name",
    "dtype",
)
_DTYPE_TAGS = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _float_field_eq(a: float, b: float) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


@dataclass(frozen=True)
class GridHeader:
    """Geometry and metadata shared by every grid on the same footprint."""

    width: int
    height: int
    origin_x: float
    origin_y: float
    pixel_size_x: float
    pixel_size_y: float
    crs_tag: str = "meters"
    nodata: float = NODATA_DEFAULT
    band_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        for name in ("origin_x", "origin_y", "pixel_size_x", "pixel_size_y", "nodata"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.width}x{self.height}")
        for name in ("pixel_size_x", "pixel_size_y"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be a positive finite number, got {v}")
        for name in ("origin_x", "origin_y"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not isinstance(self.crs_tag, str) or not isinstance(self.band_name, str):
            raise ValueError("crs_tag and band_name must be strings")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def aligned_with(self, other: "GridHeader") -> bool:
        """True when every field except band_name matches exactly (nodata is
        compared NaN-safely)."""
        return (
            self.width == other.width
            and self.height == other.height
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
            and self.pixel_size_x == other.pixel_size_x
            and self.pixel_size_y == other.pixel_size_y
            and self.crs_tag == other.crs_tag
            and _float_field_eq(self.nodata, other.nodata)
        )


def pixel_center_x(header: GridHeader) -> np.ndarray:
    """X map coordinate of each column's pixel center, shape (width,)."""
    return header.origin_x + (np.arange(header.width, dtype=np.float64) + 0.5) * header.pixel_size_x


def pixel_center_y(header: GridHeader) -> np.ndarray:
    """Y map coordinate of each row's pixel center, shape (height,). Rows run
    north to south, so values decrease with row index."""
    return header.origin_y - (np.arange(header.height, dtype=np.float64) + 0.5) * header.pixel_size_y


def _coerce_values(values, header: GridHeader, dtype: np.dtype) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim == 1 and arr.size == header.width * header.height:
        arr = arr.reshape(header.height, header.width)
    if arr.shape != header.shape:
        raise ValueError(
            f"value count does not match header: expected {header.height}x{header.width}, "
            f"got array of shape {arr.shape}"
        )
    out = np.array(arr, dtype=dtype, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BandGrid:
    """One float32 band on a grid. Values are stored read-only."""

    header: GridHeader
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _coerce_values(self.values, self.header, np.dtype("<f4")))

    @property
    def shape(self) -> tuple[int, int]:
        return self.header.shape


@dataclass(frozen=True)
class MaskGrid:
    """One uint8 mask on a grid: 0, 1, or 255 (nodata by convention)."""

    header: GridHeader
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = _coerce_values(self.values, self.header, np.dtype("u1"))
        bad = ~np.isin(vals, (0, 1, MASK_NODATA))
        if bad.any():
            raise ValueError(
                f"mask values must be 0, 1, or {MASK_NODATA}; found {np.unique(vals[bad])[:5]}"
            )
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.header.shape


Grid = Union[BandGrid, MaskGrid]


def nodata_mask(grid: Grid) -> np.ndarray:
    """Boolean array marking nodata pixels. For float bands a NaN nodata value
    matches NaN cells; masks use the 255 convention."""
    if isinstance(grid, MaskGrid):
        return grid.values == MASK_NODATA
    nd = grid.header.nodata
    if math.isnan(nd):
        return np.isnan(grid.values)
    return grid.values == np.float32(nd)


def valid_mask(grid: Grid) -> np.ndarray:
    return ~nodata_mask(grid)


def require_aligned(*grids: Grid, what: str = "grids") -> None:
    """Raise SchemaError unless every grid shares the first one's footprint."""
    first = grids[0].header
    for i, g in enumerate(grids[1:], start=1):
        if not first.aligned_with(g.header):
            raise SchemaError(f"{what} are not aligned: grid {i} differs from grid 0")


# ---------------------------------------------------------------------------
# FGRD I/O


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a temp file in the target directory, then os.replace."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=os.path.basename(path) + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def grid_to_bytes(grid: Grid) -> bytes:
    dtype_tag = "u8" if isinstance(grid, MaskGrid) else "f32"
    h = grid.header
    header_obj = {
        "width": h.width,
        "height": h.height,
        "origin_x": h.origin_x,
        "origin_y": h.origin_y,
        "pixel_size_x": h.pixel_size_x,
        "pixel_size_y": h.pixel_size_y,
        "crs_tag": h.crs_tag,
        "nodata": h.nodata,
        "band_name": h.band_name,
        "dtype": dtype_tag,
    }
    header_line = json.dumps(header_obj).encode("ascii")
    payload = np.ascontiguousarray(grid.values, dtype=_DTYPE_TAGS[dtype_tag]).tobytes()
    return _MAGIC + header_line + b"\n" + payload


def write_grid(grid: Grid, path: str) -> None:
    """Serialize a grid to FGRD, atomically. Same grid -> same bytes."""
    atomic_write_bytes(path, grid_to_bytes(grid))


def grid_from_bytes(data: bytes) -> Grid:
    if not data.startswith(_MAGIC):
        raise GridFormatError(f"bad magic: expected {_MAGIC!r}")
    nl = data.find(b"\n", len(_MAGIC))
    if nl < 0:
        raise GridFormatError("header line is not newline-terminated")
    try:
        obj = json.loads(data[len(_MAGIC):nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise GridFormatError(f"header is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise GridFormatError("header JSON must be an object")
    if set(obj) != set(_HEADER_KEYS):
        missing = sorted(set(_HEADER_KEYS) - set(obj))
        extra = sorted(set(obj) - set(_HEADER_KEYS))
        raise GridFormatError(f"header keys wrong: missing={missing} extra={extra}")
    dtype_tag = obj["dtype"]
    if dtype_tag not in _DTYPE_TAGS:
        raise GridFormatError(f"unknown dtype tag {dtype_tag!r}")
    try:
        header = GridHeader(
            width=obj["width"],
            height=obj["height"],
            origin_x=obj["origin_x"],
            origin_y=obj["origin_y"],
            pixel_size_x=obj["pixel_size_x"],
            pixel_size_y=obj["pixel_size_y"],
            crs_tag=obj["crs_tag"],
            nodata=obj["nodata"],
            band_name=obj["band_name"],
        )
    except (TypeError, ValueError) as e:
        raise GridFormatError(f"invalid header fields: {e}") from e
    dtype = _DTYPE_TAGS[dtype_tag]
    expected = header.width * header.height * dtype.itemsize
    payload = data[nl + 1:]
    if len(payload) != expected:
        raise TruncationError(
            f"payload is {len(payload)} bytes but header declares "
            f"{header.height}x{header.width} {dtype_tag} = {expected} bytes"
        )
    values = np.frombuffer(payload, dtype=dtype).reshape(header.height, header.width)
    if dtype_tag == "u8":
        return MaskGrid(header, values)
    return BandGrid(header, values)


def read_grid(path: str) -> Grid:
    with open(path, "rb") as fh:
        data = fh.read()
    return grid_from_bytes(data)


# ---------------------------------------------------------------------------
# Regions of interest


def _orient(o, a, b) -> int:
    v = (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    return 0 if v == 0 else (1 if v > 0 else -1)


def _on_segment(a, b, p) -> bool:
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def _segments_intersect(a, b, c, d) -> bool:
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(a, b, c):
        return True
    if o2 == 0 and _on_segment(a, b, d):
        return True
    if o3 == 0 and _on_segment(c, d, a):
        return True
    if o4 == 0 and _on_segment(c, d, b):
        return True
    return False


@dataclass(frozen=True)
class RegionOfInterest:
    """A simple (non-self-intersecting) polygon ring in map coordinates,
    vertices in order, implicitly closed."""

    roi_id: str
    ring: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not isinstance(self.roi_id, str) or not self.roi_id:
            raise ValueError("roi_id must be a non-empty string")
        ring = tuple((float(x), float(y)) for x, y in self.ring)
        if len(ring) < 3:
            raise ValueError(f"ROI ring needs at least 3 vertices, got {len(ring)}")
        for x, y in ring:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError("ROI vertices must be finite")
        n = len(ring)
        edges = [(ring[i], ring[(i + 1) % n]) for i in range(n)]
        for a, b in edges:
            if a == b:
                raise ValueError("ROI ring has a zero-length edge")
        for i in range(n):
            for j in range(i + 1, n):
                adjacent = j == i + 1 or (i == 0 and j == n - 1)
                if adjacent:
                    continue
                if _segments_intersect(*edges[i], *edges[j]):
                    raise ValueError(
                        f"ROI ring self-intersects (edges {i} and {j})"
                    )
        object.__setattr__(self, "ring", ring)


def read_rois(path: str) -> list[RegionOfInterest]:
    """Load a JSON array of {"id": str, "ring": [[x, y], ...]} regions."""
    from .errors import ParseError

    with open(path, "rb") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(obj, list):
        raise ParseError(f"{path}: expected a JSON array of regions")
    rois = []
    for i, entry in enumerate(obj):
        if not isinstance(entry, dict) or "id" not in entry or "ring" not in entry:
            raise ParseError(f"{path}: region {i} must be an object with 'id' and 'ring'")
        try:
            rois.append(RegionOfInterest(str(entry["id"]), tuple(map(tuple, entry["ring"]))))
        except (TypeError, ValueError) as e:
            raise ParseError(f"{path}: region {i}: {e}") from e
    return rois


def rasterize_roi(roi: RegionOfInterest, template: GridHeader) -> MaskGrid:
    """Pixel-center even-odd rasterization of the ROI onto the template grid.

    A pixel is 1 when its center falls inside the ring by the crossing-number
    rule, else 0. The result is aligned with the template (band_name becomes
    the ROI id)."""
    xs = pixel_center_x(template)
    ys = pixel_center_y(template)
    inside = np.zeros(template.shape, dtype=bool)
    ring = roi.ring
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if y1 == y2:
            continue
        straddle = (y1 > ys) != (y2 > ys)
        if not straddle.any():
            continue
        with np.errstate(invalid="ignore"):
            xint = x1 + (ys - y1) / (y2 - y1) * (x2 - x1)
        inside ^= straddle[:, None] & (xs[None, :] < xint[:, None])
    header = replace(template, band_name=roi.roi_id)
    return MaskGrid(header, inside.astype(np.uint8))


# ---------------------------------------------------------------------------
# Pixel areas


def row_areas_ha(header: GridHeader) -> np.ndarray:
    """Hectares per pixel for each row, shape (height,), float64.

    Projected grids ("meters") have constant pixel area. Geographic grids
    ("degrees") scale the east-west extent by cos(latitude) at the row's pixel
    center, with 111,320 meters per degree on both axes."""
    if header.crs_tag == "meters":
        area = header.pixel_size_x * header.pixel_size_y / 1e4
        return np.full(header.height, area, dtype=np.float64)
    if header.crs_tag == "degrees":
        lat = pixel_center_y(header)
        w_m = header.pixel_size_x * METERS_PER_DEGREE
        h_m = header.pixel_size_y * METERS_PER_DEGREE
        return w_m * h_m * np.cos(np.radians(lat)) / 1e4
    raise ConfigError(f"unknown crs_tag {header.crs_tag!r}: expected 'meters' or 'degrees'")


def pixel_area_ha(header: GridHeader, row: int) -> float:
    """Hectares covered by one pixel in the given row."""
    row = int(row)
    if not 0 <= row < header.height:
        raise ValueError(f"row {row} outside grid of height {header.height}")
    if header.crs_tag == "meters":
        return header.pixel_size_x * header.pixel_size_y / 1e4
    if header.crs_tag == "degrees":
        lat = header.origin_y - (row + 0.5) * header.pixel_size_y
        w_m = header.pixel_size_x * METERS_PER_DEGREE
        h_m = header.pixel_size_y * METERS_PER_DEGREE
        return w_m * h_m * math.cos(math.radians(lat)) / 1e4
    raise ConfigError(f"unknown crs_tag {header.crs_tag!r}: expected 'meters' or 'degrees'")


# ---------------------------------------------------------------------------
# Deterministic block-parallel execution


def map_row_blocks(n_rows: int, block: int, fn: Callable[[int, int], None], threads: int = 1) -> None:
    """Run fn(row0, row1) over fixed half-open row spans.

    Block boundaries depend only on n_rows and block, never on the thread
    count, so writers that touch disjoint output slices produce byte-identical
    results at any parallelism."""
    if block < 1:
        raise ValueError("block must be >= 1")
    spans = [(r, min(r + block, n_rows)) for r in range(0, n_rows, block)]
    if threads <= 1 or len(spans) <= 1:
        for r0, r1 in spans:
            fn(r0, r1)
        return
    with ThreadPoolExecutor(max_workers=threads) as ex:
        for _ in ex.map(lambda span: fn(*span), spans):
            pass
