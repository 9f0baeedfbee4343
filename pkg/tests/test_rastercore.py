import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palmgrid.errors import ConfigError, GridFormatError, SchemaError, TruncationError
from palmgrid.rastercore import (
    BandGrid,
    GridHeader,
    MaskGrid,
    RegionOfInterest,
    grid_from_bytes,
    grid_to_bytes,
    map_row_blocks,
    nodata_mask,
    pixel_area_ha,
    rasterize_roi,
    read_grid,
    read_rois,
    require_aligned,
    row_areas_ha,
    valid_mask,
    write_grid,
)


def header(w=4, h=3, **kw):
    kw.setdefault("origin_x", 100.0)
    kw.setdefault("origin_y", 50.0)
    kw.setdefault("pixel_size_x", 10.0)
    kw.setdefault("pixel_size_y", 10.0)
    return GridHeader(width=w, height=h, **kw)


# ---------------------------------------------------------------------------
# headers


def test_header_validation():
    with pytest.raises(ValueError):
        header(w=0)
    with pytest.raises(ValueError):
        header(pixel_size_x=-1.0)
    with pytest.raises(ValueError):
        header(pixel_size_y=0.0)
    with pytest.raises(ValueError):
        header(origin_x=float("inf"))


def test_alignment_ignores_band_name_only():
    a = header(band_name="B4")
    assert a.aligned_with(header(band_name="VV"))
    assert not a.aligned_with(header(origin_x=100.5, band_name="B4"))
    assert not a.aligned_with(header(crs_tag="degrees", band_name="B4"))


def test_alignment_nan_nodata():
    a = header(nodata=float("nan"))
    b = header(nodata=float("nan"), band_name="other")
    assert a.aligned_with(b)
    assert not a.aligned_with(header(nodata=-9999.0))


# ---------------------------------------------------------------------------
# grid construction


def test_band_grid_rejects_wrong_count():
    with pytest.raises(ValueError):
        BandGrid(header(), np.zeros(11, dtype=np.float32))


def test_band_grid_values_read_only():
    g = BandGrid(header(), np.zeros((3, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        g.values[0, 0] = 1.0


def test_mask_grid_value_domain():
    MaskGrid(header(), np.full((3, 4), 255, dtype=np.uint8))
    with pytest.raises(ValueError):
        MaskGrid(header(), np.full((3, 4), 7, dtype=np.uint8))


def test_nodata_mask_nan_and_value():
    g = BandGrid(header(nodata=-1.0), [[-1.0, 2.0, -1.0, 3.0]] * 3)
    assert nodata_mask(g).sum() == 6
    gn = BandGrid(header(nodata=float("nan")), [[np.nan, 2.0, 1.0, 3.0]] * 3)
    assert nodata_mask(gn).sum() == 3
    assert valid_mask(gn).sum() == 9


def test_require_aligned():
    a = BandGrid(header(), np.zeros((3, 4), np.float32))
    b = BandGrid(header(origin_y=51.0), np.zeros((3, 4), np.float32))
    require_aligned(a, a)
    with pytest.raises(SchemaError):
        require_aligned(a, b)


# ---------------------------------------------------------------------------
# FGRD round trips


@settings(max_examples=40, deadline=None)
@given(
    w=st.integers(1, 9),
    h=st.integers(1, 9),
    bits=st.data(),
    nodata_nan=st.booleans(),
)
def test_fgrd_round_trip_bit_exact(w, h, bits, nodata_nan):
    # arbitrary float32 bit patterns, NaNs and subnormals included
    raw = bits.draw(
        st.lists(st.integers(0, 2**32 - 1), min_size=w * h, max_size=w * h)
    )
    values = np.array(raw, dtype=np.uint32).view(np.float32).reshape(h, w)
    hd = header(w=w, h=h, nodata=float("nan") if nodata_nan else -9999.0, band_name="b")
    g = BandGrid(hd, values)
    data = grid_to_bytes(g)
    g2 = grid_from_bytes(data)
    assert g2.header.aligned_with(g.header)  # NaN-safe field comparison
    assert g2.header.band_name == g.header.band_name
    assert g2.values.tobytes() == g.values.tobytes()
    assert grid_to_bytes(g2) == data


def test_fgrd_file_round_trip(tmp_path):
    g = BandGrid(header(band_name="B8A"), np.arange(12, dtype=np.float32))
    p = tmp_path / "b.fgrd"
    write_grid(g, str(p))
    g2 = read_grid(str(p))
    assert g2.header == g.header
    assert np.array_equal(g2.values, g.values)
    # deterministic bytes: writing again produces the identical file
    raw1 = p.read_bytes()
    write_grid(g2, str(p))
    assert p.read_bytes() == raw1


def test_fgrd_mask_round_trip(tmp_path):
    m = MaskGrid(header(), np.array([[0, 1, 255, 1]] * 3, dtype=np.uint8))
    p = tmp_path / "m.fgrd"
    write_grid(m, str(p))
    m2 = read_grid(str(p))
    assert isinstance(m2, MaskGrid)
    assert np.array_equal(m2.values, m.values)


def test_fgrd_header_key_order_fixed():
    g = BandGrid(header(), np.zeros((3, 4), np.float32))
    line = grid_to_bytes(g).split(b"\n", 2)[1].decode()
    keys = list(json.loads(line))
    assert keys == [
        "width", "height", "origin_x", "origin_y", "pixel_size_x",
        "pixel_size_y", "crs_tag", "nodata", "band_name", "dtype",
    ]


def test_fgrd_bad_magic():
    with pytest.raises(GridFormatError):
        grid_from_bytes(b"NOPE1\n{}")


def test_fgrd_bad_json():
    with pytest.raises(GridFormatError):
        grid_from_bytes(b"FGRD1\n{not json}\n")


def test_fgrd_missing_header_newline():
    with pytest.raises(GridFormatError):
        grid_from_bytes(b"FGRD1\n" + b'{"width": 1}')


def test_fgrd_wrong_keys():
    hdr = {k: 1 for k in ("width", "height")}
    with pytest.raises(GridFormatError):
        grid_from_bytes(b"FGRD1\n" + json.dumps(hdr).encode() + b"\n")


def test_fgrd_truncated_payload():
    g = BandGrid(header(w=3, h=3), np.zeros((3, 3), np.float32))
    data = grid_to_bytes(g)
    with pytest.raises(TruncationError):
        grid_from_bytes(data[:-4])  # 8 of 9 floats
    with pytest.raises(TruncationError):
        grid_from_bytes(data + b"\x00\x00\x00\x00")


def test_fgrd_invalid_dims_rejected():
    obj = dict(width=0, height=3, origin_x=0.0, origin_y=0.0, pixel_size_x=1.0,
               pixel_size_y=1.0, crs_tag="meters", nodata=-9999.0, band_name="", dtype="f32")
    with pytest.raises(GridFormatError):
        grid_from_bytes(b"FGRD1\n" + json.dumps(obj).encode() + b"\n")


# ---------------------------------------------------------------------------
# regions of interest


def test_roi_needs_three_vertices():
    with pytest.raises(ValueError):
        RegionOfInterest("r", ((0, 0), (1, 0)))


def test_roi_rejects_self_intersection():
    bowtie = ((0, 0), (2, 2), (2, 0), (0, 2))
    with pytest.raises(ValueError):
        RegionOfInterest("r", bowtie)


def test_roi_accepts_convex_and_concave():
    RegionOfInterest("sq", ((0, 0), (4, 0), (4, 4), (0, 4)))
    RegionOfInterest("l", ((0, 0), (4, 0), (4, 2), (2, 2), (2, 4), (0, 4)))


def test_rasterize_full_cover_square():
    # 4x3 grid of 10 m pixels starting at (100, 50); square covering everything
    hd = header()
    roi = RegionOfInterest("all", ((90, 0), (150, 0), (150, 60), (90, 60)))
    m = rasterize_roi(roi, hd)
    assert m.values.all()
    assert m.header.aligned_with(hd)
    assert m.header.band_name == "all"


def test_rasterize_pixel_center_rule():
    # Unit pixels, origin (0, 4), 4x4. Triangle with vertices at pixel corners.
    hd = GridHeader(width=4, height=4, origin_x=0.0, origin_y=4.0,
                    pixel_size_x=1.0, pixel_size_y=1.0)
    roi = RegionOfInterest("t", ((0, 0), (4, 0), (0, 4)))
    m = rasterize_roi(roi, hd)
    # centers at (c+0.5, 3.5-r); inside iff y < -x + 4 by center test
    expect = np.zeros((4, 4), np.uint8)
    for r in range(4):
        for c in range(4):
            x, y = c + 0.5, 3.5 - r
            expect[r, c] = 1 if (x + y) < 4 else 0
    assert np.array_equal(m.values, expect)


def test_rasterize_oracle_random_convex(tmp_path):
    # oracle: matplotlib-free point-in-polygon by winding sign on convex hulls
    rng = np.random.default_rng(5)
    hd = GridHeader(width=16, height=16, origin_x=0.0, origin_y=16.0,
                    pixel_size_x=1.0, pixel_size_y=1.0)
    for _ in range(10):
        pts = rng.uniform(1, 15, size=(8, 2))
        center = pts.mean(axis=0)
        order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
        hull = pts[order]
        roi = RegionOfInterest("c", tuple(map(tuple, hull)))
        m = rasterize_roi(roi, hd)
        xs = np.arange(16) + 0.5
        ys = 16.0 - (np.arange(16) + 0.5)
        for r in range(16):
            for c in range(16):
                p = np.array([xs[c], ys[r]])
                crossings = 0
                for i in range(len(hull)):
                    x1, y1 = hull[i]
                    x2, y2 = hull[(i + 1) % len(hull)]
                    if (y1 > p[1]) != (y2 > p[1]):
                        xint = x1 + (p[1] - y1) / (y2 - y1) * (x2 - x1)
                        if p[0] < xint:
                            crossings += 1
                assert m.values[r, c] == crossings % 2


def test_read_rois(tmp_path):
    p = tmp_path / "rois.json"
    p.write_text(json.dumps([
        {"id": "a", "ring": [[0, 0], [2, 0], [2, 2], [0, 2]]},
        {"id": "b", "ring": [[5, 5], [9, 5], [7, 9]]},
    ]))
    rois = read_rois(str(p))
    assert [r.roi_id for r in rois] == ["a", "b"]


# ---------------------------------------------------------------------------
# pixel areas


def test_pixel_area_meters():
    hd = header()  # 10 m x 10 m
    assert pixel_area_ha(hd, 0) == pytest.approx(0.01)
    assert np.allclose(row_areas_ha(hd), 0.01)


def test_pixel_area_degrees_cosine():
    hd = GridHeader(width=2, height=2, origin_x=100.0, origin_y=1.0,
                    pixel_size_x=1e-4, pixel_size_y=1e-4, crs_tag="degrees")
    lat0 = 1.0 - 0.5e-4
    expect = (1e-4 * 111320.0) ** 2 * math.cos(math.radians(lat0)) / 1e4
    assert pixel_area_ha(hd, 0) == pytest.approx(expect, rel=1e-12)
    areas = row_areas_ha(hd)
    assert areas[0] == pytest.approx(expect, rel=1e-12)
    # rows march south from lat 1.0 toward the equator, so area grows
    assert areas[1] > areas[0]


def test_pixel_area_degrees_row_dependence():
    hd = GridHeader(width=1, height=3, origin_x=0.0, origin_y=45.0,
                    pixel_size_x=0.01, pixel_size_y=0.01, crs_tag="degrees")
    a = [pixel_area_ha(hd, r) for r in range(3)]
    assert a[0] < a[1] < a[2]  # approaching the equator
    assert np.allclose(row_areas_ha(hd), a, rtol=1e-15)


def test_pixel_area_unknown_crs():
    hd = header(crs_tag="feet")
    with pytest.raises(ConfigError):
        pixel_area_ha(hd, 0)
    with pytest.raises(ConfigError):
        row_areas_ha(hd)


def test_pixel_area_row_bounds():
    with pytest.raises(ValueError):
        pixel_area_ha(header(), 3)


# ---------------------------------------------------------------------------
# block mapping


def test_map_row_blocks_spans_and_threads():
    seen = []
    map_row_blocks(10, 4, lambda a, b: seen.append((a, b)), threads=1)
    assert seen == [(0, 4), (4, 8), (8, 10)]

    out1 = np.zeros(1000)
    out2 = np.zeros(1000)

    def fill(target):
        def fn(r0, r1):
            target[r0:r1] = np.arange(r0, r1) * 1.5
        return fn

    map_row_blocks(1000, 7, fill(out1), threads=1)
    map_row_blocks(1000, 7, fill(out2), threads=8)
    assert np.array_equal(out1, out2)
