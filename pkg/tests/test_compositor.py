import datetime as dt
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palmgrid.compositor import (
    AnnualStack,
    CHANNEL_ORDER,
    C_BAND_DB_RANGE,
    L_BAND_DB_RANGE,
    Scene,
    assemble_annual_stack,
    gapfill_rolling_mean,
    load_scene_manifest,
    load_stack,
    masked_annual_mean,
    sar_annual_stats,
    save_stack,
    slope_from_dem,
    to_scaled_db,
)
from palmgrid.errors import ConfigError, SchemaError
from palmgrid.rastercore import BandGrid, GridHeader, nodata_mask, write_grid

ND = -9999.0


def header(w=3, h=2, crs="meters", name=""):
    return GridHeader(width=w, height=h, origin_x=0.0, origin_y=100.0,
                      pixel_size_x=10.0, pixel_size_y=10.0, crs_tag=crs,
                      nodata=ND, band_name=name)


def grid(vals, w=3, h=2, crs="meters", name=""):
    return BandGrid(header(w=w, h=h, crs=crs, name=name), np.asarray(vals, dtype=np.float32))


def scene(day, bands, quality=None, w=3, h=2):
    return Scene(dt.date(2020, 1, day),
                 {k: grid(v, w=w, h=h, name=k) for k, v in bands.items()},
                 None if quality is None else grid(quality, w=w, h=h, name="q"))


# ---------------------------------------------------------------------------
# masked_annual_mean


def test_mean_basic_and_cloud_screen():
    s1 = scene(1, {"B4": np.full((2, 3), 1.0)}, quality=np.full((2, 3), 0.9))
    s2 = scene(2, {"B4": np.full((2, 3), 3.0)}, quality=np.full((2, 3), 0.59))
    out = masked_annual_mean([s1, s2], "B4")
    assert np.allclose(out.values, 1.0)  # cloudy scene dropped (0.59 < 0.6)
    out2 = masked_annual_mean([s1, s2], "B4", cloud_threshold=0.5)
    assert np.allclose(out2.values, 2.0)


def test_mean_threshold_is_inclusive():
    s1 = scene(1, {"B4": np.full((2, 3), 1.0)}, quality=np.full((2, 3), 0.6))
    out = masked_annual_mean([s1], "B4")
    assert np.allclose(out.values, 1.0)


def test_mean_nodata_observation_is_missing_not_poison():
    a = np.full((2, 3), 4.0, dtype=np.float32)
    a[0, 0] = ND
    s1 = scene(1, {"B4": a})
    s2 = scene(2, {"B4": np.full((2, 3), 2.0)})
    out = masked_annual_mean([s1, s2], "B4")
    assert out.values[0, 0] == 2.0
    assert out.values[1, 1] == 3.0


def test_mean_no_observations_is_nodata():
    a = np.full((2, 3), ND, dtype=np.float32)
    out = masked_annual_mean([scene(1, {"B4": a})], "B4")
    assert nodata_mask(out).all()


def test_mean_quality_nodata_disqualifies():
    q = np.full((2, 3), 0.9, dtype=np.float32)
    q[0, 1] = ND
    s1 = scene(1, {"B4": np.full((2, 3), 5.0)}, quality=q)
    out = masked_annual_mean([s1], "B4")
    assert nodata_mask(out)[0, 1]
    assert out.values[0, 0] == 5.0


def test_mean_missing_band_schema_error():
    s1 = scene(1, {"B4": np.zeros((2, 3))})
    s2 = scene(2, {"B3": np.zeros((2, 3))})
    with pytest.raises(SchemaError):
        masked_annual_mean([s1, s2], "B4")


def test_mean_empty_scene_list():
    with pytest.raises(ValueError):
        masked_annual_mean([], "B4")


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_mean_permutation_invariant(data):
    n = data.draw(st.integers(2, 6))
    vals = data.draw(st.lists(
        st.lists(st.floats(-100, 100, width=32), min_size=6, max_size=6),
        min_size=n, max_size=n))
    scenes = [scene(1 + i, {"B4": np.asarray(v, np.float32).reshape(2, 3)}) for i, v in enumerate(vals)]
    perm = data.draw(st.permutations(scenes))
    a = masked_annual_mean(scenes, "B4")
    b = masked_annual_mean(perm, "B4")
    assert a.values.tobytes() == b.values.tobytes()


# ---------------------------------------------------------------------------
# sar_annual_stats


def test_sar_single_scene_point_one():
    s = scene(1, {"VV": np.full((2, 3), 0.1)})
    mn, mx, mean, sd = sar_annual_stats([s], "VV")
    expect = (10 * math.log10(0.1) - (-30.0)) / 35.0  # = 20/35
    for g in (mn, mx, mean):
        assert np.allclose(g.values, expect, atol=1e-7)
    assert np.all(sd.values == 0.0)  # sd 0 -> scaled floor
    assert mn.header.band_name == "VVmin"


def test_sar_nonpositive_poisons_pixel():
    a = np.full((2, 3), 0.1, dtype=np.float32)
    a[1, 2] = -0.05
    s1 = scene(1, {"VV": a})
    s2 = scene(2, {"VV": np.full((2, 3), 0.2)})
    outs = sar_annual_stats([s1, s2], "VV")
    for g in outs:
        assert nodata_mask(g)[1, 2]
        assert not nodata_mask(g)[0, 0]


def test_sar_nodata_observation_skipped():
    a = np.full((2, 3), ND, dtype=np.float32)
    s1 = scene(1, {"VV": a})
    s2 = scene(2, {"VV": np.full((2, 3), 0.2)})
    mn, mx, mean, sd = sar_annual_stats([s1, s2], "VV")
    assert np.allclose(mn.values, (10 * math.log10(0.2) + 30) / 35, atol=1e-7)
    assert np.all(sd.values == 0.0)


def test_sar_all_nodata_pixel_is_nodata():
    a = np.full((2, 3), ND, dtype=np.float32)
    outs = sar_annual_stats([scene(1, {"VV": a})], "VV")
    for g in outs:
        assert nodata_mask(g).all()


def test_sar_l_band_range():
    s = scene(1, {"HH": np.full((1, 1), 0.01)}, w=1, h=1)
    mn, _, _, _ = sar_annual_stats([s], "HH", db_range=L_BAND_DB_RANGE)
    assert np.allclose(mn.values, (-20.0 + 40.0) / 40.0)


def test_sar_bad_range():
    s = scene(1, {"VV": np.full((2, 3), 0.1)})
    with pytest.raises(ConfigError):
        sar_annual_stats([s], "VV", db_range=(5.0, -30.0))


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_sar_against_brute_force_oracle(data):
    n = data.draw(st.integers(1, 5))
    rng_seed = data.draw(st.integers(0, 10_000))
    rng = np.random.default_rng(rng_seed)
    obs = rng.uniform(1e-4, 2.0, size=(n, 2, 3)).astype(np.float32)
    drop = rng.random((n, 2, 3)) < 0.3
    obs = np.where(drop, np.float32(ND), obs)
    scenes = [scene(1 + i, {"VH": obs[i]}) for i in range(n)]
    mn, mx, mean, sd = sar_annual_stats(scenes, "VH")

    lo, hi = C_BAND_DB_RANGE
    for r in range(2):
        for c in range(3):
            vals = [float(obs[i, r, c]) for i in range(n) if obs[i, r, c] != np.float32(ND)]
            if not vals:
                assert nodata_mask(mn)[r, c]
                continue

            def scale(x):
                if x <= 0:
                    return 0.0
                return min(1.0, max(0.0, (10 * math.log10(x) - lo) / (hi - lo)))

            assert mn.values[r, c] == pytest.approx(scale(min(vals)), abs=1e-6)
            assert mx.values[r, c] == pytest.approx(scale(max(vals)), abs=1e-6)
            assert mean.values[r, c] == pytest.approx(scale(np.mean(vals)), abs=1e-6)
            assert sd.values[r, c] == pytest.approx(scale(float(np.std(vals))), abs=1e-6)


def test_to_scaled_db():
    g = grid([[0.01, 1.0, ND], [0.0, -1.0, 1e-8]])
    out = to_scaled_db(g, L_BAND_DB_RANGE)
    assert out.values[0, 0] == pytest.approx((-20 + 40) / 40)
    assert out.values[0, 1] == pytest.approx(1.0)  # 0 dB = hi
    assert nodata_mask(out)[0, 2]
    assert nodata_mask(out)[1, 0] and nodata_mask(out)[1, 1]
    assert out.values[1, 2] == 0.0  # -80 dB clamps to the floor


# ---------------------------------------------------------------------------
# gap fill


def test_gapfill_fills_in_linear_domain():
    a = np.full((2, 3), ND, dtype=np.float32)
    a[0, 0] = 5.0
    yearly = {
        2019: grid(np.full((2, 3), 1.0)),
        2020: grid(a),
        2021: grid(np.full((2, 3), 3.0)),
    }
    out = gapfill_rolling_mean(yearly, 2020, window=3)
    assert out.values[0, 0] == 5.0  # existing data untouched
    assert out.values[1, 1] == 2.0  # mean(1, 3)


def test_gapfill_window_excludes_far_years():
    yearly = {
        2016: grid(np.full((2, 3), 100.0)),
        2020: grid(np.full((2, 3), ND)),
        2021: grid(np.full((2, 3), 4.0)),
    }
    out = gapfill_rolling_mean(yearly, 2020, window=3)
    assert np.allclose(out.values, 4.0)


def test_gapfill_missing_target_year():
    yearly = {2019: grid(np.full((2, 3), 2.0)), 2021: grid(np.full((2, 3), 4.0))}
    out = gapfill_rolling_mean(yearly, 2020, window=3)
    assert np.allclose(out.values, 3.0)


def test_gapfill_no_data_stays_nodata():
    a = np.full((2, 3), ND, dtype=np.float32)
    out = gapfill_rolling_mean({2020: grid(a)}, 2020, window=3)
    assert nodata_mask(out).all()


def test_gapfill_even_window_rejected():
    with pytest.raises(ValueError):
        gapfill_rolling_mean({2020: grid(np.zeros((2, 3)))}, 2020, window=2)


def test_gapfill_empty_window_rejected():
    with pytest.raises(ValueError):
        gapfill_rolling_mean({2010: grid(np.zeros((2, 3)))}, 2020, window=3)


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_gapfill_idempotent(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 10_000)))
    yearly = {}
    for y in (2019, 2020, 2021):
        v = rng.uniform(0.01, 2.0, size=(2, 3)).astype(np.float32)
        v = np.where(rng.random((2, 3)) < 0.5, np.float32(ND), v)
        yearly[y] = grid(v)
    once = gapfill_rolling_mean(yearly, 2020, window=3)
    yearly2 = dict(yearly)
    yearly2[2020] = once
    twice = gapfill_rolling_mean(yearly2, 2020, window=3)
    assert once.values.tobytes() == twice.values.tobytes()


# ---------------------------------------------------------------------------
# slope


def test_slope_flat_plane_is_zero():
    dem = grid(np.full((4, 4), 120.0), w=4, h=4)
    out = slope_from_dem(dem)
    assert np.all(out.values == 0.0)


def test_slope_inclined_plane_exact():
    # z = x: gradient 1 m/m eastward -> 45 degrees -> 0.5 scaled on the
    # interior; border replication halves the east-west step in the outermost
    # columns, giving atan(1/2) there
    hd = header(w=6, h=5)
    xs = (np.arange(6) + 0.5) * 10.0
    z = np.tile(xs, (5, 1)).astype(np.float32)
    out = slope_from_dem(BandGrid(hd, z))
    assert np.allclose(out.values[:, 1:-1], 0.5, atol=1e-9)
    edge = math.degrees(math.atan(0.5)) / 90.0
    assert np.allclose(out.values[:, [0, -1]], edge, atol=1e-7)


def test_slope_requires_meters():
    dem = grid(np.zeros((2, 3)), crs="degrees")
    with pytest.raises(ConfigError):
        slope_from_dem(dem)


def test_slope_nodata_neighborhood():
    z = np.full((4, 4), 10.0, dtype=np.float32)
    z[1, 1] = ND
    out = slope_from_dem(grid(z, w=4, h=4))
    nd = nodata_mask(out)
    assert nd[:3, :3].all()  # all pixels whose 3x3 window touches (1,1)
    assert not nd[3, 3]


def test_slope_clamped_to_one():
    # near-vertical wall: huge dz over one pixel
    z = np.zeros((3, 3), dtype=np.float32)
    z[:, 2] = 1e6
    out = slope_from_dem(grid(z, w=3, h=3))
    assert out.values.max() <= 1.0


# ---------------------------------------------------------------------------
# stack assembly and I/O


def _full_channel_set(w=3, h=2):
    return {name: grid(np.full((h, w), i * 0.01), w=w, h=h, name=name)
            for i, name in enumerate(CHANNEL_ORDER)}


def test_assemble_stack_order_and_errors():
    chans = _full_channel_set()
    stack = assemble_annual_stack(2020, chans)
    assert stack.year == 2020
    assert [g.header.band_name for g in stack.channels] == list(CHANNEL_ORDER)
    assert stack.channel("B8A").values[0, 0] == np.float32(0.16)

    missing = dict(chans)
    del missing["slope"]
    with pytest.raises(SchemaError):
        assemble_annual_stack(2020, missing)

    extra = dict(chans)
    extra["bogus"] = chans["B1"]
    with pytest.raises(SchemaError):
        assemble_annual_stack(2020, extra)


def test_stack_rejects_misaligned_channel():
    chans = _full_channel_set()
    other = GridHeader(width=3, height=2, origin_x=5.0, origin_y=100.0,
                       pixel_size_x=10.0, pixel_size_y=10.0, nodata=ND)
    chans["HV"] = BandGrid(other, np.zeros((2, 3), np.float32))
    with pytest.raises(SchemaError):
        assemble_annual_stack(2020, chans)


def test_stack_save_load_round_trip(tmp_path):
    stack = assemble_annual_stack(2021, _full_channel_set())
    d = tmp_path / "stack2021"
    save_stack(stack, str(d))
    index = json.loads((d / "index.json").read_text())
    assert index["schema_version"] == 1
    assert [e["name"] for e in index["channels"]] == list(CHANNEL_ORDER)
    loaded = load_stack(str(d))
    assert loaded.year == 2021
    for a, b in zip(loaded.channels, stack.channels):
        assert a.values.tobytes() == b.values.tobytes()


def test_scene_manifest_round_trip(tmp_path):
    g1 = grid(np.full((2, 3), 1.5), name="B4")
    q = grid(np.full((2, 3), 0.9), name="q")
    write_grid(g1, str(tmp_path / "b4.fgrd"))
    write_grid(q, str(tmp_path / "q.fgrd"))
    manifest = [
        {"timestamp": "2020-03-01", "bands": {"B4": "b4.fgrd"}, "quality": "q.fgrd"},
        {"timestamp": "2020-04-01", "bands": {"B4": "b4.fgrd"}, "quality": None},
    ]
    mpath = tmp_path / "scenes.json"
    mpath.write_text(json.dumps(manifest))
    scenes = load_scene_manifest(str(mpath))
    assert len(scenes) == 2
    assert scenes[0].quality is not None and scenes[1].quality is None
    assert scenes[0].timestamp == dt.date(2020, 3, 1)


def test_scene_misaligned_grids_rejected():
    g1 = grid(np.zeros((2, 3)), name="B4")
    other = BandGrid(GridHeader(width=3, height=2, origin_x=1.0, origin_y=100.0,
                                pixel_size_x=10.0, pixel_size_y=10.0, nodata=ND),
                     np.zeros((2, 3), np.float32))
    with pytest.raises(SchemaError):
        Scene(dt.date(2020, 1, 1), {"B4": g1, "B5": other})
