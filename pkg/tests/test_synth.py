"""Synthetic generators: frozen setting enumeration, field statistics, demo tree."""

import json
import math
import os

import numpy as np
import pytest

from palmgrid.compositor import load_scene_manifest
from palmgrid.dataset import read_samples
from palmgrid.rastercore import BandGrid, MaskGrid, read_grid, read_rois
from palmgrid.synth import (
    MARGINAL_LEVELS,
    RHO_LEVELS,
    admissible_transition_settings,
    bivariate_bernoulli_fields,
    separable_samples,
    smooth_dem,
    write_demo_inputs,
)


class TestSettings:
    def test_enumeration_is_strictly_interior(self):
        settings = admissible_transition_settings()
        assert len(settings) == 18
        for m1, m2, rho in settings:
            assert m1 in MARGINAL_LEVELS and m2 in MARGINAL_LEVELS and rho in RHO_LEVELS
            p11 = rho * math.sqrt(m1 * (1 - m1) * m2 * (1 - m2)) + m1 * m2
            assert max(0.0, m1 + m2 - 1.0) < p11 < min(m1, m2)

    def test_enumeration_is_frozen(self):
        assert admissible_transition_settings() == admissible_transition_settings()
        # Spot-check membership at both admissibility edges.
        settings = set(admissible_transition_settings())
        assert (0.5, 0.5, 0.8) in settings
        assert (0.2, 0.2, -0.5) not in settings  # would need p11 < 0
        assert (0.2, 0.5, 0.5) not in settings  # lands exactly on the upper bound


class TestBernoulliFields:
    def test_marginals_and_correlation(self):
        prev, curr = bivariate_bernoulli_fields(0.3, 0.6, 0.4, (256, 256), seed=5)
        n = prev.size
        assert set(np.unique(prev)) <= {0.0, 1.0}
        # Binomial standard errors; 5 sigma keeps this deterministic-in-practice.
        assert abs(prev.mean() - 0.3) < 5 * math.sqrt(0.3 * 0.7 / n)
        assert abs(curr.mean() - 0.6) < 5 * math.sqrt(0.6 * 0.4 / n)
        phi = np.corrcoef(prev.ravel(), curr.ravel())[0, 1]
        assert abs(phi - 0.4) < 0.02

    def test_deterministic(self):
        a = bivariate_bernoulli_fields(0.5, 0.5, -0.5, (32, 32), seed=9)
        b = bivariate_bernoulli_fields(0.5, 0.5, -0.5, (32, 32), seed=9)
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
        c = bivariate_bernoulli_fields(0.5, 0.5, -0.5, (32, 32), seed=10)
        assert a[0].tobytes() != c[0].tobytes()

    def test_empirical_joint_matches_requested(self):
        prev, curr = bivariate_bernoulli_fields(0.5, 0.5, 0.8, (512, 512), seed=2)
        p11_hat = float(np.mean((prev == 1) & (curr == 1)))
        # p11 = 0.8*0.25 + 0.25 = 0.45
        assert abs(p11_hat - 0.45) < 0.005


class TestSeparable:
    def test_shapes_and_range(self):
        x, y = separable_samples(500, seed=3)
        assert x.shape == (500, 24) and y.shape == (500,)
        assert x.min() >= 0.0 and x.max() <= 1.0
        assert set(np.unique(y)) <= {0.0, 1.0}

    def test_informative_channels_separate(self):
        x, y = separable_samples(2000, seed=4)
        for dim in (0, 1):
            gap = x[y == 1, dim].mean() - x[y == 0, dim].mean()
            assert gap > 0.3
        # Noise channels carry no signal.
        gap2 = abs(x[y == 1, 5].mean() - x[y == 0, 5].mean())
        assert gap2 < 0.05

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            separable_samples(1, seed=0)


class TestDemoInputs:
    def test_tree_is_complete_and_loadable(self, tmp_path):
        paths = write_demo_inputs(str(tmp_path / "demo"), size=32, seed=7)
        for year in paths["years"]:
            scenes = load_scene_manifest(paths["optical"][year])
            assert len(scenes) == 3
            assert all(len(s.bands) == 13 and s.quality is not None for s in scenes)
            sar = load_scene_manifest(paths["sar"][year])
            assert len(sar) == 3
            assert all(set(s.bands) == {"VV", "VH"} for s in sar)
        palsar = json.load(open(paths["palsar"], "rb"))
        assert len(palsar) == 6
        base = paths["dir"]
        for year_map in palsar.values():
            for rel in year_map.values():
                grid = read_grid(os.path.join(base, rel))
                assert isinstance(grid, BandGrid)
        dem = read_grid(paths["dem"])
        assert dem.header.crs_tag == "meters" and dem.header.shape == (32, 32)
        samples = read_samples(paths["samples"])
        assert len(samples) == 440
        assert {p.year for p in samples} == set(paths["years"])
        forest = read_grid(paths["forest"])
        assert isinstance(forest, MaskGrid)
        rois = read_rois(paths["rois"])
        assert [r.roi_id for r in rois] == ["west", "east"]

    def test_deterministic_bytes(self, tmp_path):
        a = write_demo_inputs(str(tmp_path / "a"), size=16, seed=3)
        b = write_demo_inputs(str(tmp_path / "b"), size=16, seed=3)
        for key in ("dem", "forest", "samples", "rois", "palsar"):
            with open(a[key], "rb") as f1, open(b[key], "rb") as f2:
                assert f1.read() == f2.read(), key

    def test_smooth_dem_varies(self):
        from palmgrid.rastercore import GridHeader

        hdr = GridHeader(16, 16, 0.0, 0.0, 10.0, 10.0, crs_tag="meters", band_name="dem")
        dem = smooth_dem(hdr, seed=1)
        assert np.isfinite(dem.values).all()
        assert dem.values.std() > 1.0
