"""palmgrid command line: the pipeline end to end.

Subcommands map one-to-one onto module operations: composite (annual
predictor stack), split-folds (geographic partition), train / predict
(probability model), evaluate / sweep / otsu (accuracy and thresholds), risk
(two-epoch transition report), and area (probability-surface areas).

A single TOML config file can hold defaults for any flag (section per
subcommand, key = flag name with dashes as underscores, plus a top-level
``threads``); explicit flags win over config values. All outputs are written
atomically. Failures exit with code 1 and one machine-parseable line on
stderr: ``palmgrid: error: <category>: <message>``; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

from . import compositor, dataset, metrics, palmnet, riskengine
from .compositor import (
    C_BAND_DB_RANGE,
    CLOUD_THRESHOLD_DEFAULT,
    GAPFILL_WINDOW_DEFAULT,
    L_BAND_DB_RANGE,
    OPTICAL_BANDS,
    N_CHANNELS,
)
from .errors import ConfigError, ParseError, PalmgridError, SchemaError
from .metrics import OTSU_BINS_DEFAULT
from .rastercore import (
    BandGrid,
    MaskGrid,
    atomic_write_text,
    nodata_mask,
    read_grid,
    read_rois,
    valid_mask,
    write_grid,
)
from .riskengine import MIN_VALID_DEFAULT, WINDOW_DEFAULT

PROG = "palmgrid"

# ---------------------------------------------------------------------------
# Config file


_SCHEMA: dict[str | None, dict[str, str]] = {
    None: {"threads": "int"},
    "composite": {
        "optical": "str", "sar": "str", "palsar": "str", "year": "int",
        "dem": "str", "slope": "str", "out": "str",
        "cloud_threshold": "num", "c_range": "num2", "l_range": "num2",
        "gapfill_window": "int",
    },
    "split-folds": {
        "samples": "str", "out": "str", "seed": "int",
        "cell_area_km2": "num", "origin_x_km": "num", "origin_y_km": "num",
    },
    "train": {
        "samples": "str", "stacks": "strlist", "out": "str", "log": "str",
        "folds": "str", "fold": "int",
        "learning_rate": "num", "batch_size": "int", "epochs": "int",
        "seed": "int", "hidden_sizes": "int4",
        "validation_fraction": "num", "patience": "int",
    },
    "predict": {"model": "str", "stack": "str", "out": "str"},
    "evaluate": {
        "scores": "str", "model": "str", "samples": "str", "stacks": "strlist",
        "threshold": "num", "out": "str", "save_scores": "str",
    },
    "sweep": {
        "scores": "str", "model": "str", "samples": "str", "stacks": "strlist",
        "steps": "int", "out": "str",
    },
    "otsu": {"grid": "str", "bins": "int", "out": "str"},
    "risk": {
        "prev": "str", "curr": "str", "rois": "str", "forest": "str",
        "out": "str", "csv": "str", "stable_palm": "str",
        "window": "int", "min_valid": "int", "years": "int2",
    },
    "area": {"grid": "str", "threshold": "num", "rois": "str", "roi_id": "str", "out": "str"},
}


def _type_ok(tag: str, v) -> bool:
    def num(x):
        return isinstance(x, (int, float)) and not isinstance(x, bool)

    def intlike(x):
        return isinstance(x, int) and not isinstance(x, bool)

    if tag == "str":
        return isinstance(v, str)
    if tag == "int":
        return intlike(v)
    if tag == "num":
        return num(v)
    if tag == "strlist":
        return isinstance(v, list) and all(isinstance(x, str) for x in v)
    if tag == "num2":
        return isinstance(v, list) and len(v) == 2 and all(num(x) for x in v)
    if tag == "int2":
        return isinstance(v, list) and len(v) == 2 and all(intlike(x) for x in v)
    if tag == "int4":
        return isinstance(v, list) and len(v) == 4 and all(intlike(x) for x in v)
    raise AssertionError(tag)


def _load_config(path: str) -> dict:
    """Parse and fully validate the TOML config; every problem is reported,
    not just the first."""
    try:
        with open(path, "rb") as fh:
            cfg = _toml.load(fh)
    except _toml.TOMLDecodeError as e:
        raise ConfigError(f"{path}: not valid TOML: {e}") from e
    problems = []
    for key, value in cfg.items():
        if key in _SCHEMA[None]:
            if not _type_ok(_SCHEMA[None][key], value):
                problems.append(f"{key}: expected {_SCHEMA[None][key]}")
        elif key in _SCHEMA:
            if not isinstance(value, dict):
                problems.append(f"[{key}]: expected a table")
                continue
            for k, v in value.items():
                if k not in _SCHEMA[key]:
                    problems.append(f"[{key}] {k}: unknown key")
                elif not _type_ok(_SCHEMA[key][k], v):
                    problems.append(f"[{key}] {k}: expected {_SCHEMA[key][k]}")
        else:
            problems.append(f"{key}: unknown section or key")
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems))
    return cfg


def _eff(args: argparse.Namespace, cfg: dict, key: str, default=None):
    """Effective option value: explicit flag, else config, else default."""
    v = getattr(args, key)
    if v is not None:
        return v
    if key in cfg:
        return cfg[key]
    return default


def _require(args, cfg, keys: list[str]) -> dict:
    vals = {k: _eff(args, cfg, k) for k in keys}
    missing = [k for k, v in vals.items() if v is None]
    if missing:
        raise ConfigError(
            "missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing)
        )
    return vals


def _check_inputs(*paths: str | None) -> None:
    """Validate every referenced input path up front, enumerating all
    missing ones in a single error."""
    missing = [p for p in paths if p is not None and not os.path.exists(p)]
    if missing:
        raise ConfigError("input path(s) not found: " + ", ".join(missing))


def _write_json(path: str, doc: dict) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# composite


def _load_palsar_manifest(path: str) -> dict[str, dict[int, BandGrid]]:
    """Read the L-band yearly manifest: a JSON object mapping year to
    {polarization: fgrd path}, paths relative to the manifest's directory.
    Returns {polarization: {year: grid}}."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "rb") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: expected a JSON object mapping year to polarization paths")
    out: dict[str, dict[int, BandGrid]] = {}
    for year_key, pols in obj.items():
        try:
            year = int(year_key)
        except ValueError as e:
            raise ParseError(f"{path}: bad year key {year_key!r}") from e
        if not isinstance(pols, dict):
            raise ParseError(f"{path}: year {year_key}: expected an object of polarization paths")
        for pol, rel in pols.items():
            grid = read_grid(os.path.join(base, rel))
            if not isinstance(grid, BandGrid):
                raise SchemaError(f"{path}: year {year_key} {pol}: not a float band")
            out.setdefault(pol, {})[year] = grid
    return out


def _slope_channel(template, dem_path: str | None, slope_path: str | None) -> BandGrid:
    if slope_path is not None:
        grid = read_grid(slope_path)
        if not isinstance(grid, BandGrid):
            raise SchemaError(f"{slope_path}: slope grid must be a float band")
        if not grid.header.aligned_with(template):
            raise SchemaError(f"{slope_path}: slope grid is not aligned with the scene template")
        return BandGrid(replace(grid.header, band_name="slope"), grid.values)
    dem = read_grid(dem_path)
    if not isinstance(dem, BandGrid):
        raise SchemaError(f"{dem_path}: DEM must be a float band")
    slope = compositor.slope_from_dem(dem)
    if slope.header.shape != template.shape:
        raise SchemaError(
            f"{dem_path}: DEM pixel counts {slope.header.shape} do not match "
            f"the scene template {template.shape}"
        )
    # Adopt the co-registered projected slope onto the template footprint.
    vals = np.where(nodata_mask(slope), template.nodata, slope.values).astype(np.float32)
    return BandGrid(replace(template, band_name="slope"), vals)


def _cmd_composite(args, cfg, threads: int) -> None:
    req = _require(args, cfg, ["optical", "sar", "palsar", "year", "out"])
    dem = _eff(args, cfg, "dem")
    slope = _eff(args, cfg, "slope")
    if (dem is None) == (slope is None):
        raise ConfigError("exactly one of --dem or --slope is required")
    _check_inputs(req["optical"], req["sar"], req["palsar"], dem, slope)
    year = int(req["year"])
    cloud = float(_eff(args, cfg, "cloud_threshold", CLOUD_THRESHOLD_DEFAULT))
    c_range = tuple(float(v) for v in _eff(args, cfg, "c_range", C_BAND_DB_RANGE))
    l_range = tuple(float(v) for v in _eff(args, cfg, "l_range", L_BAND_DB_RANGE))
    gap_window = int(_eff(args, cfg, "gapfill_window", GAPFILL_WINDOW_DEFAULT))

    optical_scenes = compositor.load_scene_manifest(req["optical"])
    if not optical_scenes:
        raise SchemaError(f"{req['optical']}: manifest has no scenes")
    template = optical_scenes[0].header
    channels: dict[str, BandGrid] = {}
    for band in OPTICAL_BANDS:
        channels[band] = compositor.masked_annual_mean(optical_scenes, band, cloud)

    sar_scenes = compositor.load_scene_manifest(req["sar"])
    for pol in ("VV", "VH"):
        for grid in compositor.sar_annual_stats(sar_scenes, pol, c_range):
            channels[grid.header.band_name] = grid

    palsar = _load_palsar_manifest(req["palsar"])
    for pol in ("HH", "HV"):
        if pol not in palsar:
            raise SchemaError(f"{req['palsar']}: manifest has no {pol} grids")
        filled = compositor.gapfill_rolling_mean(palsar[pol], year, gap_window)
        scaled = compositor.to_scaled_db(filled, l_range)
        channels[pol] = BandGrid(replace(scaled.header, band_name=pol), scaled.values)

    channels["slope"] = _slope_channel(template, dem, slope)
    stack = compositor.assemble_annual_stack(year, channels)
    compositor.save_stack(stack, req["out"])
    print(f"composite {year}: wrote {N_CHANNELS}-channel stack to {req['out']}")


# ---------------------------------------------------------------------------
# split-folds / train / predict


def _cmd_split_folds(args, cfg, threads: int) -> None:
    req = _require(args, cfg, ["samples", "out"])
    _check_inputs(req["samples"])
    seed = int(_eff(args, cfg, "seed", 0))
    spec = dataset.HexGridSpec(
        cell_area_km2=float(_eff(args, cfg, "cell_area_km2", dataset.CELL_AREA_KM2_DEFAULT)),
        origin_x_km=float(_eff(args, cfg, "origin_x_km", 0.0)),
        origin_y_km=float(_eff(args, cfg, "origin_y_km", 0.0)),
    )
    points = dataset.read_samples(req["samples"])
    assignment = dataset.assign_folds(points, seed=seed, spec=spec)
    doc = assignment.to_json_dict()
    doc["point_folds"] = [int(f) for f in assignment.folds]
    _write_json(req["out"], doc)
    print(
        f"folds: counts={list(assignment.counts)} "
        f"training_fold={assignment.training_fold} -> {req['out']}"
    )


def _read_fold_file(path: str, n_points: int) -> tuple[int, np.ndarray]:
    with open(path, "rb") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: not valid JSON: {e}") from e
    pf = doc.get("point_folds")
    if not isinstance(pf, list) or not all(isinstance(x, int) for x in pf):
        raise SchemaError(f"{path}: missing or malformed 'point_folds'")
    if len(pf) != n_points:
        raise SchemaError(
            f"{path}: fold file covers {len(pf)} points but the sample file has {n_points}"
        )
    if "training_fold" not in doc:
        raise SchemaError(f"{path}: missing 'training_fold'")
    return int(doc["training_fold"]), np.asarray(pf, dtype=np.int8)


def _load_stacks(stack_dirs) -> dict[int, compositor.AnnualStack]:
    stacks: dict[int, compositor.AnnualStack] = {}
    for d in stack_dirs:
        stack = compositor.load_stack(d)
        if stack.year in stacks:
            raise ConfigError(f"duplicate stack for year {stack.year}")
        stacks[stack.year] = stack
    return stacks


def _features_for_points(points, stacks) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix for the points that land on a stack of their own year
    with all channels valid. Returns (features, kept mask over points)."""
    feats = np.zeros((len(points), N_CHANNELS), dtype=np.float64)
    kept = np.zeros(len(points), dtype=bool)
    for year, stack in stacks.items():
        idx = [i for i, p in enumerate(points) if p.year == year]
        if not idx:
            continue
        sub = [points[i] for i in idx]
        x, sub_kept = dataset.extract_features(stack, sub)
        row = 0
        for i, k in zip(idx, sub_kept):
            if k:
                feats[i] = x[row]
                kept[i] = True
                row += 1
    return feats[kept], kept


def _report_drops(n_total: int, n_kept: int) -> None:
    dropped = n_total - n_kept
    if dropped:
        print(
            f"dropped {dropped} of {n_total} points "
            "(no stack for the point's year, outside the grid, or nodata channels)"
        )


def _cmd_train(args, cfg, threads: int) -> None:
    req = _require(args, cfg, ["samples", "stacks", "out"])
    folds_path = _eff(args, cfg, "folds")
    _check_inputs(req["samples"], folds_path, *req["stacks"])
    points = dataset.read_samples(req["samples"])
    if folds_path is not None:
        training_fold, point_folds = _read_fold_file(folds_path, len(points))
        fold = int(_eff(args, cfg, "fold", training_fold))
        points = [p for p, f in zip(points, point_folds) if f == fold]
        print(f"training fold {fold}: {len(points)} points")
        if not points:
            raise ConfigError(f"fold {fold} has no points")
    config = palmnet.TrainConfig(
        learning_rate=float(_eff(args, cfg, "learning_rate", 1e-3)),
        batch_size=int(_eff(args, cfg, "batch_size", 256)),
        epochs=int(_eff(args, cfg, "epochs", 60)),
        seed=int(_eff(args, cfg, "seed", 0)),
        hidden_sizes=tuple(int(h) for h in _eff(args, cfg, "hidden_sizes", (64, 64, 32, 16))),
        validation_fraction=float(_eff(args, cfg, "validation_fraction", 0.1)),
        patience=int(_eff(args, cfg, "patience", 10)),
    )
    stacks = _load_stacks(req["stacks"])
    x, kept = _features_for_points(points, stacks)
    _report_drops(len(points), int(kept.sum()))
    labels = np.array([p.label for p in points], dtype=np.float64)[kept]
    weights = np.array([p.weight for p in points], dtype=np.float64)[kept]
    params, log = palmnet.train(x, labels, weights, config)
    palmnet.save_model(params, req["out"])
    log_path = _eff(args, cfg, "log")
    if log_path is not None:
        _write_json(log_path, log.to_json_dict())
    last = log.epochs[-1]
    print(
        f"trained on {x.shape[0]} points: {len(log.epochs)} epochs "
        f"(best {log.best_epoch}, val loss {log.epochs[log.best_epoch].val_loss:.6f}, "
        f"final train loss {last.train_loss:.6f}) -> {req['out']}"
    )


def _cmd_predict(args, cfg, threads: int) -> None:
    req = _require(args, cfg, ["model", "stack", "out"])
    _check_inputs(req["model"], req["stack"])
    params = palmnet.load_model(req["model"])
    stack = compositor.load_stack(req["stack"])
    prob = palmnet.predict_grid(params, stack, threads=threads)
    write_grid(prob, req["out"])
    n_valid = int(valid_mask(prob).sum())
    print(f"predict {stack.year}: {n_valid} valid pixels -> {req['out']}")


# ---------------------------------------------------------------------------
# evaluate / sweep / otsu


def _read_scores(path: str) -> list[metrics.ScoredSample]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty scores file") from None
        if [h.strip() for h in header] != ["score", "label", "weight"]:
            raise ParseError(f"{path}: expected header score,label,weight, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                out.append(metrics.make_scored(float(row[0]), float(row[1]), float(row[2])))
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from e
    return out


def _write_scores(path: str, scored) -> None:
    lines = ["score,label,weight"]
    lines += [f"{s.score!r},{s.label!r},{s.weight!r}" for s in scored]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _scored_samples(args, cfg, threads: int) -> list[metrics.ScoredSample]:
    scores_path = _eff(args, cfg, "scores")
    if scores_path is not None:
        _check_inputs(scores_path)
        return _read_scores(scores_path)
    model = _eff(args, cfg, "model")
    samples = _eff(args, cfg, "samples")
    stacks = _eff(args, cfg, "stacks")
    if model is None or samples is None or stacks is None:
        raise ConfigError("provide either --scores, or --model with --samples and --stacks")
    _check_inputs(model, samples, *stacks)
    params = palmnet.load_model(model)
    points = dataset.read_samples(samples)
    x, kept = _features_for_points(points, _load_stacks(stacks))
    _report_drops(len(points), int(kept.sum()))
    if not kept.any():
        raise ConfigError("no points left after feature extraction")
    probs = palmnet.predict(params, x)
    kept_points = [p for p, k in zip(points, kept) if k]
    return [
        metrics.make_scored(float(s), p.label, p.weight) for s, p in zip(probs, kept_points)
    ]


def _fmt_metric(v) -> str:
    return "undefined" if v is None else f"{v:.6f}"


def _print_report(rep: metrics.MetricReport) -> None:
    print(f"n samples:       {rep.n}")
    print(f"threshold:       {rep.threshold!r}")
    print(f"binary accuracy: {rep.binary_accuracy:.6f}")
    print(f"precision:       {_fmt_metric(rep.precision)}")
    print(f"recall:          {_fmt_metric(rep.recall)}")
    print(f"F1:              {_fmt_metric(rep.f1)}")
    print(f"AUC:             {_fmt_metric(rep.auc)}")
    print(f"cross-entropy:   {rep.cross_entropy:.6f}")
    print(f"confusion:       tp={rep.tp:g} fp={rep.fp:g} tn={rep.tn:g} fn={rep.fn:g}")


def _cmd_evaluate(args, cfg, threads: int) -> None:
    scored = _scored_samples(args, cfg, threads)
    threshold = float(_eff(args, cfg, "threshold", 0.5))
    report = metrics.evaluate(scored, threshold)
    save_scores = _eff(args, cfg, "save_scores")
    if save_scores is not None:
        _write_scores(save_scores, scored)
    out = _eff(args, cfg, "out")
    if out is not None:
        _write_json(out, report.to_json_dict())
    _print_report(report)


def _cmd_sweep(args, cfg, threads: int) -> None:
    scored = _scored_samples(args, cfg, threads)
    req = _require(args, cfg, ["out"])
    steps = int(_eff(args, cfg, "steps", 100))
    result = metrics.curve_sweep(scored, steps)
    atomic_write_text(req["out"], result.to_csv_text())
    best = "undefined" if result.best_f1_threshold is None else repr(result.best_f1_threshold)
    print(f"sweep: {steps + 1} thresholds, best F1 at {best} -> {req['out']}")


def _cmd_otsu(args, cfg, threads: int) -> None:
    req = _require(args, cfg, ["grid"])
    _check_inputs(req["grid"])
    grid = read_grid(req["grid"])
    if not isinstance(grid, BandGrid):
        raise SchemaError(f"{req['grid']}: expected a float probability grid")
    bins = int(_eff(args, cfg, "bins", OTSU_BINS_DEFAULT))
    threshold = metrics.otsu_threshold(grid, bins=bins)
    out = _eff(args, cfg, "out")
    if out is not None:
        _write_json(out, {"schema_version": 1, "bins": bins, "threshold": threshold})
    print(f"otsu threshold: {threshold!r}")


# ---------------------------------------------------------------------------
# risk / area


def _read_band(path: str) -> BandGrid:
    grid = read_grid(path)
    if not isinstance(grid, BandGrid):
        raise SchemaError(f"{path}: expected a float band grid")
    return grid


def _cmd_risk(args, cfg, threads: int) -> None:
    req = _require(args, cfg, ["prev", "curr", "rois", "forest", "out"])
    _check_inputs(req["prev"], req["curr"], req["rois"], req["forest"])
    window = int(_eff(args, cfg, "window", WINDOW_DEFAULT))
    min_valid = int(_eff(args, cfg, "min_valid", MIN_VALID_DEFAULT))
    years = _eff(args, cfg, "years")
    if years is not None:
        years = (int(years[0]), int(years[1]))
    pair = riskengine.EpochPair(_read_band(req["prev"]), _read_band(req["curr"]), years)
    forest = read_grid(req["forest"])
    if not isinstance(forest, MaskGrid):
        raise SchemaError(f"{req['forest']}: expected a mask grid (u8)")
    rois = read_rois(req["rois"])
    rho = riskengine.windowed_spearman(
        pair.f_prev, pair.f_curr, window=window, min_valid=min_valid, threads=threads
    )
    joint = riskengine.joint_probabilities(pair, rho)
    report = riskengine.risk_aggregate(joint, rois, forest)
    _write_json(req["out"], report.to_json_dict())
    csv_path = _eff(args, cfg, "csv")
    if csv_path is not None:
        atomic_write_text(csv_path, report.to_csv_text())
    stable_path = _eff(args, cfg, "stable_palm")
    if stable_path is not None:
        write_grid(riskengine.stable_palm(joint), stable_path)
    sys.stdout.write(report.to_csv_text())
    print(f"risk report -> {req['out']}")


def _cmd_area(args, cfg, threads: int) -> None:
    req = _require(args, cfg, ["grid"])
    rois_path = _eff(args, cfg, "rois")
    roi_id = _eff(args, cfg, "roi_id")
    if (rois_path is None) != (roi_id is None):
        raise ConfigError("--rois and --roi-id go together")
    _check_inputs(req["grid"], rois_path)
    grid = _read_band(req["grid"])
    roi = None
    if rois_path is not None:
        match = [r for r in read_rois(rois_path) if r.roi_id == roi_id]
        if not match:
            raise ConfigError(f"{rois_path}: no region with id {roi_id!r}")
        roi = match[0]
    threshold = _eff(args, cfg, "threshold")
    if threshold is None:
        mode = "expected"
        area = riskengine.expected_area_ha(grid, roi=roi)
    else:
        mode = "threshold"
        area = riskengine.thresholded_area_ha(grid, float(threshold), roi=roi)
    out = _eff(args, cfg, "out")
    if out is not None:
        doc = {"schema_version": 1, "mode": mode, "area_ha": area}
        if threshold is not None:
            doc["threshold"] = float(threshold)
        if roi is not None:
            doc["roi_id"] = roi.roi_id
        _write_json(out, doc)
    print(f"{mode} area: {area!r} ha")


# ---------------------------------------------------------------------------
# Parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Desk-scale palm mapping pipeline: composites, folds, "
        "training, inference, metrics, and transition risk.",
    )
    parser.add_argument("--config", help="TOML config file; flags override its values")
    parser.add_argument("--threads", type=int, help="worker threads for grid operations (default 1)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("composite", help="build a 24-channel annual predictor stack")
    p.add_argument("--optical", help="optical scene manifest (JSON)")
    p.add_argument("--sar", help="C-band SAR scene manifest (JSON)")
    p.add_argument("--palsar", help="L-band yearly manifest (JSON)")
    p.add_argument("--year", type=int, help="target year")
    p.add_argument("--dem", help="co-registered projected DEM grid (slope computed here)")
    p.add_argument("--slope", help="pre-computed slope grid aligned with the scenes")
    p.add_argument("--out", help="output stack directory")
    p.add_argument("--cloud-threshold", type=float, help=f"quality cutoff (default {CLOUD_THRESHOLD_DEFAULT})")
    p.add_argument(
        "--c-range", type=float, nargs=2, metavar=("LO", "HI"),
        help=f"C-band dB scaling range (default {C_BAND_DB_RANGE[0]:g} {C_BAND_DB_RANGE[1]:g})",
    )
    p.add_argument(
        "--l-range", type=float, nargs=2, metavar=("LO", "HI"),
        help=f"L-band dB scaling range (default {L_BAND_DB_RANGE[0]:g} {L_BAND_DB_RANGE[1]:g})",
    )
    p.add_argument("--gapfill-window", type=int, help=f"L-band rolling window, odd (default {GAPFILL_WINDOW_DEFAULT})")
    p.set_defaults(func=_cmd_composite)

    p = sub.add_parser("split-folds", help="assign samples to 3 geographic folds")
    p.add_argument("--samples", help="sample CSV")
    p.add_argument("--out", help="fold assignment JSON")
    p.add_argument("--seed", type=int, help="fold hash seed (default 0)")
    p.add_argument("--cell-area-km2", type=float, help="hexagon cell area (default 26000)")
    p.add_argument("--origin-x-km", type=float, help="hex grid x offset (default 0)")
    p.add_argument("--origin-y-km", type=float, help="hex grid y offset (default 0)")
    p.set_defaults(func=_cmd_split_folds)

    p = sub.add_parser("train", help="train the probability model")
    p.add_argument("--samples", help="sample CSV")
    p.add_argument("--stacks", nargs="+", help="stack directories, one per year")
    p.add_argument("--out", help="model JSON path")
    p.add_argument("--log", help="training log JSON path")
    p.add_argument("--folds", help="fold assignment JSON from split-folds")
    p.add_argument("--fold", type=int, help="fold to train on (default: the file's training fold)")
    p.add_argument("--learning-rate", type=float, help="Adam step size (default 0.001)")
    p.add_argument("--batch-size", type=int, help="minibatch size (default 256)")
    p.add_argument("--epochs", type=int, help="maximum epochs (default 60)")
    p.add_argument("--seed", type=int, help="init/shuffle seed (default 0)")
    p.add_argument(
        "--hidden-sizes", type=int, nargs=4, metavar=("H1", "H2", "H3", "H4"),
        help="hidden layer widths (default 64 64 32 16)",
    )
    p.add_argument("--validation-fraction", type=float, help="held-out fraction (default 0.1)")
    p.add_argument("--patience", type=int, help="early-stop patience in epochs (default 10)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="run the model over a stack")
    p.add_argument("--model", help="model JSON")
    p.add_argument("--stack", help="stack directory")
    p.add_argument("--out", help="output probability grid")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="accuracy metrics at a threshold")
    p.add_argument("--scores", help="precomputed score CSV (score,label,weight)")
    p.add_argument("--model", help="model JSON (with --samples/--stacks)")
    p.add_argument("--samples", help="sample CSV")
    p.add_argument("--stacks", nargs="+", help="stack directories")
    p.add_argument("--threshold", type=float, help="decision threshold (default 0.5)")
    p.add_argument("--out", help="metric report JSON")
    p.add_argument("--save-scores", help="write the scored samples to this CSV")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="metrics across a threshold grid")
    p.add_argument("--scores", help="precomputed score CSV (score,label,weight)")
    p.add_argument("--model", help="model JSON (with --samples/--stacks)")
    p.add_argument("--samples", help="sample CSV")
    p.add_argument("--stacks", nargs="+", help="stack directories")
    p.add_argument("--steps", type=int, help="number of threshold steps (default 100)")
    p.add_argument("--out", help="sweep CSV path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("otsu", help="histogram threshold for a probability grid")
    p.add_argument("--grid", help="probability grid")
    p.add_argument("--bins", type=int, help=f"histogram bins (default {OTSU_BINS_DEFAULT})")
    p.add_argument("--out", help="result JSON")
    p.set_defaults(func=_cmd_otsu)

    p = sub.add_parser("risk", help="two-epoch transition risk report")
    p.add_argument("--prev", help="earlier epoch probability grid")
    p.add_argument("--curr", help="later epoch probability grid")
    p.add_argument("--rois", help="regions JSON")
    p.add_argument("--forest", help="forest mask grid (u8)")
    p.add_argument("--out", help="report JSON")
    p.add_argument("--csv", help="also write the transition-matrix CSV here")
    p.add_argument("--stable-palm", help="also write the stay-palm probability grid here")
    p.add_argument("--window", type=int, help=f"correlation window, odd (default {WINDOW_DEFAULT})")
    p.add_argument("--min-valid", type=int, help=f"minimum valid pairs per window (default {MIN_VALID_DEFAULT})")
    p.add_argument("--years", type=int, nargs=2, metavar=("PREV", "CURR"), help="epoch years for the report")
    p.set_defaults(func=_cmd_risk)

    p = sub.add_parser("area", help="expected or thresholded area of a probability grid")
    p.add_argument("--grid", help="probability grid")
    p.add_argument("--threshold", type=float, help="if given, count pixels with p >= threshold")
    p.add_argument("--rois", help="regions JSON (with --roi-id)")
    p.add_argument("--roi-id", help="restrict to this region")
    p.add_argument("--out", help="result JSON")
    p.set_defaults(func=_cmd_area)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config) if args.config is not None else {}
        threads = args.threads if args.threads is not None else cfg.get("threads", 1)
        threads = int(threads)
        if threads < 1:
            raise ConfigError(f"threads must be >= 1, got {threads}")
        section = cfg.get(args.command, {})
        args.func(args, section, threads)
        return 0
    except PalmgridError as e:
        return _fail(e.category, e)
    except ValueError as e:
        return _fail("argument", e)
    except OSError as e:
        return _fail("io", e)


def _fail(category: str, err: Exception) -> int:
    message = " ".join(str(err).split()) or err.__class__.__name__
    print(f"{PROG}: error: {category}: {message}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
