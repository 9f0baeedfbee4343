#!/usr/bin/env python3
"""Run the whole pipeline on the bundled synthetic scene.

Generates demo inputs (optical/SAR scene manifests, L-band yearly grids, a
projected DEM, labeled samples, a forest mask, and two regions), then drives
the palmgrid CLI through composite -> split-folds -> train -> predict ->
otsu -> evaluate -> sweep -> risk -> area. Everything is seeded; rerunning
with the same arguments reproduces every artifact byte for byte.

Usage: python scripts/run_demo.py [--out DIR] [--size N] [--seed S]
                                  [--epochs E] [--threads T]
"""

from __future__ import annotations

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from palmgrid import synth  # noqa: E402
from palmgrid.cli import main as palmgrid_main  # noqa: E402


def run(argv: list[str]) -> None:
    print("+ palmgrid " + " ".join(argv))
    rc = palmgrid_main(argv)
    if rc != 0:
        raise SystemExit(rc)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_run", help="output directory (default demo_run)")
    ap.add_argument("--size", type=int, default=64, help="scene size in pixels (default 64)")
    ap.add_argument("--seed", type=int, default=11, help="input generator seed (default 11)")
    ap.add_argument("--epochs", type=int, default=2, help="training epochs (default 2)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    args = ap.parse_args()

    t0 = time.time()
    out = os.path.abspath(args.out)
    paths = synth.write_demo_inputs(os.path.join(out, "inputs"), size=args.size, seed=args.seed)
    y0, y1 = paths["years"]
    threads = ["--threads", str(args.threads)]
    print(f"inputs for {y0} and {y1} -> {paths['dir']}")

    stacks = {}
    for y in (y0, y1):
        stacks[y] = os.path.join(out, f"stack_{y}")
        run(threads + [
            "composite",
            "--optical", paths["optical"][y],
            "--sar", paths["sar"][y],
            "--palsar", paths["palsar"],
            "--dem", paths["dem"],
            "--year", str(y),
            "--out", stacks[y],
        ])

    folds = os.path.join(out, "folds.json")
    run(["split-folds", "--samples", paths["samples"], "--out", folds])

    model = os.path.join(out, "model.json")
    run(threads + [
        "train",
        "--samples", paths["samples"],
        "--stacks", stacks[y0], stacks[y1],
        "--folds", folds,
        "--epochs", str(args.epochs),
        "--out", model,
        "--log", os.path.join(out, "training_log.json"),
    ])

    prob = {}
    for y in (y0, y1):
        prob[y] = os.path.join(out, f"prob_{y}.fgrd")
        run(threads + ["predict", "--model", model, "--stack", stacks[y], "--out", prob[y]])

    run(["otsu", "--grid", prob[y1], "--out", os.path.join(out, "otsu.json")])

    scores = os.path.join(out, "scores.csv")
    run(threads + [
        "evaluate",
        "--model", model,
        "--samples", paths["samples"],
        "--stacks", stacks[y0], stacks[y1],
        "--threshold", "0.5",
        "--out", os.path.join(out, "metrics.json"),
        "--save-scores", scores,
    ])
    run(["sweep", "--scores", scores, "--out", os.path.join(out, "sweep.csv")])

    run(threads + [
        "risk",
        "--prev", prob[y0],
        "--curr", prob[y1],
        "--rois", paths["rois"],
        "--forest", paths["forest"],
        "--years", str(y0), str(y1),
        "--out", os.path.join(out, "risk.json"),
        "--csv", os.path.join(out, "risk.csv"),
        "--stable-palm", os.path.join(out, "stable_palm.fgrd"),
    ])

    run(["area", "--grid", prob[y1], "--out", os.path.join(out, "expected_area.json")])
    run([
        "area", "--grid", prob[y1], "--threshold", "0.5",
        "--rois", paths["rois"], "--roi-id", "west",
        "--out", os.path.join(out, "west_area.json"),
    ])

    print(f"\ndemo complete in {time.time() - t0:.1f} s; artifacts under {out}")


if __name__ == "__main__":
    main()
