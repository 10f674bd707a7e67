"""Command-line entry point. Each subcommand runs one stage on the previous stage's files."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from PIL import Image

from . import analysis, pipeline
from .bohf import K_GRID, LAMBDA_GRID
from .exceptions import RetinaHemoError
from .extraction import MIN_COMPONENT_PIXELS, extract_graph
from .features import summarize
from .graph import CenterlineGraph
from .hemo import FIELDS, SCENARIO_FLOWS, HemodynamicSolution, ScenarioParams, assemble_and_solve
from .mask import DEFAULT_PIXEL_PITCH_UM, load_artery_mask, read_mask_image
from .overlay import render_overlay


def parse_int_grid(text: str) -> list[int]:
    """``"2:15"`` (inclusive range) or ``"2,4,8"``."""
    if ":" in text:
        lo, hi = (int(x) for x in text.split(":"))
        return list(range(lo, hi + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def parse_float_grid(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _scenario_args(p):
    p.add_argument("--scenario", choices=sorted(SCENARIO_FLOWS), default="sc2")
    p.add_argument("--qt", type=float, help="total inflow override, ul/min")
    p.add_argument("--p0", type=float, help="inlet pressure override, mmHg")
    p.add_argument("--gamma", type=float, help="Murray exponent override")


def _eval_args(p, defaults=True):
    p.add_argument("--seed", type=int, default=0 if defaults else None)
    p.add_argument("--k-grid", type=parse_int_grid, default=list(K_GRID) if defaults else None)
    p.add_argument("--lambda-grid", type=parse_float_grid, default=list(LAMBDA_GRID) if defaults else None)
    p.add_argument("--jobs", type=int, default=1 if defaults else None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="retinahemo", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-graph", help="artery mask + optic-disc ellipse -> centerline graph")
    p.add_argument("--mask", required=True)
    p.add_argument("--od", required=True, help="optic-disc ellipse JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--pixel-pitch-um", type=float, default=DEFAULT_PIXEL_PITCH_UM)
    p.add_argument("--min-pixels", type=int, default=MIN_COMPONENT_PIXELS)

    p = sub.add_parser("simulate", help="centerline graph -> per-pixel hemodynamic table")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True, help="table CSV; the summary goes next to it as <stem>.summary.json")
    p.add_argument("--method", choices=("direct", "tree"), default="direct")
    _scenario_args(p)

    p = sub.add_parser("featurize", help="solution table -> feature set")
    p.add_argument("--solution", required=True)
    p.add_argument("--graph", help="checks that every centerline pixel is solved")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="LOOCV of the bag-of-features classifier")
    p.add_argument("--tables", required=True, help="directory of solution tables")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="metrics report JSON")
    p.add_argument("--model", help="also refit on all subjects and save the model here")
    _eval_args(p)

    p = sub.add_parser("analyze", help="cohort tables, radius-flow correlation and plot data")
    p.add_argument("--tables", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="write a synthetic cohort of masks, ellipses and labels")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth-min", type=int, default=2)
    p.add_argument("--depth-max", type=int, default=4)

    p = sub.add_parser("render", help="color a solved field over the mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--field", choices=FIELDS, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="full pipeline from a JSON config; flags override the config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--scenario", choices=sorted(SCENARIO_FLOWS))
    _eval_args(p, defaults=False)
    return ap


def _labels(path):
    if path is None:
        return None, {}
    pts = analysis.read_patients(path)
    return pts, dict(zip(pts["subject_id"], pts["label"]))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except (RetinaHemoError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "extract-graph":
        mask = load_artery_mask(args.mask, args.od, args.pixel_pitch_um)
        extract_graph(mask, args.min_pixels).save(args.out)
    elif cmd == "simulate":
        params = ScenarioParams.preset(args.scenario, QT=args.qt, P0=args.p0, gamma=args.gamma)
        sol = assemble_and_solve(CenterlineGraph.load(args.graph), params, method=args.method)
        out = Path(args.out)
        sol.save(out, out.with_name(out.stem + ".summary.json"))
    elif cmd == "featurize":
        sol = HemodynamicSolution.load(args.solution)
        graph = CenterlineGraph.load(args.graph) if args.graph else None
        summarize(sol, graph, subject_id=Path(args.solution).stem).save(args.out)
    elif cmd == "evaluate":
        _, labels = _labels(args.labels)
        sets, _ = pipeline.load_solution_features(args.tables, labels)
        sets = [s for s in sets if s.label is not None]
        cfg = pipeline.PipelineConfig(seed=args.seed, k_grid=args.k_grid, lambda_grid=args.lambda_grid, jobs=args.jobs)
        report = pipeline.evaluate_cohort(sets, cfg, args.out, args.model)
        print(f"AUC {report['auc']:.4f}  accuracy {report['accuracy']:.4f}  ({len(sets)} subjects)")
    elif cmd == "analyze":
        patients, labels = _labels(args.labels)
        sets, p0 = pipeline.load_solution_features(args.tables, labels)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        res = pipeline.analyze_cohort(sets, patients, p0, args.out)
        rho = res["radius_flow"].get("spearman_rho")
        print(f"{res['n_subjects']} subjects, {res['n_records']} records, Spearman rho(r, Q) = {rho}")
    elif cmd == "synth":
        labels = pipeline.write_synth_cohort(args.out, args.n_per_class, args.seed, (args.depth_min, args.depth_max))
        print(f"wrote {len(labels)} subjects to {args.out}")
    elif cmd == "render":
        grid = read_mask_image(args.mask)
        sol = HemodynamicSolution.load(args.solution)
        Image.fromarray(render_overlay(grid, None, sol, args.field)).save(args.out)
    elif cmd == "run":
        overrides = {"output": args.out, "scenario": args.scenario, "seed": args.seed, "k_grid": args.k_grid,
                     "lambda_grid": args.lambda_grid, "jobs": args.jobs}
        cfg = pipeline.PipelineConfig.from_file(args.config, **overrides)
        code = pipeline.run_pipeline(cfg)
        if code:
            print(f"pipeline finished with failures; see {Path(cfg.output) / 'errors.json'}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
