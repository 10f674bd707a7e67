"""End-to-end orchestration: masks -> graphs -> solutions -> features -> metrics and analysis tables.

Output directory layout::

    graphs/<id>.json            centerline graph
    solutions/<id>.csv          per-pixel table
    solutions/<id>.summary.json solver summary with the scenario used
    features/<id>.csv           feature set
    overlays/<id>_<field>.png   optional field overlays
    metrics.json, model.json    LOOCV report and the model refitted on all subjects
    analysis.json               cohort tables and radius-flow correlation
    plot_segments.csv, plot_fits.csv
    errors.json                 per-subject failures (only when some occurred)
"""
from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image

from . import analysis
from ._io import FLOAT_FORMAT, dump_json, load_json
from .bohf import K_GRID, LAMBDA_GRID, loocv_evaluate, make_bohf_classifier, save_model, select_hyperparameters
from .exceptions import RetinaHemoError
from .extraction import MIN_COMPONENT_PIXELS, extract_graph
from .features import FeatureSet, summarize
from .hemo import FIELDS, SCENARIO_FLOWS, HemodynamicSolution, ScenarioParams, assemble_and_solve
from .mask import DEFAULT_PIXEL_PITCH_UM, load_artery_mask
from .overlay import render_overlay

log = logging.getLogger(__name__)

DATA_ENV = "RETINAHEMO_DATA"
MASK_SUFFIX = ".png"
OD_SUFFIX = ".od.json"


@dataclass
class PipelineConfig:
    masks: str | None = None  # directory of <id>.png masks with <id>.od.json ellipses
    labels: str | None = None  # CSV: subject_id, label, age, sex
    output: str = "out"
    scenario: str = "sc2"
    # label -> scenario name or total flow (ul/min); overrides ``scenario`` per group
    group_scenarios: dict = field(default_factory=dict)
    QT: float | None = None
    P0: float | None = None
    gamma: float | None = None
    seed: int = 0
    k_grid: list = field(default_factory=lambda: list(K_GRID))
    lambda_grid: list = field(default_factory=lambda: list(LAMBDA_GRID))
    n_init: int = 50
    max_iter: int = 300
    pixel_pitch_um: float = DEFAULT_PIXEL_PITCH_UM
    min_pixels: int = MIN_COMPONENT_PIXELS
    overlay_fields: list = field(default_factory=list)
    jobs: int = 1

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        data = load_json(path)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = Path(path).parent
        for key in ("masks", "labels", "output"):
            if data.get(key) is not None and not os.path.isabs(data[key]):
                data[key] = str(base / data[key])
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def validate(self) -> None:
        if self.masks is None:
            self.masks = os.environ.get(DATA_ENV)
        if self.masks is None or not Path(self.masks).is_dir():
            raise ValueError(f"mask directory not found: {self.masks!r} (set it in the config or via {DATA_ENV})")
        if self.labels is not None and not Path(self.labels).is_file():
            raise ValueError(f"labels file not found: {self.labels!r}")
        for name in [self.scenario, *self.group_scenarios.values()]:
            if isinstance(name, str) and name.lower() not in SCENARIO_FLOWS:
                raise ValueError(f"unknown scenario {name!r}")
        bad = [f for f in self.overlay_fields if f not in FIELDS]
        if bad:
            raise ValueError(f"unknown overlay fields {bad}")

    def params_for(self, label) -> ScenarioParams:
        spec = self.group_scenarios.get(str(label), self.group_scenarios.get(label)) if label is not None else None
        if spec is None:
            return ScenarioParams.preset(self.scenario, QT=self.QT, P0=self.P0, gamma=self.gamma)
        if isinstance(spec, str):
            return ScenarioParams.preset(spec, P0=self.P0, gamma=self.gamma)
        return ScenarioParams.preset(self.scenario, QT=float(spec), P0=self.P0, gamma=self.gamma)


def discover_subjects(masks_dir) -> list[str]:
    """Subject ids are mask file stems that have a matching ellipse file."""
    d = Path(masks_dir)
    return sorted(p.name[: -len(MASK_SUFFIX)] for p in d.glob("*" + MASK_SUFFIX) if (d / (p.name[: -len(MASK_SUFFIX)] + OD_SUFFIX)).is_file())


def process_subject(cfg: PipelineConfig, sid: str, label) -> tuple[str, dict | None]:
    """Per-subject stages; returns (sid, None) on success or (sid, error record)."""
    out = Path(cfg.output)
    stage = "extract-graph"
    try:
        mask = load_artery_mask(Path(cfg.masks) / (sid + MASK_SUFFIX), Path(cfg.masks) / (sid + OD_SUFFIX), cfg.pixel_pitch_um)
        graph = extract_graph(mask, cfg.min_pixels)
        graph.save(out / "graphs" / f"{sid}.json")
        stage = "simulate"
        sol = assemble_and_solve(graph, cfg.params_for(label))
        sol.save(out / "solutions" / f"{sid}.csv", out / "solutions" / f"{sid}.summary.json")
        stage = "featurize"
        summarize(sol, graph, subject_id=sid, label=label).save(out / "features" / f"{sid}.csv")
        stage = "render"
        for f in cfg.overlay_fields:
            Image.fromarray(render_overlay(mask, graph, sol, f)).save(out / "overlays" / f"{sid}_{f}.png")
    except (RetinaHemoError, ValueError, OSError, RuntimeError) as exc:
        log.warning("subject %s failed at %s: %s", sid, stage, exc)
        return sid, {"subject_id": sid, "stage": stage, "error": f"{type(exc).__name__}: {exc}"}
    return sid, None


def load_feature_sets(features_dir, ids, labels: dict) -> list[FeatureSet]:
    return [FeatureSet.load(Path(features_dir) / f"{sid}.csv", subject_id=sid, label=labels.get(sid)) for sid in ids]


def load_solution_features(tables_dir, labels: dict | None = None) -> tuple[list[FeatureSet], dict]:
    """Feature sets and inlet pressures from a directory of solution tables."""
    labels = labels or {}
    sets, p0 = [], {}
    for path in sorted(Path(tables_dir).glob("*.csv")):
        sid = path.stem
        summary = path.with_name(sid + ".summary.json")
        sol = HemodynamicSolution.load(path, summary if summary.is_file() else None)
        sets.append(summarize(sol, subject_id=sid, label=labels.get(sid)))
        p0[sid] = sol.params.P0
    return sets, p0


def evaluate_cohort(sets, cfg: PipelineConfig, out_metrics, out_model=None) -> dict:
    """LOOCV report plus, optionally, a model refitted on every subject."""
    y = np.array([s.label for s in sets])
    ids = [s.subject_id for s in sets]
    res = loocv_evaluate(sets, y, cfg.k_grid, cfg.lambda_grid, seed=cfg.seed, n_init=cfg.n_init,
                         max_iter=cfg.max_iter, n_jobs=cfg.jobs, subject_ids=ids)
    report = {
        **res.to_dict(),
        "n_subjects": len(sets),
        "seed": cfg.seed,
        "k_grid": list(cfg.k_grid),
        "lambda_grid": list(cfg.lambda_grid),
    }
    if out_model is not None:
        k, lam, _ = select_hyperparameters(sets, y, cfg.k_grid, cfg.lambda_grid, cfg.seed, n_init=cfg.n_init, max_iter=cfg.max_iter)
        model = make_bohf_classifier(k=k, lam=lam, random_state=cfg.seed, n_init=cfg.n_init, max_iter=cfg.max_iter).fit(sets, y)
        save_model(model, out_model)
        report["final_model"] = {"k": k, "lambda": lam}
    dump_json(out_metrics, report)
    return report


def analyze_cohort(sets, patients, P0, out_dir) -> dict:
    out_dir = Path(out_dir)
    records = analysis.measurement_records(sets, patients, P0)
    result: dict = {"n_subjects": len(sets), "n_records": int(len(records))}
    try:
        corr = analysis.radius_flow_correlation(records)
        result["radius_flow"] = {
            "spearman_rho": corr["spearman_rho"],
            "n_segments": corr["n_segments"],
            "per_group": {analysis.GROUP_NAMES.get(k, str(k)): {"a": a, "b": b} for k, (a, b) in corr["per_group"].items()},
            "per_subject": {k: {"a": a, "b": b} for k, (a, b) in corr["per_subject"].items()},
        }
        seg, fits = analysis.plot_data(records, corr)
        seg.to_csv(out_dir / "plot_segments.csv", index=False, float_format=FLOAT_FORMAT)
        fits.to_csv(out_dir / "plot_fits.csv", index=False, float_format=FLOAT_FORMAT)
    except RetinaHemoError as exc:
        result["radius_flow"] = {"error": str(exc)}
    if patients is not None:
        try:
            result.update(analysis.cohort_summary(records, patients))
        except RetinaHemoError as exc:
            result["cohort_error"] = str(exc)
    records.to_csv(out_dir / "records.csv", index=False, float_format=FLOAT_FORMAT)
    dump_json(out_dir / "analysis.json", result)
    return result


def run_pipeline(cfg: PipelineConfig) -> int:
    """Run every stage; returns a process exit code (nonzero if any stage failed)."""
    cfg.validate()
    out = Path(cfg.output)
    for sub in ("graphs", "solutions", "features") + (("overlays",) if cfg.overlay_fields else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)
    patients = analysis.read_patients(cfg.labels) if cfg.labels else None
    labels = dict(zip(patients["subject_id"], patients["label"])) if patients is not None else {}

    ids = discover_subjects(cfg.masks)
    if not ids:
        raise ValueError(f"no <id>{MASK_SUFFIX} + <id>{OD_SUFFIX} pairs in {cfg.masks}")
    if cfg.jobs == 1:
        results = [process_subject(cfg, sid, labels.get(sid)) for sid in ids]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=cfg.jobs)(delayed(process_subject)(cfg, sid, labels.get(sid)) for sid in ids)
    errors = [e for _, e in results if e is not None]
    ok = [sid for sid, e in results if e is None]

    # barrier: cohort stages use every successful subject
    sets = load_feature_sets(out / "features", ok, labels)
    p0 = {sid: cfg.params_for(labels.get(sid)).P0 for sid in ok}
    if sets:
        analyze_cohort(sets, patients, p0, out)
    labelled = [s for s in sets if s.label is not None]
    if labelled:
        try:
            evaluate_cohort(labelled, cfg, out / "metrics.json", out / "model.json")
        except RetinaHemoError as exc:
            errors.append({"subject_id": None, "stage": "evaluate", "error": f"{type(exc).__name__}: {exc}"})
    errors_path = out / "errors.json"
    if errors:
        dump_json(errors_path, errors)
    elif errors_path.exists():
        errors_path.unlink()
    dump_json(out / "config.json", asdict(cfg))
    return 1 if errors else 0


def write_synth_cohort(out_dir, n_per_class: int, seed: int = 0, depth_range=(2, 4)) -> pd.DataFrame:
    """Rasterized synthetic subjects plus a labels file, ready for :func:`run_pipeline`."""
    from .mask import write_mask_image, write_od_ellipse
    from .synth import generate_tree, random_spec, rasterize

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for label in (-1, 1):
        for _ in range(n_per_class):
            sid = f"synth{len(rows):03d}"
            graph = generate_tree(random_spec(rng, depth_range))
            mask = rasterize(graph)
            write_mask_image(out_dir / (sid + MASK_SUFFIX), mask.grid)
            write_od_ellipse(out_dir / (sid + OD_SUFFIX), mask.od_ellipse)
            graph.save(out_dir / f"{sid}.truth.json")
            rows.append({"subject_id": sid, "label": label, "age": int(rng.integers(40, 80)), "sex": "MF"[int(rng.integers(2))]})
    labels = pd.DataFrame(rows)
    labels.to_csv(out_dir / "labels.csv", index=False)
    return labels
