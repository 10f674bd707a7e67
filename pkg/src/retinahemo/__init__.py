"""Patient-specific retinal arterial hemodynamics from artery masks, with a bag-of-features classifier."""
from .analysis import cohort_summary, measurement_records, radius_flow_correlation
from .bohf import BoHFEncoder, L2LogisticRegression, loocv_evaluate, make_bohf_classifier, roc_auc
from .exceptions import RetinaHemoError
from .extraction import CenterlineExtractor, build_graph, estimate_radii, extract_graph, prune_and_root, skeletonize
from .features import FEATURE_NAMES, FeatureSet, summarize
from .graph import CenterlineGraph, GraphElementKind
from .hemo import HemodynamicSimulator, HemodynamicSolution, ScenarioParams, assemble_and_solve, murray_outlet_flows
from .mask import ArteryMask, OpticDiscEllipse, load_artery_mask
from .overlay import render_overlay
from .pipeline import PipelineConfig, run_pipeline
from .synth import SynthSpec, generate_cohort, generate_tree, rasterize

__version__ = "0.1.0"

__all__ = [
    "ArteryMask", "BoHFEncoder", "CenterlineExtractor", "CenterlineGraph", "FEATURE_NAMES", "FeatureSet",
    "GraphElementKind", "HemodynamicSimulator", "HemodynamicSolution", "L2LogisticRegression", "OpticDiscEllipse",
    "PipelineConfig", "RetinaHemoError", "ScenarioParams", "SynthSpec", "assemble_and_solve", "build_graph",
    "cohort_summary", "estimate_radii", "extract_graph", "generate_cohort", "generate_tree", "load_artery_mask",
    "loocv_evaluate", "make_bohf_classifier", "measurement_records", "murray_outlet_flows", "prune_and_root",
    "radius_flow_correlation", "rasterize", "render_overlay", "roc_auc", "run_pipeline", "skeletonize", "summarize",
]
