"""Descriptive cohort analyses: radius-flow relation and per-patient / per-measurement tables."""
from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from .exceptions import EmptyGroup, UndefinedCorrelation
from .graph import GraphElementKind
from .hemo import INLET_PRESSURE_MMHG

HEALTHY, GLAUCOMA = -1, 1
GROUP_NAMES = {HEALTHY: "healthy", GLAUCOMA: "glaucomatous"}
RECORD_COLUMNS = ["subject_id", "kind", "dP", "v", "r", "Q", "age", "sex", "label"]


def parse_label(value) -> int:
    """Accept -1/+1, 0/1, H/G and healthy/glaucoma spellings."""
    s = str(value).strip().lower()
    if s in {"-1", "0", "h", "healthy", "control", "n", "normal"}:
        return HEALTHY
    if s in {"1", "+1", "g", "glaucoma", "glaucomatous"}:
        return GLAUCOMA
    raise ValueError(f"unrecognized label {value!r}")


def read_patients(path) -> pd.DataFrame:
    """Labels file: CSV with subject_id, label, age, sex."""
    df = pd.read_csv(path, dtype={"subject_id": str})
    df["label"] = df["label"].map(parse_label)
    if "age" not in df:
        df["age"] = np.nan
    if "sex" not in df:
        df["sex"] = ""
    df["sex"] = df["sex"].fillna("").astype(str).str.upper().str[:1]
    return df[["subject_id", "label", "age", "sex"]]


def measurement_records(feature_sets, patients: pd.DataFrame | None = None, P0=INLET_PRESSURE_MMHG) -> pd.DataFrame:
    """One record per segment, bifurcation and terminal of every subject.

    ``P0`` is the inlet pressure, either one value or a mapping subject_id -> value.
    """
    meta = patients.set_index("subject_id") if patients is not None else None
    frames = []
    for fs in feature_sets:
        p0 = P0[fs.subject_id] if isinstance(P0, dict) else P0
        df = pd.DataFrame(
            {
                "subject_id": fs.subject_id,
                "kind": fs.kinds,
                "dP": p0 - fs.X[:, 1],
                "v": fs.X[:, 2],
                "r": fs.radius,
                "Q": fs.X[:, 0],
            }
        )
        if meta is not None and fs.subject_id in meta.index:
            row = meta.loc[fs.subject_id]
            df["age"], df["sex"], df["label"] = row["age"], row["sex"], int(row["label"])
        else:
            df["age"], df["sex"], df["label"] = np.nan, "", fs.label if fs.label is not None else 0
        frames.append(df)
    out = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=RECORD_COLUMNS)
    return out[RECORD_COLUMNS]


def fit_exponential(r, Q) -> tuple[float, float]:
    """Least-squares fit of log Q = log a + b r; returns (a, b)."""
    r = np.asarray(r, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if len(r) < 2 or np.ptp(r) == 0:
        raise UndefinedCorrelation("need at least two distinct radii to fit a curve")
    A = np.column_stack([np.ones_like(r), r])
    (loga, b), *_ = np.linalg.lstsq(A, np.log(Q), rcond=None)
    return float(np.exp(loga)), float(b)


def radius_flow_correlation(records: pd.DataFrame) -> dict:
    """Spearman rho between segment mean radius and flow, with exponential fits per subject and group."""
    seg = records[records["kind"] == GraphElementKind.SEGMENT.value]
    if len(seg) < 3:
        raise UndefinedCorrelation(f"need at least 3 segment records, got {len(seg)}")
    if seg["r"].nunique() < 2 or seg["Q"].nunique() < 2:
        raise UndefinedCorrelation("radius or flow is constant")
    rho = float(spearmanr(seg["r"], seg["Q"]).statistic)

    per_subject = {}
    for sid, grp in seg.groupby("subject_id", sort=True):
        try:
            per_subject[sid] = fit_exponential(grp["r"], grp["Q"])
        except UndefinedCorrelation:
            continue
    per_group = {}
    for label, grp in seg.groupby("label", sort=True):
        try:
            per_group[int(label)] = fit_exponential(grp["r"], grp["Q"])
        except UndefinedCorrelation:
            continue
    return {"spearman_rho": rho, "n_segments": int(len(seg)), "per_subject": per_subject, "per_group": per_group}


def _mean_std(x) -> list:
    x = pd.Series(x, dtype=float).dropna()
    return [float(x.mean()) if len(x) else float("nan"), float(x.std(ddof=1)) if len(x) > 1 else 0.0]


def _groups(df, label_col="label"):
    out = {"all": df}
    for label, name in GROUP_NAMES.items():
        out[name] = df[df[label_col] == label]
    return out


def cohort_summary(records: pd.DataFrame, patients: pd.DataFrame) -> dict:
    """Per-patient (segment count, age, sex) and per-measurement (dP, v, r, age, sex) summaries.

    Every value is ``[mean, sample std]`` except counts.
    """
    if patients is None or patients.empty or patients["label"].isna().any():
        raise EmptyGroup("labels are required for the cohort summary")
    pts = patients[patients["subject_id"].isin(records["subject_id"].unique())]
    nos = records[records["kind"] == GraphElementKind.SEGMENT.value].groupby("subject_id").size()
    pts = pts.assign(NoS=pts["subject_id"].map(nos).fillna(0).astype(int))

    per_patient, per_measurement = {}, {}
    for name, grp in _groups(pts).items():
        if grp.empty:
            raise EmptyGroup(f"no patients in group {name!r}")
        per_patient[name] = {
            "n": int(len(grp)),
            "NoS": _mean_std(grp["NoS"]),
            "age": _mean_std(grp["age"]),
            "males": int((grp["sex"] == "M").sum()),
        }
    for name, grp in _groups(records).items():
        if grp.empty:
            raise EmptyGroup(f"no measurements in group {name!r}")
        per_measurement[name] = {
            "n": int(len(grp)),
            "dP": _mean_std(grp["dP"]),
            "v": _mean_std(grp["v"]),
            "r": _mean_std(grp["r"]),
            "age": _mean_std(grp["age"]),
            "males": int((grp["sex"] == "M").sum()),
        }
    return {"per_patient": per_patient, "per_measurement": per_measurement}


def plot_data(records: pd.DataFrame, correlation: dict, n_samples: int = 50) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Per-segment (r, Q) samples and the fitted group curves sampled over the observed radius range."""
    seg = records[records["kind"] == GraphElementKind.SEGMENT.value][["subject_id", "label", "r", "Q"]].reset_index(drop=True)
    rows = []
    for label, (a, b) in correlation["per_group"].items():
        grp = seg[seg["label"] == label]
        for r in np.linspace(grp["r"].min(), grp["r"].max(), n_samples):
            rows.append({"label": label, "r": r, "Q_fit": a * np.exp(b * r)})
    return seg, pd.DataFrame(rows, columns=["label", "r", "Q_fit"])
