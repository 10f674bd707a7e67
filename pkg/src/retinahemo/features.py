"""Per-subject hemodynamic feature sets: one vector per segment, bifurcation and terminal."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ._io import FLOAT_FORMAT
from .exceptions import IncompleteSolution
from .graph import BIFURCATION, TERMINAL, CenterlineGraph, GraphElementKind

FEATURE_NAMES = ("Q", "P", "v", "R", "Re", "WSS")


@dataclass
class FeatureSet:
    subject_id: str
    label: int | None
    kinds: np.ndarray  # GraphElementKind values, one per element
    X: np.ndarray  # (n_elements, 6) in FEATURE_NAMES order
    radius: np.ndarray  # cm; segment mean radius or the point's radius
    tree: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.X)

    def count(self, kind) -> int:
        return int(np.sum(self.kinds == GraphElementKind(kind).value))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=list(FEATURE_NAMES))
        df.insert(0, "kind", self.kinds)
        df.insert(1, "tree", self.tree if self.tree is not None else 0)
        df["radius_cm"] = self.radius
        return df

    def save(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)

    @classmethod
    def load(cls, path, subject_id: str = "", label: int | None = None) -> "FeatureSet":
        df = pd.read_csv(path)
        return cls(
            subject_id=subject_id,
            label=label,
            kinds=df["kind"].to_numpy(dtype=str),
            X=df[list(FEATURE_NAMES)].to_numpy(dtype=float),
            radius=df["radius_cm"].to_numpy(dtype=float),
            tree=df["tree"].to_numpy(dtype=int),
        )


def summarize(solution, graph: CenterlineGraph | None = None, subject_id: str = "", label: int | None = None) -> FeatureSet:
    """Collapse a per-pixel solution into segment means plus bifurcation and terminal point values.

    ``solution`` may be a :class:`HemodynamicSolution` or its per-pixel table.
    """
    table = solution.table if hasattr(solution, "table") else solution
    if graph is not None:
        rows, cols, _ = graph.pixel_table()
        solved = set(zip(table["row"].tolist(), table["col"].tolist()))
        missing = [p for p in zip(rows.tolist(), cols.tolist()) if p not in solved]
        if missing:
            raise IncompleteSolution(f"{len(missing)} centerline pixel(s) lack a solution, e.g. {missing[0]}")
    if table[list(FEATURE_NAMES)].isna().any().any():
        raise IncompleteSolution("solution table contains missing values")

    cols = list(FEATURE_NAMES) + ["radius_cm"]
    is_edge = table["element"].str.startswith("e")
    seg = table[is_edge].groupby(["tree", "element"], sort=False)[cols].mean()
    bif = table[table["kind"] == BIFURCATION].groupby(["tree", "element"], sort=False)[cols].first()
    term = table[table["kind"] == TERMINAL].groupby(["tree", "element"], sort=False)[cols].first()

    def ordered(df):
        if df.empty:
            return df
        key = [(t, int(e[1:])) for t, e in df.index]
        return df.iloc[sorted(range(len(df)), key=key.__getitem__)]

    parts, kinds = [], []
    for df, kind in ((seg, GraphElementKind.SEGMENT), (bif, GraphElementKind.BIFURCATION), (term, GraphElementKind.TERMINAL)):
        df = ordered(df)
        parts.append(df)
        kinds += [kind.value] * len(df)
    allp = pd.concat(parts)
    return FeatureSet(
        subject_id=subject_id,
        label=label,
        kinds=np.asarray(kinds, dtype=str),
        X=allp[list(FEATURE_NAMES)].to_numpy(dtype=float),
        radius=allp["radius_cm"].to_numpy(dtype=float),
        tree=np.asarray([t for t, _ in allp.index], dtype=int),
    )
