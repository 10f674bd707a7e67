"""Steady 0D non-Newtonian flow on rooted centerline forests.

Each centerline pixel is a computational node. Consecutive nodes of an edge
form a Poiseuille element; the nodes at a bifurcation share pressure and
conserve mass. Inlets carry a fixed pressure, outlets a Murray-law flow.

Material laws are evaluated in cgs. The linear system itself is written in
mmHg and ul/min, which keeps the pressure and flow unknowns within a few
orders of magnitude of each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from sklearn.base import BaseEstimator

from .exceptions import InvalidRadius, NoOutlets, SolveFailure
from .graph import ROOT, TERMINAL, CenterlineGraph

MMHG_TO_DYN_CM2 = 1333.22
UL_MIN_TO_CM3_S = 1e-3 / 60.0
# resistance in dyn s / cm^5 -> mmHg min / ul
RES_CGS_TO_IO = UL_MIN_TO_CM3_S / MMHG_TO_DYN_CM2

PLASMA_VISCOSITY_POISE = 0.012
MURRAY_GAMMA = 2.66
BLOOD_DENSITY = 1.040
INLET_PRESSURE_MMHG = 62.22
SCENARIO_FLOWS = {"sc1": 30.0, "sc2": 45.6, "sc3": 80.0}

FIELDS = ("P", "Q", "v", "R", "Re", "WSS")
TABLE_COLUMNS = ["row", "col", "tree", "element", "kind", "radius_cm", "P", "Q", "v", "R", "Re", "WSS"]


@dataclass(frozen=True)
class ScenarioParams:
    """Boundary conditions and blood properties. Pressures in mmHg, flows in ul/min."""

    P0: float = INLET_PRESSURE_MMHG
    QT: float = SCENARIO_FLOWS["sc2"]
    gamma: float = MURRAY_GAMMA
    rho: float = BLOOD_DENSITY
    plasma_viscosity: float = PLASMA_VISCOSITY_POISE
    scenario_id: str = "sc2"

    def __post_init__(self):
        for name in ("P0", "QT", "gamma", "rho", "plasma_viscosity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def preset(cls, scenario: str, **overrides) -> "ScenarioParams":
        key = scenario.lower()
        if key not in SCENARIO_FLOWS:
            raise ValueError(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIO_FLOWS)}")
        params = cls(QT=SCENARIO_FLOWS[key], scenario_id=key)
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if overrides:
            params = replace(params, scenario_id=key if set(overrides) <= {"plasma_viscosity"} else "custom", **overrides)
        return params

    def to_dict(self) -> dict:
        return {
            "P0": self.P0,
            "QT": self.QT,
            "gamma": self.gamma,
            "rho": self.rho,
            "plasma_viscosity": self.plasma_viscosity,
            "scenario_id": self.scenario_id,
        }


def relative_viscosity(diameter_um):
    """In-vitro Fahraeus-Lindqvist law at discharge hematocrit 0.45."""
    d = np.asarray(diameter_um, dtype=float)
    return 220.0 * np.exp(-1.3 * d) + 3.2 - 2.44 * np.exp(-0.06 * d**0.645)


def viscosity(radius_cm, plasma_viscosity: float = PLASMA_VISCOSITY_POISE):
    """Apparent blood viscosity (poise) for a vessel of the given radius (cm)."""
    r = np.asarray(radius_cm, dtype=float)
    if np.any(~(r > 0)):
        raise InvalidRadius("radius must be positive")
    return relative_viscosity(2.0 * r * 1e4) * plasma_viscosity


def poiseuille_resistance(length_cm, radius_cm, mu_poise):
    """8 mu L / (pi r^4), dyn s / cm^5."""
    return 8.0 * np.asarray(mu_poise) * np.asarray(length_cm) / (math.pi * np.asarray(radius_cm, dtype=float) ** 4)


@dataclass(frozen=True)
class ElementResistance:
    L: float
    r_mean: float
    mu: float

    @property
    def R(self) -> float:
        return float(poiseuille_resistance(self.L, self.r_mean, self.mu))

    @property
    def R_mmHg_min_per_ul(self) -> float:
        return self.R * RES_CGS_TO_IO


def murray_outlet_flows(outlet_radii, QT: float, gamma: float = MURRAY_GAMMA) -> np.ndarray:
    """Q_m = beta r_m^gamma with one global beta so that the flows sum to QT."""
    r = np.asarray(outlet_radii, dtype=float)
    if r.size == 0:
        raise NoOutlets("no outlets to distribute flow over")
    if np.any(~(r > 0)):
        raise InvalidRadius("outlet radius must be positive")
    if not QT > 0:
        raise ValueError("QT must be positive")
    # scale radii first so r^gamma stays well inside floating-point range
    w = (r / r.max()) ** gamma
    return QT * w / w.sum()


# -- chain bookkeeping ---------------------------------------------------------


@dataclass
class _Chain:
    tree: int
    edge: int
    pixels: np.ndarray
    radii: np.ndarray
    R: np.ndarray  # element resistances (mmHg min/ul), len(pixels) - 1
    parent_chain: int | None  # None when the edge leaves the root
    child_chains: list[int] = field(default_factory=list)
    outlet: int | None = None  # index into the outlet-flow vector


def _build_chains(graph: CenterlineGraph, params: ScenarioParams):
    chains: list[_Chain] = []
    outlet_radii = []
    pitch = graph.pixel_pitch_cm
    for ti, tree in enumerate(graph.trees):
        index = {}
        for e in tree.edges:  # edges are stored parent-before-child
            steps = np.diff(e.pixels, axis=0)
            L = pitch * np.hypot(steps[:, 0], steps[:, 1])
            r_mean = 0.5 * (e.radii[1:] + e.radii[:-1])
            R = poiseuille_resistance(L, r_mean, viscosity(r_mean, params.plasma_viscosity)) * RES_CGS_TO_IO
            parent_vertex = tree.vertices[e.parent]
            parent_chain = None if parent_vertex.kind == ROOT else index[parent_vertex.parent_edge]
            ch = _Chain(ti, e.id, e.pixels, e.radii, R, parent_chain)
            index[e.id] = len(chains)
            if parent_chain is not None:
                chains[parent_chain].child_chains.append(len(chains))
            if tree.vertices[e.child].kind == TERMINAL:
                ch.outlet = len(outlet_radii)
                outlet_radii.append(e.radii[-1])
            chains.append(ch)
    for ti, tree in enumerate(graph.trees):
        if not tree.terminals():
            raise NoOutlets(f"tree {ti} has no outlet")
    return chains, np.asarray(outlet_radii)


def _solve_full(chains, q_out, P0):
    """Assemble the complete junction/element/boundary system and solve it directly."""
    offsets = np.cumsum([0] + [len(c.pixels) for c in chains])
    n = int(offsets[-1])
    rows, cols, vals, rhs = [], [], [], []
    eq = 0

    def put(cs, vs, b):
        nonlocal eq
        rows.extend([eq] * len(cs))
        cols.extend(cs)
        vals.extend(vs)
        rhs.append(b)
        eq += 1

    # unknown layout: P at [0, n), Q at [n, 2n)
    for ci, c in enumerate(chains):
        base = offsets[ci]
        m = len(c.pixels)
        i = np.arange(base, base + m - 1)
        k = len(i)
        if k:
            # Q_{i+1} - Q_i = 0
            r = np.arange(eq, eq + k)
            rows.extend(np.repeat(r, 2))
            cols.extend(np.column_stack([n + i + 1, n + i]).ravel())
            vals.extend(np.tile([1.0, -1.0], k))
            rhs.extend([0.0] * k)
            eq += k
            # P_i - P_{i+1} - R Q_{i+1} = 0
            r = np.arange(eq, eq + k)
            rows.extend(np.repeat(r, 3))
            cols.extend(np.column_stack([i, i + 1, n + i + 1]).ravel())
            vals.extend(np.column_stack([np.ones(k), -np.ones(k), -c.R]).ravel())
            rhs.extend([0.0] * k)
            eq += k
        first = base
        if c.parent_chain is None:
            put([first], [1.0], P0)
        else:
            put([first, offsets[c.parent_chain + 1] - 1], [1.0, -1.0], 0.0)
        last = offsets[ci + 1] - 1
        if c.outlet is not None:
            put([n + last], [1.0], q_out[c.outlet])
        else:
            put([n + last] + [n + offsets[j] for j in c.child_chains], [1.0] + [-1.0] * len(c.child_chains), 0.0)

    A = sp.csc_matrix((vals, (rows, cols)), shape=(eq, 2 * n))
    b = np.asarray(rhs)
    if A.shape[0] != A.shape[1]:
        raise SolveFailure(f"system is {A.shape[0]}x{A.shape[1]}; graph is not a forest")
    x = spsolve(A, b)
    if not np.all(np.isfinite(x)):
        raise SolveFailure("singular flow system")
    residual = float(np.linalg.norm(A @ x - b) / np.linalg.norm(b))
    P = [x[offsets[ci] : offsets[ci + 1]] for ci in range(len(chains))]
    Q = [x[n + offsets[ci] : n + offsets[ci + 1]] for ci in range(len(chains))]
    return P, Q, residual


def _solve_tree(chains, q_out, P0):
    """Accumulate outlet flows bottom-up, then march pressure drops top-down."""
    flow = np.zeros(len(chains))
    for ci in reversed(range(len(chains))):
        c = chains[ci]
        flow[ci] = q_out[c.outlet] if c.outlet is not None else sum(flow[j] for j in c.child_chains)
    P, Q = [], []
    for ci, c in enumerate(chains):
        start = P0 if c.parent_chain is None else P[c.parent_chain][-1]
        drops = np.concatenate([[0.0], np.cumsum(c.R * flow[ci])])
        P.append(start - drops)
        Q.append(np.full(len(c.pixels), flow[ci]))
    return P, Q, 0.0


@dataclass
class HemodynamicSolution:
    """Per-pixel fields (one row per centerline pixel) plus scenario metadata.

    Units: P mmHg, Q ul/min, v cm/s, R mmHg min/ul, Re dimensionless, WSS dyn/cm^2.
    """

    table: pd.DataFrame
    params: ScenarioParams
    summary: dict
    chain_P: list = field(default_factory=list, repr=False)
    chain_Q: list = field(default_factory=list, repr=False)

    def field_raster(self, name: str, shape) -> np.ndarray:
        out = np.full(shape, np.nan)
        out[self.table["row"].to_numpy(), self.table["col"].to_numpy()] = self.table[name].to_numpy()
        return out

    def save(self, table_path, summary_path=None) -> None:
        from ._io import FLOAT_FORMAT, dump_json

        self.table.to_csv(table_path, index=False, float_format=FLOAT_FORMAT)
        if summary_path is not None:
            dump_json(summary_path, {**self.summary, "scenario": self.params.to_dict()})

    @classmethod
    def load(cls, table_path, summary_path=None) -> "HemodynamicSolution":
        from ._io import load_json

        table = pd.read_csv(table_path)
        summary, params = {}, ScenarioParams()
        if summary_path is not None:
            summary = load_json(summary_path)
            params = ScenarioParams(**summary.pop("scenario"))
        return cls(table=table, params=params, summary=summary)


def derived_fields(Q, radius_cm, mu_poise, rho: float = BLOOD_DENSITY):
    """Mean velocity (cm/s), Reynolds number and wall shear stress (dyn/cm^2) from Q in ul/min."""
    q = np.asarray(Q, dtype=float) * UL_MIN_TO_CM3_S
    r = np.asarray(radius_cm, dtype=float)
    v = q / (math.pi * r**2)
    re = rho * 2.0 * r * v / mu_poise
    wss = 4.0 * mu_poise * q / (math.pi * r**3)
    return v, re, wss


def assemble_and_solve(graph: CenterlineGraph, params: ScenarioParams | None = None, method: str = "direct") -> HemodynamicSolution:
    """Solve pressures and flows on every tree of ``graph``.

    ``method="direct"`` factorizes the full sparse system; ``method="tree"`` uses
    the forest structure (flow accumulation and pressure marching) instead.
    """
    params = params or ScenarioParams()
    chains, outlet_radii = _build_chains(graph, params)
    q_out = murray_outlet_flows(outlet_radii, params.QT, params.gamma)
    if method == "direct":
        P, Q, residual = _solve_full(chains, q_out, params.P0)
    elif method == "tree":
        P, Q, residual = _solve_tree(chains, q_out, params.P0)
    else:
        raise ValueError(f"unknown method {method!r}")

    # column blocks, one per vertex or edge, concatenated once at the end
    cols = {k: [] for k in ("row", "col", "tree", "element", "kind", "radius_cm", "r_eff", "P", "Q", "R")}

    def block(pixels, tree, element, kinds, radius, r_eff, P_, Q_, R_):
        n = len(pixels)
        cols["row"].append(pixels[:, 0])
        cols["col"].append(pixels[:, 1])
        cols["tree"].append(np.full(n, tree))
        cols["element"].append(np.full(n, element, dtype=object))
        cols["kind"].append(np.asarray(kinds, dtype=object) if not isinstance(kinds, str) else np.full(n, kinds, dtype=object))
        cols["radius_cm"].append(radius)
        cols["r_eff"].append(np.broadcast_to(r_eff, n))
        for key, val in (("P", P_), ("Q", Q_), ("R", R_)):
            cols[key].append(np.broadcast_to(np.asarray(val, dtype=float), n))

    by_edge = {(c.tree, c.edge): ci for ci, c in enumerate(chains)}
    for ti, tree in enumerate(graph.trees):
        for v in tree.vertices:
            if not len(v.pixels):
                continue
            pix = v.pixels.reshape(-1, 2)
            if v.kind == ROOT:
                q_in = sum(Q[by_edge[ti, e]][0] for e in v.child_edges)
                block(pix, ti, f"v{v.id}", v.kind, v.radii, v.radii, params.P0, q_in, 0.0)
            else:
                # bifurcation pixels carry the values of the last node of their parent artery
                ci = by_edge[ti, v.parent_edge]
                R_last = chains[ci].R[-1] if len(chains[ci].R) else 0.0
                block(pix, ti, f"v{v.id}", v.kind, v.radii, chains[ci].radii[-1], P[ci][-1], Q[ci][-1], R_last)
        for e in tree.edges:
            ci = by_edge[ti, e.id]
            kinds = np.full(len(e.pixels), "segment", dtype=object)
            if tree.vertices[e.child].kind == TERMINAL and len(tree.vertices[e.child].pixels) == 0:
                kinds[-1] = TERMINAL
            block(e.pixels, ti, f"e{e.id}", kinds, e.radii, e.radii, P[ci], Q[ci], np.concatenate([[0.0], chains[ci].R]))

    data = {k: np.concatenate(v) for k, v in cols.items()}
    rad_eff = data.pop("r_eff")
    mu = viscosity(rad_eff, params.plasma_viscosity)
    data["v"], data["Re"], data["WSS"] = derived_fields(data["Q"], rad_eff, mu, params.rho)
    table = pd.DataFrame({k: data[k] for k in TABLE_COLUMNS})

    inflow = sum(Q[ci][0] for ci, c in enumerate(chains) if c.parent_chain is None)
    outflow = float(np.sum(q_out))
    summary = {
        "N_I": len(graph.trees),
        "N_O": int(len(q_out)),
        "total_inflow": float(inflow),
        "total_outflow": outflow,
        "flow_balance_error": abs(inflow - params.QT) / params.QT,
        "residual": residual,
        "method": method,
    }
    return HemodynamicSolution(table=table, params=params, summary=summary, chain_P=P, chain_Q=Q)


class HemodynamicSimulator(BaseEstimator):
    """Scenario-configured solver; ``transform`` maps graphs to solutions."""

    def __init__(self, scenario="sc2", P0=None, QT=None, gamma=None, rho=None,
                 plasma_viscosity=PLASMA_VISCOSITY_POISE, method="direct"):
        self.scenario = scenario
        self.P0 = P0
        self.QT = QT
        self.gamma = gamma
        self.rho = rho
        self.plasma_viscosity = plasma_viscosity
        self.method = method

    @property
    def params_(self) -> ScenarioParams:
        return ScenarioParams.preset(
            self.scenario, P0=self.P0, QT=self.QT, gamma=self.gamma, rho=self.rho,
            plasma_viscosity=self.plasma_viscosity,
        )

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        params = self.params_
        if isinstance(X, CenterlineGraph):
            return assemble_and_solve(X, params, self.method)
        return [assemble_and_solve(g, params, self.method) for g in X]
