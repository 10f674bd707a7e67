"""Rooted centerline forests.

Pixel ownership: the root and every bifurcation own their pixels; all other
centerline pixels belong to exactly one edge. A terminal owns no pixel; its
position is the last pixel of its parent edge.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ._io import dump_json, load_json

ROOT = "root"
BIFURCATION = "bifurcation"
TERMINAL = "terminal"


class GraphElementKind(str, enum.Enum):
    TERMINAL = "terminal"
    BIFURCATION = "bifurcation"
    SEGMENT = "segment"


@dataclass
class Vertex:
    id: int
    kind: str
    position: tuple[int, int]
    pixels: np.ndarray  # (n, 2) owned pixels, empty for terminals
    radii: np.ndarray  # cm, one per owned pixel
    parent_edge: int | None = None
    child_edges: list[int] = field(default_factory=list)


@dataclass
class Edge:
    id: int
    parent: int
    child: int
    pixels: np.ndarray  # (n, 2), ordered parent -> child
    radii: np.ndarray  # cm

    @property
    def mean_radius(self) -> float:
        return float(np.mean(self.radii))


@dataclass
class Tree:
    root: tuple[int, int]
    vertices: list[Vertex]
    edges: list[Edge]

    @property
    def root_vertex(self) -> Vertex:
        return self.vertices[0]

    def terminals(self) -> list[Vertex]:
        return [v for v in self.vertices if v.kind == TERMINAL]

    def bifurcations(self) -> list[Vertex]:
        return [v for v in self.vertices if v.kind == BIFURCATION]

    def n_pixels(self) -> int:
        return sum(len(v.pixels) for v in self.vertices) + sum(len(e.pixels) for e in self.edges)


@dataclass
class CenterlineGraph:
    shape: tuple[int, int]
    pixel_pitch_um: float
    trees: list[Tree]

    @property
    def pixel_pitch_cm(self) -> float:
        return self.pixel_pitch_um * 1e-4

    @property
    def n_edges(self) -> int:
        return sum(len(t.edges) for t in self.trees)

    @property
    def n_vertices(self) -> int:
        return sum(len(t.vertices) for t in self.trees)

    def count(self, kind: str) -> int:
        return sum(1 for t in self.trees for v in t.vertices if v.kind == kind)

    def pixel_table(self):
        """All centerline pixels as (rows, cols, radii_cm)."""
        pix, rad = [], []
        for t in self.trees:
            for v in t.vertices:
                pix.append(v.pixels.reshape(-1, 2))
                rad.append(v.radii)
            for e in t.edges:
                pix.append(e.pixels.reshape(-1, 2))
                rad.append(e.radii)
        pix = np.concatenate(pix) if pix else np.zeros((0, 2), int)
        rad = np.concatenate(rad) if rad else np.zeros(0)
        return pix[:, 0], pix[:, 1], rad

    def centerline_raster(self) -> np.ndarray:
        rows, cols, _ = self.pixel_table()
        out = np.zeros(self.shape, dtype=bool)
        out[rows, cols] = True
        return out

    def check(self) -> None:
        """Raise AssertionError if a structural invariant is violated."""
        seen = set()
        for t in self.trees:
            assert t.vertices[0].kind == ROOT
            assert len(t.edges) == len(t.vertices) - 1
            for e in t.edges:
                assert len(e.pixels) >= 1
                assert np.all(e.radii > 0)
                steps = np.abs(np.diff(e.pixels, axis=0))
                assert np.all(steps.max(axis=1, initial=1) == 1), "edge chain not 8-connected"
                assert t.vertices[e.child].parent_edge == e.id
            for v in t.vertices[1:]:
                # parent links must reach the root
                cur, hops = v, 0
                while cur.parent_edge is not None:
                    cur = t.vertices[t.edges[cur.parent_edge].parent]
                    hops += 1
                    assert hops <= len(t.edges)
                assert cur.id == 0
            for arr in [v.pixels for v in t.vertices] + [e.pixels for e in t.edges]:
                for p in map(tuple, arr.reshape(-1, 2)):
                    assert p not in seen, f"pixel {p} owned twice"
                    seen.add(p)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        trees = []
        for t in self.trees:
            trees.append(
                {
                    "root": list(t.root),
                    "vertices": [
                        {
                            "id": v.id,
                            "kind": v.kind,
                            "position": list(v.position),
                            "pixels": v.pixels.reshape(-1, 2).tolist(),
                            "radii_cm": v.radii.tolist(),
                            "parent_edge": v.parent_edge,
                            "child_edges": list(v.child_edges),
                        }
                        for v in t.vertices
                    ],
                    "edges": [
                        {
                            "id": e.id,
                            "parent": e.parent,
                            "child": e.child,
                            "pixels": e.pixels.tolist(),
                            "radii_cm": e.radii.tolist(),
                        }
                        for e in t.edges
                    ],
                }
            )
        return {"shape": list(self.shape), "pixel_pitch_um": self.pixel_pitch_um, "trees": trees}

    @classmethod
    def from_dict(cls, d: dict) -> "CenterlineGraph":
        trees = []
        for td in d["trees"]:
            vertices = [
                Vertex(
                    id=vd["id"],
                    kind=vd["kind"],
                    position=tuple(vd["position"]),
                    pixels=np.asarray(vd["pixels"], dtype=int).reshape(-1, 2),
                    radii=np.asarray(vd["radii_cm"], dtype=float),
                    parent_edge=vd["parent_edge"],
                    child_edges=list(vd["child_edges"]),
                )
                for vd in td["vertices"]
            ]
            edges = [
                Edge(
                    id=ed["id"],
                    parent=ed["parent"],
                    child=ed["child"],
                    pixels=np.asarray(ed["pixels"], dtype=int).reshape(-1, 2),
                    radii=np.asarray(ed["radii_cm"], dtype=float),
                )
                for ed in td["edges"]
            ]
            trees.append(Tree(root=tuple(td["root"]), vertices=vertices, edges=edges))
        return cls(shape=tuple(d["shape"]), pixel_pitch_um=float(d["pixel_pitch_um"]), trees=trees)

    def save(self, path) -> None:
        dump_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "CenterlineGraph":
        return cls.from_dict(load_json(path))
