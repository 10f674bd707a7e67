"""Synthetic binary arterial trees with known geometry, for solver and classifier checks."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DepthTooLarge
from .features import summarize
from .graph import BIFURCATION, ROOT, TERMINAL, CenterlineGraph, Edge, Tree, Vertex
from .hemo import ScenarioParams, assemble_and_solve
from .mask import ArteryMask, OpticDiscEllipse

STROKE_GAP_PX = 3  # clearance between neighbouring subtrees, pixels


@dataclass(frozen=True)
class SynthSpec:
    depth: int = 3
    root_radius: float = 6e-3  # cm
    murray_gamma: float = 3.0
    length_per_segment: float = 0.06  # cm, vertical run of the root segment; children shrink by length_ratio
    seed: int = 0
    asymmetry: float = 1.0  # radius ratio of the smaller to the larger child
    length_ratio: float = 0.8
    length_jitter: float = 0.2
    pixel_pitch_um: float = 6.0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not 0 < self.asymmetry <= 1:
            raise ValueError("asymmetry must lie in (0, 1]")
        if self.root_radius <= 0 or self.length_per_segment <= 0 or self.murray_gamma <= 0:
            raise ValueError("radius, length and exponent must be positive")


def child_radii(r_parent: float, gamma: float, asymmetry: float) -> tuple[float, float]:
    """Radii (larger, smaller) with r_parent^gamma = r1^gamma + r2^gamma and r2 = asymmetry * r1."""
    r1 = r_parent * (1.0 + asymmetry**gamma) ** (-1.0 / gamma)
    return r1, asymmetry * r1


@dataclass
class _Node:
    radius: float
    level: int
    children: list
    width: int = 0  # horizontal band in pixels
    x: int = 0


def _radius_tree(spec: SynthSpec, rng, pitch_cm: float) -> _Node:
    root = _Node(spec.root_radius, 0, [])
    stack = [root]
    while stack:
        n = stack.pop()
        if n.radius < pitch_cm:
            raise DepthTooLarge(f"radius {n.radius * 1e4:.2f} um at level {n.level} is below one pixel")
        if n.level == spec.depth:
            continue
        big, small = child_radii(n.radius, spec.murray_gamma, spec.asymmetry)
        radii = (big, small) if rng.random() < 0.5 else (small, big)
        n.children = [_Node(r, n.level + 1, []) for r in radii]
        stack.extend(reversed(n.children))
    return root


def _layout(node: _Node, pitch_cm: float, left: int = 0) -> None:
    """Give every subtree a disjoint band; leaves sit mid-band, internal nodes on the split between children."""
    if not node.children:
        node.width = 2 * (int(math.ceil(node.radius / pitch_cm)) + STROKE_GAP_PX)
        node.x = left + node.width // 2
        return
    a, b = node.children
    _layout(a, pitch_cm, left)
    _layout(b, pitch_cm, left + a.width)
    node.width = a.width + b.width
    node.x = left + a.width


def generate_tree(spec: SynthSpec) -> CenterlineGraph:
    """Binary tree flowing downwards (increasing row).

    Each edge leaves its parent along a 45 degree diagonal until it reaches the
    child's column, then runs vertically. Sibling subtrees occupy disjoint column
    bands, so strokes never overlap away from their own junction.
    """
    rng = np.random.default_rng(spec.seed)
    pitch_cm = spec.pixel_pitch_um * 1e-4
    top = _radius_tree(spec, rng, pitch_cm)
    _layout(top, pitch_cm)

    start = (0, top.x)
    vertices = [Vertex(0, ROOT, start, np.array([start]), np.array([spec.root_radius]))]
    edges: list[Edge] = []
    queue = deque([(0, start, top, spec.length_per_segment)])
    while queue:
        pid, (r0, c0), node, length = queue.popleft()
        r_px = node.radius / pitch_cm
        jitter = 1.0 + spec.length_jitter * (2.0 * rng.random() - 1.0)
        n_vert = max(int(round(length * jitter / pitch_cm)), int(math.ceil(3 * r_px)), 2)
        dc = node.x - c0
        sign = 1 if dc > 0 else -1
        path = [(r0 + j, c0 + sign * j) for j in range(1, abs(dc) + 1)]
        rd = r0 + abs(dc)
        path += [(rd + j, node.x) for j in range(1, n_vert + 1)]
        pix = np.array(path)
        eid, vid = len(edges), len(vertices)
        edges.append(Edge(eid, pid, vid, pix, np.full(len(pix), node.radius)))
        vertices[pid].child_edges.append(eid)
        if not node.children:
            end = tuple(int(x) for x in pix[-1])
            vertices.append(Vertex(vid, TERMINAL, end, np.zeros((0, 2), int), np.zeros(0), parent_edge=eid))
            continue
        here = (int(pix[-1][0]) + 1, node.x)
        vertices.append(Vertex(vid, BIFURCATION, here, np.array([here]), np.array([node.radius]), parent_edge=eid))
        for child in node.children:
            queue.append((vid, here, child, length * spec.length_ratio))

    # shift into a raster with a margin wide enough for the root stroke
    allpix = np.vstack([v.pixels for v in vertices if len(v.pixels)] + [e.pixels for e in edges])
    margin = int(math.ceil(spec.root_radius / pitch_cm)) + 4
    offset = margin - allpix.min(axis=0)
    for v in vertices:
        v.pixels = v.pixels + offset if len(v.pixels) else v.pixels
        v.position = (int(v.position[0] + offset[0]), int(v.position[1] + offset[1]))
    for e in edges:
        e.pixels = e.pixels + offset
    shape = tuple(int(x) for x in allpix.max(axis=0) + offset + margin + 1)
    tree = Tree(root=vertices[0].position, vertices=vertices, edges=edges)
    return CenterlineGraph(shape=shape, pixel_pitch_um=spec.pixel_pitch_um, trees=[tree])


def rasterize(graph: CenterlineGraph, od_scale: float = 2.0) -> ArteryMask:
    """Sweep a disc of the local radius along every centerline pixel.

    The optic-disc ellipse is a circle around each root, ``od_scale`` root radii wide.
    """
    rows, cols, radii = graph.pixel_table()
    grid = np.zeros(graph.shape, dtype=bool)
    rad_px = radii / graph.pixel_pitch_cm
    for r, c, R in zip(rows, cols, rad_px):
        h = int(math.floor(R))
        r0, r1 = max(r - h, 0), min(r + h + 1, grid.shape[0])
        c0, c1 = max(c - h, 0), min(c + h + 1, grid.shape[1])
        rr, cc = np.ogrid[r0:r1, c0:c1]
        grid[r0:r1, c0:c1] |= (rr - r) ** 2 + (cc - c) ** 2 <= R * R
    t = graph.trees[0]
    root_r = t.root_vertex.radii[0] / graph.pixel_pitch_cm
    od = OpticDiscEllipse(center=(float(t.root[0]), float(t.root[1])), axes=(od_scale * root_r,) * 2)
    return ArteryMask(grid=grid, od_ellipse=od, pixel_pitch_um=graph.pixel_pitch_um)


def random_spec(rng: np.random.Generator, depth_range=(1, 8), seed=None) -> SynthSpec:
    """Draw a spec whose smallest branch still spans at least one pixel."""
    depth = int(rng.integers(depth_range[0], depth_range[1] + 1))
    asym = float(rng.uniform(0.6, 1.0))
    gamma = 3.0
    worst = (1.0 + asym**gamma) ** (-1.0 / gamma) * asym
    min_root = 6e-4 / worst**depth * 1.2  # one pixel of 6 um at the deepest level, with slack
    root_radius = max(float(rng.uniform(5e-3, 8e-3)), min_root)
    return SynthSpec(
        depth=depth,
        root_radius=root_radius,
        murray_gamma=gamma,
        asymmetry=asym,
        length_per_segment=float(rng.uniform(0.03, 0.08)),
        seed=int(rng.integers(2**31)),
    )


def generate_cohort(n_per_class: int, class_flow_scales=(30.0, 80.0), seed: int = 0, depth_range=(2, 4)):
    """Two labelled classes of random trees solved under different total flows.

    Returns FeatureSets; the first scale gets label -1, the second +1.
    """
    rng = np.random.default_rng(seed)
    sets = []
    for label, qt in zip((-1, 1), class_flow_scales):
        params = replace(ScenarioParams(), QT=float(qt), scenario_id="custom")
        for _ in range(n_per_class):
            graph = generate_tree(random_spec(rng, depth_range))
            sol = assemble_and_solve(graph, params)
            sets.append(summarize(sol, subject_id=f"synth{len(sets):03d}", label=label))
    return sets
