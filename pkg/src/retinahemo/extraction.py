"""Centerline extraction: thinning, lumen radii, optic-disc pruning and graph building."""
from __future__ import annotations

import logging
from collections import deque

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as _zhang_skeletonize
from sklearn.base import BaseEstimator

from .exceptions import EmptyInput, InvalidCenterline, NoArterialTree, RootMismatch
from .graph import BIFURCATION, ROOT, TERMINAL, CenterlineGraph, Edge, Tree, Vertex
from .mask import ArteryMask, OpticDiscEllipse

logger = logging.getLogger(__name__)

MIN_COMPONENT_PIXELS = 10
EIGHT = np.ones((3, 3), dtype=int)
OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
# E, NE, N, NW, W, SW, S, SE (counter-clockwise ring used by the Yokoi number)
_RING = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))


def _grid(mask) -> np.ndarray:
    grid = mask.grid if isinstance(mask, ArteryMask) else np.asarray(mask, dtype=bool)
    if not grid.any():
        raise EmptyInput("mask has no foreground pixels")
    return grid


def neighbor_count(raster: np.ndarray) -> np.ndarray:
    r = raster.astype(int)
    return ndimage.convolve(r, EIGHT, mode="constant") - r


def _yokoi8(pad: np.ndarray, r: int, c: int) -> int:
    x = [not pad[r + dr, c + dc] for dr, dc in _RING]
    x += x[:2]
    return sum(int(x[k]) - int(x[k] and x[k + 1] and x[k + 2]) for k in (0, 2, 4, 6))


def _drop_redundant_pixels(skel: np.ndarray) -> np.ndarray:
    """Delete simple non-endpoint pixels (staircase corners) so the skeleton is 8-thin."""
    pad = np.pad(skel, 1)
    changed = True
    while changed:
        changed = False
        for r, c in np.argwhere(pad):
            nb = pad[r - 1 : r + 2, c - 1 : c + 2].sum() - 1
            if nb >= 2 and _yokoi8(pad, r, c) == 1:
                pad[r, c] = False
                changed = True
    return pad[1:-1, 1:-1]


def skeletonize(mask) -> np.ndarray:
    """1-pixel-wide, 8-connected, topology-preserving centerline raster."""
    grid = _grid(mask)
    skel = _zhang_skeletonize(np.pad(grid, 1))[1:-1, 1:-1]
    return _drop_redundant_pixels(skel)


def estimate_radii(mask, centerline: np.ndarray, pixel_pitch_um: float | None = None) -> np.ndarray:
    """Radius raster (cm) on the centerline: exact Euclidean distance to the nearest background pixel."""
    grid = _grid(mask)
    if pixel_pitch_um is None:
        pixel_pitch_um = mask.pixel_pitch_um if isinstance(mask, ArteryMask) else 6.0
    centerline = np.asarray(centerline, dtype=bool)
    if np.any(centerline & ~grid):
        raise InvalidCenterline("centerline pixel lies on background")
    # pad so that pixels touching the raster border see background outside it
    dist = ndimage.distance_transform_edt(np.pad(grid, 1))[1:-1, 1:-1]
    return np.where(centerline, dist * pixel_pitch_um * 1e-4, 0.0)


def prune_and_root(
    centerline: np.ndarray,
    od_ellipse: OpticDiscEllipse,
    min_pixels: int = MIN_COMPONENT_PIXELS,
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Remove centerline pixels inside the optic disc and root every remaining component."""
    rows, cols = np.nonzero(centerline)
    inside = od_ellipse.contains(rows, cols)
    pruned = np.zeros_like(centerline, dtype=bool)
    pruned[rows[~inside], cols[~inside]] = True

    labels, n = ndimage.label(pruned, structure=EIGHT)
    roots = []
    for lab in range(1, n + 1):
        pix = np.argwhere(labels == lab)
        if len(pix) < min_pixels:
            pruned[labels == lab] = False
            continue
        d2 = (pix[:, 0] - od_ellipse.center[0]) ** 2 + (pix[:, 1] - od_ellipse.center[1]) ** 2
        r, c = pix[int(np.argmin(d2))]
        roots.append((int(r), int(c)))
    if not roots:
        raise NoArterialTree("no centerline component survives optic-disc pruning")
    return pruned, roots


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def _centroid_pixel(pixels: list[tuple[int, int]]) -> tuple[int, int]:
    arr = np.asarray(sorted(pixels))
    d2 = ((arr - arr.mean(axis=0)) ** 2).sum(axis=1)
    return tuple(int(v) for v in arr[int(np.argmin(d2))])


def _trace_tree(pixels: set, count: np.ndarray, root: tuple[int, int], radius: np.ndarray) -> Tree | None:
    def nbrs(p):
        return [(p[0] + dr, p[1] + dc) for dr, dc in OFFSETS if (p[0] + dr, p[1] + dc) in pixels]

    # -- vertices: root pixel (with its branching cluster) and branching clusters
    branching = sorted(p for p in pixels if count[p] >= 3)
    owner: dict = {}
    groups: list[list] = []

    def grow(seed):
        gid = len(groups)
        groups.append([])
        stack = [seed]
        owner[seed] = gid
        while stack:
            p = stack.pop()
            groups[gid].append(p)
            for q in nbrs(p):
                if q not in owner and count[q] >= 3:
                    owner[q] = gid
                    stack.append(q)

    grow(root)
    if count[root] < 3:
        groups[0] = [root]
        owner = {root: 0}
    for p in branching:
        if p not in owner:
            grow(p)

    # -- chains between vertices; terminals get fresh vertex ids
    raw_edges = []  # (a, b, chain)
    touching = set()
    visited = set()
    terminal_pos = {}
    n_groups = len(groups)
    for gid in range(n_groups):
        for p in sorted(groups[gid]):
            for q in nbrs(p):
                if q in owner:
                    if owner[q] != gid:
                        touching.add((min(gid, owner[q]), max(gid, owner[q])))
                    continue
                if q in visited:
                    continue
                chain, prev, cur = [q], p, q
                visited.add(q)
                while True:
                    cand = [n for n in nbrs(cur) if n != prev]
                    if not cand:
                        end = n_groups + len(terminal_pos)
                        terminal_pos[end] = cur
                        break
                    nxt = cand[0]
                    if nxt in owner:
                        end = owner[nxt]
                        break
                    if nxt in visited:  # closed loop of chain pixels, cannot happen with a rooted vertex
                        raise RootMismatch("chain tracing revisited a pixel")
                    chain.append(nxt)
                    visited.add(nxt)
                    prev, cur = cur, nxt
                raw_edges.append((gid, end, chain))

    # -- contract vertex pairs that touch without any chain pixel in between
    n_total = n_groups + len(terminal_pos)
    merge = _DisjointSet(n_total)
    for a, b in sorted(touching):
        merge.union(a, b)
    raw_edges = [(merge.find(a), merge.find(b), ch) for a, b, ch in raw_edges]
    vpix: dict[int, list] = {}
    for gid in range(n_groups):
        vpix.setdefault(merge.find(gid), []).extend(groups[gid])

    # -- break cycles: keep a maximum spanning forest by mean chain radius
    def mean_r(ch):
        return float(np.mean([radius[p] for p in ch]))

    order = sorted(range(len(raw_edges)), key=lambda i: (-mean_r(raw_edges[i][2]), i))
    span = _DisjointSet(n_total)
    kept = [raw_edges[i] for i in sorted(i for i in order if span.union(raw_edges[i][0], raw_edges[i][1]))]
    dropped = len(raw_edges) - len(kept)
    if dropped:
        logger.info("broke %d cycle(s) in tree rooted at %s", dropped, root)

    # -- dissolve single-pixel pass-through vertices left behind by cycle breaking
    root_id = merge.find(0)
    while True:
        degree: dict[int, list[int]] = {}
        for i, (a, b, _) in enumerate(kept):
            degree.setdefault(a, []).append(i)
            degree.setdefault(b, []).append(i)
        target = next(
            (v for v in sorted(degree) if v != root_id and v in vpix and len(vpix[v]) == 1 and len(degree[v]) == 2),
            None,
        )
        if target is None:
            break
        i, j = degree[target]
        a1, b1, c1 = kept[i]
        a2, b2, c2 = kept[j]
        if b1 != target:
            a1, b1, c1 = b1, a1, c1[::-1]
        if a2 != target:
            a2, b2, c2 = b2, a2, c2[::-1]
        merged = (a1, b2, c1 + vpix.pop(target) + c2)
        kept = [e for k, e in enumerate(kept) if k not in (i, j)] + [merged]

    if not kept:
        return None

    # -- orient from the root (BFS) and renumber
    adj: dict[int, list[int]] = {}
    for i, (a, b, _) in enumerate(kept):
        adj.setdefault(a, []).append(i)
        adj.setdefault(b, []).append(i)

    def radii_of(pix):
        return np.array([radius[tuple(p)] for p in pix], dtype=float)

    vertices = [
        Vertex(
            id=0,
            kind=ROOT,
            position=root,
            pixels=np.asarray(sorted(vpix[root_id]), dtype=int).reshape(-1, 2),
            radii=radii_of(sorted(vpix[root_id])),
        )
    ]
    edges: list[Edge] = []
    new_id = {root_id: 0}
    queue = deque([root_id])
    while queue:
        u = queue.popleft()
        outgoing = []
        for i in adj.get(u, []):
            a, b, ch = kept[i]
            if a == u and b not in new_id:
                outgoing.append((ch, b))
            elif b == u and a not in new_id:
                outgoing.append((ch[::-1], a))
        for ch, w in sorted(outgoing, key=lambda t: t[0][0]):
            eid = len(edges)
            wid = len(vertices)
            new_id[w] = wid
            if w in vpix:
                owned = sorted(vpix[w])
                pos = _centroid_pixel(owned)
            else:
                owned = []
                pos = terminal_pos[w]
            vertices.append(
                Vertex(
                    id=wid,
                    kind=BIFURCATION,
                    position=tuple(int(x) for x in pos),
                    pixels=np.asarray(owned, dtype=int).reshape(-1, 2),
                    radii=radii_of(owned),
                    parent_edge=eid,
                )
            )
            vertices[new_id[u]].child_edges.append(eid)
            edges.append(
                Edge(id=eid, parent=new_id[u], child=wid, pixels=np.asarray(ch, dtype=int).reshape(-1, 2), radii=radii_of(ch))
            )
            queue.append(w)
    for v in vertices[1:]:
        if not v.child_edges:
            v.kind = TERMINAL
    return Tree(root=root, vertices=vertices, edges=edges)


def build_graph(
    pruned: np.ndarray,
    radii: np.ndarray,
    roots: list[tuple[int, int]],
    pixel_pitch_um: float = 6.0,
) -> CenterlineGraph:
    """Group branching pixels into nodes, string the rest into root-oriented edges."""
    pruned = np.asarray(pruned, dtype=bool)
    labels, n = ndimage.label(pruned, structure=EIGHT)
    root_of = {}
    for root in roots:
        lab = labels[root] if 0 <= root[0] < pruned.shape[0] and 0 <= root[1] < pruned.shape[1] else 0
        if lab == 0:
            raise RootMismatch(f"root {root} is not a centerline pixel")
        if lab in root_of:
            raise RootMismatch(f"component {lab} has two roots")
        root_of[lab] = tuple(int(x) for x in root)
    count = neighbor_count(pruned)
    trees = []
    for lab in range(1, n + 1):
        if lab not in root_of:
            logger.warning("centerline component %d has no root; skipped", lab)
            continue
        pixels = set(map(tuple, np.argwhere(labels == lab).tolist()))
        if np.any(radii[labels == lab] <= 0):
            raise InvalidCenterline("non-positive radius on the centerline")
        tree = _trace_tree(pixels, count, root_of[lab], radii)
        if tree is None:
            logger.warning("tree rooted at %s has no edges after cycle breaking; skipped", root_of[lab])
            continue
        trees.append(tree)
    if not trees:
        raise NoArterialTree("no rooted tree could be built")
    return CenterlineGraph(shape=pruned.shape, pixel_pitch_um=pixel_pitch_um, trees=trees)


def extract_graph(mask: ArteryMask, min_pixels: int = MIN_COMPONENT_PIXELS) -> CenterlineGraph:
    skel = skeletonize(mask)
    radii = estimate_radii(mask, skel)
    pruned, roots = prune_and_root(skel, mask.od_ellipse, min_pixels=min_pixels)
    return build_graph(pruned, radii, roots, pixel_pitch_um=mask.pixel_pitch_um)


class CenterlineExtractor(BaseEstimator):
    """Estimator-style wrapper: ``transform`` maps artery masks to centerline graphs."""

    def __init__(self, min_pixels: int = MIN_COMPONENT_PIXELS):
        self.min_pixels = min_pixels

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        if isinstance(X, ArteryMask):
            return extract_graph(X, min_pixels=self.min_pixels)
        return [extract_graph(m, min_pixels=self.min_pixels) for m in X]
