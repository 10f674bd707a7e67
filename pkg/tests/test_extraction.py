import numpy as np
import pytest
from scipy import ndimage

from conftest import bar_mask
from retinahemo.exceptions import EmptyInput, InvalidCenterline, NoArterialTree, RootMismatch
from retinahemo.extraction import (
    CenterlineExtractor,
    build_graph,
    estimate_radii,
    extract_graph,
    neighbor_count,
    prune_and_root,
    skeletonize,
)
from retinahemo.graph import BIFURCATION, TERMINAL, CenterlineGraph
from retinahemo.mask import ArteryMask, OpticDiscEllipse, load_artery_mask, write_mask_image, write_od_ellipse
from retinahemo.synth import SynthSpec, generate_tree, rasterize

EIGHT = np.ones((3, 3), dtype=bool)
FAR_OD = OpticDiscEllipse(center=(0.0, 0.0), axes=(0.5, 0.5))


def brute_force_distance(grid, r, c):
    bg = np.argwhere(~np.pad(grid, 1)) - 1
    return float(np.min(np.hypot(bg[:, 0] - r, bg[:, 1] - c)))


def chain(rows_cols, shape=(20, 40)):
    g = np.zeros(shape, dtype=bool)
    for r, c in rows_cols:
        g[r, c] = True
    return g


# -- mask I/O ---------------------------------------------------------------


def test_mask_roundtrip(tmp_path):
    grid = bar_mask((20, 30), (5, 10), (2, 28))
    od = OpticDiscEllipse(center=(7.0, 3.0), axes=(4.0, 2.5), angle=0.3)
    write_mask_image(tmp_path / "m.png", grid)
    write_od_ellipse(tmp_path / "m.od.json", od)
    m = load_artery_mask(tmp_path / "m.png", tmp_path / "m.od.json", 6.0)
    assert np.array_equal(m.grid, grid)
    assert m.od_ellipse == od
    assert m.pixel_pitch_cm == pytest.approx(6e-4)


def test_mask_invariants():
    with pytest.raises(EmptyInput):
        ArteryMask(np.zeros((5, 5)), FAR_OD)
    with pytest.raises(ValueError):
        ArteryMask(np.ones((5, 5)), OpticDiscEllipse(center=(9.0, 0.0), axes=(1.0, 1.0)))
    with pytest.raises(ValueError):
        ArteryMask(np.ones((5, 5)), FAR_OD, pixel_pitch_um=0)


def test_rotated_ellipse_contains():
    od = OpticDiscEllipse(center=(10.0, 10.0), axes=(6.0, 1.0), angle=np.pi / 2)
    # first axis rotated onto the row direction
    assert od.contains([15.0], [10.0])[0]
    assert not od.contains([10.0], [15.0])[0]


# -- skeletonize --------------------------------------------------------------


def test_skeleton_of_bar_is_midline():
    grid = bar_mask((15, 60), (5, 10), (5, 55))
    sk = skeletonize(grid)
    rows, cols = np.nonzero(sk)
    assert ndimage.label(sk, EIGHT)[1] == 1
    assert np.all((neighbor_count(sk) * sk)[sk] <= 2)  # a simple chain
    # thinning may bend the last pixels towards a corner; the interior is on the midline
    interior = (cols > 10) & (cols < 50)
    assert set(rows[interior].tolist()) == {7}
    assert 40 <= len(cols) <= 52
    assert np.all(grid[sk])


def test_skeleton_of_plus_has_degree_four_crossing():
    grid = np.zeros((31, 31), dtype=bool)
    grid[14:17, 2:29] = True
    grid[2:29, 14:17] = True
    sk = skeletonize(grid)
    deg = neighbor_count(sk) * sk
    assert sk[15, 15] and deg[15, 15] == 4


def test_skeleton_preserves_components_and_holes():
    grid = np.zeros((40, 60), dtype=bool)
    grid[5:10, 5:50] = True
    grid[20:35, 10:40] = True
    grid[25:30, 20:30] = False  # a hole in the second component
    sk = skeletonize(grid)
    assert ndimage.label(sk, EIGHT)[1] == ndimage.label(grid, EIGHT)[1]
    # holes: background components of the complement (4-connectivity), minus the outside
    holes = lambda g: ndimage.label(~np.pad(g, 1))[1] - 1  # noqa: E731
    assert holes(sk) == holes(grid)


def test_skeleton_idempotent_on_chains(small_tree):
    sk = skeletonize(rasterize(small_tree).grid)
    assert np.array_equal(skeletonize(sk), sk)


def test_skeleton_is_thin():
    grid = np.zeros((50, 50), dtype=bool)
    rr, cc = np.ogrid[:50, :50]
    grid |= np.abs(rr - cc) <= 2  # thick diagonal
    sk = skeletonize(grid)
    # no 2x2 fully-set block anywhere
    blocks = sk[:-1, :-1] & sk[1:, :-1] & sk[:-1, 1:] & sk[1:, 1:]
    assert not blocks.any()


def test_skeletonize_empty():
    with pytest.raises(EmptyInput):
        skeletonize(np.zeros((4, 4), bool))


# -- radii ------------------------------------------------------------------


def test_radius_of_seven_pixel_bar_center():
    grid = bar_mask((20, 40), (5, 12), (0, 40))
    cl = np.zeros_like(grid)
    cl[8, 20] = True
    cl[5, 30] = True
    r = estimate_radii(grid, cl, 6.0)
    assert r[8, 20] == pytest.approx(brute_force_distance(grid, 8, 20) * 6e-4)
    assert r[8, 20] == pytest.approx(2.4e-3)
    assert r[5, 30] == pytest.approx(6e-4)


def test_radius_of_disc_center():
    rr, cc = np.ogrid[:41, :41]
    grid = (rr - 20) ** 2 + (cc - 20) ** 2 <= 100
    cl = np.zeros_like(grid)
    cl[20, 20] = True
    r = estimate_radii(grid, cl, 6.0)[20, 20] / 6e-4
    assert r == pytest.approx(brute_force_distance(grid, 20, 20))
    assert abs(r - 10) <= 1


def test_radius_monotone_under_dilation(small_tree):
    grid = rasterize(small_tree).grid
    sk = skeletonize(grid)
    r0 = estimate_radii(grid, sk)
    r1 = estimate_radii(ndimage.binary_dilation(grid, EIGHT), sk)
    assert np.all(r1[sk] >= r0[sk])
    assert np.all(r0[sk] > 0)


def test_radius_rejects_background_centerline():
    grid = bar_mask((10, 10), (2, 5), (2, 8))
    cl = np.zeros_like(grid)
    cl[0, 0] = True
    with pytest.raises(InvalidCenterline):
        estimate_radii(grid, cl)


# -- pruning ----------------------------------------------------------------


def test_chain_crossing_ellipse_splits_into_two_rooted_components():
    cl = chain([(10, c) for c in range(40)])
    od = OpticDiscEllipse(center=(10.0, 20.0), axes=(3.0, 3.0))
    pruned, roots = prune_and_root(cl, od)
    assert ndimage.label(pruned, EIGHT)[1] == 2
    assert sorted(roots) == [(10, 16), (10, 24)]
    assert not pruned[10, 17:24].any()


def test_chain_outside_ellipse_is_unchanged():
    cl = chain([(10, c) for c in range(5, 30)])
    od = OpticDiscEllipse(center=(10.0, 35.0), axes=(2.0, 2.0))
    pruned, roots = prune_and_root(cl, od)
    assert np.array_equal(pruned, cl)
    assert roots == [(10, 29)]


def test_small_components_dropped_and_all_pruned_raises():
    cl = chain([(2, c) for c in range(5)] + [(10, c) for c in range(5, 30)])
    pruned, roots = prune_and_root(cl, FAR_OD)
    assert not pruned[2].any() and len(roots) == 1
    with pytest.raises(NoArterialTree):
        prune_and_root(cl, OpticDiscEllipse(center=(10.0, 20.0), axes=(100.0, 100.0)))


# -- graph construction -------------------------------------------------------


def _graph_from_chain_raster(cl, root):
    radii = np.where(cl, 6e-4, 0.0)
    return build_graph(cl, radii, [root])


def test_straight_chain_graph():
    cl = chain([(10, c) for c in range(5, 30)])
    g = _graph_from_chain_raster(cl, (10, 5))
    g.check()
    assert (g.count(BIFURCATION), g.n_edges, g.count(TERMINAL)) == (0, 1, 1)


def test_y_skeleton_graph():
    pts = [(r, 20) for r in range(0, 10)]
    pts += [(10 + j, 20 - j) for j in range(0, 8)] + [(10 + j, 20 + j) for j in range(1, 8)]
    g = _graph_from_chain_raster(chain(pts, (25, 40)), (0, 20))
    g.check()
    assert (g.count(BIFURCATION), g.n_edges, g.count(TERMINAL)) == (1, 3, 2)
    assert len(g.trees[0].root_vertex.pixels) == 1


def test_three_level_binary_tree_graph():
    g0 = generate_tree(SynthSpec(depth=2, seed=0))
    g = _graph_from_chain_raster(g0.centerline_raster(), g0.trees[0].root)
    g.check()
    assert (g.count(BIFURCATION), g.n_edges, g.count(TERMINAL)) == (3, 7, 4)


def test_forest_property_and_parent_links(small_tree):
    g = extract_graph(rasterize(small_tree))
    g.check()
    for t in g.trees:
        assert len(t.edges) == len(t.vertices) - 1
        for v in t.vertices:
            seen, cur = 0, v
            while cur.parent_edge is not None:
                cur = t.vertices[t.edges[cur.parent_edge].parent]
                seen += 1
                assert seen <= len(t.vertices)
            assert cur is t.root_vertex


def test_cycle_broken_at_thinnest_edge():
    # a rectangle loop hanging from a stem; the right side is drawn thinner
    pts = [(r, 10) for r in range(0, 6)]
    pts += [(6, c) for c in range(10, 31)] + [(20, c) for c in range(10, 31)]
    pts += [(r, 10) for r in range(7, 20)] + [(r, 30) for r in range(7, 20)]
    pts += [(r, 20) for r in range(21, 30)]
    cl = chain(pts, (35, 40))
    radii = np.where(cl, 18e-4, 0.0)
    radii[7:20, 30] = 6e-4
    g = build_graph(cl, radii, [(0, 10)])
    g.check()
    assert all(len(t.edges) == len(t.vertices) - 1 for t in g.trees)
    owned = {tuple(map(int, p)) for t in g.trees for e in t.edges for p in e.pixels}
    owned |= {tuple(map(int, p)) for t in g.trees for v in t.vertices for p in v.pixels}
    # the thin right side carries the lowest mean radius, so that chain is the one removed
    assert (13, 30) not in owned
    assert (13, 10) in owned and (25, 20) in owned


def test_build_graph_root_errors():
    cl = chain([(10, c) for c in range(5, 30)])
    radii = np.where(cl, 6e-4, 0.0)
    with pytest.raises(RootMismatch):
        build_graph(cl, radii, [(0, 0)])
    with pytest.raises(RootMismatch):
        build_graph(cl, radii, [(10, 5), (10, 29)])


def test_roundtrip_topology_and_radii_of_synthetic_trees():
    rng = np.random.default_rng(11)
    for depth in range(0, 5):
        spec = SynthSpec(depth=depth, seed=int(rng.integers(1000)), asymmetry=float(rng.uniform(0.6, 1.0)))
        g0 = generate_tree(spec)
        g = extract_graph(rasterize(g0))
        assert (g.n_edges, g.n_vertices) == (g0.n_edges, g0.n_vertices)
        assert g.count(TERMINAL) == 2**depth
        # interior edge pixels recover the drawn radius within one pixel pitch
        truth = sorted(e.radii[0] for e in g0.trees[0].edges)
        got = sorted(float(np.median(e.radii)) for e in g.trees[0].edges)
        assert np.max(np.abs(np.subtract(truth, got))) <= g.pixel_pitch_cm


def test_graph_serialization_roundtrip(tmp_path, small_tree):
    g = extract_graph(rasterize(small_tree))
    g.save(tmp_path / "a.json")
    h = CenterlineGraph.load(tmp_path / "a.json")
    h.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert h.n_edges == g.n_edges and h.n_vertices == g.n_vertices
    for e, f in zip(g.trees[0].edges, h.trees[0].edges):
        assert np.array_equal(e.pixels, f.pixels)
        np.testing.assert_allclose(e.radii, f.radii, rtol=1e-11)
    # determinism: a second extraction writes identical bytes
    extract_graph(rasterize(small_tree)).save(tmp_path / "c.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "c.json").read_bytes()


def test_extractor_estimator_wrapper(small_tree):
    m = rasterize(small_tree)
    ext = CenterlineExtractor(min_pixels=10)
    assert ext.get_params() == {"min_pixels": 10}
    out = ext.fit().transform([m, m])
    assert len(out) == 2 and out[0].to_dict() == out[1].to_dict()
