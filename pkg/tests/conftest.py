import numpy as np
import pytest

from retinahemo.graph import BIFURCATION, ROOT, TERMINAL, CenterlineGraph, Edge, Tree, Vertex
from retinahemo.synth import SynthSpec, generate_tree


def tube_graph(n_edge_pixels=199, radius_cm=30e-4, pitch_um=6.0, diagonal=False):
    """Root pixel plus one straight edge of ``n_edge_pixels`` pixels ending in a terminal."""
    step = (1, 1) if diagonal else (0, 1)
    root = (5, 5)
    pix = np.array([(root[0] + j * step[0], root[1] + j * step[1]) for j in range(1, n_edge_pixels + 1)])
    verts = [
        Vertex(0, ROOT, root, np.array([root]), np.array([radius_cm]), child_edges=[0]),
        Vertex(1, TERMINAL, tuple(int(x) for x in pix[-1]), np.zeros((0, 2), int), np.zeros(0), parent_edge=0),
    ]
    edge = Edge(0, 0, 1, pix, np.full(n_edge_pixels, radius_cm))
    shape = (int(pix[:, 0].max()) + 6, int(pix[:, 1].max()) + 6)
    return CenterlineGraph(shape=shape, pixel_pitch_um=pitch_um, trees=[Tree(root, verts, [edge])])


def y_graph(r_parent=40e-4, r_left=30e-4, r_right=30e-4, n_parent=40, n_child=30):
    """Vertical parent edge, a one-pixel bifurcation, two diagonal children (mirror images)."""
    root = (1, 50)
    parent = np.array([(1 + j, 50) for j in range(1, n_parent + 1)])
    node = (n_parent + 2, 50)
    left = np.array([(node[0] + j, 50 - j) for j in range(1, n_child + 1)])
    right = np.array([(node[0] + j, 50 + j) for j in range(1, n_child + 1)])
    verts = [
        Vertex(0, ROOT, root, np.array([root]), np.array([r_parent]), child_edges=[0]),
        Vertex(1, BIFURCATION, node, np.array([node]), np.array([r_parent]), parent_edge=0, child_edges=[1, 2]),
        Vertex(2, TERMINAL, tuple(left[-1]), np.zeros((0, 2), int), np.zeros(0), parent_edge=1),
        Vertex(3, TERMINAL, tuple(right[-1]), np.zeros((0, 2), int), np.zeros(0), parent_edge=2),
    ]
    edges = [
        Edge(0, 0, 1, parent, np.full(n_parent, r_parent)),
        Edge(1, 1, 2, left, np.full(n_child, r_left)),
        Edge(2, 1, 3, right, np.full(n_child, r_right)),
    ]
    return CenterlineGraph(shape=(n_parent + n_child + 5, 101), pixel_pitch_um=6.0, trees=[Tree(root, verts, edges)])


@pytest.fixture
def tube():
    return tube_graph()


@pytest.fixture
def ygraph():
    return y_graph()


@pytest.fixture(scope="session")
def small_tree():
    return generate_tree(SynthSpec(depth=3, seed=3, asymmetry=0.8))


def bar_mask(shape, rows, cols):
    grid = np.zeros(shape, dtype=bool)
    grid[rows[0] : rows[1], cols[0] : cols[1]] = True
    return grid


# -- acceptance reporting: one line per criterion in the terminal summary ------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not (rep.skipped or rep.failed)):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "status": [], "notes": []})
    entry["status"].append("SKIP" if rep.skipped else "FAIL" if rep.failed else "PASS")
    entry["notes"] += [str(v) for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        st = e["status"]
        status = "FAIL" if "FAIL" in st else "SKIP" if all(s == "SKIP" for s in st) else "PASS"
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {n} [{status}] {e['title']}" + (f" ({notes})" if notes else ""))
