import numpy as np
import pytest

from fkd.graph import Graph
from fkd.teachers import SimplifiedTeacherParams, SpatialTeacherParams, simplified_teacher_forward, spatial_teacher_forward


def random_graph(rng, n, p=0.3, d0=3, c=2, connected=True):
    """Erdős–Rényi graph; a path is overlaid when ``connected`` so no node is isolated."""
    A = np.triu(rng.random((n, n)) < p, 1)
    if connected:
        A[np.arange(n - 1), np.arange(1, n)] = True
    edges = np.argwhere(A)
    y = np.arange(n) % c
    return Graph(n, edges, rng.normal(size=(n, d0)), y, c)


def fd_gradient(f, x, step=1e-5):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + step
        hi = f()
        x[idx] = old - step
        lo = f()
        x[idx] = old
        g[idx] = (hi - lo) / (2 * step)
    return g


def max_rel_error(a, b, atol=1e-7):
    """Largest |a - b| / max(|a|, |b|) over entries whose absolute error exceeds ``atol``."""
    err = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    rel = np.divide(err, scale, out=np.zeros_like(err), where=scale > 0)
    rel[err <= atol] = 0.0
    return float(rel.max()) if rel.size else 0.0


def linear_spatial(rng, ba, dims, beta):
    """Spatial teacher with weights ~ U(-beta, beta) and its linear forward."""
    m = SpatialTeacherParams.init(rng, dims, ba.keys)
    for k in m.params:
        m.params[k] = rng.uniform(-beta, beta, size=m.params[k].shape)
    return m, (lambda X: spatial_teacher_forward(m, ba, X, linear=True)[0])


def linear_simplified(rng, ba, d0, c, power, beta):
    """Simplified teacher with weights ~ U(-beta, beta) and its forward."""
    m = SimplifiedTeacherParams.init(rng, d0, c, ba.keys, power)
    for k in m.params:
        m.params[k] = rng.uniform(-beta, beta, size=m.params[k].shape)
    return m, (lambda X: simplified_teacher_forward(m, ba, X)[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_node():
    return Graph(2, [(0, 1)], np.array([[1.0], [-1.0]]), [0, 1], 2)


@pytest.fixture
def triangle():
    return Graph(3, [(0, 1), (1, 2), (0, 2)], np.eye(3), [0, 0, 1], 2)


ACCEPTANCE = {}


def report(criterion, ok, detail):
    """Record one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
