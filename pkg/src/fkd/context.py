"""Per-graph precomputation shared by teachers, students and analysis."""
from dataclasses import dataclass

from .framelet import band_adjacencies, build_framelet
from .graph import normalized_operators


@dataclass(frozen=True, eq=False)
class GraphContext:
    graph: object
    ops: object
    fs: object
    ba: object

    @property
    def n(self):
        return self.graph.n


def prepare_context(graph, J=1, mode="chebyshev", degree=10, l_max=2):
    """Operators, framelet system and band adjacencies (powers up to ``l_max``)."""
    ops = normalized_operators(graph)
    fs = build_framelet(ops, J=J, mode=mode, degree=degree)
    return GraphContext(graph, ops, fs, band_adjacencies(fs, ops, l_max=l_max))
