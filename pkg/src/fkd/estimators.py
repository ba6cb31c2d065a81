"""scikit-learn style estimators over :class:`~fkd.graph.Graph` inputs.

Node classification here is transductive: ``fit(graph, y)`` takes one label
per node with ``-1`` marking unlabeled nodes (the sklearn semi-supervised
convention), and ``predict(graph)`` returns one label per node.
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .context import prepare_context
from .graph import Graph, SplitMasks
from .students import StudentConfig, fmlp_o_forward, fmlp_s_forward, train_student
from .teachers import (
    EnergyPerturbation,
    TeacherConfig,
    simplified_teacher_forward,
    spatial_teacher_forward,
    spectral_teacher_forward,
    train_teacher,
)


def _check_graph(graph):
    if not isinstance(graph, Graph):
        raise TypeError(f"expected a fkd.graph.Graph, got {type(graph).__name__}")
    return graph


def _labels_and_masks(graph, y, val_mask):
    y = graph.y if y is None else column_or_1d(np.asarray(y), warn=True).astype(np.int64)
    if y.shape[0] != graph.n:
        raise ValueError(f"y has {y.shape[0]} entries, graph has {graph.n} nodes")
    labeled = y >= 0
    if val_mask is None:
        val = labeled.copy()
        train = labeled.copy()
    else:
        val = np.asarray(val_mask, dtype=bool) & labeled
        train = labeled & ~val
    if not train.any():
        raise ValueError("no labeled training nodes")
    return np.where(labeled, y, 0), SplitMasks(train, val, np.zeros(graph.n, dtype=bool)), labeled


class _GraphClassifier(ClassifierMixin, BaseEstimator):
    _l_max = 2

    def _context(self, graph):
        key = (graph.structure_hash(), id(graph.X))
        if getattr(self, "_ctx_key", None) == key:
            return self._ctx
        ctx = prepare_context(graph, J=self.J, mode=self.framelet_mode, degree=self.degree, l_max=self._needed_power())
        self._ctx_key, self._ctx = key, ctx
        return ctx

    def _needed_power(self):
        return 2

    def _n_classes(self, graph, y):
        return int(graph.c or (y.max() + 1))

    def predict(self, graph):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(graph), axis=1)]

    def score(self, graph, y=None, sample_weight=None):
        """Accuracy over nodes with a label >= 0."""
        graph = _check_graph(graph)
        y = graph.y if y is None else np.asarray(y)
        mask = y >= 0
        pred = self.predict(graph)
        w = None if sample_weight is None else np.asarray(sample_weight)[mask]
        return float(np.average(pred[mask] == y[mask], weights=w))


class _TeacherClassifier(_GraphClassifier):
    _kind = None

    def _config(self):
        raise NotImplementedError

    def fit(self, graph, y=None, val_mask=None):
        graph = _check_graph(graph)
        y_full, masks, _ = _labels_and_masks(graph, y, val_mask)
        ctx = self._context(graph)
        self.result_ = train_teacher(ctx, masks, self._config(), y=y_full)
        self.model_ = self.result_.model
        self.classes_ = np.arange(self._n_classes(graph, y_full))
        self.history_ = self.result_.history
        self.n_nodes_ = graph.n
        return self

    def predict_proba(self, graph):
        check_is_fitted(self, "model_")
        graph = _check_graph(graph)
        return self._forward(self._context(graph), graph.X)


class SpatialFrameletClassifier(_TeacherClassifier):
    """Spatial framelet teacher: Σ_band A_band H W per layer, ReLU between layers."""

    def __init__(self, depth=2, hidden=64, J=1, framelet_mode="chebyshev", degree=10, eps=0.0, dropout=0.0,
                 lr=0.01, weight_decay=0.01, epochs=200, random_state=0):
        self.depth = depth
        self.hidden = hidden
        self.J = J
        self.framelet_mode = framelet_mode
        self.degree = degree
        self.eps = eps
        self.dropout = dropout
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.random_state = random_state

    def _config(self):
        return TeacherConfig("spatial", self.depth, self.hidden, self.lr, self.weight_decay, self.epochs,
                             self.random_state, self.dropout, self.eps, 0.0)

    def _forward(self, ctx, X):
        return spatial_teacher_forward(self.model_, ctx.ba, X, EnergyPerturbation(self.eps, 0.0))[1]


class SimplifiedFrameletClassifier(_TeacherClassifier):
    """Linearized framelet teacher: Σ_band A_band^power X W."""

    def __init__(self, power=2, J=1, framelet_mode="chebyshev", degree=10, eps_s=0.0, lr=0.01,
                 weight_decay=0.01, epochs=200, random_state=0):
        self.power = power
        self.J = J
        self.framelet_mode = framelet_mode
        self.degree = degree
        self.eps_s = eps_s
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.random_state = random_state

    def _needed_power(self):
        return max(2, self.power)

    def _config(self):
        return TeacherConfig("simplified", self.power, 1, self.lr, self.weight_decay, self.epochs,
                             self.random_state, 0.0, 0.0, self.eps_s)

    def _forward(self, ctx, X):
        return simplified_teacher_forward(self.model_, ctx.ba, X, EnergyPerturbation(0.0, self.eps_s))[1]


class SpectralFrameletClassifier(_TeacherClassifier):
    """Spectral framelet teacher with learnable per-band diagonal filters."""

    def __init__(self, depth=2, hidden=64, J=1, framelet_mode="chebyshev", degree=10, dropout=0.0, lr=0.01,
                 weight_decay=0.01, epochs=200, random_state=0):
        self.depth = depth
        self.hidden = hidden
        self.J = J
        self.framelet_mode = framelet_mode
        self.degree = degree
        self.dropout = dropout
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.random_state = random_state

    def _config(self):
        return TeacherConfig("spectral", self.depth, self.hidden, self.lr, self.weight_decay, self.epochs,
                             self.random_state, self.dropout, 0.0, 0.0)

    def _forward(self, ctx, X):
        if ctx.graph.n != self.n_nodes_:
            raise ValueError("a spectral teacher only applies to graphs with the node count it was fitted on")
        return spectral_teacher_forward(self.model_, ctx.fs, X)[1]


class FMLPClassifier(_GraphClassifier):
    """FMLP student distilled from a framelet teacher.

    ``teacher`` may be None (a default teacher matching ``variant`` is fitted
    first), an unfitted or fitted teacher estimator, or an (n, c) array of
    teacher probabilities. With ``lam=1`` no teacher is needed.
    """

    def __init__(self, variant="O", teacher=None, d_enc=64, lam=0.5, depth=2, J=1, framelet_mode="chebyshev",
                 degree=10, lr=0.01, weight_decay=0.01, epochs=200, random_state=0):
        self.variant = variant
        self.teacher = teacher
        self.d_enc = d_enc
        self.lam = lam
        self.depth = depth
        self.J = J
        self.framelet_mode = framelet_mode
        self.degree = degree
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.random_state = random_state

    def _needed_power(self):
        return max(2, self.depth)

    def _teacher_probs(self, graph, y, val_mask):
        if self.lam == 1.0 and self.teacher is None:
            return None
        t = self.teacher
        if isinstance(t, np.ndarray):
            return t
        if t is None:
            common = dict(J=self.J, framelet_mode=self.framelet_mode, degree=self.degree, lr=self.lr,
                          weight_decay=self.weight_decay, epochs=self.epochs, random_state=self.random_state)
            t = (SpatialFrameletClassifier(depth=self.depth, **common) if self.variant == "O"
                 else SimplifiedFrameletClassifier(power=self.depth, **common))
        if not hasattr(t, "model_"):
            t = clone(t).fit(graph, y, val_mask)
        self.teacher_ = t
        return t.predict_proba(graph)

    def fit(self, graph, y=None, val_mask=None):
        graph = _check_graph(graph)
        y_full, masks, _ = _labels_and_masks(graph, y, val_mask)
        probs = self._teacher_probs(graph, y, val_mask)
        ctx = self._context(graph)
        cfg = StudentConfig(self.variant, self.d_enc, self.lam, self.lr, self.weight_decay, self.epochs,
                            self.random_state, rounds=self.depth, power=self.depth)
        self.result_ = train_student(ctx, masks, probs, cfg, y=y_full)
        self.model_ = self.result_.model
        self.alpha_summary_ = self.result_.alpha_summary
        self.n_nodes_ = graph.n
        self.history_ = self.result_.history
        self.classes_ = np.arange(self._n_classes(graph, y_full))
        return self

    def predict_proba(self, graph):
        check_is_fitted(self, "model_")
        graph = _check_graph(graph)
        ctx = self._context(graph)
        if graph.n != self.n_nodes_:
            raise ValueError(f"student was fitted on {self.n_nodes_} nodes; its band encoders take n-dim rows")
        if self.variant == "O":
            return fmlp_o_forward(self.model_, ctx.ba, graph.X)[0]
        return fmlp_s_forward(self.model_, ctx.ba, graph.X, self.depth)[0]
