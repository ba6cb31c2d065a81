"""Dirichlet energies, framelet energy decomposition and sensitivity bounds."""
import csv
from dataclasses import dataclass, field

import numpy as np


def _check_signal(H, n):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    if H.ndim != 2 or H.shape[0] != n:
        raise ValueError(f"signal must have {n} rows, got shape {H.shape}")
    return H


def dirichlet_energy(H, ops):
    """½ tr(H^T L̂ H)."""
    H = _check_signal(H, ops.L_hat.shape[0])
    return 0.5 * float(np.sum(H * (ops.L_hat @ H)))


@dataclass
class EnergyReport:
    total: float
    per_band: dict
    mode: str = "framelet"
    perturbed: dict = field(default_factory=dict)  # eps -> perturbed total

    @property
    def band_sum(self):
        return float(sum(self.per_band.values()))

    def rows(self, graph_id="graph"):
        """CSV rows (graph_id, mode, band_r, band_j, value); the total uses band -1, -1."""
        out = [(graph_id, self.mode, -1, -1, self.total)]
        out += [(graph_id, self.mode, r, j, v) for (r, j), v in self.per_band.items()]
        out += [(graph_id, f"perturbed({eps:g})", -1, -1, v) for eps, v in self.perturbed.items()]
        return out


def band_energies(fs, H, ops, eps=()):
    """E_band = ½ tr((W H)^T L̂ (W H)) per band; ``total`` is E(H) of the raw signal."""
    H = _check_signal(H, fs.n)
    per = {key: dirichlet_energy(fs.W[key] @ H, ops) for key in fs.index_set}
    rep = EnergyReport(dirichlet_energy(H, ops), per)
    for e in eps:
        rep.perturbed[float(e)] = perturbed_energy(fs, H, ops, e)
    return rep


def perturbed_energy(fs, H, ops, eps):
    """½ Σ_band tr((W H)^T (L̂ ± eps I)(W H)); + on the low pass, - on high passes."""
    H = _check_signal(H, fs.n)
    total = 0.0
    for i, key in enumerate(fs.index_set):
        WH = fs.W[key] @ H
        s = eps if i == 0 else -eps
        total += dirichlet_energy(WH, ops) + 0.5 * s * float(np.sum(WH * WH))
    return total


def simplified_energy(fs, H, ops, l):
    """Energy of the simplified framelet output in the spectral domain:
    ½ Σ_i λ_i ‖ĥ_i‖² Σ_band m_band(λ_i)^{2l}."""
    if fs.mode != "exact" or fs.multipliers is None:
        raise ValueError("simplified_energy needs an exact-mode framelet system (spectral multipliers)")
    if l < 1:
        raise ValueError("l must be >= 1")
    H = _check_signal(H, fs.n)
    spec = fs.spectrum
    coef = spec.U @ H
    weight = sum(m ** (2 * l) for m in fs.multipliers.values())
    return 0.5 * float(np.sum(spec.lam * weight * np.sum(coef * coef, axis=1)))


# -------------------------------------------------------------- sensitivity


def sensitivity_bound(ba, beta, d, layers, mode="spatial"):
    """Entrywise upper bounds on |∂h_{v,q} / ∂x_{u,p}| for every node pair (v, u).

    ``spatial``: (dβ)^L (Σ_band |A_band|)^L for an L-layer linear spatial teacher.
    ``simplified``: d β Σ_band |A_band|^L for power L.
    Absolute values are entrywise and taken before the matrix power.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    absA = [np.abs(A) for A in ba.A_band.values()]
    if mode == "spatial":
        S = sum(absA)
        return (d * beta) ** layers * np.linalg.matrix_power(S, layers)
    if mode == "simplified":
        return d * beta * sum(np.linalg.matrix_power(A, layers) for A in absA)
    raise ValueError(f"unknown sensitivity mode {mode!r}")


def model_constants(model):
    """(d, β): largest feature width and largest |weight| of a spatial or simplified teacher."""
    weights = [v for k, v in model.params.items() if k.endswith(".W")]
    beta = float(max(np.max(np.abs(W)) for W in weights))
    if hasattr(model, "dims"):
        return int(max(model.dims)), beta
    return int(weights[0].shape[0]), beta


@dataclass
class SensitivityProbe:
    u: int
    v: int
    p: int
    q: int
    layers: int
    empirical: float
    bound: float

    @property
    def ok(self):
        return self.empirical <= self.bound + 1e-6


def sensitivity_empirical(forward, X, u, v, p, q, step=1e-5, check=True):
    """|∂ out[v, q] / ∂ X[u, p]| by central differences.

    ``forward`` must be affine in ``X``; the estimate is cross-checked against
    the exact unit-perturbation response and a mismatch raises ValueError.
    """
    X = np.asarray(X, dtype=np.float64)
    Xp = X.copy()
    Xp[u, p] += step
    Xm = X.copy()
    Xm[u, p] -= step
    fd = (forward(Xp)[v, q] - forward(Xm)[v, q]) / (2.0 * step)
    if check:
        Xe = X.copy()
        Xe[u, p] += 1.0
        exact = forward(Xe)[v, q] - forward(X)[v, q]
        if abs(fd - exact) > 1e-5 * (1.0 + abs(exact)):
            raise ValueError(f"finite difference {fd} disagrees with exact {exact}; is the model linear?")
    return abs(float(fd))


def jacobian_block(forward, X, p, q):
    """Exact |∂ out[:, q] / ∂ X[:, p]| for an affine ``forward`` (n x n, rows v, cols u)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    base = forward(X)[:, q]
    J = np.empty((n, n))
    for u in range(n):
        Xe = X.copy()
        Xe[u, p] += 1.0
        J[:, u] = forward(Xe)[:, q] - base
    return np.abs(J)


def write_energy_csv(reports, path):
    """``reports`` maps graph_id -> EnergyReport."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["graph_id", "mode", "band_r", "band_j", "value"])
        for gid, rep in reports.items():
            for row in rep.rows(gid):
                w.writerow(list(row[:4]) + [repr(float(row[4]))])


def write_sensitivity_csv(probes, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "v", "p", "q", "layers", "empirical", "bound"])
        for pr in probes:
            w.writerow([pr.u, pr.v, pr.p, pr.q, pr.layers, repr(pr.empirical), repr(pr.bound)])


__all__ = [
    "EnergyReport",
    "SensitivityProbe",
    "band_energies",
    "dirichlet_energy",
    "jacobian_block",
    "model_constants",
    "perturbed_energy",
    "sensitivity_bound",
    "sensitivity_empirical",
    "simplified_energy",
    "write_energy_csv",
    "write_sensitivity_csv",
]
