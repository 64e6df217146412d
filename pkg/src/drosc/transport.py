"""Voronoi discretization and order-1 Wasserstein distances between discrete measures."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .ambiguity import SampleSet

DENSE_LP_MAX = 50
_CHUNK = 4096

for _key in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_key}", "1")


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (atoms.shape[0],):
            raise ValueError("one weight per atom is required")
        if w.min() < -1e-12 or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to one")
        if len(np.unique(atoms, axis=0)) != len(atoms):
            raise ValueError("atoms must be pairwise distinct")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", np.maximum(w, 0.0))

    @property
    def nu(self) -> int:
        return self.atoms.shape[1]

    @classmethod
    def point_mass(cls, x):
        return cls(np.atleast_2d(np.asarray(x, dtype=float)), [1.0])

    def mean(self):
        return self.weights @ self.atoms


def voronoi_assign(samples: SampleSet, x) -> np.ndarray | int:
    """Index of the nearest sample (ties go to the lowest index).

    Accepts one point or an ``(n, nu)`` array of points.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != samples.nu:
        raise ValueError("point dimension does not match the samples")
    if np.any(X < samples.lo - 1e-12) or np.any(X > samples.hi + 1e-12):
        raise ValueError("point outside the domain box")
    P = samples.points
    out = np.empty(len(X), dtype=int)
    for start in range(0, len(X), _CHUNK):
        blk = X[start:start + _CHUNK]
        d2 = ((blk[:, None, :] - P[None, :, :]) ** 2).sum(axis=2)
        out[start:start + _CHUNK] = np.argmin(d2, axis=1)
    return int(out[0]) if single else out


class FillDistance(NamedTuple):
    probe: float
    corner: float

    @property
    def value(self) -> float:
        return max(self.probe, self.corner)


def fill_distance(samples: SampleSet, probe_resolution: int = 401) -> FillDistance:
    """Largest distance from the domain box to the nearest sample.

    The maximum is taken over a uniform probe grid (``probe_resolution`` per
    axis, box corners included); the value at the box corners alone is
    reported too. For midpoint grids both coincide with the exact value.
    """
    if probe_resolution < 2:
        raise ValueError("probe_resolution must be at least 2")
    tree = cKDTree(samples.points)
    axes = [np.linspace(l, h, probe_resolution) for l, h in zip(samples.lo, samples.hi)]
    corners = np.array(np.meshgrid(*[[l, h] for l, h in zip(samples.lo, samples.hi)],
                                   indexing="ij")).reshape(samples.nu, -1).T
    corner = float(tree.query(corners)[0].max())
    mesh = np.meshgrid(*axes, indexing="ij")
    probes = np.column_stack([m.ravel() for m in mesh])
    probe = float(tree.query(probes)[0].max())
    return FillDistance(probe, corner)


def voronoi_projection(P: DiscreteDistribution, samples: SampleSet) -> DiscreteDistribution:
    """Push each atom's mass onto its Voronoi cell center; empty cells keep weight 0."""
    cells = voronoi_assign(samples, P.atoms)
    w = np.bincount(np.atleast_1d(cells), weights=P.weights, minlength=samples.k)
    return DiscreteDistribution(samples.points.copy(), w / w.sum())


def _cost(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


def _dense_lp(a, b, C):
    n, m = C.shape
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None),
                  method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"transportation LP failed: {res.message}")
    return float(res.fun)


def wasserstein(P: DiscreteDistribution, Q: DiscreteDistribution, method: str = "auto") -> float:
    """Order-1 Wasserstein distance with Euclidean ground cost.

    Solves the primal transportation problem. ``method="emd"`` uses a network
    simplex solver, ``"lp"`` a dense simplex LP; ``"auto"`` prefers the former
    and falls back to the dense LP for problems up to 50 x 50.
    """
    if P.nu != Q.nu:
        raise ValueError("distributions live in different dimensions")
    a = P.weights / P.weights.sum()
    b = Q.weights / Q.weights.sum()
    C = _cost(P.atoms, Q.atoms)
    if method == "lp":
        return _dense_lp(a, b, C)
    try:
        import ot
        val, log = ot.emd2(a, b, C, log=True, numItermax=10_000_000, return_matrix=False)
        if log.get("warning") is None:
            return float(val)
    except ImportError:
        if method == "emd":
            raise
    if len(a) <= DENSE_LP_MAX and len(b) <= DENSE_LP_MAX:
        return _dense_lp(a, b, C)
    raise RuntimeError("network simplex did not reach optimality")


def deviation(ps, qs) -> float:
    """``max_{P in ps} min_{Q in qs} W(P, Q)``."""
    ps, qs = list(ps), list(qs)
    if not ps or not qs:
        raise ValueError("deviation needs nonempty lists")
    return max(min(wasserstein(P, Q) for Q in qs) for P in ps)


def wasserstein_1d(x, wx, y, wy) -> float:
    """Closed form on the line: integral of ``|F_P - F_Q|``."""
    x, wx, y, wy = map(lambda a: np.asarray(a, dtype=float), (x, wx, y, wy))
    pts = np.concatenate([x, y])
    order = np.argsort(pts, kind="mergesort")
    pts = pts[order]
    mass = np.concatenate([wx, -wy])[order]
    cdf_gap = np.cumsum(mass)[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(pts)))


def save_csv(dist: DiscreteDistribution, path) -> None:
    header = [f"coordinate_{j + 1}" for j in range(dist.nu)] + ["weight"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for atom, w in zip(dist.atoms, dist.weights):
            writer.writerow([repr(float(v)) for v in atom] + [repr(float(w))])


def load_csv(path) -> DiscreteDistribution:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[-1].strip() != "weight":
        raise ValueError(f"{path}: last column must be 'weight'")
    data = np.array([[float(v) for v in row] for row in body if row], dtype=float)
    if data.size == 0:
        raise ValueError(f"{path}: no atoms")
    return DiscreteDistribution(data[:, :-1], data[:, -1])
