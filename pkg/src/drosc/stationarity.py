"""MPEC stationarity for programs with linear complementarity constraints.

For the lower-level problem ``min_y G(y) s.t. 0 <= y _|_ My + q >= 0`` a point
is W-stationary when multipliers ``(lam, mu)`` satisfy

    grad_y G - lam - M^T mu = 0,   lam_i = 0 on I+0,   mu_i = 0 on I0+,

and C-, M- and S-stationary when in addition the biactive pairs obey the
usual sign conditions. The classes are nested: S => M => C => W.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

TOL_ACT = 1e-7
TOL_SIGN = 1e-8
KKT_TOL = 1e-6
LICQ_TOL = 1e-10
CLASSES = ("none", "W", "C", "M", "S")
_MAX_ENUM_BIACTIVE = 8


@dataclass(frozen=True)
class IndexPartition:
    plus_zero: tuple[int, ...]
    zero_plus: tuple[int, ...]
    zero_zero: tuple[int, ...]
    tol_act: float = TOL_ACT

    def __post_init__(self):
        sets = [set(self.plus_zero), set(self.zero_plus), set(self.zero_zero)]
        total = sum(len(s) for s in sets)
        union = set().union(*sets)
        if len(union) != total:
            raise ValueError("index sets of a partition must be disjoint")
        if union != set(range(total)):
            raise ValueError("index sets must cover 0..m-1")

    @property
    def m(self) -> int:
        return len(self.plus_zero) + len(self.zero_plus) + len(self.zero_zero)

    def to_dict(self):
        return {"I+0": list(self.plus_zero), "I0+": list(self.zero_plus),
                "I00": list(self.zero_zero)}

    @classmethod
    def from_dict(cls, d, tol_act=TOL_ACT):
        return cls(tuple(d["I+0"]), tuple(d["I0+"]), tuple(d["I00"]), tol_act)


def classify_indices(y, w, tol_act: float = TOL_ACT) -> IndexPartition:
    """Split indices into I+0, I0+ and I00 using the activity tolerance."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if y.shape != w.shape:
        raise ValueError("y and w must have the same shape")
    ypos = y > tol_act
    wpos = w > tol_act
    bad = np.flatnonzero(ypos & wpos)
    if bad.size:
        raise ValueError(f"non-complementary point: y_i and w_i both exceed "
                         f"{tol_act:g} at indices {bad.tolist()}")
    return IndexPartition(tuple(np.flatnonzero(ypos).tolist()),
                          tuple(np.flatnonzero(wpos).tolist()),
                          tuple(np.flatnonzero(~ypos & ~wpos).tolist()),
                          tol_act)


@dataclass(frozen=True, eq=False)
class MultiplierPair:
    lam: np.ndarray
    mu: np.ndarray
    kkt_residual: float


def _free_columns(M, partition):
    """Columns of the multiplier system for the unknowns that are not fixed to zero."""
    m = M.shape[0]
    lam_idx = sorted(partition.zero_plus + partition.zero_zero)
    mu_idx = sorted(partition.plus_zero + partition.zero_zero)
    A = np.hstack([np.eye(m)[:, lam_idx], M.T[:, mu_idx]])
    return A, lam_idx, mu_idx


def recover_multipliers(grad_y, M, partition: IndexPartition) -> MultiplierPair:
    """Minimum-norm multipliers of ``grad_y - lam - M^T mu = 0``.

    ``lam`` vanishes on I+0 and ``mu`` on I0+ exactly; the reported
    ``kkt_residual`` is the max-norm residual of the equation.
    """
    g = np.asarray(grad_y, dtype=float)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    m = g.shape[0]
    A, lam_idx, mu_idx = _free_columns(M, partition)
    lam = np.zeros(m)
    mu = np.zeros(m)
    if A.shape[1]:
        z = np.linalg.lstsq(A, g, rcond=None)[0]
        lam[lam_idx] = z[: len(lam_idx)]
        mu[mu_idx] = z[len(lam_idx):]
    res = float(np.max(np.abs(g - lam - M.T @ mu), initial=0.0))
    return MultiplierPair(lam, mu, res)


def _pair_class(lam, mu, biactive, tol):
    if not biactive:
        return "S"
    li, mi = lam[list(biactive)], mu[list(biactive)]
    if np.all(li >= -tol) and np.all(mi >= -tol):
        return "S"
    m_ok = ((li > -tol) & (mi > -tol)) | (np.abs(li) <= tol) | (np.abs(mi) <= tol)
    if np.all(m_ok):
        return "M"
    if np.all(li * mi >= -tol):
        return "C"
    return "W"


def _feasible(rows_le, rhs_le, nvar):
    """LP feasibility of ``rows_le @ t <= rhs_le`` with ``t`` free."""
    if not rows_le:
        return True
    A = np.array(rows_le)
    b = np.array(rhs_le)
    r = linprog(np.zeros(nvar), A_ub=A, b_ub=b, bounds=[(None, None)] * nvar,
                method="highs")
    return r.status == 0


def _attainable(cls, z0, N, biactive_slots, tol):
    """Whether some ``z0 + N t`` satisfies the sign conditions of ``cls``."""
    nvar = N.shape[1]
    # per biactive index: alternative constraint groups of (coordinate, sense);
    # sense +1: coord >= -tol, -1: coord <= tol, 0: |coord| <= tol
    if cls == "S":
        options = [[[(lp, 1), (mp, 1)]] for lp, mp in biactive_slots]
    elif cls == "M":
        options = [[[(lp, 1), (mp, 1)], [(lp, 0)], [(mp, 0)]] for lp, mp in biactive_slots]
    elif cls == "C":
        options = [[[(lp, 1), (mp, 1)], [(lp, -1), (mp, -1)]] for lp, mp in biactive_slots]
    else:
        return True
    for choice in itertools.product(*options):
        rows, rhs = [], []
        for group in choice:
            for coord, sense in group:
                a, c = N[coord], z0[coord]
                if sense >= 0:   # z >= -tol  <=>  -a t <= c + tol
                    rows.append(-a)
                    rhs.append(c + tol)
                if sense <= 0:   # z <= tol   <=>   a t <= tol - c
                    rows.append(a)
                    rhs.append(tol - c)
        if _feasible(rows, rhs, nvar):
            return True
    return False


def classify_stationarity(mult: MultiplierPair, partition: IndexPartition,
                          tol_sign: float = TOL_SIGN, *, grad_y=None, M=None,
                          kkt_tol: float = KKT_TOL) -> str:
    """Strongest stationarity class (``"S"``, ``"M"``, ``"C"``, ``"W"`` or ``"none"``).

    Without ``grad_y``/``M`` the sign conditions are evaluated on ``mult``
    only. When both are given, the whole affine family of multipliers solving
    the stationarity equation is searched (one small LP per sign pattern on
    the biactive set), so a class is reported whenever *some* multiplier pair
    attains it.
    """
    if not mult.kkt_residual <= kkt_tol:
        return "none"
    biactive = tuple(partition.zero_zero)
    pair = _pair_class(mult.lam, mult.mu, biactive, tol_sign)
    if grad_y is None or M is None or not biactive or pair == "S":
        return pair
    if len(biactive) > _MAX_ENUM_BIACTIVE:
        return pair
    M = np.atleast_2d(np.asarray(M, dtype=float))
    g = np.asarray(grad_y, dtype=float)
    A, lam_idx, mu_idx = _free_columns(M, partition)
    z0 = np.linalg.lstsq(A, g, rcond=None)[0]
    N = scipy.linalg.null_space(A)
    if N.shape[1] == 0:
        return pair
    slots = [(lam_idx.index(i), len(lam_idx) + mu_idx.index(i)) for i in biactive]
    for cls in ("S", "M", "C"):
        if cls == pair:
            return pair
        if _attainable(cls, z0, N, slots, tol_sign):
            return cls
    return pair


def stronger_or_equal(a: str, b: str) -> bool:
    return CLASSES.index(a) >= CLASSES.index(b)


def _licq_family(M, partition, variant):
    m = M.shape[0]
    eye = np.eye(m)
    vecs = [eye[i] for i in sorted(partition.zero_plus + partition.zero_zero)]
    for i in sorted(partition.plus_zero + partition.zero_zero):
        vecs.append(M[i] + eye[i] if variant == "shifted" else M[i].copy())
    return np.array(vecs).reshape(len(vecs), m)


def check_mpec_licq(M, partition: IndexPartition, variant: str = "shifted") -> bool:
    """Linear independence of the active complementarity gradients.

    ``variant="shifted"`` uses the family ``{e_i : I0+ u I00} u {M_i + e_i : I+0 u I00}``;
    ``variant="row"`` replaces ``M_i + e_i`` by the row ``M_i`` alone.
    """
    if variant not in ("shifted", "row"):
        raise ValueError(f"unknown variant {variant!r}")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    V = _licq_family(M, partition, variant)
    if V.shape[0] == 0:
        return True
    if V.shape[0] > V.shape[1]:
        return False
    R = scipy.linalg.qr(V.T, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(R))
    return bool(np.all(diag > LICQ_TOL * max(1.0, diag[0])))


@dataclass
class StationarityCertificate:
    partitions: list[IndexPartition]
    multipliers: list[MultiplierPair]
    klass: str
    licq: bool
    licq_row_variant: bool
    res_x: float
    res_p: float
    inner_residual: float
    feasible: bool
    tol: float
    sample_classes: list[str] = field(default_factory=list)

    @property
    def kkt_residual(self) -> float:
        return max((mp.kkt_residual for mp in self.multipliers), default=0.0)

    @property
    def passed(self) -> bool:
        return (self.feasible and self.res_x <= self.tol and self.res_p <= self.tol
                and self.inner_residual <= self.tol and self.klass != "none")

    def to_dict(self):
        return {
            "class": self.klass,
            "licq": self.licq,
            "licq_row_variant": self.licq_row_variant,
            "res_x": self.res_x,
            "res_p": self.res_p,
            "kkt_residual": self.kkt_residual,
            "inner_residual": self.inner_residual,
            "feasible": self.feasible,
            "passed": self.passed,
            "tol": self.tol,
            "partitions": [pt.to_dict() for pt in self.partitions],
            "sample_classes": list(self.sample_classes),
        }


def certify_block_stationarity(model, x, p, tol: float = 1e-4, cfg=None,
                               tol_act: float = TOL_ACT) -> StationarityCertificate:
    """Check the block-coordinatewise stationarity system at ``(x, p)``.

    ``res_x = ||x - proj_X(x - grad_x G)||`` and
    ``res_p = ||p - proj_Pk(p + grad_p G)||``. When the model exposes its
    per-sample complementarity blocks, each block's partition, multipliers
    and MPEC class are recovered as well; the reported class is the weakest
    over samples.
    """
    from .ambiguity import member, project_ambiguity
    from .minimax import SolverConfig, grad_x, grad_p

    cfg = cfg or SolverConfig()
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    lo, hi = model.lower, model.upper
    feasible = bool(np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12)
                    and member(model.samples, model.ball, p, slack=1e-8))
    g = grad_x(model, x, p, cfg)
    res_x = float(np.linalg.norm(x - np.clip(x - g, lo, hi)))
    gp = grad_p(model, x, p)
    proj = project_ambiguity(model.samples, model.ball, p + gp)
    res_p = float(np.linalg.norm(p - proj))

    partitions, mults, classes = [], [], []
    inner = 0.0
    licq = licq_row = True
    blocks = getattr(model, "lcp_blocks", None)
    if blocks is not None:
        for inst, sol, gy in blocks(x, p):
            inner = max(inner, sol.residual)
            part = classify_indices(sol.y, sol.w, tol_act)
            mp = recover_multipliers(gy, inst.M, part)
            partitions.append(part)
            mults.append(mp)
            classes.append(classify_stationarity(mp, part, grad_y=gy, M=inst.M))
            licq = licq and check_mpec_licq(inst.M, part)
            licq_row = licq_row and check_mpec_licq(inst.M, part, "row")
    klass = min(classes, key=CLASSES.index) if classes else "S"
    return StationarityCertificate(partitions, mults, klass, licq, licq_row, res_x,
                                   res_p, inner, feasible, tol, classes)
