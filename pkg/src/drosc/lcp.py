"""Linear complementarity problems: regularization, solvers and a brute-force oracle.

An LCP(M, q) asks for ``y >= 0`` with ``w = My + q >= 0`` and ``y . w = 0``.
Positive-definite instances (symmetric part PD) have a unique solution, which
:func:`solve_pd_lcp` computes with a damped semismooth Newton method on the
minimum map, falling back to Lemke's complementary pivoting when Newton stalls.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import LcpSolveError, NotPositiveDefiniteError
from .stationarity import TOL_ACT, IndexPartition, classify_indices

SOLVE_TOL = 1e-10
MAX_NEWTON = 200
STALL_ITERS = 5
MONOTONE_TOL = 1e-10
FEAS_TOL = 1e-9
BRUTE_FORCE_MAX_M = 12


def _sym_eigmin(M):
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


@dataclass(frozen=True, eq=False)
class LcpInstance:
    """Data ``(M, q)`` of a linear complementarity problem.

    ``monotone`` and ``positive_definite`` are tags; a tag is checked against
    the smallest eigenvalue of the symmetric part when the instance is built.
    """

    M: np.ndarray
    q: np.ndarray
    monotone: bool = False
    positive_definite: bool = False

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"M must be square, got shape {M.shape}")
        if q.shape != (M.shape[0],):
            raise ValueError(f"q has shape {q.shape}, expected ({M.shape[0]},)")
        M.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "q", q)
        if self.monotone or self.positive_definite:
            lam = _sym_eigmin(M)
            if self.monotone and lam < -MONOTONE_TOL:
                raise ValueError(f"instance tagged monotone but eigmin(sym M) = {lam:.3e}")
            if self.positive_definite and lam <= 0.0:
                raise NotPositiveDefiniteError(
                    f"instance tagged positive definite but eigmin(sym M) = {lam:.3e}")

    @property
    def m(self) -> int:
        return self.q.shape[0]

    def slack(self, y):
        return self.M @ y + self.q

    def to_dict(self):
        return {"M": self.M.tolist(), "q": self.q.tolist()}

    @classmethod
    def from_dict(cls, data, **tags):
        return cls(np.asarray(data["M"], dtype=float), np.asarray(data["q"], dtype=float), **tags)


@dataclass(frozen=True, eq=False)
class LcpSolution:
    y: np.ndarray
    w: np.ndarray
    residual: float
    partition: IndexPartition | None = None
    iterations: int = 0
    method: str = field(default="newton", compare=False)

    def to_dict(self):
        out = {"y": self.y.tolist(), "w": self.w.tolist(), "residual": self.residual}
        if self.partition is not None:
            out["partition"] = self.partition.to_dict()
        return out


def dump_json(inst: LcpInstance, sol: LcpSolution | None = None) -> dict:
    """Debug dump with keys M (row-major), q and, when given, y, w, residual."""
    out = inst.to_dict()
    if sol is not None:
        out.update(y=sol.y.tolist(), w=sol.w.tolist(), residual=sol.residual)
    return out


def regularize(inst: LcpInstance, eps: float) -> LcpInstance:
    """Return the Tikhonov-regularized instance ``LCP(M + eps*I, q)``."""
    if not eps > 0:
        raise ValueError(f"regularization parameter must be positive, got {eps!r}")
    M = inst.M + eps * np.eye(inst.m)
    return LcpInstance(M, inst.q, monotone=inst.monotone or inst.positive_definite,
                       positive_definite=inst.monotone or inst.positive_definite)


def natural_residual(inst: LcpInstance, y) -> float:
    """``max_i |min(y_i, (My + q)_i)|``; zero exactly at solutions."""
    y = np.asarray(y, dtype=float)
    if y.shape != (inst.m,):
        raise ValueError(f"y has shape {y.shape}, expected ({inst.m},)")
    if inst.m == 0:
        return 0.0
    return float(np.max(np.abs(np.minimum(y, inst.slack(y)))))


def _make_solution(inst, y, iterations, method):
    y = np.where(np.abs(y) < 1e-300, 0.0, y)
    w = inst.slack(y)
    res = natural_residual(inst, y)
    try:
        part = classify_indices(y, w, TOL_ACT)
    except ValueError:
        part = None
    y.setflags(write=False)
    w.setflags(write=False)
    return LcpSolution(y=y, w=w, residual=res, partition=part,
                       iterations=iterations, method=method)


def _polish(inst, y):
    """Re-solve the linear system of the active set identified at ``y``."""
    w = inst.slack(y)
    basic = y > w
    z = np.zeros(inst.m)
    if basic.any():
        Mb = inst.M[np.ix_(basic, basic)]
        try:
            z[basic] = np.linalg.solve(Mb, -inst.q[basic])
        except np.linalg.LinAlgError:
            return y
    return z


def lemke(inst: LcpInstance, max_pivots: int | None = None) -> np.ndarray:
    """Lemke's complementary pivoting with covering vector ``e``.

    Ties in the ratio test are broken lexicographically, which prevents
    cycling on degenerate problems. Terminates on a solution for P-matrices.
    """
    m = inst.m
    q = inst.q
    if m == 0 or np.all(q >= 0):
        return np.zeros(m)
    max_pivots = max_pivots or 50 * (m + 1) ** 2
    # columns: w (0..m-1), z (m..2m-1), z0 (2m), rhs (2m+1)
    T = np.hstack([np.eye(m), -inst.M, -np.ones((m, 1)), q[:, None]])
    basis = list(range(m))
    z0 = 2 * m

    def pivot(row, col):
        T[row] /= T[row, col]
        for r in range(m):
            if r != row and T[r, col] != 0.0:
                T[r] -= T[r, col] * T[row]
        basis[row] = col

    row = int(np.argmin(q))
    pivot(row, z0)
    leaving = row  # w_row left the basis
    entering = m + leaving
    for _ in range(max_pivots):
        col = T[:, entering]
        cand = np.flatnonzero(col > 1e-12)
        if cand.size == 0:
            raise LcpSolveError("Lemke terminated on a secondary ray")
        # lexicographic minimum ratio over (rhs, B^{-1}) rows
        keys = np.hstack([T[cand, -1:], T[cand, :m]]) / col[cand, None]
        order = sorted(range(cand.size), key=lambda i: tuple(keys[i]))
        best = order[0]
        # prefer z0 leaving on an exact tie in the leading ratio
        for i in order:
            if keys[i, 0] > keys[best, 0] + 1e-14:
                break
            if basis[cand[i]] == z0:
                best = i
                break
        r = int(cand[best])
        out = basis[r]
        pivot(r, entering)
        if out == z0:
            y = np.zeros(m)
            for i, b in enumerate(basis):
                if m <= b < 2 * m:
                    y[b - m] = T[i, -1]
            return np.maximum(y, 0.0)
        entering = out + m if out < m else out - m
    raise LcpSolveError("Lemke pivot limit exceeded")


def solve_pd_lcp(inst: LcpInstance, tol: float = SOLVE_TOL,
                 max_iter: int = MAX_NEWTON) -> LcpSolution:
    """Solve an LCP whose matrix has a positive-definite symmetric part.

    Semismooth Newton on ``min(y, My + q)`` with Armijo damping on the merit
    ``0.5 * ||min(y, My + q)||^2``. If the residual fails to improve for five
    consecutive iterations the solve switches to :func:`lemke`. The final
    iterate is polished by re-solving its active-set system.
    """
    M, q, m = inst.M, inst.q, inst.m
    if m == 0:
        return _make_solution(inst, np.zeros(0), 0, "trivial")
    lam = _sym_eigmin(M)
    if lam <= 0.0:
        raise NotPositiveDefiniteError(
            f"solve_pd_lcp needs a positive-definite symmetric part (eigmin = {lam:.3e})")

    eye = np.eye(m)
    y = np.maximum(-q, 0.0)
    best_y, best_res = y, np.inf
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        w = M @ y + q
        phi = np.minimum(y, w)
        res = float(np.max(np.abs(phi)))
        if res < best_res * (1.0 - 1e-3):
            best_y, best_res, stall = y, res, 0
        else:
            stall += 1
        if res <= tol:
            break
        z = _polish(inst, y)
        if natural_residual(inst, z) <= tol:
            y = z
            break
        if stall >= STALL_ITERS:
            y = lemke(inst)
            sol = _make_solution(inst, _polish(inst, y), it, "lemke")
            if sol.residual > tol:
                raise LcpSolveError("Lemke fallback did not reach tolerance",
                                    sol.y, sol.residual)
            return sol
        J = np.where((y <= w)[:, None], eye, M)
        try:
            d = np.linalg.solve(J, -phi)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(J, -phi, rcond=None)[0]
        merit = 0.5 * float(phi @ phi)
        t = 1.0
        for _ in range(40):
            yt = y + t * d
            pt = np.minimum(yt, M @ yt + q)
            if 0.5 * float(pt @ pt) <= (1.0 - 2e-4 * t) * merit:
                break
            t *= 0.5
        y = y + t * d
    else:
        y = best_y

    res = natural_residual(inst, y)
    if res > tol:
        z = _polish(inst, y)
        if natural_residual(inst, z) < res:
            y = z
            res = natural_residual(inst, y)
    if res > tol:
        try:
            y = _polish(inst, lemke(inst))
        except LcpSolveError as exc:
            raise LcpSolveError("iteration limit exceeded", best_y, best_res) from exc
        res = natural_residual(inst, y)
        if res > tol:
            raise LcpSolveError("iteration limit exceeded", y, res)
        return _make_solution(inst, y, it, "lemke")
    return _make_solution(inst, y, it, "newton")


def brute_force_lcp(inst: LcpInstance, tol: float = FEAS_TOL) -> list[LcpSolution]:
    """Enumerate all ``2^m`` complementary bases and keep the feasible ones.

    Test oracle only. Singular basis systems are skipped. Duplicate solutions
    (within ``1e-8`` in the max norm) are reported once, in discovery order.
    """
    m = inst.m
    if m > BRUTE_FORCE_MAX_M:
        raise ValueError(f"brute_force_lcp supports m <= {BRUTE_FORCE_MAX_M}, got {m}")
    M, q = inst.M, inst.q
    found: list[np.ndarray] = []
    for size in range(m + 1):
        for basic in itertools.combinations(range(m), size):
            y = np.zeros(m)
            if size:
                idx = list(basic)
                Mb = M[np.ix_(idx, idx)]
                if np.linalg.cond(Mb) > 1e12:
                    continue
                y[idx] = np.linalg.solve(Mb, -q[idx])
            w = M @ y + q
            if y.min(initial=0.0) < -tol or w.min(initial=0.0) < -tol:
                continue
            if np.max(np.abs(y * w), initial=0.0) > tol:
                continue
            if any(np.max(np.abs(y - f), initial=0.0) <= 1e-8 for f in found):
                continue
            found.append(y)
    return [_make_solution(inst, y, 0, "enumeration") for y in found]


def regularization_path(inst: LcpInstance, eps_list) -> list[LcpSolution]:
    """Solve ``LCP(M + eps*I, q)`` for each ``eps`` of a decreasing list.

    The caller compares the returned iterates (or their norms) against the
    least-norm solution of the unregularized problem.
    """
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    return [solve_pd_lcp(regularize(inst, eps)) for eps in eps_list]
