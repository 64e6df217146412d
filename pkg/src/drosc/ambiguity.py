"""Discrete moment ambiguity sets with a mean-ball constraint.

The weight set over samples ``xi^1..xi^k`` is

    Pk = {p >= 0 : sum(p) = 1, ||sum_i p_i xi^i - mu0||^2 <= eta}.

Weight vectors are plain 1-D float arrays; :func:`is_weight_vector` checks the
simplex invariants.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .errors import ConvergenceWarning, InfeasibleError

WEIGHT_TOL = 1e-10
MEMBER_SLACK = 1e-9
DYKSTRA_TOL = 1e-10
DYKSTRA_SWEEPS = 5000
BISECTION_STEPS = 200


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Scenario points inside an axis-aligned box domain."""

    points: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if pts.shape[1] != lo.shape[0] or lo.shape != hi.shape:
            raise ValueError("points and domain box dimensions disagree")
        if np.any(lo > hi):
            raise ValueError("domain box has lo > hi")
        if np.any(pts < lo - 1e-12) or np.any(pts > hi + 1e-12):
            raise ValueError("sample points must lie inside the domain box")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("sample points must be pairwise distinct")
        for a in (pts, lo, hi):
            a.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @property
    def nu(self) -> int:
        return self.points.shape[1]

    def contains(self, x, tol=1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


@dataclass(frozen=True, eq=False)
class MeanBallSet:
    mu0: np.ndarray
    eta: float

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        if not self.eta >= 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta!r}")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "eta", float(self.eta))


def is_weight_vector(p, tol=WEIGHT_TOL) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(p.ndim == 1 and p.size > 0 and p.min() >= -tol and abs(p.sum() - 1.0) <= tol)


def mean_violation(samples: SampleSet, ball: MeanBallSet, p) -> float:
    """``||Q p - mu0||^2 - eta`` (positive when the mean leaves the ball)."""
    m = np.asarray(p, dtype=float) @ samples.points
    d = m - ball.mu0
    return float(d @ d - ball.eta)


def member(samples: SampleSet, ball: MeanBallSet, p, slack: float = MEMBER_SLACK) -> bool:
    p = np.asarray(p, dtype=float)
    if p.shape != (samples.k,):
        raise ValueError(f"weight vector has shape {p.shape}, expected ({samples.k},)")
    if ball.mu0.shape != (samples.nu,):
        raise ValueError("mu0 dimension does not match the samples")
    return is_weight_vector(p) and mean_violation(samples, ball, p) <= slack


def project_simplex(z) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sorted-threshold rule)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("project_simplex expects a non-empty 1-D vector")
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, z.size + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(z - theta, 0.0)


def project_mean_ball(samples: SampleSet, ball: MeanBallSet, z,
                      steps: int = BISECTION_STEPS) -> np.ndarray:
    """Projection onto ``{p : ||Q p - mu0||^2 <= eta}``, ``Q`` the sample matrix.

    The KKT point is ``p(lam) = (I + lam Q^T Q)^{-1} (z + lam Q^T mu0)``; after
    the push-through identity ``Q p(lam) - mu0 = (I + lam G)^{-1} (Q z - mu0)``
    with ``G = Q Q^T`` (size nu x nu), so the multiplier is a scalar root of a
    decreasing function, bracketed and bisected.
    """
    z = np.asarray(z, dtype=float)
    Q = samples.points.T
    r0 = Q @ z - ball.mu0
    if r0 @ r0 <= ball.eta:
        return z.copy()
    gvals, V = np.linalg.eigh(Q @ Q.T)
    c = V.T @ r0
    gvals = np.maximum(gvals, 0.0)

    def viol(lam):
        return float(np.sum((c / (1.0 + lam * gvals)) ** 2)) - ball.eta

    def point(lam):
        # p = z - lam Q^T (I + lam G)^{-1} (Q z - mu0)
        return z - lam * (Q.T @ (V @ (c / (1.0 + lam * gvals))))

    null = gvals <= 1e-14 * max(1.0, gvals.max())
    if float(np.sum(c[null] ** 2)) > ball.eta:
        raise InfeasibleError("mean ball does not meet the span of the samples")
    if ball.eta == 0.0:
        inv = np.where(null, 0.0, 1.0 / np.where(null, 1.0, gvals))
        return z - Q.T @ (V @ (inv * c))
    lo, hi = 0.0, 1.0
    while viol(hi) > 0:
        hi *= 2.0
        if hi > 1e300:
            break
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if viol(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi or viol(hi) >= -1e-15 * ball.eta:
            break
    else:
        warnings.warn("mean-ball root find hit the bisection budget", ConvergenceWarning)
    return point(hi)


def project_ambiguity(samples: SampleSet, ball: MeanBallSet, z,
                      tol: float = DYKSTRA_TOL, max_sweeps: int = DYKSTRA_SWEEPS) -> np.ndarray:
    """Euclidean projection onto ``Pk`` by Dykstra's alternating projections.

    The returned vector lies exactly on the simplex; the mean-ball constraint
    holds to ``1e-8``, otherwise a :class:`ConvergenceWarning` reports the
    remaining violation.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (samples.k,):
        raise ValueError(f"vector has shape {z.shape}, expected ({samples.k},)")
    if member(samples, ball, z, slack=0.0):
        return z.copy()
    x = z.copy()
    p_inc = np.zeros_like(z)
    q_inc = np.zeros_like(z)
    for _ in range(max_sweeps):
        y = project_mean_ball(samples, ball, x + p_inc)
        p_inc = x + p_inc - y
        x_new = project_simplex(y + q_inc)
        q_inc = y + q_inc - x_new
        moved = np.linalg.norm(x_new - x)
        x = x_new
        if moved < tol and np.linalg.norm(x - y) < 1e-8:
            break
    x = _polish(samples, ball, z, x)
    viol = mean_violation(samples, ball, x)
    if viol > 1e-8:
        warnings.warn(f"Dykstra projection left mean-ball violation {viol:.3e}",
                      ConvergenceWarning)
    return x


def _polish(samples: SampleSet, ball: MeanBallSet, z, x, tol: float = 1e-9) -> np.ndarray:
    """Refine a Dykstra iterate by solving the KKT system on its support exactly.

    With the support ``S`` and an active ball fixed, the stationary point is
    ``p_S = A^{-1}(z_S + lam Q_S^T mu0 - tau 1)``, ``A = I + lam Q_S^T Q_S``;
    ``tau`` follows from the sum constraint and ``lam`` from the ball equation.
    The refined point replaces ``x`` only when every KKT sign condition holds.
    """
    ps = project_simplex(z)
    if mean_violation(samples, ball, ps) <= 0.0:
        return ps
    Q = samples.points.T
    S = np.flatnonzero(x > 1e-10)
    QS = Q[:, S]
    G = QS.T @ QS
    one = np.ones(len(S))

    def solve(lam):
        A = np.eye(len(S)) + lam * G
        a = np.linalg.solve(A, z[S] + lam * (QS.T @ ball.mu0))
        b = np.linalg.solve(A, one)
        tau = (a.sum() - 1.0) / b.sum()
        return a - tau * b, tau

    def viol(lam):
        r = QS @ solve(lam)[0] - ball.mu0
        return float(r @ r) - ball.eta

    if viol(0.0) <= 0.0:
        return x
    hi = 1.0
    while viol(hi) > 0.0:
        hi *= 4.0
        if hi > 1e12:
            return x
    lam = brentq(viol, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    pS, tau = solve(lam)
    if pS.min() < -tol:
        return x
    p = np.zeros_like(x)
    p[S] = np.maximum(pS, 0.0)
    p /= p.sum()
    # multipliers of the dropped coordinates must be nonnegative
    g = p - z + lam * (Q.T @ (Q @ p - ball.mu0)) + tau
    off = np.setdiff1d(np.arange(len(x)), S)
    if off.size and g[off].min() < -tol:
        return x
    if mean_violation(samples, ball, p) > 1e-12:
        return x
    return p


@dataclass(frozen=True, eq=False)
class WitnessReport:
    weights: np.ndarray
    feasible: bool
    violation: float


def slater_witness(samples: SampleSet, ball: MeanBallSet, cell_weights) -> WitnessReport:
    """Use the Voronoi cell masses of a base distribution as a candidate in ``Pk``.

    ``violation`` is ``||Q p - mu0||^2 - eta``; the candidate is feasible when
    it is at most the membership slack.
    """
    w = np.asarray(cell_weights, dtype=float)
    if not is_weight_vector(w, tol=1e-9):
        raise ValueError("cell weights must be nonnegative and sum to one")
    v = mean_violation(samples, ball, w)
    return WitnessReport(w, member(samples, ball, w), v)


def hoffman_bound(samples: SampleSet, ball: MeanBallSet, q_weights, delta: float,
                  alpha: float) -> float:
    """Moment-violation bound ``(delta/alpha) * max(0, ||E_Q[xi] - mu0|| - sqrt(eta))``.

    ``q_weights`` is a distribution over the sample points.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    mean = np.asarray(q_weights, dtype=float) @ samples.points
    gap = max(0.0, float(np.linalg.norm(mean - ball.mu0)) - np.sqrt(ball.eta))
    return float(delta) / alpha * gap


# ---------------------------------------------------------------------------
# linear maximization over Pk
# ---------------------------------------------------------------------------

def _in_ball(m, mu0, eta):
    d = m - mu0
    return np.einsum("...i,...i->...", d, d) <= eta * (1 + 1e-12) + 1e-15


def _best_on_triangles(P, c, tris, mu0, eta):
    """Maximize ``c . p`` over convex combinations of triangle vertices with mean in the ball.

    Candidates: sample points inside the ball, edge/circle crossings, and for
    each triangle the circle point in the direction of its value gradient.
    Returns ``(value, {index: weight})``.
    """
    best_val, best = -np.inf, None
    inside = np.flatnonzero(_in_ball(P, mu0, eta))
    if inside.size:
        v = inside[np.argmax(c[inside])]
        best_val, best = c[v], {int(v): 1.0}
    if len(tris) == 0:
        return best_val, best
    tris = np.asarray(tris)
    i, j, l = tris[:, 0], tris[:, 1], tris[:, 2]
    A = P[i]
    e1, e2 = P[j] - A, P[l] - A
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    good = np.abs(det) > 1e-14
    i, j, l, A, e1, e2, det = i[good], j[good], l[good], A[good], e1[good], e2[good], det[good]

    # edges: crossings with the circle ||a + s (b - a) - mu0||^2 = eta
    ea = np.concatenate([i, j, l])
    eb = np.concatenate([j, l, i])
    d = P[eb] - P[ea]
    f = P[ea] - mu0
    qa = np.einsum("ij,ij->i", d, d)
    qb = 2 * np.einsum("ij,ij->i", f, d)
    qc = np.einsum("ij,ij->i", f, f) - eta
    disc = qb * qb - 4 * qa * qc
    ok = (qa > 0) & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    for sgn in (-1.0, 1.0):
        s = np.where(ok, (-qb + sgn * sq) / (2 * np.where(ok, qa, 1.0)), -1.0)
        valid = ok & (s >= 0.0) & (s <= 1.0)
        if valid.any():
            vals = np.where(valid, (1 - s) * c[ea] + s * c[eb], -np.inf)
            t = int(np.argmax(vals))
            if vals[t] > best_val + 1e-15:
                best_val, best = vals[t], {int(ea[t]): 1.0 - s[t], int(eb[t]): s[t]}

    # circle point along each facet's value gradient, if inside the facet
    if eta > 0:
        dc1, dc2 = c[j] - c[i], c[l] - c[i]
        # solve [e1 e2]^T g = (dc1, dc2)
        gx = (dc1 * e2[:, 1] - dc2 * e1[:, 1]) / det
        gy = (e1[:, 0] * dc2 - e2[:, 0] * dc1) / det
        gn = np.hypot(gx, gy)
        nz = gn > 0
        r = np.sqrt(eta)
        mx = mu0[0] + r * gx / np.where(nz, gn, 1.0) - A[:, 0]
        my = mu0[1] + r * gy / np.where(nz, gn, 1.0) - A[:, 1]
        b1 = (mx * e2[:, 1] - my * e2[:, 0]) / det
        b2 = (e1[:, 0] * my - e1[:, 1] * mx) / det
        b0 = 1 - b1 - b2
        valid = nz & (b0 >= -1e-12) & (b1 >= -1e-12) & (b2 >= -1e-12)
        if valid.any():
            vals = np.where(valid, b0 * c[i] + b1 * c[j] + b2 * c[l], -np.inf)
            t = int(np.argmax(vals))
            if vals[t] > best_val + 1e-15:
                w = np.maximum([b0[t], b1[t], b2[t]], 0.0)
                best_val = vals[t]
                best = {int(i[t]): w[0], int(j[t]): w[1], int(l[t]): w[2]}
    return best_val, best


def _lmo_1d(t, c, lo, hi):
    """Maximize ``c . p`` with scalar positions ``t`` and mean constrained to ``[lo, hi]``."""
    order = np.lexsort((-c, t))
    ts, cs = t[order], c[order]
    # upper concave envelope (monotone chain)
    hull = []
    for idx in range(len(ts)):
        if hull and ts[hull[-1]] == ts[idx]:
            continue
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (ts[b] - ts[a]) * (cs[idx] - cs[a]) - (cs[b] - cs[a]) * (ts[idx] - ts[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(idx)
    lo, hi = max(lo, ts[0]), min(hi, ts[-1])
    if lo > hi + 1e-15:
        raise InfeasibleError("mean ball does not meet the sample hull")
    pts = [ts[h] for h in hull if lo <= ts[h] <= hi] + [lo, hi]
    best = (-np.inf, None)
    for m in pts:
        pos = np.searchsorted([ts[h] for h in hull], m)
        if pos < len(hull) and ts[hull[pos]] == m:
            cand = {order[hull[pos]]: 1.0}
        else:
            a, b = hull[pos - 1], hull[pos]
            s = (m - ts[a]) / (ts[b] - ts[a])
            cand = {order[a]: 1.0 - s, order[b]: s}
        val = sum(w * c[v] for v, w in cand.items())
        if val > best[0] + 1e-15:
            best = (val, cand)
    return best


def maximize_linear(samples: SampleSet, ball: MeanBallSet, c, default=None) -> np.ndarray:
    """Exact maximizer of ``c . p`` over ``Pk`` for one- or two-dimensional samples.

    The optimal value as a function of the mean ``m = Q p`` is the upper
    concave envelope of the lifted points ``(xi^i, c_i)``; its maximum over the
    ball is found by enumerating envelope facets. When ``c`` is constant every
    point of ``Pk`` is optimal and ``default`` (if given) is returned.
    """
    c = np.asarray(c, dtype=float)
    k, nu = samples.k, samples.nu
    P, mu0, eta = samples.points, ball.mu0, ball.eta
    if k == 1:
        if not _in_ball(P[0], mu0, eta):
            raise InfeasibleError("the single sample violates the mean ball")
        return np.ones(1)
    spread = c.max() - c.min()
    if default is not None and spread <= 1e-15 * max(1.0, abs(c.max())):
        return np.asarray(default, dtype=float).copy()
    top = np.flatnonzero(c >= c.max() - 1e-15 * max(1.0, abs(c.max())))
    ok = top[_in_ball(P[top], mu0, eta)]
    if ok.size:
        p = np.zeros(k)
        p[ok[0]] = 1.0
        return p
    if nu > 2:
        return _maximize_linear_pg(samples, ball, c)

    if nu == 1:
        r = np.sqrt(eta)
        val, cand = _lmo_1d(P[:, 0], c, mu0[0] - r, mu0[0] + r)
    else:
        centered = P - P.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-12) < 2:
            direction = np.linalg.svd(centered)[2][0]
            t = centered @ direction
            # the ball meets the sample line in an interval of positions
            foot = (mu0 - P.mean(axis=0)) @ direction
            off = (mu0 - P.mean(axis=0)) - foot * direction
            rem = eta - off @ off
            if rem < 0:
                raise InfeasibleError("mean ball does not meet the sample line")
            val, cand = _lmo_1d(t, c, foot - np.sqrt(rem), foot + np.sqrt(rem))
        else:
            lifted = np.column_stack([P, c])
            scale = max(1.0, float(np.abs(c).max()))
            tris = None
            resid = np.linalg.lstsq(np.column_stack([np.ones(k), P]), c, rcond=None)[1]
            if spread > 1e-12 * scale and (resid.size == 0 or resid[0] > 1e-18 * scale ** 2 * k):
                try:
                    hull = ConvexHull(lifted)
                    up = hull.equations[:, 2] > 1e-12
                    tris = hull.simplices[up]
                except QhullError:
                    tris = None
            if tris is None:
                tris = Delaunay(P).simplices
            val, cand = _best_on_triangles(P, c, tris, mu0, eta)
    if cand is None:
        raise InfeasibleError("mean ball does not meet the convex hull of the samples")
    p = np.zeros(k)
    for v, w in cand.items():
        p[v] += w
    p = np.maximum(p, 0.0)
    return p / p.sum()


def _maximize_linear_pg(samples, ball, c, iters=200):
    """Projected-gradient fallback for higher-dimensional samples."""
    p = project_ambiguity(samples, ball, np.full(samples.k, 1.0 / samples.k))
    step = 1.0 / max(np.abs(c).max(), 1e-12)
    for _ in range(iters):
        new = project_ambiguity(samples, ball, p + step * c)
        if np.linalg.norm(new - p) <= 1e-12:
            break
        p = new
        step *= 2.0
    return p
