"""Alternating min-max solver for ``min_{x in X} max_{p in Pk} theta(x) + h(F(x) p)``.

Step 1 runs projected gradient with Armijo backtracking in ``x`` for the
current weights; Step 2 maximizes the convex function ``p -> h(F(x) p)`` over
``Pk`` by an image-space direction sweep polished with Frank-Wolfe restarts.
The outer loop stops once the box projection residual is below ``tol_x`` and
the inner maximization no longer improves the value by more than ``tol_p``.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .ambiguity import maximize_linear, member
from .errors import DroscError

log = logging.getLogger(__name__)

SWEEP_HEADER = ["eps", "k", "eta", "value", "x_err", "res_x", "res_p", "iters",
                "seconds", "status"]


class ImageModel:
    """Objective of the form ``theta(x) + h(F(x) p)`` on a box times ``Pk``.

    Subclasses set ``lower``, ``upper``, ``samples`` and ``ball`` and implement
    ``theta``, ``image`` (the ``l x k`` matrix ``F(x)``), ``outer`` (``h``) and
    ``outer_grad``. ``grad_x_analytic`` is optional.
    """

    lower: np.ndarray
    upper: np.ndarray
    samples = None
    ball = None
    eps = None
    analytic_gradient = False

    def theta(self, x) -> float:
        raise NotImplementedError

    def image(self, x) -> np.ndarray:
        raise NotImplementedError

    def outer(self, v) -> float:
        raise NotImplementedError

    def outer_grad(self, v) -> np.ndarray:
        raise NotImplementedError

    @property
    def k(self) -> int:
        return self.samples.k


class FunctionModel(ImageModel):
    """:class:`ImageModel` assembled from plain callables."""

    def __init__(self, lower, upper, samples, ball, theta, image, outer=None,
                 outer_grad=None):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        self.samples = samples
        self.ball = ball
        self._theta = theta
        self._image = image
        self._outer = outer or (lambda v: 0.0)
        self._outer_grad = outer_grad or (lambda v: np.zeros_like(v))

    def theta(self, x):
        return float(self._theta(x))

    def image(self, x):
        return np.atleast_2d(np.asarray(self._image(x), dtype=float))

    def outer(self, v):
        return float(self._outer(v))

    def outer_grad(self, v):
        return np.asarray(self._outer_grad(v), dtype=float)


@dataclass(frozen=True)
class SolverConfig:
    tol_x: float = 1e-4
    tol_p: float = 1e-8
    max_outer: int = 500
    max_inner_x: int = 200
    fd_step: float = 1e-6
    armijo_c: float = 1e-4
    armijo_backtrack: float = 0.5
    armijo_max_halvings: int = 40
    sweep_directions: int = 720
    fw_starts: int = 64
    fw_iters: int = 50
    start_grid: int = 3
    max_start_points: int = 729
    exchange: bool = True
    active_tol: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        for name in ("tol_x", "tol_p", "fd_step", "armijo_c", "active_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_outer", "max_inner_x", "armijo_max_halvings",
                     "sweep_directions", "fw_starts", "fw_iters", "start_grid",
                     "max_start_points"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be a positive integer")
        if not 0 < self.armijo_backtrack < 1:
            raise ValueError("armijo_backtrack must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{key: v for key, v in d.items() if key in known})


@dataclass(frozen=True, eq=False)
class MinimaxState:
    x: np.ndarray
    p: np.ndarray
    eps: float | None
    k: int
    value: float
    residual_x: float = float("inf")
    residual_p: float = float("inf")
    iteration: int = 0
    status: str = "running"

    def to_dict(self):
        d = asdict(self)
        d["x"] = self.x.tolist()
        d["p"] = self.p.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["x"] = np.asarray(d["x"], dtype=float)
        d["p"] = np.asarray(d["p"], dtype=float)
        return cls(**{key: d[key] for key in cls.__dataclass_fields__ if key in d})


def _check_box(model, x):
    if np.any(x < model.lower - 1e-12) or np.any(x > model.upper + 1e-12):
        raise ValueError("x lies outside the box X")


def evaluate_objective(model: ImageModel, x, p) -> float:
    """``theta(x) + h(F(x) p)`` at fixed weights (the inner max is not taken)."""
    x = np.asarray(x, dtype=float)
    _check_box(model, x)
    return model.theta(x) + model.outer(model.image(x) @ np.asarray(p, dtype=float))


def _eval_free(model, x, p):
    return model.theta(x) + model.outer(model.image(x) @ p)


def grad_x(model: ImageModel, x, p, cfg: SolverConfig | None = None, central: bool = False,
           analytic: bool | None = None) -> np.ndarray:
    """Finite-difference gradient in ``x`` at fixed ``p``.

    Forward differences with step ``fd_step * max(1, |x_i|)``; a coordinate at
    its upper bound (or whose forward evaluation fails) uses the backward
    difference instead. ``central=True`` gives central differences where both
    sides stay in the box.
    """
    cfg = cfg or SolverConfig()
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if analytic is None:
        analytic = getattr(model, "analytic_gradient", False)
    if analytic and hasattr(model, "grad_x_analytic"):
        return model.grad_x_analytic(x, p)
    f0 = _eval_free(model, x, p)
    g = np.zeros_like(x)
    for i in range(x.size):
        h = cfg.fd_step * max(1.0, abs(x[i]))
        up_ok = x[i] + h <= model.upper[i]
        dn_ok = x[i] - h >= model.lower[i]
        fp = fm = None
        if up_ok:
            try:
                xp = x.copy()
                xp[i] += h
                fp = _eval_free(model, xp, p)
            except DroscError:
                fp = None
        if (central or fp is None) and dn_ok:
            try:
                xm = x.copy()
                xm[i] -= h
                fm = _eval_free(model, xm, p)
            except DroscError:
                fm = None
        if fp is not None and fm is not None and central:
            g[i] = (fp - fm) / (2 * h)
        elif fp is not None:
            g[i] = (fp - f0) / h
        elif fm is not None:
            g[i] = (f0 - fm) / h
        else:
            raise DroscError(f"no admissible finite-difference step for coordinate {i}")
    return g


def grad_p(model: ImageModel, x, p) -> np.ndarray:
    """``grad_p G = F(x)^T grad h(F(x) p)``."""
    F = model.image(np.asarray(x, dtype=float))
    return F.T @ model.outer_grad(F @ np.asarray(p, dtype=float))


def projection_residual(model, x, g) -> float:
    return float(np.linalg.norm(x - np.clip(x - g, model.lower, model.upper)))


def step_min_x(model: ImageModel, state: MinimaxState, cfg: SolverConfig) -> MinimaxState:
    """Projected gradient on the box at fixed ``p`` with Armijo backtracking.

    Trial steps start from a Barzilai-Borwein estimate; a step is accepted
    only if it satisfies the Armijo condition along the projection arc and
    does not increase the objective. When the line search fails with
    forward differences (their truncation error dominates in sharply curved
    regions) the step switches to central differences before giving up.
    """
    x = np.clip(np.asarray(state.x, dtype=float), model.lower, model.upper)
    p = state.p
    f = _eval_free(model, x, p)
    central = False
    g = grad_x(model, x, p, cfg)
    t = 1.0
    status = "running"
    res = projection_residual(model, x, g)
    for _ in range(cfg.max_inner_x):
        if res <= cfg.tol_x:
            break
        for _ in range(cfg.armijo_max_halvings + 1):
            xt = np.clip(x - t * g, model.lower, model.upper)
            ft = _eval_free(model, xt, p)
            if ft <= f + cfg.armijo_c * (g @ (xt - x)) and ft <= f:
                break
            t *= cfg.armijo_backtrack
        else:
            if central:
                status = "stalled"
                break
            central = True
            g = grad_x(model, x, p, cfg, central=True)
            res = projection_residual(model, x, g)
            t = 1.0
            continue
        gt = grad_x(model, xt, p, cfg, central=central)
        s, y = xt - x, gt - g
        sy = s @ y
        t = float(np.clip((s @ s) / sy if sy > 1e-300 else 2 * t, 1e-10, 1e10))
        x, f, g = xt, ft, gt
        res = projection_residual(model, x, g)
    return replace(state, x=x, value=f, residual_x=res, status=status)


def _fd_image(model, x, cfg):
    """Central-difference derivatives of ``theta`` and ``F`` (one-sided at the box faces)."""
    th0, F0 = model.theta(x), model.image(x)
    dth = np.zeros(x.size)
    dF = np.zeros((x.size,) + F0.shape)
    for i in range(x.size):
        h = cfg.fd_step * max(1.0, abs(x[i]))
        up, dn = x.copy(), x.copy()
        up[i] = min(x[i] + h, model.upper[i])
        dn[i] = max(x[i] - h, model.lower[i])
        span = up[i] - dn[i]
        if span <= 0:
            continue
        dth[i] = (model.theta(up) - model.theta(dn)) / span
        dF[i] = (model.image(up) - model.image(dn)) / span
    return th0, F0, dth, dF


def _set_values(model, x, P):
    F = model.image(x)
    return model.theta(x) + np.array([model.outer(F @ p) for p in P])


def _set_jacobian(model, x, P, cfg):
    """Rows are ``grad_x G(x, p)`` for each ``p`` in ``P``."""
    _, F, dth, dF = _fd_image(model, x, cfg)
    V = F @ P.T                                             # (l, r)
    H = np.column_stack([model.outer_grad(V[:, i]) for i in range(len(P))])
    dV = np.einsum("jlk,rk->rjl", dF, P)                    # (r, n, l)
    return dth[None, :] + np.einsum("rjl,lr->rj", dV, H)


def _reduced(model, x, g):
    """Box-reduced gradient: one-sided at active bounds, full in the interior."""
    at_lo = x <= model.lower + 1e-12
    at_hi = x >= model.upper - 1e-12
    return np.where(at_lo, np.minimum(g, 0.0), np.where(at_hi, np.maximum(g, 0.0), g))


def set_residual(model, x, P, cfg: SolverConfig | None = None):
    """Stationarity residual of ``min_x max_{p in P} G(x, p)`` over the box.

    Multipliers on the active weights (within ``active_tol`` of the max) are
    chosen to minimize the projection residual of the combined gradient.
    Returns ``(residual, active index, multipliers)``; for one active weight
    this is the plain projection residual.
    """
    cfg = cfg or SolverConfig()
    P = np.atleast_2d(P)
    vals = _set_values(model, x, P)
    top = vals.max()
    act = np.flatnonzero(vals >= top - cfg.active_tol * max(1.0, abs(top)))
    if act.size == 1:
        g = grad_x(model, x, P[act[0]], cfg)
        return projection_residual(model, x, g), act, np.ones(1)
    J = _set_jacobian(model, x, P[act], cfg)

    def obj(lam):
        r = _reduced(model, x, lam @ J)
        return r @ r

    lam0 = np.full(act.size, 1.0 / act.size)
    res = minimize(obj, lam0, method="SLSQP", bounds=[(0, 1)] * act.size,
                   constraints=[{"type": "eq", "fun": lambda l: l.sum() - 1.0}],
                   options={"ftol": 1e-16, "maxiter": 200})
    lam = np.clip(res.x, 0.0, None)
    lam /= lam.sum()
    return projection_residual(model, x, lam @ J), act, lam


def _slsqp_set(model, x0, P, cfg):
    n = x0.size
    f0 = _set_values(model, x0, P).max()

    def cons(z):
        return z[n] - _set_values(model, z[:n], P)

    def cons_jac(z):
        return np.column_stack([-_set_jacobian(model, z[:n], P, cfg), np.ones(len(P))])

    bounds = list(zip(model.lower, model.upper)) + [(None, None)]
    res = minimize(lambda z: z[n], np.r_[x0, f0], jac=lambda z: np.r_[np.zeros(n), 1.0],
                   method="SLSQP", bounds=bounds,
                   constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
                   options={"ftol": 1e-14, "maxiter": cfg.max_inner_x})
    x = np.clip(res.x[:n], model.lower, model.upper)
    f = _set_values(model, x, P).max()
    return (x, f) if f <= f0 else (x0, f0)


def step_min_x_set(model: ImageModel, state: MinimaxState, P, cfg: SolverConfig,
                   extra_starts=()) -> MinimaxState:
    """Minimize ``max_{p in P} G(x, p)`` over the box (epigraph form, SLSQP).

    Used by the exchange variant of Step 1 once more than one inner
    maximizer has been collected. Local solves start from the incoming
    point, the best coarse-grid point for the pooled max and any
    ``extra_starts``; the lowest result wins (ties keep the earliest start).
    The returned ``p`` is the maximizing member of ``P`` at the new point.
    """
    P = np.atleast_2d(P)
    x0 = np.clip(np.asarray(state.x, dtype=float), model.lower, model.upper)
    pooled = lambda z: float(_set_values(model, z, P).max())
    starts = [x0, initial_point(model, P, cfg, objective=pooled)]
    starts += [np.asarray(z, dtype=float) for z in extra_starts]
    best_x, best_f = None, np.inf
    seen = []
    for z in starts:
        if any(np.array_equal(z, w) for w in seen):
            continue
        seen.append(z)
        x, f = _slsqp_set(model, z, P, cfg)
        if f < best_f:
            best_x, best_f = x, f
    vals = _set_values(model, best_x, P)
    resid, _, _ = set_residual(model, best_x, P, cfg)
    i = int(np.argmax(vals))
    return replace(state, x=best_x, p=P[i].copy(), value=float(vals[i]), residual_x=resid,
                   status="running")


def _directions(l, count):
    if l == 1:
        return np.array([[1.0], [-1.0]])
    if l == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    # near-uniform points on the sphere (golden-angle spiral)
    i = np.arange(count) + 0.5
    z = 1 - 2 * i / count
    r = np.sqrt(1 - z * z)
    ang = np.pi * (1 + 5 ** 0.5) * i
    return np.column_stack([r * np.cos(ang), r * np.sin(ang), z])


def _fw_ascent(model, F, p, value, iters):
    """Frank-Wolfe ascent with full steps for the convex map ``p -> h(F p)``."""
    for _ in range(iters):
        c = F.T @ model.outer_grad(F @ p)
        q = maximize_linear(model.samples, model.ball, c, default=p)
        vq = model.outer(F @ q)
        if not vq > value + 1e-15:
            break
        p, value = q, vq
    return p, value


def step_max_p(model: ImageModel, state: MinimaxState, cfg: SolverConfig) -> MinimaxState:
    """Maximize ``h(F(x) p)`` over ``Pk`` at fixed ``x``.

    For image dimension ``l <= 3`` the support points of ``F(x) Pk`` in
    ``sweep_directions`` directions are evaluated; Frank-Wolfe restarts from
    (a seeded subset of) the simplex vertices and from the best sweep
    candidate refine the result. The incoming weights are kept unless beaten.
    ``residual_p`` records the improvement over the incoming value.
    """
    x, p_in = state.x, np.asarray(state.p, dtype=float)
    F = model.image(x)
    theta = model.theta(x)
    v_in = model.outer(F @ p_in)
    best_p, best_v = p_in, v_in
    l, k = F.shape
    samples, ball = model.samples, model.ball
    if l <= 3:
        for d in _directions(l, cfg.sweep_directions):
            q = maximize_linear(samples, ball, F.T @ d, default=p_in)
            vq = model.outer(F @ q)
            if vq > best_v + 1e-15:
                best_p, best_v = q, vq
    n_starts = min(k, cfg.fw_starts)
    if n_starts == k:
        starts = np.arange(k)
    else:
        rng = np.random.default_rng(cfg.seed)
        starts = np.sort(rng.choice(k, size=n_starts, replace=False))
    seen = set()
    for i in starts:
        c = F.T @ model.outer_grad(F[:, i])
        q = maximize_linear(samples, ball, c, default=p_in)
        key = q.tobytes()
        if key in seen:
            continue
        seen.add(key)
        q, vq = _fw_ascent(model, F, q, model.outer(F @ q), cfg.fw_iters)
        if vq > best_v + 1e-15:
            best_p, best_v = q, vq
    best_p, best_v = _fw_ascent(model, F, best_p, best_v, cfg.fw_iters)
    return replace(state, p=best_p, value=theta + best_v, residual_p=best_v - v_in)


def initial_point(model: ImageModel, p, cfg: SolverConfig, objective=None) -> np.ndarray:
    """Best point of a coarse box grid (``start_grid`` points per axis) at weights ``p``.

    ``objective`` overrides the criterion ``G(., p)``. Falls back to
    ``max_start_points`` seeded uniform draws (plus the box midpoint) when the
    full grid would be larger. Ties keep the first point.
    """
    lo, hi = model.lower, model.upper
    n = lo.size
    r = cfg.start_grid
    if r == 1:
        return 0.5 * (lo + hi)
    if r ** n <= cfg.max_start_points:
        axes = [np.linspace(a, b, r) for a, b in zip(lo, hi)]
        pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(n, -1).T
    else:
        rng = np.random.default_rng(cfg.seed)
        pts = np.vstack([0.5 * (lo + hi), lo + (hi - lo) * rng.random((cfg.max_start_points, n))])
    if objective is None:
        objective = lambda z: _eval_free(model, z, p)
    vals = [objective(q) for q in pts]
    return pts[int(np.argmin(vals))].copy()


def alternate(model: ImageModel, cfg: SolverConfig | None = None, p0=None, x0=None) -> MinimaxState:
    """Alternate Step 1 (min in ``x``) and Step 2 (max in ``p``) until both stall.

    With ``cfg.exchange`` off, Step 1 minimizes ``G(x, p^j)`` for the latest
    weights only. That plain alternation can cycle when several worst-case
    weights are active at the minimax point, so by default every inner
    maximizer found so far is kept and Step 1 minimizes their pointwise max
    (an exchange method); while a single weight vector is collected the two
    variants coincide.

    ``p0`` defaults to uniform weights and ``x0`` to :func:`initial_point`.
    The run stops once the (multiplier-weighted) projection residual is at
    most ``tol_x`` and Step 2 improves the inner value by at most ``tol_p``;
    the returned state then keeps the maximizing collected weights ``p^j``.
    On budget exhaustion the iterate with the smallest inner-max value is
    returned with status ``"budget"``; a run whose Step 1 line search fails
    while Step 2 finds no improvement ends early with status ``"stalled"``.
    """
    cfg = cfg or SolverConfig()
    k = model.k
    p = np.full(k, 1.0 / k) if p0 is None else np.asarray(p0, dtype=float)
    if not member(model.samples, model.ball, p, slack=1e-8):
        raise ValueError("initial weights must lie in Pk")
    x = initial_point(model, p, cfg) if x0 is None else np.asarray(x0, dtype=float)
    _check_box(model, x)
    state = MinimaxState(x, p, model.eps, k, evaluate_objective(model, x, p))
    pool = [p]
    history = []
    best = None
    for j in range(1, cfg.max_outer + 1):
        if len(pool) == 1:
            state = step_min_x(model, replace(state, p=pool[0]), cfg)
        else:
            state = step_min_x_set(model, state, np.array(pool), cfg, extra_starts=history)
        state = replace(state, iteration=j)
        history.append(state.x)
        upd = step_max_p(model, state, cfg)
        log.debug("outer %d: value %.10g -> %.10g res_x %.2e pool %d", j, state.value,
                  upd.value, state.residual_x, len(pool))
        if upd.residual_p <= cfg.tol_p:
            if state.residual_x <= cfg.tol_x:
                return replace(state, residual_p=max(upd.residual_p, 0.0), status="converged")
            if state.status == "stalled":
                # Step 2 keeps p and Step 1 cannot move: further sweeps repeat exactly
                return replace(state, residual_p=max(upd.residual_p, 0.0), status="stalled")
        if best is None or upd.value < best.value:
            best = upd
        if not cfg.exchange:
            pool = [upd.p]
        elif not any(np.array_equal(upd.p, q) for q in pool):
            pool.append(upd.p)
        state = replace(upd, status="running")
    resid = set_residual(model, best.x, np.array(pool) if cfg.exchange else best.p, cfg)[0]
    return replace(best, value=evaluate_objective(model, best.x, best.p),
                   residual_x=resid, status="budget")


@dataclass
class SweepRow:
    eps: float
    k: int
    eta: float
    value: float = float("nan")
    x_err: float = float("nan")
    res_x: float = float("nan")
    res_p: float = float("nan")
    iters: int = 0
    seconds: float | None = None
    status: str = ""
    state: MinimaxState | None = field(default=None, repr=False)

    def csv_fields(self):
        def num(v):
            return "" if v is None else repr(float(v))
        return [repr(float(self.eps)), str(self.k), repr(float(self.eta)), num(self.value),
                num(self.x_err), num(self.res_x), num(self.res_p), str(self.iters),
                "" if self.seconds is None else f"{self.seconds:.3f}", self.status]


def _run_row(args):
    factory, eps, k, eta, cfg, reference_x, timing = args
    t0 = time.perf_counter()
    row = SweepRow(eps, k, eta)
    try:
        model = factory(eps, k, eta)
        st = alternate(model, cfg)
        row.value, row.res_x, row.res_p = st.value, st.residual_x, st.residual_p
        row.iters, row.status, row.state = st.iteration, st.status, st
        if reference_x is not None:
            row.x_err = float(np.linalg.norm(st.x - np.asarray(reference_x)))
    except Exception as exc:  # recorded per row, the sweep continues
        row.status = f"error: {type(exc).__name__}: {exc}"
    if timing:
        row.seconds = time.perf_counter() - t0
    return row


def schedule_solve(factory, eps_list, k_list, eta_list, cfg: SolverConfig | None = None,
                   reference_x=None, jobs: int | None = None, timing: bool = False) -> list[SweepRow]:
    """Run :func:`alternate` for every ``(eps, k, eta)`` triple.

    ``factory(eps, k, eta)`` builds the model. Rows come back in the nested
    order eps, k, eta regardless of ``jobs``. Wall time is recorded only when
    ``timing`` is set, keeping untimed tables bitwise reproducible.
    """
    cfg = cfg or SolverConfig()
    eps_list, k_list, eta_list = list(eps_list), list(k_list), list(eta_list)
    if not (eps_list and k_list and eta_list):
        raise ValueError("sweep axes must be nonempty")
    if jobs is None:
        jobs = int(os.environ.get("DROSC_JOBS", "1"))
    tasks = [(factory, e, k, h, cfg, reference_x, timing)
             for e in eps_list for k in k_list for h in eta_list]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_row, tasks))
    return [_run_row(t) for t in tasks]


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in rows:
        writer.writerow(r.csv_fields())
    return buf.getvalue()
