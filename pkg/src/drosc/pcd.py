"""Pure characteristics demand model under mean-ball distributional uncertainty.

Consumers in market ``t`` buy the product(s) of largest utility

    u_t(x, xi) = C_t (x2 + x3 xi_1) - exp(x4 xi_2) sigma_t + x1t,

which is encoded by the complementarity block ``LCP(M, q_t)`` with
``M = [[0, e], [-e^T, 0]]`` and ``q_t = (-u_t, 1)``. Regularizing with
``eps * I`` makes each block uniquely solvable in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .ambiguity import MeanBallSet, SampleSet
from .lcp import LcpInstance, LcpSolution, natural_residual, regularize
from .minimax import ImageModel
from .stationarity import TOL_ACT, classify_indices

X_STAR = np.array([0.0, 0.0, 1.0, 0.0, 0.0])


@dataclass
class PcdConfig:
    """Markets, products, characteristics and the ambiguity data of the demand model.

    ``C`` has shape ``(T, m, tau)``; ``sigma``, ``b`` have shape ``(T, m)``;
    ``A`` (share aggregation) defaults to identities. The objective's
    quadratic part is ``0.5 x'Hx + c'x`` with ``H`` defaulting to the
    identity on the market intercepts ``x1`` and zero elsewhere.
    """

    T: int = 1
    m: int = 2
    tau: int = 1
    C: np.ndarray = field(default_factory=lambda: np.array([[[2.0], [3.0]]]))
    sigma: np.ndarray = field(default_factory=lambda: np.array([[1.0, 2.0]]))
    b: np.ndarray = field(default_factory=lambda: np.array([[0.5, 0.5]]))
    A: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    domain_lo: np.ndarray = field(default_factory=lambda: np.array([-1.0, -1.0]))
    domain_hi: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))
    mu0: np.ndarray = field(default_factory=lambda: np.zeros(2))
    eta: float = 0.5
    rho: float = 1.0
    H: np.ndarray | None = None
    c: np.ndarray | None = None

    def __post_init__(self):
        T, m, tau = self.T, self.m, self.tau
        self.C = np.asarray(self.C, dtype=float).reshape(T, m, tau)
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(T, m)
        self.b = np.asarray(self.b, dtype=float).reshape(T, -1)
        if self.A is None:
            self.A = np.stack([np.eye(m)] * T)
        self.A = np.asarray(self.A, dtype=float).reshape(T, -1, m)
        if self.b.shape[1] != self.A.shape[1]:
            raise ValueError("b and A disagree on the number of aggregated shares")
        n = self.n
        self.lower = np.zeros(n) if self.lower is None else np.broadcast_to(
            np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.full(n, 2.0) if self.upper is None else np.broadcast_to(
            np.asarray(self.upper, dtype=float), (n,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("box has lower > upper")
        self.domain_lo = np.asarray(self.domain_lo, dtype=float).reshape(2)
        self.domain_hi = np.asarray(self.domain_hi, dtype=float).reshape(2)
        self.mu0 = np.asarray(self.mu0, dtype=float).reshape(2)
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.H is None:
            self.H = np.diag(np.r_[np.ones(m * T), np.zeros(2 * tau + 1)])
        self.H = np.asarray(self.H, dtype=float).reshape(n, n)
        self.c = np.zeros(n) if self.c is None else np.asarray(self.c, dtype=float).reshape(n)

    @property
    def n(self) -> int:
        return self.m * self.T + 2 * self.tau + 1

    @property
    def ball(self) -> MeanBallSet:
        return MeanBallSet(self.mu0, self.eta)

    def with_eta(self, eta: float) -> "PcdConfig":
        d = self.to_dict()
        d["eta"] = eta
        return PcdConfig.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "T": self.T, "m": self.m, "tau": self.tau,
            "C": self.C.tolist(), "sigma": self.sigma.tolist(), "b": self.b.tolist(),
            "A": self.A.tolist(),
            "box": [self.lower.tolist(), self.upper.tolist()],
            "domain": [[float(l), float(h)] for l, h in zip(self.domain_lo, self.domain_hi)],
            "mu0": self.mu0.tolist(), "eta": self.eta, "rho": self.rho,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcdConfig":
        kw = {key: d[key] for key in ("T", "m", "tau", "C", "sigma", "b", "A", "mu0",
                                      "eta", "rho", "H", "c") if key in d}
        if "box" in d:
            lo, hi = d["box"]
            kw["lower"], kw["upper"] = lo, hi
        if "domain" in d:
            dom = np.asarray(d["domain"], dtype=float).reshape(-1, 2)
            kw["domain_lo"], kw["domain_hi"] = dom[:, 0], dom[:, 1]
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "PcdConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class DecisionVector(NamedTuple):
    x1: np.ndarray   # (T, m) market intercepts
    x2: np.ndarray   # (tau,)
    x3: np.ndarray   # (tau,)
    x4: float

    @classmethod
    def split(cls, cfg: PcdConfig, x) -> "DecisionVector":
        x = np.asarray(x, dtype=float)
        if x.shape != (cfg.n,):
            raise ValueError(f"decision vector has shape {x.shape}, expected ({cfg.n},)")
        mT, tau = cfg.m * cfg.T, cfg.tau
        return cls(x[:mT].reshape(cfg.T, cfg.m), x[mT:mT + tau], x[mT + tau:mT + 2 * tau],
                   float(x[-1]))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.x1.ravel(), self.x2, self.x3, [self.x4]])


def utility(cfg: PcdConfig, x, xi) -> np.ndarray:
    """Utilities ``u_t(x, xi)``; shape ``(T, m)`` for one scenario, ``(k, T, m)`` for many."""
    dv = DecisionVector.split(cfg, x)
    xi = np.asarray(xi, dtype=float)
    XI = np.atleast_2d(xi)
    chi1 = dv.x2[None, :] + dv.x3[None, :] * XI[:, :1]          # (k, tau)
    chi2 = np.exp(dv.x4 * XI[:, 1])                              # (k,)
    u = (np.einsum("tmj,kj->ktm", cfg.C, chi1)
         - chi2[:, None, None] * cfg.sigma[None] + dv.x1[None])
    return u[0] if xi.ndim == 1 else u


def block_matrix(m: int) -> np.ndarray:
    M = np.zeros((m + 1, m + 1))
    M[:m, m] = 1.0
    M[m, :m] = -1.0
    return M


def build_block_lcp(cfg: PcdConfig, x, xi, market: int = 0) -> LcpInstance:
    """The skew block ``LCP(M, (-u_t, 1))`` of one market at one scenario."""
    u = utility(cfg, x, xi)[market]
    return LcpInstance(block_matrix(cfg.m), np.r_[-u, 1.0], monotone=True)


def solve_block_regularized(u, eps: float):
    """Closed-form solution ``(s, gamma)`` of ``LCP(M + eps I, (-u, 1))``.

    ``s_i = max(0, (u_i - gamma) / eps)`` where ``gamma`` is zero if
    ``sum_i max(0, u_i) <= eps``, and otherwise the root of the decreasing
    piecewise-linear equation ``sum_i max(0, (u_i - gamma)/eps) = 1 + eps*gamma``.
    The root's linear piece is located by sorting the utilities.

    ``u`` may be a vector or an array of shape ``(..., m)``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    u = np.asarray(u, dtype=float)
    us = -np.sort(-u, axis=-1)                      # descending
    csum = np.cumsum(us, axis=-1)
    j = np.arange(1, u.shape[-1] + 1)
    # phi at breakpoint u_(j): sum_{i<j} (u_(i) - u_(j))/eps - 1 - eps u_(j)
    phi_bp = (csum - j * us) / eps - 1.0 - eps * us
    active = np.sum(phi_bp < 0.0, axis=-1)          # number of u_i above the root
    active = np.maximum(active, 1)
    s_act = np.take_along_axis(csum, (active - 1)[..., None], axis=-1)[..., 0]
    gamma = (s_act - eps) / (active + eps * eps)
    positive_root = np.sum(np.maximum(u, 0.0), axis=-1) > eps
    gamma = np.where(positive_root, gamma, 0.0)
    s = np.maximum(0.0, (u - gamma[..., None]) / eps)
    return s, gamma


def share_jacobian(u, eps: float) -> np.ndarray:
    """Derivative of the regularized shares with respect to ``u`` on the current active set."""
    u = np.asarray(u, dtype=float)
    s, gamma = solve_block_regularized(u, eps)
    act = (s > 0).astype(float)
    n_act = act.sum(axis=-1)
    eye = np.eye(u.shape[-1])
    J = act[..., :, None] * eye * act[..., None, :]
    coupled = (gamma > 0)[..., None, None]
    J = J - coupled * act[..., :, None] * act[..., None, :] / (n_act + eps * eps)[..., None, None]
    return J / eps


class ShareSet(NamedTuple):
    """Face ``conv(vertices)`` of the share simplex maximizing ``<s, u>``."""

    vertices: np.ndarray
    least_norm: np.ndarray

    def contains(self, s, tol=1e-9) -> bool:
        s = np.asarray(s, dtype=float)
        V = self.vertices
        nz = np.flatnonzero(np.abs(V).sum(axis=0) > 0)
        if np.any(np.abs(np.delete(s, nz)) > tol) or np.any(s < -tol):
            return False
        total = s.sum()
        has_zero = np.any(np.abs(V).sum(axis=1) == 0)
        return total <= 1 + tol and (has_zero or abs(total - 1) <= tol)


def argmax_share_set(u) -> ShareSet:
    """Solution set of ``max <s, u>`` over ``{s >= 0, sum(s) <= 1}`` and its least-norm element."""
    u = np.asarray(u, dtype=float)
    m = u.size
    top = u.max()
    eye = np.eye(m)
    if top < 0:
        return ShareSet(np.zeros((1, m)), np.zeros(m))
    idx = np.flatnonzero(u == top)
    if top > 0:
        ln = np.zeros(m)
        ln[idx] = 1.0 / idx.size
        return ShareSet(eye[idx], ln)
    return ShareSet(np.vstack([eye[idx], np.zeros(m)]), np.zeros(m))


def make_grid_samples(cfg: PcdConfig, k: int) -> SampleSet:
    """Midpoint ``sqrt(k) x sqrt(k)`` grid on the scenario box."""
    r = int(round(np.sqrt(k)))
    if r < 1 or r * r != k:
        raise ValueError(f"k must be a perfect square, got {k}")
    axes = [lo + (hi - lo) * (2 * np.arange(1, r + 1) - 1) / (2 * r)
            for lo, hi in zip(cfg.domain_lo, cfg.domain_hi)]
    g1, g2 = np.meshgrid(*axes, indexing="ij")
    return SampleSet(np.column_stack([g1.ravel(), g2.ravel()]), cfg.domain_lo, cfg.domain_hi)


class PcdObjective(ImageModel):
    """Regularized and discretized demand objective

        G(x, p) = 0.5 x'Hx + c'x + rho * sum_t ||A_t sum_i p_i s_t,eps(x, xi^i) - b_t||^2,

    exposed to the minimax solver as ``theta(x) + h(F(x) p)`` with the
    columns of ``F(x)`` the stacked regularized shares per scenario.
    """

    def __init__(self, cfg: PcdConfig, samples: SampleSet, eps: float,
                 analytic_gradient: bool = False):
        if not eps > 0:
            raise ValueError("eps must be positive")
        if samples.nu != 2 or np.any(samples.lo < cfg.domain_lo - 1e-12) \
                or np.any(samples.hi > cfg.domain_hi + 1e-12):
            raise ValueError("samples must lie in the scenario domain")
        self.cfg = cfg
        self.samples = samples
        self.ball = cfg.ball
        self.eps = float(eps)
        self.lower = cfg.lower
        self.upper = cfg.upper
        self.analytic_gradient = analytic_gradient
        self._cache_key = None
        self._cache_val = None

    @property
    def k(self) -> int:
        return self.samples.k

    def utilities(self, x) -> np.ndarray:
        return utility(self.cfg, x, self.samples.points)       # (k, T, m)

    def shares(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        if key != self._cache_key:
            self._cache_val = solve_block_regularized(self.utilities(x), self.eps)
            self._cache_key = key
        return self._cache_val

    def theta(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.cfg.H @ x + self.cfg.c @ x)

    def theta_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.cfg.H @ x + self.cfg.c

    def image(self, x) -> np.ndarray:
        s, _ = self.shares(x)                                   # (k, T, m)
        return s.reshape(self.k, -1).T

    def _split(self, v):
        return np.asarray(v, dtype=float).reshape(self.cfg.T, self.cfg.m)

    def outer(self, v) -> float:
        r = np.einsum("tlm,tm->tl", self.cfg.A, self._split(v)) - self.cfg.b
        return float(self.cfg.rho * np.sum(r * r))

    def outer_grad(self, v) -> np.ndarray:
        r = np.einsum("tlm,tm->tl", self.cfg.A, self._split(v)) - self.cfg.b
        return (2.0 * self.cfg.rho * np.einsum("tlm,tl->tm", self.cfg.A, r)).ravel()

    def grad_x_analytic(self, x, p) -> np.ndarray:
        """Gradient on the current active sets of all blocks."""
        cfg = self.cfg
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        dv = DecisionVector.split(cfg, x)
        u = self.utilities(x)
        gv = self.outer_grad(self.image(x) @ p).reshape(cfg.T, cfg.m)
        J = share_jacobian(u, self.eps)                           # (k, T, m, m)
        w = np.einsum("ktab,tb->kta", J, gv)                     # (k, T, m)
        pw = np.einsum("k,kta->ta", p, w)
        xi1, xi2 = self.samples.points[:, 0], self.samples.points[:, 1]
        g1 = pw
        g2 = np.einsum("tmj,tm->j", cfg.C, pw)
        g3 = np.einsum("tmj,tm->j", cfg.C, np.einsum("k,kta->ta", p * xi1, w))
        e = np.exp(dv.x4 * xi2)
        g4 = -np.einsum("tm,tm->", cfg.sigma, np.einsum("k,kta->ta", p * xi2 * e, w))
        return self.theta_grad(x) + np.concatenate([g1.ravel(), g2, g3, [g4]])

    def lcp_blocks(self, x, p):
        """Per-scenario, per-market regularized blocks with their solutions and ``grad_y G``."""
        cfg = self.cfg
        s, gamma = self.shares(x)
        u = self.utilities(x)
        gv = self.outer_grad(self.image(x) @ np.asarray(p)).reshape(cfg.T, cfg.m)
        M = block_matrix(cfg.m)
        for i in range(self.k):
            for t in range(cfg.T):
                inst = regularize(LcpInstance(M, np.r_[-u[i, t], 1.0], monotone=True), self.eps)
                y = np.r_[s[i, t], gamma[i, t]]
                w = inst.slack(y)
                sol = LcpSolution(y, w, natural_residual(inst, y),
                                  classify_indices(y, w, TOL_ACT), method="closed-form")
                gy = np.r_[p[i] * gv[t], 0.0]
                yield inst, sol, gy


def pcd_objective(cfg: PcdConfig, samples: SampleSet, eps: float, **kw) -> PcdObjective:
    return PcdObjective(cfg, samples, eps, **kw)


def make_model(cfg: PcdConfig, eps: float, k: int, eta: float | None = None,
               analytic_gradient: bool = False) -> PcdObjective:
    """Objective on a midpoint grid of ``k`` scenarios (optionally overriding ``eta``)."""
    if eta is not None and eta != cfg.eta:
        cfg = cfg.with_eta(eta)
    return PcdObjective(cfg, make_grid_samples(cfg, k), eps, analytic_gradient)
