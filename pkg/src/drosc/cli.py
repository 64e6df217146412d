"""Command-line front end: single solves, sweeps, certificates and transport reports.

Exit codes are 0 on success, 2 on unreadable input, 3 when a solve fails and
4 when the iteration budget runs out.
"""

from __future__ import annotations

import argparse
import functools
import json
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ambiguity import SampleSet, member, project_ambiguity, slater_witness
from .errors import ConvergenceWarning, DroscError, LcpSolveError
from .lcp import LcpInstance, regularize, solve_pd_lcp
from .minimax import MinimaxState, SolverConfig, alternate, schedule_solve, sweep_csv
from .pcd import X_STAR, PcdConfig, PcdObjective, make_grid_samples
from .stationarity import certify_block_stationarity

EXIT_OK, EXIT_PARSE, EXIT_SOLVE, EXIT_BUDGET = 0, 2, 3, 4


class ParseError(DroscError):
    pass


@dataclass
class ExperimentConfig:
    model: PcdConfig = field(default_factory=PcdConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    eps_list: list = field(default_factory=lambda: [0.1])
    k_list: list = field(default_factory=lambda: [25])
    eta_list: list = field(default_factory=lambda: [0.5])
    reference_x: np.ndarray | None = field(default_factory=lambda: X_STAR.copy())
    output_dir: str = "."
    samples: np.ndarray | None = None     # explicit scenarios override the grid

    def __post_init__(self):
        for name in ("eps_list", "k_list", "eta_list"):
            if not list(getattr(self, name)):
                raise ValueError(f"{name} must be nonempty")
        if self.reference_x is not None:
            ref = np.asarray(self.reference_x, dtype=float)
            if ref.shape != (self.model.n,) or np.any(ref < self.model.lower) \
                    or np.any(ref > self.model.upper):
                raise ValueError("reference_x must lie inside the decision box")
            self.reference_x = ref

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kw = {}
        if "model" in d:
            kw["model"] = PcdConfig.from_dict(d["model"])
        if "solver" in d:
            kw["solver"] = SolverConfig.from_dict(d["solver"])
        for key in ("eps_list", "k_list", "eta_list", "output_dir"):
            if key in d:
                kw[key] = d[key]
        if "reference_x" in d:
            kw["reference_x"] = d["reference_x"]
        if d.get("samples") is not None:
            kw["samples"] = np.asarray(d["samples"], dtype=float)
        return cls(**kw)


def default_config() -> dict:
    """The demand-model defaults as a JSON-ready dict."""
    return {"model": PcdConfig().to_dict(), "solver": {}, "eps_list": [0.1],
            "k_list": [25], "eta_list": [0.5], "reference_x": X_STAR.tolist()}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


def write_atomic(path, text: str) -> None:
    """Write ``text`` to a temporary sibling file, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_experiment(args) -> ExperimentConfig:
    d = default_config() if args.config is None else _read_json(args.config)
    if getattr(args, "eps", None):
        d["eps_list"] = args.eps
    if getattr(args, "k", None):
        d["k_list"] = args.k
    if getattr(args, "eta", None):
        d["eta_list"] = args.eta
    if getattr(args, "seed", None) is not None:
        d.setdefault("solver", {})["seed"] = args.seed
    if getattr(args, "out", None):
        d["output_dir"] = args.out
    try:
        return ExperimentConfig.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid configuration: {exc}") from exc


def _samples(model_cfg: PcdConfig, k: int, points=None) -> SampleSet:
    if points is not None:
        return SampleSet(points, model_cfg.domain_lo, model_cfg.domain_hi)
    return make_grid_samples(model_cfg, k)


def build_model(model_dict: dict, eps: float, k: int, eta: float, points=None) -> PcdObjective:
    cfg = PcdConfig.from_dict(model_dict).with_eta(eta)
    return PcdObjective(cfg, _samples(cfg, k, points), eps)


def _factory(model_dict, points, eps, k, eta):
    return build_model(model_dict, eps, k, eta, points)


def _state_record(state: MinimaxState, model_cfg: PcdConfig, points=None) -> dict:
    rec = {"state": state.to_dict(), "model": model_cfg.to_dict()}
    if points is not None:
        rec["samples"] = np.asarray(points).tolist()
    return rec


def _tag(eps, k, eta):
    return f"eps{eps!r}_k{k}_eta{eta!r}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_solve_lcp(args) -> int:
    d = _read_json(args.input)
    try:
        inst = LcpInstance.from_dict(d)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"invalid LCP instance: {exc}") from exc
    if args.eps is not None:
        inst = regularize(inst, args.eps[0])
    try:
        sol = solve_pd_lcp(inst)
    except LcpSolveError as exc:
        print(_dump({"error": str(exc), "residual": exc.best_residual}), end="")
        return EXIT_SOLVE
    text = _dump(sol.to_dict())
    if args.out:
        write_atomic(Path(args.out) / "lcp_solution.json", text)
    print(text, end="")
    return EXIT_OK if sol.residual <= args.tol else EXIT_SOLVE


def _feasible_start(model):
    """Uniform weights, projected onto Pk when needed; None when Pk looks empty."""
    k = model.k
    p = np.full(k, 1.0 / k)
    if member(model.samples, model.ball, p, slack=1e-8):
        return p
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        p = project_ambiguity(model.samples, model.ball, p)
    return p if member(model.samples, model.ball, p, slack=1e-8) else None


def cmd_run(args) -> int:
    exp = _load_experiment(args)
    eps, k, eta = exp.eps_list[0], exp.k_list[0], exp.eta_list[0]
    try:
        model = build_model(exp.model.to_dict(), eps, k, eta, exp.samples)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    out = Path(exp.output_dir)
    tag = _tag(eps, model.k, eta)
    p0 = _feasible_start(model)
    if p0 is None:
        rep = slater_witness(model.samples, model.ball, np.full(model.k, 1.0 / model.k))
        report = {"error": "ambiguity set is empty", "eta": eta,
                  "witness_weights": rep.weights.tolist(), "witness_feasible": rep.feasible,
                  "mean_violation": rep.violation}
        write_atomic(out / f"infeasible_{tag}.json", _dump(report))
        print(_dump(report), end="")
        return EXIT_SOLVE
    state = alternate(model, exp.solver, p0=p0)
    cert = certify_block_stationarity(model, state.x, state.p, cfg=exp.solver)
    rec = _state_record(state, model.cfg, exp.samples)
    write_atomic(out / f"state_{tag}.json", _dump(rec))
    write_atomic(out / f"certificate_{tag}.json", _dump(cert.to_dict()))
    summary = {"status": state.status, "value": state.value, "res_x": state.residual_x,
               "res_p": state.residual_p, "iterations": state.iteration,
               "x": state.x.tolist(), "class": cert.klass, "passed": cert.passed}
    if exp.reference_x is not None:
        summary["x_err"] = float(np.linalg.norm(state.x - exp.reference_x))
    print(_dump(summary), end="")
    return EXIT_BUDGET if state.status == "budget" else EXIT_OK


def cmd_sweep(args) -> int:
    exp = _load_experiment(args)
    jobs = int(os.environ.get("DROSC_JOBS", args.jobs))
    factory = functools.partial(_factory, exp.model.to_dict(), exp.samples)
    rows = schedule_solve(factory, exp.eps_list, exp.k_list, exp.eta_list, exp.solver,
                          exp.reference_x, jobs=jobs, timing=args.timing)
    out = Path(exp.output_dir)
    for r in rows:
        if r.state is not None:
            cfg = exp.model.with_eta(r.eta)
            write_atomic(out / "states" / f"state_{_tag(r.eps, r.k, r.eta)}.json",
                         _dump(_state_record(r.state, cfg, exp.samples)))
    text = sweep_csv(rows)
    write_atomic(out / "sweep.csv", text)
    print(text, end="")
    if any(r.status.startswith("error") for r in rows):
        return EXIT_SOLVE
    return EXIT_BUDGET if any(r.status == "budget" for r in rows) else EXIT_OK


def certify_record(rec: dict, tol: float = 1e-4, solver: SolverConfig | None = None):
    """Rebuild the model stored in a state record and certify its point from scratch."""
    try:
        state = MinimaxState.from_dict(rec["state"])
        cfg = PcdConfig.from_dict(rec["model"])
        points = rec.get("samples")
        model = PcdObjective(cfg, _samples(cfg, state.k, points), state.eps)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid state record: {exc}") from exc
    if state.p.shape != (model.k,) or state.x.shape != (cfg.n,):
        raise ParseError("state dimensions do not match the model")
    return certify_block_stationarity(model, state.x, state.p, tol=tol, cfg=solver)


def cmd_certify(args) -> int:
    cert = certify_record(_read_json(args.state), tol=args.tol)
    text = _dump(cert.to_dict())
    if args.out:
        write_atomic(Path(args.out) / "certificate.json", text)
    print(text, end="")
    return EXIT_OK if cert.passed else EXIT_SOLVE


def cmd_transport(args) -> int:
    from .transport import (DiscreteDistribution, fill_distance, load_csv, voronoi_projection,
                            wasserstein)

    try:
        P = load_csv(args.p)
        Q = load_csv(args.q) if args.q else None
    except (OSError, ValueError, IndexError) as exc:
        raise ParseError(str(exc)) from exc
    report = {}
    if Q is not None:
        report["wasserstein"] = wasserstein(P, Q)
    if args.k is not None:
        k = args.k[0]
        cfg = PcdConfig()
        samples = make_grid_samples(cfg, k)
        if P.nu != samples.nu or not all(samples.contains(a) for a in P.atoms):
            raise ParseError("distribution atoms must lie in the scenario box")
        beta = fill_distance(samples).value
        Pk = voronoi_projection(P, samples)
        dw = wasserstein(P, DiscreteDistribution(Pk.atoms[Pk.weights > 0],
                                                 Pk.weights[Pk.weights > 0]))
        report.update(k=k, fill_distance=beta, projection_distance=dw, margin=beta - dw)
    if not report:
        raise ParseError("transport needs a second distribution or --k")
    print(_dump(report), end="")
    return EXIT_OK if report.get("margin", 0.0) >= -1e-10 else EXIT_SOLVE


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _floats(s):
    return [float(v) for v in s.split(",") if v]


def _ints(s):
    return [int(v) for v in s.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drosc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def axes(p):
        p.add_argument("--config", help="experiment JSON (defaults to the built-in demand model)")
        p.add_argument("--eps", type=_floats, help="comma-separated regularization values")
        p.add_argument("--k", type=_ints, help="comma-separated sample counts")
        p.add_argument("--eta", type=_floats, help="comma-separated ambiguity radii")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("solve-lcp", help="solve an LCP instance from JSON")
    p.add_argument("input")
    p.add_argument("--eps", type=_floats, help="Tikhonov regularization to add first")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve_lcp)

    p = sub.add_parser("run", help="one alternating solve plus certificate")
    axes(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="solve over the eps x k x eta grid, write sweep.csv")
    axes(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="record wall time per row")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("certify", help="re-certify a saved state from scratch")
    p.add_argument("state")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("transport", help="Wasserstein and discretization report")
    p.add_argument("p", help="distribution CSV")
    p.add_argument("q", nargs="?", help="second distribution CSV")
    p.add_argument("--k", type=_ints, help="midpoint grid size for the projection margin")
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("default-config", help="print the built-in experiment config")
    p.set_defaults(func=lambda a: print(_dump(default_config()), end="") or EXIT_OK)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_PARSE
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"drosc: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DroscError as exc:
        print(f"drosc: {exc}", file=sys.stderr)
        return EXIT_SOLVE


if __name__ == "__main__":
    sys.exit(main())
