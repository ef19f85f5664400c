"""``nekhlab`` command line: classify, zonemap, normalform, simulate, growth, verify.

Exit codes: 0 success, 1 validation error, 2 numerical failure.  Data goes
to stdout (JSON or a table); diagnostics go to stderr as JSON.  Every run
writes ``manifest-<command>.json`` into ``--out-dir``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2


def _floats(text, n=None, what="value"):
    try:
        vals = [float(x) for x in str(text).replace(" ", "").split(",") if x != ""]
    except ValueError:
        raise ValueError(f"cannot parse {what} {text!r} as comma-separated numbers") from None
    if n is not None and len(vals) != n:
        raise ValueError(f"{what} needs {n} comma-separated numbers, got {len(vals)}")
    return vals


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default)


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return path


class Context:
    def __init__(self, args):
        from . import config
        self.args = args
        self.cfg = config.load(args.config)
        if args.seed is not None:
            self.cfg.harness["seed"] = int(args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ValueError("--threads must be >= 1")
            self.cfg.harness["threads"] = int(args.threads)
        os.makedirs(args.out_dir, exist_ok=True)
        self.inputs = [args.config] if args.config else []
        self.outputs = []
        self.extra = {}

    def path(self, name):
        p = os.path.join(self.args.out_dir, name)
        self.outputs.append(p)
        return p

    def manifest(self, argv):
        from .harness import run_manifest
        params = self.cfg.to_dict()
        params["command_options"] = {k: v for k, v in vars(self.args).items()
                                     if k not in ("func", "out_dir")}
        params.update(self.extra)
        m = run_manifest(self.args.command, params, self.cfg.seed, self.inputs,
                         [p for p in self.outputs if os.path.exists(p)], argv)
        p = os.path.join(self.args.out_dir, f"manifest-{self.args.command}.json")
        _write(p, _dump(m) + "\n")
        return m


# ------------------------------------------------------------- commands

def cmd_classify(ctx: Context):
    from .geometry import classify
    zp = ctx.cfg.zone
    out = []
    for text in ctx.args.point:
        a = np.array(_floats(text, zp.d, "point"))
        lab = classify(a, zp)
        out.append({"point": a.tolist(), **lab.to_dict()})
    print(_dump(out[0] if len(out) == 1 else out))


def cmd_zonemap(ctx: Context):
    from .geometry import zone_map
    zp = ctx.cfg.zone
    box = _floats(ctx.args.box, 4, "box") if ctx.args.box else [-4 * zp.R, 4 * zp.R, -4 * zp.R, 4 * zp.R]
    res = [int(v) for v in _floats(ctx.args.res, None, "resolution")]
    nx, ny = (res[0], res[0]) if len(res) == 1 else res[:2]
    zm = zone_map(box, nx, ny, zp, threads=ctx.cfg.threads)
    zm.to_csv(ctx.path("zonemap.csv"))
    zm.to_pgm(ctx.path("zonemap.pgm"))
    png = None
    if not ctx.args.no_png:
        from . import plotting
        png = plotting.plot_zonemap(zm.S, box, ctx.path("zonemap.png"))
    counts = {str(int(c)): int((zm.S == c).sum()) for c in np.unique(zm.S)}
    print(_dump({"box": box, "nx": nx, "ny": ny, "counts": counts, "png": png is not None}))


def _load_system(path, d):
    from .dynamics import HamiltonianSystem, em_example
    if path is None:
        return em_example(d)
    with open(path) as fh:
        sys_ = HamiltonianSystem.from_json(fh.read())
    if sys_.d != d:
        raise ValueError(f"system dimension {sys_.d} does not match [zone] d = {d}")
    return sys_


def cmd_normalform(ctx: Context):
    from .cohomology import normal_form
    from .symbols import dyadic_radii
    cfg, a = ctx.cfg, ctx.args
    system = _load_system(a.system, cfg.zone.d)
    if a.system:
        ctx.inputs.append(a.system)
    radii = dyadic_radii(a.radius_min, a.radius_factor, a.n_radii)
    beta = a.beta if a.beta is not None else cfg.symbols.get("beta")
    res = normal_form((system.h0, system.P), cfg.cutoff, N_target=a.N_target or cfg.symbols["N_target"],
                      max_steps=a.max_steps or cfg.symbols["max_steps"], budget=cfg.budget,
                      beta=beta, radii=radii)
    _write(ctx.path("normalform.json"), _dump(res.to_dict()) + "\n")
    table = res.ledger_table()
    _write(ctx.path("ledger.txt"), table + "\n")
    print(table)
    print(f"status: {res.status}  steps: {res.steps}  planned: {res.planned_steps}", file=sys.stderr)


def cmd_simulate(ctx: Context):
    from dataclasses import replace
    from .dynamics import Integrator
    from .symbols import PhasePoint
    cfg, a = ctx.cfg, ctx.args
    d = cfg.zone.d
    system = _load_system(a.system, d)
    if a.system:
        ctx.inputs.append(a.system)
    a0 = _floats(a.a0, d, "a0") if a.a0 else cfg.require("integrator", "a0")
    phi0 = _floats(a.phi0, d, "phi0") if a.phi0 else (cfg.run["phi0"] or [0.0] * d)
    t0 = float(cfg.run["t0"] or 0.0)
    t_end = a.t_end if a.t_end is not None else float(cfg.require("integrator", "t_end"))
    over = {k: v for k, v in (("dt", a.dt), ("n_samples", a.samples), ("spacing", a.spacing),
                              ("maxit", a.maxit), ("max_halvings", a.max_halvings)) if v is not None}
    settings = replace(cfg.integrator, **over)
    traj = Integrator(system.H).run(PhasePoint(np.array(a0, float), np.array(phi0, float), t0),
                                    t_end, settings)
    traj.to_csv(ctx.path("trajectory.csv"))
    audit = dict(traj.audit)
    ctx.extra["audit"] = {k: v for k, v in audit.items() if k != "wall_seconds"}
    if a.png:
        from . import plotting
        plotting.plot_trajectory(traj, ctx.path("trajectory.png"))
    print(_dump({"samples": len(traj), "sup": float(traj.sup[-1]), "audit": audit}))
    if not audit["symplectic_ok"]:
        print(_dump({"error": "symplectic audit failed",
                     "max_defect": audit["symplectic_defect_max"]}), file=sys.stderr)
        return EXIT_NUMERICAL


def cmd_growth(ctx: Context):
    from .dynamics import Trajectory
    from .harness import growth_fit, Envelope, envelope_from_doubles, doubling_times, japanese
    cfg, a = ctx.cfg, ctx.args
    ctx.inputs.append(a.trajectory)
    traj = Trajectory.from_csv(a.trajectory)
    hz = cfg.harness
    N = a.N if a.N is not None else hz["N"]
    rep = growth_fit(traj, a.R0, decades=hz["decades"], constant=hz["constant"],
                     min_samples=int(hz["min_samples"]), min_decades=hz["min_decades"], N=N, K_d=a.K)
    R0 = rep.R0
    env = None
    if N is not None and a.K is not None:
        env = Envelope(a.K, N, R0)
    else:
        taus = doubling_times(traj, R0)
        if taus.size >= 2:
            env = envelope_from_doubles(taus, R0)
            rep.N, rep.K_d = env.N, env.K_d
            rep.structural_eps = 1.0 / env.N
            rep.notes.append("envelope fitted from observed doubling times")
    t = traj.times
    if env is not None:
        curve = env(t)
    else:
        curve = rep.constant * R0 * japanese(t / R0) ** max(rep.eps_hat, 0.0)
        rep.notes.append("no doublings observed: envelope column is 16 R0 <t/R0>^eps_hat")
    _write(ctx.path("growth.json"), _dump(rep.to_dict()) + "\n")
    with open(ctx.path("growth_plot.csv"), "w") as fh:
        fh.write("t,sup,envelope\n")
        for ti, si, ei in zip(t, traj.sup, curve):
            fh.write(f"{float(ti)!r},{float(si)!r},{float(ei)!r}\n")
    if a.png:
        from . import plotting
        plotting.plot_growth(t, traj.sup, curve, ctx.path("growth.png"))
    print(_dump(rep.to_dict()))


def cmd_verify(ctx: Context):
    from .harness import verify_suite
    res = verify_suite(seed=ctx.cfg.seed, cutoff=ctx.cfg.cutoff, zone=ctx.cfg.zone,
                       quick=not ctx.args.full)
    _write(ctx.path("verify.json"), _dump({k: v for k, v in res.items()}) + "\n")
    print(_dump(res))
    return EXIT_OK if res["all_pass"] else EXIT_NUMERICAL


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with [symbols], [zone], [integrator], [harness]")
    common.add_argument("--out-dir", default=".", help="directory for outputs and the manifest")
    common.add_argument("--seed", type=int, help="RNG seed (overrides [harness] seed)")
    common.add_argument("--threads", type=int, help="worker processes for rasters (default: cores)")

    p = argparse.ArgumentParser(prog="nekhlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", parents=[common], help="print the zone label of action points")
    c.add_argument("point", nargs="+", help="comma-separated action vector, e.g. 1e9,0")
    c.set_defaults(func=cmd_classify)

    c = sub.add_parser("zonemap", parents=[common], help="label a 2-d grid: CSV + PGM (+ PNG)")
    c.add_argument("--box", help="x0,x1,y0,y1 (default: [-4R, 4R]^2)")
    c.add_argument("--res", default="200", help="NX or NX,NY (default 200)")
    c.add_argument("--no-png", action="store_true", help="skip the PNG rendering")
    c.set_defaults(func=cmd_zonemap)

    c = sub.add_parser("normalform", parents=[common], help="run normal-form steps, print the ledger")
    c.add_argument("--system", help="Hamiltonian JSON (default: the EM example)")
    c.add_argument("--beta", type=float, help="perturbation order (default: fitted)")
    c.add_argument("--N-target", dest="N_target", type=float)
    c.add_argument("--max-steps", dest="max_steps", type=int)
    c.add_argument("--radius-min", dest="radius_min", type=float, default=2.0 ** 13)
    c.add_argument("--radius-factor", dest="radius_factor", type=float, default=64.0)
    c.add_argument("--n-radii", dest="n_radii", type=int, default=None)
    c.set_defaults(func=cmd_normalform)

    c = sub.add_parser("simulate", parents=[common], help="implicit-midpoint trajectory to CSV")
    c.add_argument("--system", help="Hamiltonian JSON (default: the EM example)")
    c.add_argument("--a0", help="initial actions, comma-separated")
    c.add_argument("--phi0", help="initial angles, comma-separated (default 0)")
    c.add_argument("--t-end", dest="t_end", type=float)
    c.add_argument("--dt", type=float)
    c.add_argument("--samples", type=int, help="number of recorded samples (decimation)")
    c.add_argument("--spacing", choices=("log", "uniform"))
    c.add_argument("--maxit", type=int, help="fixed-point iteration cap")
    c.add_argument("--max-halvings", dest="max_halvings", type=int)
    c.add_argument("--png", action="store_true", help="also render trajectory.png")
    c.set_defaults(func=cmd_simulate)

    c = sub.add_parser("growth", parents=[common], help="fit the growth exponent of a trajectory CSV")
    c.add_argument("trajectory", help="CSV written by `simulate`")
    c.add_argument("--R0", type=float, help="reference radius (default |a(0)|)")
    c.add_argument("--N", type=float, help="envelope exponent (default: [harness] N or fitted)")
    c.add_argument("--K", type=float, help="envelope constant K_d")
    c.add_argument("--png", action="store_true", help="also render growth.png")
    c.set_defaults(func=cmd_growth)

    c = sub.add_parser("verify", parents=[common], help="run the property suite")
    c.add_argument("--full", action="store_true", help="larger sample sizes")
    c.set_defaults(func=cmd_verify)
    return p


def _numerical_errors():
    from .dynamics import FixedPointDivergence, RuntimeBudgetExceeded
    from .cohomology import BudgetExhausted
    from .lie import FlowError
    from .geometry import GeometryError
    from .symbols import TruncationError
    return (FixedPointDivergence, RuntimeBudgetExceeded, BudgetExhausted, FlowError,
            GeometryError, TruncationError, FloatingPointError, ArithmeticError)


def _report(kind, err):
    doc = {"error": kind, "type": type(err).__name__, "message": str(err)}
    for attr in ("section", "key"):
        if getattr(err, attr, None) is not None:
            doc[attr] = getattr(err, attr)
    print(json.dumps(doc, default=str), file=sys.stderr)


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse usage errors are validation errors
        return EXIT_OK if e.code == 0 else EXIT_VALIDATION
    numerical = _numerical_errors()
    ctx = None
    try:
        ctx = Context(args)
        code = args.func(ctx) or EXIT_OK
    except numerical as err:
        _report("numerical", err)
        code = EXIT_NUMERICAL
    except (ValueError, KeyError, FileNotFoundError, TypeError) as err:
        _report("validation", err)
        return EXIT_VALIDATION
    if ctx is not None:
        ctx.manifest(argv)
    return code


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
