"""Command line entry point: ``topofem <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
``TOPOFEM_THREADS`` caps the BLAS/OpenMP thread pools.
"""
from __future__ import annotations

import os

_THREADS = os.environ.get("TOPOFEM_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import ast  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import levelset, stepper, verify, vtk  # noqa: E402
from .config import RunConfig  # noqa: E402
from .errors import ConfigError, InvalidRect, TopofemError  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NO_GUARANTEE = {"paper_merging"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# helpers


def parse_levels(text):
    """``"1,2,3"`` or ``"1-4"`` into a list of integers."""
    text = text.strip()
    if not text:
        raise UsageError("empty level range")
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise UsageError("empty level range")
    return out


_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load,
            ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Call)
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}


def parse_function(spec):
    """Arithmetic expression in ``x1, x2`` (``^`` is a power) as a vectorised callable."""
    tree = ast.parse(spec.replace("^", "**"), mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ConfigError(f"unsupported syntax in function {spec!r}")
        if isinstance(node, ast.Name) and node.id not in ("x1", "x2", *_FUNCS):
            raise ConfigError(f"unknown name {node.id!r} in function {spec!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError(f"unsupported call in function {spec!r}")
    code = compile(tree, "<u>", "eval")

    def f(x):
        x = np.asarray(x, dtype=float)
        val = eval(code, {"__builtins__": {}}, {"x1": x[:, 0], "x2": x[:, 1], **_FUNCS})
        return np.broadcast_to(np.asarray(val, dtype=float), (len(x),))

    return f


def _box(values):
    if values is None:
        return None
    x0, x1, y0, y1, t0, t1 = values
    return ((x0, x1), (y0, y1), (t0, t1))


def load_config(args):
    overrides = {}
    for key in ("scenario", "method", "order", "Lx", "Lt", "c_gamma", "quad_depth", "solver_tol",
                "output_dir", "snapshot_every", "T"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.config:
        return RunConfig.from_file(args.config, **overrides)
    return RunConfig.from_text("", **overrides)


def _output(cfg, name):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


# --------------------------------------------------------------------------
# subcommands


def cmd_converge(args):
    cfg = load_config(args)
    levels = parse_levels(args.levels)
    records = []
    for lx in levels:
        run_cfg = cfg.replace(Lx=lx, Lt=-1 if args.couple else cfg.Lt)
        record, _ = stepper.run(None, run_cfg, on_step=_snapshotter(run_cfg))
        records.append(record)
        logging.getLogger(__name__).info("Lx=%d done: %s", lx, record)
    records = verify.with_orders(records)
    path = Path(args.csv) if args.csv else _output(cfg, f"convergence_{cfg.scenario}_{cfg.method}_m{cfg.order}.csv")
    comment = f"{cfg.scenario}: no theoretical guarantee" if cfg.scenario in NO_GUARANTEE else None
    verify.write_convergence_csv(path, records, comment)
    print(verify.format_table(records))
    print(f"wrote {path}")
    return EXIT_OK


def _snapshotter(cfg):
    if cfg.snapshot_every <= 0:
        return None

    def hook(state):
        if state.n % cfg.snapshot_every == 0:
            vtk.write_snapshot(_output(cfg, f"{cfg.scenario}_Lx{cfg.Lx}_{state.n:05d}.vtk"), state)

    return hook


def cmd_classify(args):
    field = levelset.get_scenario(args.scenario)
    report = levelset.classify_scenario(field, box=_box(args.box))
    print(report.to_json(field.name))
    return EXIT_OK


def cmd_transport(args):
    field = levelset.get_scenario(args.scenario)
    u = parse_function(args.u)
    res = verify.transport_identity_check(field, u, args.t0, args.dt, resolution=args.resolution)
    print("scenario,t0,dt,lhs,rhs,rel_err")
    print(f"{field.name},{args.t0!r},{args.dt!r},{res.lhs!r},{res.rhs!r},{res.rel_err!r}")
    return EXIT_OK


def cmd_blowup(args):
    field = levelset.get_scenario(args.scenario)
    hi, lo = args.decades
    n = max(2, int(round(abs(hi - lo) * args.per_decade)) + 1)
    dts = np.logspace(hi, lo, n)
    res = verify.blowup_demo(field, dts, h=args.h, depth=args.depth)
    rows = ["dt,value"] + [f"{d!r},{v!r}" for d, v in zip(res.dts, res.values)]
    if args.csv:
        Path(args.csv).write_text("\n".join(rows) + f"\n# slope,{res.slope!r}\n")
    print("\n".join(rows))
    print(f"slope {res.slope:.4f}")
    return EXIT_OK


def cmd_snapshot(args):
    cfg = load_config(args)
    times = [float(t) for t in args.times.split(",") if t.strip()]
    if not times:
        raise UsageError("no snapshot times given")
    wanted = {int(round(t / cfg.dt)): t for t in times}
    if max(wanted) > cfg.n_steps:
        cfg = cfg.replace(T=max(wanted) * cfg.dt)
    written = []

    def hook(state):
        if state.n in wanted:
            path = _output(cfg, f"snapshot_{cfg.scenario}_t{wanted[state.n]:.4g}.vtk")
            vtk.write_snapshot(path, state)
            written.append(path)

    stepper.run(None, cfg.replace(T=max(wanted) * cfg.dt), on_step=hook)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="topofem", description="Unfitted FEM for the heat equation on evolving level-set domains")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def run_options(sp):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--scenario")
        sp.add_argument("--method", choices=("bdf1", "bdf2"))
        sp.add_argument("--order", type=int)
        sp.add_argument("--Lx", type=int)
        sp.add_argument("--Lt", type=int)
        sp.add_argument("--c-gamma", dest="c_gamma", type=float)
        sp.add_argument("--quad-depth", dest="quad_depth", type=int)
        sp.add_argument("--solver-tol", dest="solver_tol", type=float)
        sp.add_argument("--T", type=float)
        sp.add_argument("--output-dir", dest="output_dir")
        sp.add_argument("--snapshot-every", dest="snapshot_every", type=int)

    c = sub.add_parser("converge", help="convergence study over refinement levels")
    run_options(c)
    c.add_argument("--levels", default="1,2,3", help="e.g. 1,2,3 or 1-4")
    c.add_argument("--no-couple", dest="couple", action="store_false",
                   help="keep Lt fixed instead of the method's default coupling")
    c.add_argument("--csv")
    c.set_defaults(func=cmd_converge)

    k = sub.add_parser("classify", help="critical point classification as a JSON line")
    k.add_argument("scenario", choices=levelset.scenario_names())
    k.add_argument("--box", type=float, nargs=6, metavar=("X0", "X1", "Y0", "Y1", "T0", "T1"))
    k.set_defaults(func=cmd_classify)

    t = sub.add_parser("transport-check", help="Reynolds transport identity check")
    t.add_argument("scenario", choices=levelset.scenario_names())
    t.add_argument("--t0", type=float, default=0.0)
    t.add_argument("--dt", type=float, default=0.1)
    t.add_argument("--u", default="1", help="time-independent u(x1, x2), e.g. '1+x1^2'")
    t.add_argument("--resolution", type=int, default=8)
    t.set_defaults(func=cmd_transport)

    b = sub.add_parser("blowup-demo", help="area growth rate at the merging time")
    b.add_argument("--scenario", default="paper_merging", choices=levelset.scenario_names())
    b.add_argument("--decades", type=float, nargs=2, default=(-2.0, -5.0), metavar=("HI", "LO"),
                   help="log10 of the largest and smallest dt")
    b.add_argument("--per-decade", dest="per_decade", type=float, default=2.0)
    b.add_argument("--h", type=float, default=1.0 / 128)
    b.add_argument("--depth", type=int, default=4)
    b.add_argument("--csv")
    b.set_defaults(func=cmd_blowup)

    s = sub.add_parser("snapshot", help="VTK snapshots of tags, solution and interface")
    run_options(s)
    s.add_argument("--times", default="0.1,0.25,0.4")
    s.set_defaults(func=cmd_snapshot)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, ConfigError, InvalidRect) as exc:
        print(f"topofem: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    except TopofemError as exc:
        print(f"topofem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"topofem: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
