"""``decompart`` command line.

Exit codes: 0 success, 1 usage, 2 model/document error, 3 numerical
failure, 4 failed invariant.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DecompartError, InvariantFailure, ModelError
from .io import ResultBundle, emit_tables, matrix_table, read_document, vector_table

KIND_CHOICES = ("d", "i", "a", "c", "t", "all")


class UsageError(Exception):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_grid(text: str) -> np.ndarray:
    """``a:b:step`` to an inclusive grid."""
    try:
        a, b, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"--grid expects a:b:step, got {text!r}") from None
    if step <= 0 or b < a:
        raise UsageError("--grid needs step > 0 and b >= a")
    count = int(np.floor((b - a) / step + 1e-9)) + 1
    return a + step * np.arange(count)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decompart", description="Source-attributed analysis of compartmental models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, dynamic=True):
        p.add_argument("models", nargs="+", metavar="MODEL", help="model document(s); bundled names work too")
        p.add_argument("--out", default="out", metavar="DIR")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if dynamic:
            p.add_argument("--t-end", type=float, default=None)
            p.add_argument("--grid", default=None, metavar="a:b:step")
            p.add_argument("--rtol", type=float, default=1e-8)
            p.add_argument("--atol", type=float, default=1e-10)

    common(sub.add_parser("simulate", help="integrate the original system"))
    common(sub.add_parser("decompose", help="substorages and subthroughflows"))
    p = sub.add_parser("paths", help="transient flows and storages along subflow paths")
    common(p)
    p.add_argument("--paths", default=None, metavar="FILE|PATH",
                   help="file with one path per line, or a single inline path; default: document paths")
    p.add_argument("--cycles", type=int, default=None, metavar="m")
    p = sub.add_parser("diact", help="dynamic diact flows and storages")
    common(p)
    p.add_argument("--diact", choices=KIND_CHOICES, default="all")
    p.add_argument("--no-storages", action="store_true")
    p = sub.add_parser("static", help="steady-state decomposition and diact analysis")
    common(p)
    p.add_argument("--diact", choices=KIND_CHOICES, default="all")
    common(sub.add_parser("linear", help="closed-form solution of a linear model"))
    p = sub.add_parser("check", help="run invariant suites; exit 4 on failure")
    common(p)
    p.add_argument("--cycles", type=int, default=8, metavar="m")
    p.add_argument("--skip-paths", action="store_true")
    return parser


# ---------------------------------------------------------------- commands


def _config(args, default_t_end: float = 10.0):
    from .integrator import IntegratorConfig

    grid = parse_grid(args.grid) if args.grid else None
    t_end = args.t_end if args.t_end is not None else (float(grid[-1]) if grid is not None else default_t_end)
    if grid is not None and (grid[0] < 0 or grid[-1] > t_end + 1e-12):
        raise UsageError("--grid must lie inside [0, t_end]")
    if grid is not None:
        grid = np.minimum(grid, t_end)
    return IntegratorConfig(t_end, rtol=args.rtol, atol=args.atol, sample_grid=grid)


def _echo(cfg) -> dict:
    return {"t0": cfg.t0, "t_end": cfg.t_end, "rtol": cfg.rtol, "atol": cfg.atol,
            "samples": len(cfg.grid()), "integrator": "RK45 (Dormand-Prince 5(4)) with dense output"}


def _need_model(doc):
    if doc.model is None:
        raise ModelError(f"{doc.source}: document has no dynamic model")
    return doc.model


def cmd_simulate(doc, args, bundle):
    from .integrator import integrate

    cfg = _config(args)
    tr = integrate(_need_model(doc), cfg, mode="original")
    bundle.config.update(_echo(cfg))
    bundle.add(vector_table("x", tr.times, tr.x, doc.labels, "integrate(mode=original)", "compartment storages"))


def _decomposed_tables(doc, tr, bundle):
    from .decomposition import subflows_from_snapshot
    from .model import snapshot_from_flows

    labels = doc.labels
    bundle.add(vector_table("x", tr.times, tr.x, labels, "integrate(mode=decomposed)", "compartment storages"))
    bundle.add(matrix_table("X", tr.times, tr.X, "X", "integrate", "substorages from external inputs"))
    bundle.add(matrix_table("Xinit", tr.times, tr.Xinit, "Xinit", "integrate", "substorages from initial stocks"))
    Tin, Tout = [], []
    for r, (t, x) in enumerate(zip(tr.times, tr.x)):
        F, z, y = tr.model.evaluate(t, x)
        sub = subflows_from_snapshot(snapshot_from_flows(t, x, F, z, y), tr.X[r], tr.Xinit[r])
        Tin.append(sub.Tin)
        Tout.append(sub.Tout)
    bundle.add(matrix_table("Tin", tr.times, np.array(Tin).reshape(-1, tr.n, tr.n), "Tin", "subflows_from_snapshot",
                            "inward subthroughflows"))
    bundle.add(matrix_table("Tout", tr.times, np.array(Tout).reshape(-1, tr.n, tr.n), "Tout",
                            "subflows_from_snapshot", "outward subthroughflows"))


def cmd_decompose(doc, args, bundle):
    from .integrator import integrate

    cfg = _config(args)
    tr = integrate(_need_model(doc), cfg)
    bundle.config.update(_echo(cfg))
    _decomposed_tables(doc, tr, bundle)


def _read_paths(args, doc):
    from .pathflow import natural_decomposition, parse_path

    if args.paths:
        p = Path(args.paths)
        lines = p.read_text(encoding="utf-8").splitlines() if p.exists() else [args.paths]
        lines = [s.strip() for s in lines if s.strip() and not s.lstrip().startswith("#")]
        return [parse_path(s, doc.labels, args.cycles) for s in lines]
    if doc.paths:
        return doc.paths
    model = doc.model
    _, z, _ = model.evaluate(0.0, model.x0)
    out = []
    for k in np.flatnonzero(z > 0) + 1:
        out += natural_decomposition(model, int(k), cycles=args.cycles or 6)
    return out


def cmd_paths(doc, args, bundle):
    from .integrator import integrate
    from .pathflow import path_records

    model = _need_model(doc)
    paths = _read_paths(args, doc)
    if not paths:
        raise UsageError("no paths given and none could be derived")
    cfg = _config(args)
    tr = integrate(model, cfg, paths=paths)
    bundle.config.update(_echo(cfg))
    bundle.extra["paths"] = []
    for w, rec in enumerate(path_records(tr), start=1):
        cols = [f"{doc.labels[c - 1]}@{v + 1}" for v, c in enumerate(rec.chain)]
        text = rec.path.to_text(doc.labels)
        bundle.extra["paths"].append({"index": w, "path": text, "visits": len(rec.chain)})
        for what, arr in (("storage", rec.storage), ("inflow", rec.inflow), ("outflow", rec.outflow)):
            bundle.add(vector_table(f"path{w}_{what}", tr.times, arr, cols, "path_records", f"transient {what}: {text}"))


def _kinds(arg) -> tuple[str, ...]:
    return ("d", "i", "a", "c", "t") if arg == "all" else (arg,)


def cmd_diact(doc, args, bundle):
    from .diact import diact_series
    from .integrator import integrate

    cfg = _config(args)
    tr = integrate(_need_model(doc), cfg)
    bundle.config.update(_echo(cfg))
    kinds = _kinds(args.diact)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = diact_series(tr, kinds, storages=not args.no_storages)
    bundle.flags += res.flags + [str(w.message) for w in caught]
    for k in kinds:
        bundle.add(matrix_table(f"N{k}", res.times, res.N[k], f"N{k}", "diact_distribution"))
        for variant, sym in (("composite", "T"), ("simple", "Ttilde"), ("init", "Tinit"),
                             ("init_simple", "Ttilde_init"), ("total", "Ttotal")):
            bundle.add(matrix_table(f"{sym}{k}", res.times, res.flows[variant][k], f"{sym}{k}", "diact_flows"))
        if res.storages:
            for variant, sym in (("composite", "X"), ("simple", "Xtilde"), ("init", "Xinit"),
                                 ("init_simple", "Xtilde_init")):
                bundle.add(matrix_table(f"{sym}{k}", res.times, res.storages[variant][k], f"{sym}{k}",
                                        "diact_storages"))


def cmd_static(doc, args, bundle):
    from .static import StaticSystem, residence_times, static_decompose, static_diact

    if doc.static is not None:
        s = doc.static
        bundle.config["source"] = "static block"
    else:
        from .integrator import integrate
        from .model import snapshot

        model = _need_model(doc)
        cfg = _config(args, default_t_end=1000.0)
        tr = integrate(model, cfg, mode="original")
        s = StaticSystem.from_snapshot(snapshot(model, cfg.t_end, tr.x[-1]))
        bundle.config.update(_echo(cfg))
        bundle.config["source"] = f"terminal snapshot at t={cfg.t_end!r}"
    bundle.flags += list(s.notes)
    res_b = s.balance_residual()
    bundle.extra["balance_residual"] = res_b
    if not s.balanced:
        bundle.flags.append(f"flows are not balanced (relative residual {res_b:.3g})")
    X, T = static_decompose(s)
    t = [0.0]
    if X is not None:
        bundle.add(matrix_table("X", t, X[None], "X", "static_decompose", "steady substorages"))
        bundle.add(vector_table("residence", t, residence_times(s).r[None], doc.labels, "residence_times"))
    bundle.add(matrix_table("T", t, T[None], "T", "static_decompose", "steady subthroughflows"))
    d = static_diact(s)
    bundle.flags += d.flags
    for k in _kinds(args.diact):
        bundle.add(matrix_table(f"N{k}", t, d.N[k][None], f"N{k}", "static_diact"))
        bundle.add(matrix_table(f"T{k}", t, d.T[k][None], f"T{k}", "static_diact", "composite flows"))
        bundle.add(matrix_table(f"Ttilde{k}", t, d.Ttilde[k][None], f"Ttilde{k}", "static_diact", "simple flows"))
        if k == "a":
            bundle.add(matrix_table("Ttilde_a_entry", t, d.Ttilde_a_entry[None], "Ttilde_a_entry", "static_diact",
                                    "simple acyclic flows with the external input counted at k_k"))
        if d.X is not None:
            bundle.add(matrix_table(f"X{k}", t, d.X[k][None], f"X{k}", "static_diact", "composite storages"))
            bundle.add(matrix_table(f"Xtilde{k}", t, d.Xtilde[k][None], f"Xtilde{k}", "static_diact",
                                    "simple storages"))


def cmd_linear(doc, args, bundle):
    from .linear import LinearModel, solve_linear

    model = _need_model(doc)
    lm = LinearModel.from_model(model)
    cfg = _config(args)
    times = cfg.grid()
    sol = solve_linear(lm, times)
    bundle.config.update({"t_end": cfg.t_end, "samples": len(times), "method": sol.method,
                          "quadrature_tol": 1e-10})
    bundle.add(vector_table("x", times, sol.x, doc.labels, "solve_linear"))
    bundle.add(matrix_table("X", times, sol.X, "X", "solve_linear"))
    bundle.add(matrix_table("Xinit", times, sol.Xinit, "Xinit", "solve_linear"))


def cmd_check(doc, args, bundle):
    from .checks import CheckReport, run_dynamic_suites, run_static_suites

    rep = CheckReport()
    if doc.model is not None:
        cfg = _config(args)
        bundle.config.update(_echo(cfg))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep.results += run_dynamic_suites(doc.model, cfg, cycles=args.cycles, paths=not args.skip_paths).results
    if doc.static is not None:
        rep.results += run_static_suites(doc.static).results
    bundle.extra["checks"] = [
        {"name": r.name, "passed": r.passed, "value": r.value, "tolerance": r.tolerance, "detail": r.detail}
        for r in rep.results
    ]
    for r in rep.results:
        print(f"[{bundle.run}] {r.line()}")
    if not rep.passed:
        failed = sum(not r.passed for r in rep.results)
        raise InvariantFailure(f"{failed} invariant suite(s) failed")


COMMANDS = {
    "simulate": cmd_simulate,
    "decompose": cmd_decompose,
    "paths": cmd_paths,
    "diact": cmd_diact,
    "static": cmd_static,
    "linear": cmd_linear,
    "check": cmd_check,
}


def _run_one(path: str, args) -> tuple[int, str]:
    try:
        doc = read_document(path)
        run = doc.name or Path(path).stem
        bundle = ResultBundle(run, args.command, {"model": doc.source, "command_line": args._argv})
        failure = None
        try:
            COMMANDS[args.command](doc, args, bundle)
        except InvariantFailure as exc:
            failure = exc
        emit_tables(bundle, Path(args.out) / run, args.format)
        if failure is not None:
            raise failure
        return 0, f"{run}: wrote {Path(args.out) / run}"
    except (DecompartError, UsageError) as exc:
        return exc.exit_code, f"{path}: {exc}"
    except FileNotFoundError as exc:
        return 2, f"{path}: {exc}"


def run_command(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    args._argv = " ".join(argv)
    try:
        workers = max(1, int(os.environ.get("DECOMPART_THREADS", "1")))
    except ValueError:
        print("DECOMPART_THREADS must be an integer", file=sys.stderr)
        return 1
    with ThreadPoolExecutor(max_workers=min(workers, len(args.models))) as pool:
        results = list(pool.map(lambda p: _run_one(p, args), args.models))
    code = 0
    for c, msg in results:
        print(msg, file=sys.stderr if c else sys.stdout)
        code = max(code, c)
    return code


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
