"""Command line entry point: ``ddpgd offline|online|fullorder|compare``.

Exit codes: 0 success, 2 usage or configuration error, 3 parameter outside
its domain, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fullorder as fo
from . import report as rp
from .config import PRESETS, BenchmarkConfig, ConfigError, load_config, parse_strategy, preset
from .dd_offline import (CorruptLibraryError, SchemaError, build_library, default_intervals, load_library,
                         save_library)
from .dd_online import OnlineSolver, ParameterError
from .fem import AssemblyError, ConfigurationError
from .linalg import NoConvergenceError, SingularMatrixError
from .mesh import InvalidGeometryError, TopologyError, UnsupportedMapError
from .pgd import EnrichmentError, OutOfRangeError

EXIT_OK, EXIT_USAGE, EXIT_PARAM, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def parse_mu(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --mu value {text!r}") from None


def resolve_config(args) -> BenchmarkConfig:
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset(args.preset or "poisson_2d")
    if getattr(args, "strategy", None) and isinstance(args.strategy, str):
        cfg.strategy, cfg.n_aip = parse_strategy(args.strategy, cfg.n_aip)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    cfg.validate()
    return cfg


def queries(cfg: BenchmarkConfig, bench, mu_arg) -> list[list[float]]:
    if mu_arg:
        mu = parse_mu(mu_arg)
        if len(mu) != bench.grid.ndim:
            raise ParameterError(f"{bench.id} expects {bench.grid.ndim} parameter values, got {len(mu)}")
        return [mu]
    return cfg.default_queries(bench)


def reference_field(cfg: BenchmarkConfig, bench, mu):
    """(mesh, nodal values, exact callable or None) of the configured reference."""
    if cfg.reference == "none":
        return None
    if cfg.reference == "exact":
        if bench.exact is None:
            raise ConfigError(f"{bench.id} has no exact solution")
        gmesh, _, _ = bench.global_mesh(mu)
        f = lambda x, y: bench.exact(x, y, mu[0])
        return gmesh, f(gmesh.nodes[:, 0], gmesh.nodes[:, 1]), f
    sol = fo.solve_monolithic(bench, mu) if cfg.reference == "monolithic" else fo.solve_ddfem(bench, mu, cfg.tolerances.gmres)
    return sol.mesh, sol.values, None


def score(values, mesh, ref) -> dict:
    rmesh, rvals, exact = ref
    if rmesh.n_nodes != mesh.n_nodes or not np.allclose(rmesh.nodes, mesh.nodes):
        raise ConfigError("reference and solution live on different meshes")
    return {"E2": fo.error_l2(values, exact if exact is not None else rvals, mesh),
            "Einf": fo.error_linf(values, rvals)}


def intervals_for(cfg, bench):
    if cfg.strategy != "clustered":
        return None
    return default_intervals(bench, cfg.interval_factor)


def build(cfg: BenchmarkConfig, bench):
    t0 = time.perf_counter()
    lib = build_library(bench, cfg.strategy, cfg.tolerances, cfg.seed, cfg.n_aip, cfg.aip_points,
                        intervals_for(cfg, bench), cfg.jobs, cfg.to_dict())
    return lib, time.perf_counter() - t0


# ---------------------------------------------------------------- commands

def cmd_offline(cfg: BenchmarkConfig, library: str | None = None) -> rp.RunReport:
    bench = cfg.make_benchmark()
    out = Path(cfg.out)
    lib_dir = Path(library) if library else out / "library"
    try:
        lib, t_off = build(cfg, bench)
    except EnrichmentError as exc:
        out.mkdir(parents=True, exist_ok=True)
        diag = {"error": str(exc), "report": getattr(exc, "report", None) and exc.report.to_dict(),
                "partial_rank": getattr(getattr(exc, "partial", None), "rank", None)}
        (out / "offline_failure.json").write_text(json.dumps(rp._clean(diag), indent=1, sort_keys=True) + "\n")
        raise
    save_library(lib, lib_dir)
    lib = load_library(lib_dir, bench.id)        # counts below come from the stored artifacts
    rows = rp.offline_rows(lib, cfg.strategy_label, t_off)
    rp.write_table(out / "tables" / "offline.csv", rp.OFFLINE_HEADER, rows)
    rep = rp.RunReport("offline", bench.id, cfg.strategy_label, {"T_off": t_off})
    for name, s in sorted(lib.surrogates.items()):
        after, before = s.mode_counts()
        rep.modes[name] = {"after": after, "before": before, "N_IP": len(s.interface_parts), "d_IP": s.d_ip()}
        rep.stages[name] = s.timings
    rep.extra["library"] = str(lib_dir)
    rep.write(out)
    return rep


def cmd_online(cfg: BenchmarkConfig, library: str | None = None, mu_arg: str | None = None) -> rp.RunReport:
    bench = cfg.make_benchmark()
    out = Path(cfg.out)
    lib = load_library(Path(library) if library else out / "library", bench.id)
    solver = OnlineSolver(lib, bench)
    label = "reduced" if lib.strategy == "reduced_dim" else f"aip:{max(s.n_aip for s in lib.surrogates.values())}"
    rep = rp.RunReport("online", bench.id, label)
    rows = []
    for mu in queries(cfg, bench, mu_arg):
        sol = solver.solve(mu)
        gmesh, values, _ = sol.global_field(bench)
        tag = rp.mu_tag(mu)
        rp.write_field(out / "fields" / f"online_{tag}.csv", gmesh.nodes, values)
        err = {}
        ref = reference_field(cfg, bench, mu)
        if ref is not None:
            err = score(values, gmesh, ref)
            rp.write_error_map(out / "fields" / f"error_map_{tag}.csv", gmesh.nodes, fo.error_map(values, ref[1]))
            rep.errors[tag] = err
        rep.iterations[tag] = sol.iterations
        rep.timings[tag] = {"T_on": sol.timings["total"], **sol.timings}
        rep.stages[tag] = {"history": sol.history}
        rows.append((label, tag, sol.iterations, sol.timings["total"], err.get("E2"), err.get("Einf")))
    rp.write_table(out / "tables" / "online.csv", rp.ONLINE_HEADER, rows)
    rep.modes = {n: dict(zip(("after", "before"), s.mode_counts())) for n, s in sorted(lib.surrogates.items())}
    rep.write(out)
    return rep


def cmd_fullorder(cfg: BenchmarkConfig, mu_arg: str | None = None, solver: str = "both") -> rp.RunReport:
    bench = cfg.make_benchmark()
    out = Path(cfg.out)
    rep = rp.RunReport("fullorder", bench.id)
    rows = []
    for mu in queries(cfg, bench, mu_arg):
        bench.grid.locate(mu)
        tag = rp.mu_tag(mu)
        sols = {}
        if solver in ("monolithic", "both"):
            sols["monolithic"] = fo.solve_monolithic(bench, mu)
        if solver in ("ddfem", "both"):
            sols["ddfem"] = fo.solve_ddfem(bench, mu, cfg.tolerances.gmres)
        for kind, s in sols.items():
            rp.write_field(out / "fields" / f"{kind}_{tag}.csv", s.mesh.nodes, s.values)
            err = {}
            if bench.exact is not None:
                f = lambda x, y: bench.exact(x, y, mu[0])
                err = {"E2": fo.error_l2(s.values, f, s.mesh),
                       "Einf": fo.error_linf(s.values, f(s.mesh.nodes[:, 0], s.mesh.nodes[:, 1]))}
                rep.errors[f"{kind}_{tag}"] = err
            rep.timings[f"{kind}_{tag}"] = s.timings
            if s.iterations is not None:
                rep.iterations[f"{kind}_{tag}"] = s.iterations
                rep.stages[f"{kind}_{tag}"] = {"history": s.history}
            rows.append((kind, tag, s.iterations, s.timings["total"], err.get("E2"), err.get("Einf")))
        if len(sols) == 2:
            rep.extra[f"ddfem_vs_monolithic_{tag}"] = fo.error_linf(sols["ddfem"].values, sols["monolithic"].values)
    rp.write_table(out / "tables" / "fullorder.csv", ("solver", "mu", "N_GMRES", "T", "E2", "Einf"), rows)
    rep.write(out)
    return rep


def cmd_compare(configs: Sequence[BenchmarkConfig], mu_arg: str | None = None, out_dir: str | None = None) -> rp.RunReport:
    if not configs:
        raise ConfigError("no strategies configured")
    names = {c.benchmark for c in configs}
    opts = {json.dumps(c.to_dict()["options"], sort_keys=True) for c in configs}
    if len(names) > 1 or len(opts) > 1:
        raise ConfigError("all compared configurations must use the same benchmark and options")
    configs = sorted(configs, key=lambda c: c.strategy_label)
    labels = [c.strategy_label for c in configs]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate strategies in comparison")
    out = Path(out_dir or configs[0].out)
    bench = configs[0].make_benchmark()
    mus = queries(configs[0], bench, mu_arg)
    refs = {rp.mu_tag(mu): reference_field(configs[0], bench, mu) for mu in mus}
    rep = rp.RunReport("compare", bench.id, ",".join(labels))
    rows = []
    for cfg in configs:
        lib_dir = out / "libraries" / cfg.strategy_label.replace(":", "")
        lib, t_off = build(cfg, bench)
        save_library(lib, lib_dir)
        lib = load_library(lib_dir, bench.id)
        after = sum(s.mode_counts()[0] for s in lib.surrogates.values())
        before = sum(s.mode_counts()[1] for s in lib.surrogates.values())
        d_ip = max(s.d_ip() for s in lib.surrogates.values())
        solver = OnlineSolver(lib, bench)
        rep.timings[cfg.strategy_label] = {"T_off": t_off}
        for mu in mus:
            tag = rp.mu_tag(mu)
            sol = solver.solve(mu)
            gmesh, values, _ = sol.global_field(bench)
            err = score(values, gmesh, refs[tag]) if refs[tag] is not None else {}
            rows.append((cfg.strategy_label, cfg.n_aip if cfg.strategy == "clustered" else "-", d_ip, after, before,
                         t_off, tag, sol.iterations, sol.timings["total"], err.get("E2"), err.get("Einf")))
            rep.iterations[f"{cfg.strategy_label}@{tag}"] = sol.iterations
            rep.timings[cfg.strategy_label][f"T_on@{tag}"] = sol.timings["total"]
            if err:
                rep.errors[f"{cfg.strategy_label}@{tag}"] = err
    rp.write_table(out / "tables" / "compare.csv", rp.COMPARE_HEADER, rows)
    rep.write(out)
    return rep


# ---------------------------------------------------------------- argument parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--preset", help=f"built-in configuration: {', '.join(sorted(PRESETS))}")
    p.add_argument("--jobs", type=int, help="concurrent offline builds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddpgd", description="PGD-accelerated overlapping domain decomposition")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("offline", help="build and store the local surrogates")
    _common(p)
    p.add_argument("--strategy", help="reduced | aip:N")
    p.add_argument("--library", help="library directory (default <out>/library)")
    p = sub.add_parser("online", help="couple stored surrogates at a parameter value")
    _common(p)
    p.add_argument("--library", help="library directory (default <out>/library)")
    p.add_argument("--mu", help="comma-separated parameter values")
    p = sub.add_parser("fullorder", help="monolithic FE and full-order Schwarz reference solves")
    _common(p)
    p.add_argument("--mu", help="comma-separated parameter values")
    p.add_argument("--solver", choices=("monolithic", "ddfem", "both"), default="both")
    p = sub.add_parser("compare", help="side-by-side table of several strategies")
    _common(p)
    p.add_argument("--strategy", action="append", help="reduced | aip:N (repeatable)")
    p.add_argument("--configs", nargs="+", help="several configuration files, one per strategy")
    p.add_argument("--mu", help="comma-separated parameter values")
    return ap


def run(argv: Sequence[str] | None = None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "compare":
            if args.configs:
                cfgs = [load_config(c) for c in args.configs]
            else:
                base = resolve_config(args)
                cfgs = [base.with_strategy(s) for s in (args.strategy or [base.strategy_label])]
            for c in cfgs:
                if args.jobs is not None:
                    c.jobs = args.jobs
                if args.seed is not None:
                    c.seed = args.seed
            rep = cmd_compare(cfgs, args.mu, args.out)
        else:
            cfg = resolve_config(args)
            if args.command == "offline":
                rep = cmd_offline(cfg, args.library)
            elif args.command == "online":
                rep = cmd_online(cfg, args.library, args.mu)
            else:
                rep = cmd_fullorder(cfg, args.mu, args.solver)
    except (UsageError, ConfigError, ConfigurationError, SchemaError, CorruptLibraryError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParameterError, OutOfRangeError, UnsupportedMapError, InvalidGeometryError) as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except (EnrichmentError, NoConvergenceError, SingularMatrixError, AssemblyError, TopologyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(rp._clean({"command": rep.command, "benchmark": rep.benchmark, "strategy": rep.strategy,
                                "iterations": rep.iterations, "errors": rep.errors}), sort_keys=True))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
