"""Command line entry point: ``lightray <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend, set_threads
from .errors import ConfigError, NumericalError, ZeroDataError
from .experiments import (
    METHODS,
    ExperimentConfig,
    StageError,
    export_slices,
    export_volume,
    read_report_table,
    run_experiment,
)
from .forward import assemble_operator, enumerate_rays
from .grid import rasterize_phantom

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("lightray")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg.noise["seed"] = int(args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_phantom(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    g = cfg.build_grid()
    x = rasterize_phantom(cfg.build_phantom(), g)
    export_volume(x, g, out / "x_true.raw")
    fmts = [f for f in cfg.output["formats"] if f in ("pgm", "csv")]
    if fmts:
        export_slices(x, g, out / "slices" / "true", fmts)
    print(f"phantom {cfg.phantom['kind']}: {g.T} slices of {g.nx}x{g.nx} -> {out}")
    return EXIT_OK


def cmd_assemble(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    g = cfg.build_grid()
    rays = enumerate_rays(g, cfg.ray_policy())
    A = assemble_operator(g, rays, scale_by_segment_length=bool(cfg.rays["scale_by_segment_length"]))
    rays.to_csv(out / "rays.csv")
    if not args.no_matrix:
        A.write_matrix_market(out / "operator.mtx")
    summary = {"rows": A.m, "cols": A.ncols, "nnz": A.nnz,
               "max_row_nnz": int(np.diff(A.indptr).max()) if A.m else 0}
    (out / "operator.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"operator {A.m} x {A.ncols}, {A.nnz} nonzeros -> {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    if args.method == "all":
        methods = list(cfg.solvers)
    else:
        if args.method not in cfg.solvers:
            cfg.solvers[args.method] = {}
            cfg.validate()
        methods = [args.method]
    rep = run_experiment(cfg, out, methods=methods)
    print(rep.format_table())
    return EXIT_OK


def cmd_analyze(args) -> int:
    from . import spectral as sp

    out = Path(args.out or "lightray-out")
    out.mkdir(parents=True, exist_ok=True)
    res = {"n": args.n, "delta": args.delta, "trials": args.trials, "seed": args.seed or 0}
    res["stability_estimate"] = sp.estimate_stability_constant(args.n, args.delta, args.trials, args.seed or 0)
    res["stability_infimum"] = sp.stability_infimum(args.n, args.delta)
    if args.n == 2:
        res["smoothing_gain"] = sp.smoothing_order_check(2, args.j_max)
        lines = [sp.predict_artefacts(*p) for p in sp.sphere_lightlike_conormals()]
        sp.write_artefact_csv(out / "artefact_lines.csv", lines, np.linspace(-2.0, 2.0, 41))
        res["artefact_lines"] = [{"t": ln.t, "x": list(ln.x), "direction": list(ln.direction)} for ln in lines]
    (out / "analysis.json").write_text(json.dumps(res, indent=2) + "\n")
    print(f"stability ratio (min over {args.trials} trials): {res['stability_estimate']:.6f}"
          f"  infimum: {res['stability_infimum']:.6f}")
    for j, gain in res.get("smoothing_gain", []):
        print(f"N^{j}: fitted Sobolev gain {gain:.3f}")
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run or args.out or "lightray-out")
    path = run / "report.csv"
    if not path.exists():
        raise ConfigError(f"no report.csv in {run}")
    rows = read_report_table(path)
    print(f"{'Method':<14}{'RRE (DP iter)':<20}{'Min RRE (iter)':<20}")
    for r in rows:
        dp = f"{r['rre_dp']} ({r['iter_dp']})" if r["iter_dp"] else "-"
        mn = f"{r['rre_min']} ({r['iter_min']})" if r["iter_min"] else "-"
        print(f"{r['method']:<14}{dp:<20}{mn:<20}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON experiment config")
    common.add_argument("--seed", type=int, help="noise seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lightray", parents=[common],
                                description="Light ray transform reconstruction experiments.")
    p.add_argument("--version", action="version", version=f"lightray {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantom", parents=[common], help="rasterize the configured phantom")
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("assemble", parents=[common], help="enumerate rays and build the operator")
    sp.add_argument("--no-matrix", action="store_true", help="skip the Matrix Market dump")
    sp.set_defaults(func=cmd_assemble)

    sp = sub.add_parser("solve", parents=[common], help="run reconstructions")
    sp.add_argument("--method", choices=list(METHODS) + ["all"], default="all")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("analyze", parents=[common], help="Fourier-side diagnostics")
    sp.add_argument("--n", type=int, default=2, help="spatial dimension")
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--j-max", type=int, default=2)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("report", parents=[common], help="print a run's RRE table")
    sp.add_argument("--run", help="run directory (default: --out)")
    sp.set_defaults(func=cmd_report)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.original
    if isinstance(exc, (NumericalError, ZeroDataError, ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERICAL
    return EXIT_CONFIG


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        set_threads(args.threads)
    log.info("backend: %s", backend())
    try:
        return args.func(args)
    except (ConfigError, StageError, ValueError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        code = _exit_code(exc)
        kind = "numerical failure" if code == EXIT_NUMERICAL else "config error"
        print(f"error ({kind}): {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
