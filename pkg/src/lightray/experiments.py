"""Config-driven reconstruction experiments and their file outputs.

A config is a TOML (or JSON) document with sections ``grid``,
``phantom``, ``rays``, ``noise``, ``prior``, ``solvers.<method>`` and
``output``.  Only ``solvers`` must list something; every other section
falls back to the desk-scale Example-1 defaults below.  Unknown keys are
rejected.

Solver sections accept the :class:`~lightray.solvers.SolverOptions`
fields plus ``lambda`` (``"optimal"``, ``"sweep"`` or a number) and
``lambda_grid``.  Experiments record the DP iterate but run all
``max_iters`` iterations unless ``dp_enabled = true``.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import subprocess
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .errors import ConfigError, LightrayError
from .forward import RayPolicy, add_noise, assemble_operator, enumerate_rays
from .grid import Phantom, SpaceTimeGrid, build_grid, rasterize_phantom
from .priors import MaternParams, build_covariance_operator
from .rawio import write_raw
from .solvers import (
    LambdaRule,
    ReconResult,
    SolverOptions,
    estimate_sigma1,
    fista_select,
    gen_tikhonov,
    hybrid_tikhonov,
    landweber,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
import tomli_w

log = logging.getLogger(__name__)

METHODS = ("landweber", "fista", "tikhonov", "gen-tikhonov")
FORMATS = ("csv", "pgm", "raw")

DEFAULTS = {
    "grid": {"nx": 25, "extent": [-3.0, 3.0], "T": 10, "time_extent": [0.0, 4.0]},
    "phantom": {"kind": "f1", "a": 0.05, "c": 0.0, "t0": 1.2, "t1": 2.8},
    "rays": {"mode": "null-shell", "scale_by_segment_length": False},
    "noise": {"level": 5.0, "seed": 1},
    "prior": {"nu": 1.5, "ell": 0.05, "sigma2": 1.0},
    "output": {"directory": "lightray-out", "formats": ["csv", "pgm", "raw"]},
}
OPTIONAL_KEYS = {"rays": {"eps_ray"}}

_SOLVER_KEYS = {f.name for f in fields(SolverOptions)} - {"lambda_rule"} | {"lambda", "lambda_grid"}
_SOLVER_DEFAULTS = {"dp_enabled": False}


class StageError(LightrayError):
    """A failure inside :func:`run_experiment`, tagged with the stage name."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(exc).__name__}: {exc}")
        self.stage = stage
        self.original = exc


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    grid: dict = field(default_factory=lambda: dict(DEFAULTS["grid"]))
    phantom: dict = field(default_factory=lambda: dict(DEFAULTS["phantom"]))
    rays: dict = field(default_factory=lambda: dict(DEFAULTS["rays"]))
    noise: dict = field(default_factory=lambda: dict(DEFAULTS["noise"]))
    prior: dict = field(default_factory=lambda: dict(DEFAULTS["prior"]))
    solvers: dict = field(default_factory=lambda: {m: {} for m in ("landweber", "fista", "tikhonov")})
    output: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["output"]))

    def __post_init__(self):
        self.validate()

    # -- validation ---------------------------------------------------------
    def validate(self) -> None:
        for name, defaults in DEFAULTS.items():
            sec = getattr(self, name)
            if not isinstance(sec, dict):
                raise ConfigError(f"section [{name}] must be a table")
            extra = set(sec) - set(defaults) - OPTIONAL_KEYS.get(name, set())
            if extra:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")
            for key, val in defaults.items():
                sec.setdefault(key, copy.deepcopy(val))
        if not isinstance(self.solvers, dict) or not self.solvers:
            raise ConfigError("[solvers] must name at least one method")
        for method, sec in self.solvers.items():
            if method not in METHODS:
                raise ConfigError(f"unknown solver {method!r}; expected one of {METHODS}")
            if not isinstance(sec, dict):
                raise ConfigError(f"[solvers.{method}] must be a table")
            extra = set(sec) - _SOLVER_KEYS
            if extra:
                raise ConfigError(f"unknown key(s) in [solvers.{method}]: {', '.join(sorted(extra))}")
            lam = sec.get("lambda", "optimal")
            if not (lam in ("optimal", "sweep") or isinstance(lam, (int, float)) and not isinstance(lam, bool)):
                raise ConfigError(f"[solvers.{method}] lambda must be 'optimal', 'sweep' or a number")
        bad = set(self.output["formats"]) - set(FORMATS)
        if bad:
            raise ConfigError(f"unknown output format(s): {', '.join(sorted(bad))}")
        # build the typed objects once so bad values surface as config errors
        try:
            self.build_grid()
            self.build_phantom()
            self.ray_policy()
            MaternParams(**self.prior)
            for m in self.solvers:
                self.solver_options(m)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if not float(self.noise["level"]) >= 0:
            raise ConfigError("noise level must be >= 0")
        if int(self.noise["seed"]) < 0:
            raise ConfigError("noise seed must be >= 0")

    # -- typed views --------------------------------------------------------
    def build_grid(self) -> SpaceTimeGrid:
        g = self.grid
        return build_grid(int(g["nx"]), tuple(g["extent"]), int(g["T"]), tuple(g["time_extent"]))

    def build_phantom(self) -> Phantom:
        return Phantom(**self.phantom)

    def ray_policy(self) -> RayPolicy:
        return RayPolicy(mode=self.rays["mode"], eps_ray=self.rays.get("eps_ray"))

    def solver_options(self, method: str) -> SolverOptions:
        sec = dict(_SOLVER_DEFAULTS, **self.solvers[method])
        lam = sec.pop("lambda", "optimal")
        grid = sec.pop("lambda_grid", None)
        if lam == "optimal":
            rule = LambdaRule.optimal()
        elif lam == "sweep":
            rule = LambdaRule.sweep(tuple(float(v) for v in grid) if grid else None)
        else:
            rule = LambdaRule.fixed(float(lam))
        if "lambda_log_range" in sec:
            sec["lambda_log_range"] = tuple(float(v) for v in sec["lambda_log_range"])
        return SolverOptions(lambda_rule=rule, **sec)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        d = {name: copy.deepcopy(getattr(self, name)) for name in DEFAULTS}
        d["solvers"] = copy.deepcopy(self.solvers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        sections = set(DEFAULTS) | {"solvers"}
        extra = set(d) - sections
        if extra:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
        if "solvers" not in d:
            raise ConfigError("config needs a [solvers] section")
        return cls(**d)

    def dumps(self, fmt: str = "toml") -> str:
        if fmt == "toml":
            return tomli_w.dumps(self.to_dict())
        if fmt == "json":
            return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        raise ConfigError(f"unknown config format {fmt!r}")

    @classmethod
    def loads(cls, text: str, fmt: str = "toml") -> "ExperimentConfig":
        try:
            d = tomllib.loads(text) if fmt == "toml" else json.loads(text)
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse {fmt} config: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text, "json" if path.suffix.lower() == ".json" else "toml")

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(self.dumps("json" if path.suffix.lower() == ".json" else "toml"))

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def version_string() -> str:
    """Package version, plus ``+g<commit>`` when run from a git checkout."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    method: str
    rre_dp: float
    iter_dp: int | None
    rre_min: float
    iter_min: int | None

    @classmethod
    def from_result(cls, res: ReconResult) -> "ReportRow":
        return cls(res.method, res.rre_dp, res.dp_iter, res.rre_min, res.min_rre_iter)

    def paper_style(self) -> tuple[str, str]:
        def cell(v, k):
            return "-" if k is None else f"{v:.4f} ({k})"
        return cell(self.rre_dp, self.iter_dp), cell(self.rre_min, self.iter_min)


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def row(self, method: str) -> ReportRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def format_table(self) -> str:
        lines = [f"{'Method':<14}{'RRE (DP iter)':<20}{'Min RRE (iter)':<20}"]
        for r in self.rows:
            dp, mn = r.paper_style()
            lines.append(f"{r.method:<14}{dp:<20}{mn:<20}")
        return "\n".join(lines)


def report_table(report: ExperimentReport, directory, name: str = "report.csv") -> Path:
    """Write ``method,rre_dp,iter_dp,rre_min,iter_min`` with 4-decimal RREs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / name

    def num(v, k):
        return "" if k is None else f"{v:.4f}"

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "rre_dp", "iter_dp", "rre_min", "iter_min"])
        for r in report.rows:
            w.writerow([r.method, num(r.rre_dp, r.iter_dp), "" if r.iter_dp is None else r.iter_dp,
                        num(r.rre_min, r.iter_min), "" if r.iter_min is None else r.iter_min])
    return path


def read_report_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# slice and volume export
# ---------------------------------------------------------------------------

def _to_bytes(sl: np.ndarray) -> tuple[np.ndarray, float, float]:
    lo, hi = float(sl.min()), float(sl.max())
    if hi > lo:
        img = np.rint((sl - lo) / (hi - lo) * 255.0)
    else:
        img = np.zeros_like(sl)
    return img.astype(np.uint8), lo, hi


def write_pgm(path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def read_slice_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def export_slices(x, g: SpaceTimeGrid, directory, formats=("pgm", "csv"), prefix: str = "slice") -> list[Path]:
    """One file per time slice, numbered from 1.

    CSV rows are ``y`` ascending, columns ``x`` ascending, full precision.
    PGM images are flipped so ``y`` points up, and map each slice's
    ``[min, max]`` linearly onto ``[0, 255]``; ``<prefix>_scaling.json``
    records those ranges (``degenerate`` when ``min == max``).
    """
    formats = tuple(formats)
    bad = set(formats) - {"pgm", "csv"}
    if bad:
        raise ValueError(f"unsupported slice format(s): {', '.join(sorted(bad))}")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        probe = directory / f".{prefix}_write_test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write slices to {directory}: {exc}") from exc
    vol = g.reshape(np.asarray(x, dtype=float))
    written, scaling = [], []
    for k in range(g.T):
        sl = vol[k]
        stem = directory / f"{prefix}_{k + 1:02d}"
        img, lo, hi = _to_bytes(sl)
        scaling.append({"slice": k + 1, "t": float(g.plane_times[k]), "min": lo, "max": hi,
                        "degenerate": hi == lo})
        if "pgm" in formats:
            write_pgm(stem.with_suffix(".pgm"), img[::-1])
            written.append(stem.with_suffix(".pgm"))
        if "csv" in formats:
            np.savetxt(stem.with_suffix(".csv"), sl, delimiter=",", fmt="%.17g")
            written.append(stem.with_suffix(".csv"))
    side = directory / f"{prefix}_scaling.json"
    side.write_text(json.dumps({"mapping": "linear [min,max] -> [0,255]", "slices": scaling}, indent=2))
    written.append(side)
    return written


def export_volume(x, g: SpaceTimeGrid, path) -> None:
    """Flat float64 volume in ``(T, ny, nx)`` order with the grid in the header."""
    write_raw(path, g.reshape(np.asarray(x, dtype=float)), layout="t,y,x",
              spatial_extent=list(g.spatial_extent), time_extent=list(g.time_extent))


# ---------------------------------------------------------------------------
# masks for arc-wise error
# ---------------------------------------------------------------------------

def arc_masks(g: SpaceTimeGrid, c: float = 0.0, radius: float = 2.0, band: float | None = None):
    """Node masks near the left/right and top/bottom arcs of the moving circle.

    The circle is ``|(x - c t, y)| = radius``.  A node belongs to the
    left/right set when it lies within ``band`` (default ``2 h``) of the
    circle and its polar angle is within 45 degrees of the x-axis; the
    top/bottom set is the same around the y-axis.  Nodes exactly on a
    diagonal belong to neither, so the split is symmetric.  The conormal at angle
    ``theta`` is time-like exactly when ``c |cos theta| > 1``.
    """
    band = 2 * g.h if band is None else band
    xs, ys = g.node_xy()
    tt = np.repeat(g.plane_times, g.n_spatial)
    dx = np.tile(xs, g.T) - c * tt
    dy = np.tile(ys, g.T)
    near = np.abs(np.hypot(dx, dy) - radius) <= band
    ax, ay = np.abs(dx), np.abs(dy)
    return near & (ax > ay), near & (ay > ax)


def masked_rre(x, x_true, mask) -> float:
    x_true = np.asarray(x_true, dtype=float)
    den = np.linalg.norm(x_true[mask])
    if den == 0:
        raise ValueError("x_true vanishes on the mask")
    return float(np.linalg.norm(np.asarray(x)[mask] - x_true[mask]) / den)


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, et, exc, tb):
        if exc is not None and not isinstance(exc, (StageError, KeyboardInterrupt)):
            raise StageError(self.name, exc) from exc
        return False


@dataclass
class Problem:
    """Everything the solvers need, built once per config."""

    grid: SpaceTimeGrid
    x_true: np.ndarray
    A: object
    obs: object
    sigma1: float
    Q: object = None


def build_problem(cfg: ExperimentConfig, seed: int | None = None, with_prior: bool = False) -> Problem:
    with _Stage("grid"):
        g = cfg.build_grid()
    with _Stage("phantom"):
        x_true = rasterize_phantom(cfg.build_phantom(), g)
    with _Stage("rays"):
        rays = enumerate_rays(g, cfg.ray_policy())
    with _Stage("assemble"):
        A = assemble_operator(g, rays, scale_by_segment_length=bool(cfg.rays["scale_by_segment_length"]))
    with _Stage("noise"):
        s = int(cfg.noise["seed"] if seed is None else seed)
        obs = add_noise(A.matvec(x_true), float(cfg.noise["level"]), s)
    with _Stage("sigma1"):
        sigma1 = estimate_sigma1(A)
    Q = None
    if with_prior:
        with _Stage("prior"):
            Q = build_covariance_operator(g, MaternParams(**cfg.prior))
    return Problem(g, x_true, A, obs, sigma1, Q)


def run_method(method: str, prob: Problem, opts: SolverOptions) -> ReconResult:
    if method == "landweber":
        return landweber(prob.A, prob.obs, prob.x_true, opts, sigma1=prob.sigma1)
    if method == "fista":
        if opts.fista_L0 is None:
            opts = replace(opts, fista_L0=prob.sigma1 ** 2)
        return fista_select(prob.A, prob.obs, prob.x_true, opts)
    if method == "tikhonov":
        return hybrid_tikhonov(prob.A, prob.obs, opts.lambda_rule, prob.x_true, opts)
    if method == "gen-tikhonov":
        return gen_tikhonov(prob.A, prob.obs, prob.Q, opts.lambda_rule, prob.x_true, opts)
    raise ConfigError(f"unknown method {method!r}")


def run_experiment(cfg: ExperimentConfig, out_dir=None, methods=None, seed: int | None = None,
                   write: bool = True) -> ExperimentReport:
    """Build the problem, run each configured solver, write artifacts.

    ``methods`` restricts the run to a subset of ``cfg.solvers``; ``seed``
    overrides the noise seed.  With ``write=False`` nothing touches disk.
    """
    methods = list(cfg.solvers) if methods is None else list(methods)
    missing = [m for m in methods if m not in cfg.solvers]
    if missing:
        raise ConfigError(f"method(s) not configured: {', '.join(missing)}")
    out = Path(out_dir if out_dir is not None else cfg.output["directory"])
    seed = int(cfg.noise["seed"] if seed is None else seed)
    prob = build_problem(cfg, seed, with_prior="gen-tikhonov" in methods)
    report = ExperimentReport(meta={
        "shape": list(prob.A.shape), "nnz": int(prob.A.nnz), "sigma1": prob.sigma1,
        "delta": prob.obs.delta, "seed": seed,
    })
    for m in methods:
        with _Stage(f"solve:{m}"):
            res = run_method(m, prob, cfg.solver_options(m))
        report.results[m] = res
        report.rows.append(ReportRow.from_result(res))
        log.info("%s: DP %s, min %s", m, *report.rows[-1].paper_style())
    if write:
        with _Stage("export"):
            _write_run(cfg, report, prob, out, seed)
    return report


def _write_run(cfg, report: ExperimentReport, prob: Problem, out: Path, seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    fmts = cfg.output["formats"]
    report_table(report, out)
    slice_fmts = [f for f in fmts if f in ("pgm", "csv")]
    if "raw" in fmts:
        export_volume(prob.x_true, prob.grid, out / "x_true.raw")
    for m, res in report.results.items():
        tag = m.replace("-", "_")
        res.history_csv(out / f"history_{tag}.csv")
        stop = {"method": m, "stop_reason": res.stop_reason, "dp_iter": res.dp_iter,
                "min_rre_iter": res.min_rre_iter, "iterations": len(res.history)}
        (out / f"history_{tag}.json").write_text(json.dumps(stop, indent=2) + "\n")
        if "raw" in fmts:
            if res.x_best is not None:
                export_volume(res.x_best, prob.grid, out / f"x_{tag}_best.raw")
            if res.x_dp is not None:
                export_volume(res.x_dp, prob.grid, out / f"x_{tag}_dp.raw")
        if slice_fmts and res.x_best is not None:
            export_slices(res.x_best, prob.grid, out / "slices" / tag, slice_fmts)
    manifest = {
        "config_sha256": cfg.digest(),
        "seed": seed,
        "version": version_string(),
        "backend": backend(),
        "methods": list(report.results),
        "shape": report.meta["shape"],
        "nnz": report.meta["nnz"],
        "config": cfg.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "config.toml").write_text(cfg.dumps("toml"))
