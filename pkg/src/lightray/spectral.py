"""Fourier-side tools for the light ray transform on ``R^{1+n}``.

Conventions
-----------
The spacetime transform is ``Ff(tau, xi) = int exp(-i (t tau + x.xi)) f dt dx``.
A :class:`GridField` holds periodic samples on a box; its lattice
frequencies are ``2 pi k / L`` per axis.  Multipliers act through the
discrete transform, so they are exact on the periodic lattice.

Two normalizations of the sphere constant appear and both are exposed:
``sphere_area(n - 2)`` enters the stability weight, and
``2 pi * sphere_area(n - 2)`` is the normal-operator constant.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft
from scipy.special import gamma

from .grid import SpaceTimeGrid
from .rawio import read_raw, write_raw

__all__ = [
    "FrequencyPoint",
    "GridField",
    "ArtefactLine",
    "sphere_area",
    "symbol_constant",
    "stability_constant_cn",
    "slice_weight",
    "fourier_slice",
    "normal_symbol",
    "normal_multiplier",
    "apply_normal_multiplier",
    "spacelike_filter",
    "stability_infimum",
    "estimate_stability_constant",
    "predict_artefacts",
    "sphere_lightlike_conormals",
    "write_artefact_csv",
    "lightlike_probe",
    "smoothing_order_check",
]

# relative band around |tau| = |xi| treated as light-like by FrequencyPoint
CONE_RTOL = 1e-9


def sphere_area(k: int) -> float:
    """Surface area of the unit sphere ``S^k`` in ``R^{k+1}``."""
    if k < 0:
        raise ValueError("sphere dimension must be >= 0")
    return 2.0 * math.pi ** ((k + 1) / 2) / gamma((k + 1) / 2)


def stability_constant_cn(n: int) -> float:
    """``|S^{n-2}|``, the constant of the stability weight."""
    _check_dim(n)
    return sphere_area(n - 2)


def symbol_constant(n: int) -> float:
    """``2 pi |S^{n-2}|``, the constant of the normal-operator symbol."""
    _check_dim(n)
    return 2.0 * math.pi * sphere_area(n - 2)


def _check_dim(n):
    if int(n) != n or n < 2:
        raise ValueError(f"spatial dimension must be an integer >= 2, got {n}")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrequencyPoint:
    """A covector ``(tau, xi)``; classified against the light cone."""

    tau: float
    xi: tuple

    def __post_init__(self):
        object.__setattr__(self, "xi", tuple(float(v) for v in np.atleast_1d(self.xi)))

    @property
    def xi_norm(self) -> float:
        return math.hypot(*self.xi)  # no underflow for tiny components

    def kind(self, rtol: float = CONE_RTOL) -> str:
        """``"space-like"``, ``"light-like"`` or ``"time-like"``.

        ``| |xi| - |tau| | <= rtol * max(|xi|, |tau|)`` counts as light-like.
        """
        a, b = self.xi_norm, abs(self.tau)
        if a == 0 and b == 0:
            raise ValueError("the zero covector has no causal type")
        if abs(a - b) <= rtol * max(a, b):
            return "light-like"
        return "space-like" if a > b else "time-like"


@dataclass
class GridField:
    """Samples ``values[it, ix1, ..., ixn]`` of a function on a periodic box.

    Sample ``i`` along axis ``d`` sits at ``origin[d] + i * box[d] / N_d``.
    """

    values: np.ndarray
    box: tuple
    origin: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim < 3:
            raise ValueError("a GridField needs one time axis and at least two spatial axes")
        self.box = tuple(float(b) for b in self.box)
        if len(self.box) != self.values.ndim:
            raise ValueError(f"box has {len(self.box)} lengths for a {self.values.ndim}-d array")
        if min(self.box) <= 0:
            raise ValueError("box lengths must be positive")
        if self.origin is None:
            self.origin = tuple(-b / 2 for b in self.box)
        self.origin = tuple(float(o) for o in self.origin)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("GridField values must be finite")

    @property
    def n(self) -> int:
        return self.values.ndim - 1

    @property
    def spacing(self) -> tuple:
        return tuple(b / s for b, s in zip(self.box, self.values.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [o + np.arange(s) * h for o, s, h in zip(self.origin, self.values.shape, self.spacing)]

    def frequencies(self) -> list[np.ndarray]:
        """Angular lattice frequencies per axis, in FFT order."""
        return [2 * np.pi * fft.fftfreq(s, d=h) for s, h in zip(self.values.shape, self.spacing)]

    def cone_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcastable ``|tau|`` and ``|xi|`` over the FFT lattice."""
        fr = self.frequencies()
        d = self.values.ndim
        tau = np.abs(fr[0]).reshape((-1,) + (1,) * (d - 1))
        xi2 = 0.0
        for ax in range(1, d):
            shape = [1] * d
            shape[ax] = -1
            xi2 = xi2 + fr[ax].reshape(shape) ** 2
        return tau, np.sqrt(xi2)

    def spectrum(self) -> np.ndarray:
        """Unitary DFT: ``sum |spectrum|^2 == sum |values|^2``."""
        return fft.fftn(self.values, norm="ortho")

    def with_spectrum(self, spec: np.ndarray, **meta) -> "GridField":
        vals = fft.ifftn(spec, norm="ortho").real
        return GridField(vals, self.box, self.origin, dict(meta))

    def l2_norm(self) -> float:
        return float(np.sqrt(self.cell_volume * np.sum(self.values ** 2)))

    def inner(self, other: "GridField") -> float:
        return float(self.cell_volume * np.sum(self.values * other.values))

    @classmethod
    def from_function(cls, fun, shape, box, origin=None) -> "GridField":
        tmp = cls(np.zeros(shape), box, origin)
        mesh = np.meshgrid(*tmp.axes(), indexing="ij")
        return cls(fun(*mesh), box, tmp.origin)

    @classmethod
    def from_state(cls, x: np.ndarray, g: SpaceTimeGrid) -> "GridField":
        """Wrap a state vector; axes become ``(t, x, y)``."""
        vol = g.reshape(x).transpose(0, 2, 1)
        box = (g.duration, g.nx * g.h, g.nx * g.h)
        origin = (g.time_extent[0] + g.dt / 2, g.spatial_extent[0], g.spatial_extent[0])
        return cls(vol, box, origin)

    def save(self, path) -> None:
        write_raw(path, self.values, box=list(self.box), origin=list(self.origin),
                  axes="t," + ",".join(f"x{i + 1}" for i in range(self.n)))

    @classmethod
    def load(cls, path) -> "GridField":
        vals, head = read_raw(path)
        return cls(vals, tuple(head["box"]), tuple(head["origin"]))


# ---------------------------------------------------------------------------
# Fourier slice
# ---------------------------------------------------------------------------

def fourier_slice(f: GridField, xi, v) -> complex:
    """``Ff(v . xi, xi)``, i.e. the spatial transform of ``Lf(., v)`` at ``xi``.

    Evaluated as the direct sum ``sum f(z) exp(-i zeta . z) dV``, which is
    the trigonometric interpolant of the lattice DFT.  The sum factorizes
    over axes, so each evaluation costs one pass over the samples.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if xi.shape != (f.n,) or v.shape != (f.n,):
        raise ValueError(f"xi and v must have length {f.n}")
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("v must be a unit vector")
    zeta = np.concatenate([[v @ xi], xi])
    out = f.values.astype(complex)
    for z, ax in zip(zeta, f.axes()):
        out = np.tensordot(out, np.exp(-1j * z * ax), axes=([0], [0]))
    return complex(out) * f.cell_volume


# ---------------------------------------------------------------------------
# normal operator and cone projections
# ---------------------------------------------------------------------------

def normal_symbol(tau, xi_norm, n: int):
    """``k(tau, xi) = C (|xi|^2 - tau^2)_+^{(n-3)/2} / |xi|^{n-2}``, ``C = 2 pi |S^{n-2}|``.

    Returns ``inf`` on the light cone for ``n = 2`` and ``0`` in the
    time-like region.  At the origin the value is set to ``0``.
    """
    _check_dim(n)
    tau = np.abs(np.asarray(tau, dtype=float))
    xi = np.asarray(xi_norm, dtype=float)
    if np.any(xi < 0):
        raise ValueError("xi_norm must be >= 0")
    s = (xi - tau) * (xi + tau)
    e = (n - 3) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        if n == 2:
            body = np.where(s > 0, 1.0 / np.sqrt(np.where(s > 0, s, 1.0)), np.inf)
        elif n == 3:
            body = np.ones_like(s)
        else:
            body = np.abs(s) ** e
        k = symbol_constant(n) * body / xi ** (n - 2)
    k = np.where(s > 0, k, 0.0)
    if n == 2:
        k = np.where((s == 0) & (xi > 0), np.inf, k)
    return float(k) if k.ndim == 0 else k


def normal_multiplier(f: GridField, lightcone_eps: float = 1e-3):
    """Symbol of ``N`` on the lattice of ``f`` plus the clamp mask.

    For ``n = 2`` the symbol blows up at the cone; inside the band
    ``0 <= |xi| - |tau| < lightcone_eps |xi|`` it is replaced by its value
    at ``|tau| = (1 - lightcone_eps) |xi|``.  Time-like frequencies stay 0.
    """
    if not lightcone_eps > 0:
        raise ValueError("lightcone_eps must be > 0")
    n = f.n
    tau, xi = f.cone_coordinates()
    k = normal_symbol(tau, xi, n)
    k = np.broadcast_to(k, f.values.shape).copy()
    mask = np.zeros(f.values.shape, dtype=bool)
    if n == 2:
        xi_b = np.broadcast_to(xi, f.values.shape)
        tau_b = np.broadcast_to(tau, f.values.shape)
        mask = (xi_b > 0) & (tau_b <= xi_b) & (xi_b - tau_b < lightcone_eps * xi_b)
        k[mask] = normal_symbol((1.0 - lightcone_eps) * xi_b[mask], xi_b[mask], n)
    return k, mask


def apply_normal_multiplier(f: GridField, j: int = 1, n: int | None = None,
                            lightcone_eps: float = 1e-3) -> GridField:
    """``N^j f`` as the lattice multiplier ``k^j`` (clamped at the cone for n=2).

    The result's ``meta`` records how many lattice frequencies were clamped.
    """
    if int(j) != j or j < 1:
        raise ValueError("power j must be a positive integer")
    if n is not None and n != f.n:
        raise ValueError(f"field has {f.n} spatial dimensions, not {n}")
    k, mask = normal_multiplier(f, lightcone_eps)
    spec = f.spectrum() * k ** int(j)
    return f.with_spectrum(spec, n_clamped=int(mask.sum()), lightcone_eps=lightcone_eps, power=int(j))


def spacelike_filter(f: GridField, delta: float) -> GridField:
    """``chi_delta(D) f``: keep coefficients with ``(1 - delta)|xi| > |tau|``."""
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    tau, xi = f.cone_coordinates()
    keep = (1.0 - delta) * xi > tau
    return f.with_spectrum(f.spectrum() * keep, delta=delta)


# ---------------------------------------------------------------------------
# stability constant
# ---------------------------------------------------------------------------

def slice_weight(tau, xi_norm, n: int):
    """``|S^{n-2}| (|xi|^2 - tau^2)^{(n-3)/2} / |xi|^{n-3}`` inside the cone, else 0.

    Integrating ``|xi| |Ff(v.xi, xi)|^2`` over ``v`` on the sphere equals
    integrating ``slice_weight * |Ff|^2`` over ``tau``.
    """
    _check_dim(n)
    tau = np.abs(np.asarray(tau, dtype=float))
    xi = np.asarray(xi_norm, dtype=float)
    s = (xi - tau) * (xi + tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = stability_constant_cn(n) * np.abs(s) ** ((n - 3) / 2) * xi ** (3 - n)
    w = np.where(s > 0, w, 0.0)
    return float(w) if w.ndim == 0 else w


def stability_infimum(n: int, delta: float) -> float:
    """Infimum of ``||Lf||_{H^1/2} / ||chi_delta f||`` over the cone ``Gamma_delta``.

    The ratio squared is ``2 pi`` times a weighted average of
    :func:`slice_weight`; the ``2 pi`` comes from Plancherel in ``x``
    versus ``(t, x)``.
    """
    _check_dim(n)
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    c = stability_constant_cn(n)
    if n <= 3:
        inf_w = c  # weight is minimal at tau = 0 (n=2) or constant (n=3)
    else:
        inf_w = c * (1.0 - (1.0 - delta) ** 2) ** ((n - 3) / 2)
    return math.sqrt(2 * math.pi * inf_w)


def estimate_stability_constant(n: int, delta: float, trials: int = 100, seed: int = 0,
                                size: int | None = None, tau_width: float | None = None,
                                return_all: bool = False):
    """Smallest observed ``||Lf||_{H^1/2} / ||chi_delta(D) f||_{L^2}``.

    Each trial draws a random band-limited ``Ff`` on a frequency lattice
    ``[-1, 1]^{1+n}``, supported in ``Gamma_delta`` and ``|xi| <= 1``: a
    Gaussian bump at a random centre times complex noise.  The numerator
    uses the slice weight, the denominator Plancherel.  ``tau_width``
    instead concentrates the bump near ``tau = 0``.
    """
    _check_dim(n)
    if int(trials) != trials or trials < 1:
        raise ValueError("trials must be a positive integer")
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    size = size or {2: 48, 3: 24}.get(n, 12)
    rng = np.random.default_rng(seed)
    ax = (np.arange(size) + 0.5) / size * 2 - 1  # cell centres, never on tau = 0 exactly
    mesh = np.meshgrid(*([ax] * (n + 1)), indexing="ij")
    tau = mesh[0]
    xi = np.sqrt(sum(m ** 2 for m in mesh[1:]))
    support = ((1 - delta) * xi > np.abs(tau)) & (xi <= 1.0)
    w = slice_weight(tau, xi, n)
    ratios = np.empty(int(trials))
    for i in range(int(trials)):
        if tau_width is None:
            # random centre inside the support
            idx = rng.integers(0, support.sum())
            centre = np.array([m[support][idx] for m in mesh])
            width = rng.uniform(0.05, 0.5)
            r2 = sum((m - c) ** 2 for m, c in zip(mesh, centre))
            env = np.exp(-r2 / (2 * width ** 2))
        else:
            env = np.exp(-tau ** 2 / (2 * tau_width ** 2))
        noise = rng.standard_normal(tau.shape) + 1j * rng.standard_normal(tau.shape)
        F2 = np.abs(env * noise * support) ** 2
        ratios[i] = math.sqrt(2 * math.pi * float((w * F2).sum()) / float(F2.sum()))
    return ratios if return_all else float(ratios.min())


# ---------------------------------------------------------------------------
# artefacts from light-like singularities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArtefactLine:
    """``z'(t') = (t', x - (t' - t) sgn(tau) xi / |xi|)``: a light ray through ``(t, x)``."""

    t: float
    x: tuple
    direction: tuple  # sgn(tau) xi / |xi|

    def at(self, tprime) -> np.ndarray:
        """Points ``(t', x')`` as rows, one per entry of ``tprime``."""
        tp = np.atleast_1d(np.asarray(tprime, dtype=float))
        xs = np.asarray(self.x)[None, :] - (tp - self.t)[:, None] * np.asarray(self.direction)[None, :]
        return np.column_stack([tp, xs])

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.direction))


def predict_artefacts(t: float, x, tau: float, xi, rtol: float = 1e-9) -> ArtefactLine:
    """Line carrying artefacts of a light-like singularity at ``(t, x; tau, xi)``.

    The direction is ``sgn(tau) xi/|xi|``: the light ray whose tangent
    annihilates the covector ``(tau, xi)``.
    """
    x = tuple(float(v) for v in np.atleast_1d(x))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if len(x) != len(xi):
        raise ValueError("x and xi must have the same length")
    nx = float(np.linalg.norm(xi))
    if nx == 0 or abs(nx - abs(tau)) > rtol * max(nx, abs(tau)):
        raise ValueError(f"covector ({tau}, {tuple(xi)}) is not light-like")
    d = np.sign(tau) * xi / nx
    return ArtefactLine(float(t), x, tuple(float(v) for v in d))


def sphere_lightlike_conormals(radius: float = 1.0, azimuths=(0.0, np.pi)):
    """Light-like conormal points ``(t, x, tau, xi)`` on a sphere in ``R^{1+2}``.

    The outward normal at ``(t, x)`` is ``(t, x)`` itself; it is light-like
    where ``t^2 = |x|^2``.  Each azimuth gives the two points with
    ``t = +- radius / sqrt 2``.
    """
    r = radius / math.sqrt(2.0)
    out = []
    for phi in azimuths:
        x = np.array([r * math.cos(phi), r * math.sin(phi)])
        for t in (r, -r):
            out.append((t, x.copy(), t, x.copy()))
    return out


def write_artefact_csv(path, lines, tprime) -> None:
    """Polylines as CSV ``line,t,x,y`` for overlay plots."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["line", "t", "x", "y"])
        for i, ln in enumerate(lines):
            for row in ln.at(tprime):
                w.writerow([i] + [f"{v:.12g}" for v in row[:3]])


# ---------------------------------------------------------------------------
# smoothing order of N^j at a light-like singularity
# ---------------------------------------------------------------------------

def lightlike_probe(size: int = 128, length: float = 16.0, a: float = 0.05,
                    width: float = 2.0) -> GridField:
    """``(x - t)_+^a`` under a Gaussian window, on a cube of side ``length``.

    The jump across ``x = t`` is conormal with covector ``(-1, 1, 0)``,
    which is light-like.
    """
    def fun(t, x, y):
        s = x - t
        body = np.where(s > 0, np.abs(s) ** a, 0.0)
        return body * np.exp(-(t ** 2 + x ** 2 + y ** 2) / (2 * width ** 2))

    return GridField.from_function(fun, (size,) * 3, (length,) * 3)


def _fit_slope(r, e):
    good = (e > 0) & np.isfinite(e)
    if good.sum() < 3:
        raise ValueError("too few nonzero spectral samples to fit a decay rate")
    return np.polyfit(np.log(r[good]), np.log(e[good]), 1)[0]


def smoothing_order_check(n: int = 2, j_max: int = 2, probe: GridField | None = None,
                          direction: str = "light-like", offsets=(1, 2),
                          lightcone_eps: float = 1e-3, fit_range=(0.25, 0.95)):
    """Fitted Sobolev gain of ``N^j f`` for ``j = 0..j_max``.

    Energy of ``N^j f`` is sampled on lattice lines running parallel to
    the chosen direction in the ``(tau, xi_1)`` plane; for the light-like
    direction the lines sit ``offsets`` lattice steps to the space-like
    side of the cone.  The log-log slope ``s_j`` of energy against
    ``|zeta|``, averaged over the lines, gives the gain ``(s_0 - s_j) / 2``.  ``fit_range`` is the
    band of ``|zeta|`` used, as fractions of the Nyquist frequency.

    Returns a list of ``(j, gain)``.
    """
    _check_dim(n)
    if direction not in ("light-like", "space-like"):
        raise ValueError("direction must be 'light-like' or 'space-like'")
    probe = probe if probe is not None else lightlike_probe()
    if probe.n != n:
        raise ValueError(f"probe has {probe.n} spatial dimensions, not {n}")
    shape = probe.values.shape
    ht, hx = probe.spacing[0], probe.spacing[1]
    dk_t = 2 * np.pi / probe.box[0]
    dk_x = 2 * np.pi / probe.box[1]
    nyq = np.pi / max(ht, hx)
    mt = np.arange(1, shape[0] // 2)
    spec0 = probe.spectrum()
    k, _ = normal_multiplier(probe, lightcone_eps)
    zero = (0,) * (n - 1)
    slopes = np.zeros((len(offsets), j_max + 1))
    for row, off in enumerate(offsets):
        if direction == "light-like":
            # tau = -m dk_t and xi_1 just outside the cone
            iq = np.floor(mt * dk_t / dk_x + 1e-9).astype(int) + int(off)
            it = (-mt) % shape[0]
        else:
            # xi_1 axis, with the tau index held at a fixed offset
            iq = mt
            it = np.full_like(mt, int(off) - 1) % shape[0]
        ok = iq < shape[1] // 2
        it, iq = it[ok], iq[ok]
        tau = np.where(it > shape[0] // 2, it - shape[0], it) * dk_t
        r = np.sqrt(tau ** 2 + (iq * dk_x) ** 2)
        band = (r >= fit_range[0] * nyq) & (r <= fit_range[1] * nyq)
        if band.sum() < 3:
            raise ValueError("fit_range selects too few lattice frequencies")
        idx = (it[band], iq[band]) + tuple(np.full(band.sum(), z) for z in zero)
        for j in range(j_max + 1):
            e = np.abs(spec0[idx] * k[idx] ** j) ** 2
            slopes[row, j] = _fit_slope(r[band], e)
    slopes = slopes.mean(axis=0)
    return [(j, float((slopes[0] - slopes[j]) / 2)) for j in range(j_max + 1)]
