"""Spacetime discretization and the string phantoms.

State vectors hold ``T`` event planes back to back.  Within a plane the
x index runs fastest, so ``state.reshape(T, nx, nx)[k, iy, ix]`` is the
value at ``(t_k, x_ix, y_iy)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidCountError, InvalidExtentError

__all__ = [
    "SpaceTimeGrid",
    "Phantom",
    "build_grid",
    "eval_phantom",
    "rasterize_phantom",
    "PHANTOM_KINDS",
]

PHANTOM_KINDS = (
    "translating_circle",
    "collapsing_circle",
    "appearing_ball",
    "zero",
    "impulse",
)

_ALIASES = {"f1": "translating_circle", "f2": "collapsing_circle", "f3": "appearing_ball"}


def _check_interval(name, interval):
    lo, hi = (float(v) for v in interval)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise InvalidExtentError(f"{name} must satisfy min < max, got [{lo}, {hi}]")
    return lo, hi


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform ``nx x nx`` spatial grid repeated on ``T`` mid-point event planes.

    Sources sit on the ``t = t_min`` plane and detectors on ``t = t_max``;
    both use the same spatial nodes as the event planes.
    """

    nx: int
    spatial_extent: tuple[float, float] = (-3.0, 3.0)
    T: int = 20
    time_extent: tuple[float, float] = (0.0, 4.0)

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 2:
            raise InvalidCountError(f"nx must be an integer >= 2, got {self.nx}")
        if int(self.T) != self.T or self.T < 1:
            raise InvalidCountError(f"T must be an integer >= 1, got {self.T}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(
            self, "spatial_extent", _check_interval("spatial_extent", self.spatial_extent)
        )
        object.__setattr__(self, "time_extent", _check_interval("time_extent", self.time_extent))

    @property
    def h(self) -> float:
        x0, x1 = self.spatial_extent
        return (x1 - x0) / (self.nx - 1)

    @property
    def duration(self) -> float:
        return self.time_extent[1] - self.time_extent[0]

    @property
    def dt(self) -> float:
        return self.duration / self.T

    @property
    def nodes(self) -> np.ndarray:
        x0, _ = self.spatial_extent
        return x0 + self.h * np.arange(self.nx)

    @property
    def plane_times(self) -> np.ndarray:
        t0 = self.time_extent[0]
        return t0 + (np.arange(self.T) + 0.5) * self.dt

    @property
    def n_spatial(self) -> int:
        return self.nx * self.nx

    @property
    def size(self) -> int:
        return self.nx * self.nx * self.T

    def node_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates of the spatial nodes in state order (x fastest)."""
        g = self.nodes
        yy, xx = np.meshgrid(g, g, indexing="ij")
        return xx.ravel(), yy.ravel()

    def spatial_index(self, ix, iy):
        return np.asarray(iy) * self.nx + np.asarray(ix)

    def reshape(self, x: np.ndarray) -> np.ndarray:
        """View a state vector as ``(T, ny, nx)``."""
        x = np.asarray(x)
        if x.shape != (self.size,):
            raise ValueError(f"state vector must have length {self.size}, got {x.shape}")
        return x.reshape(self.T, self.nx, self.nx)


def build_grid(nx, extent=(-3.0, 3.0), T=20, time_extent=(0.0, 4.0)) -> SpaceTimeGrid:
    return SpaceTimeGrid(nx=nx, spatial_extent=tuple(extent), T=T, time_extent=tuple(time_extent))


@dataclass(frozen=True)
class Phantom:
    """One of the string test functions.

    ``translating_circle`` (f1) is ``(2 - |(x - c t, y)|)_+^a``,
    ``collapsing_circle`` (f2) is ``(1 - t/2 -+ r)_+^a`` before/after ``t = 2``,
    ``appearing_ball`` (f3) is ``(1.5 - |(x, y, t - 2)|)_+^a`` for ``t`` in
    ``[t0, t1]`` and zero otherwise.  ``zero`` and ``impulse`` are debug
    phantoms; ``impulse`` is 1 at ``center`` and 0 elsewhere.
    """

    kind: str
    a: float = 0.05
    c: float = 0.0
    t0: float = 1.2
    t1: float = 2.8
    center: tuple[float, float, float] = field(default=(2.0, 0.0, 0.0))

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; expected one of {PHANTOM_KINDS}")
        object.__setattr__(self, "kind", kind)
        if not self.a > 0:
            raise ValueError(f"exponent a must be positive, got {self.a}")
        if kind == "appearing_ball" and not self.t0 < self.t1:
            raise ValueError(f"appearing_ball needs t0 < t1, got t0={self.t0}, t1={self.t1}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))


def _pos_power(s, a):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = s[pos] ** a
    return out


def _eval(p: Phantom, t, x, y):
    t, x, y = np.broadcast_arrays(
        np.asarray(t, dtype=float), np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    )
    if p.kind == "translating_circle":
        return _pos_power(2.0 - np.hypot(x - p.c * t, y), p.a)
    if p.kind == "collapsing_circle":
        r = np.hypot(x, y)
        # t = 2 belongs to the collapsing branch
        s = np.where(t <= 2.0, 1.0 - t / 2.0 - r, 1.0 - t / 2.0 + r)
        return _pos_power(s, p.a)
    if p.kind == "appearing_ball":
        s = 1.5 - np.sqrt(x * x + y * y + (t - 2.0) ** 2)
        inside = (t >= p.t0) & (t <= p.t1)
        return np.where(inside, _pos_power(s, p.a), 0.0)
    if p.kind == "zero":
        return np.zeros(t.shape)
    # impulse
    ct, cx, cy = p.center
    hit = (np.abs(t - ct) <= 1e-12) & (np.abs(x - cx) <= 1e-12) & (np.abs(y - cy) <= 1e-12)
    return hit.astype(float)


def eval_phantom(p: Phantom, t, x, y):
    """Pointwise phantom value; scalars in give a float out, arrays broadcast."""
    out = _eval(p, t, x, y)
    if out.ndim == 0:
        return float(out)
    return out


def rasterize_phantom(p: Phantom, g: SpaceTimeGrid) -> np.ndarray:
    """Sample ``p`` at every grid node, returning a state vector."""
    if p.kind == "appearing_ball":
        lo, hi = g.time_extent
        if not (lo <= p.t0 < p.t1 <= hi):
            raise ValueError(f"appearance window [{p.t0}, {p.t1}] outside time extent {g.time_extent}")
    xs, ys = g.node_xy()
    if p.kind == "impulse":
        # snap to the nearest node so the debug phantom always lands on the grid
        ct, cx, cy = p.center
        k = int(np.argmin(np.abs(g.plane_times - ct)))
        j = int(np.argmin((xs - cx) ** 2 + (ys - cy) ** 2))
        out = np.zeros(g.size)
        out[k * g.n_spatial + j] = 1.0
        return out
    tt = np.repeat(g.plane_times, g.n_spatial)
    return _eval(p, tt, np.tile(xs, g.T), np.tile(ys, g.T)).astype(float)
