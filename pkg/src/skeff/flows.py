"""
Discrete measure-preserving flows on the 2-torus.

Points live on T^2 = [0, 2pi)^2.  Three flow kinds are supported:

* :class:`StandardMap` -- the Chirikov standard map
  ``(t1, t2) -> (t1 + K sin t2, t1 + t2 + K sin t2) mod 2pi``;
* :class:`CyclicList` -- an explicit finite cycle of points;
* :class:`Identity`.

Distances are geodesic on the torus: each coordinate difference is
wrapped into (-pi, pi] before taking the Euclidean norm.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

from .errors import (
    DomainError,
    FlowUndefinedError,
    RecurrenceNotFound,
    UnsupportedFlowError,
)

TWO_PI = 2.0 * math.pi

__all__ = [
    "TWO_PI",
    "PhasePoint",
    "StandardMap",
    "CyclicList",
    "Identity",
    "FlowSpec",
    "Orbit",
    "RecurrenceRecord",
    "OrbitStats",
    "wrap_angle",
    "wrap_delta",
    "torus_distance",
    "step",
    "step_array",
    "jacobian",
    "orbit",
    "first_recurrence",
    "lyapunov_exponent",
    "mean_diameter",
    "orbit_stats",
    "write_phase_portrait_csv",
]


def wrap_angle(x):
    """Reduce an angle (or array of angles) into [0, 2pi)."""
    if isinstance(x, np.ndarray):
        y = np.mod(x, TWO_PI)
        y[y >= TWO_PI] = 0.0
        return y
    y = math.fmod(x, TWO_PI)
    if y < 0.0:
        y += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2pi
    return 0.0 if y >= TWO_PI else y


def wrap_delta(x):
    """Reduce an angle difference into (-pi, pi]."""
    if isinstance(x, np.ndarray):
        y = np.pi - np.mod(np.pi - x, TWO_PI)
        y[y <= -np.pi] += TWO_PI
        return y
    y = math.pi - (math.pi - x) % TWO_PI
    return y + TWO_PI if y <= -math.pi else y


@dataclass(frozen=True)
class PhasePoint:
    """A point of T^2, both coordinates reduced into [0, 2pi)."""

    theta1: float
    theta2: float

    def __post_init__(self):
        object.__setattr__(self, "theta1", wrap_angle(float(self.theta1)))
        object.__setattr__(self, "theta2", wrap_angle(float(self.theta2)))

    def __iter__(self):
        yield self.theta1
        yield self.theta2

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2])


def _as_pair(theta) -> tuple[float, float]:
    if isinstance(theta, PhasePoint):
        return theta.theta1, theta.theta2
    a, b = theta
    return wrap_angle(float(a)), wrap_angle(float(b))


def torus_distance(a, b) -> float:
    """Geodesic distance between two points of T^2."""
    a1, a2 = _as_pair(a)
    b1, b2 = _as_pair(b)
    return math.hypot(wrap_delta(a1 - b1), wrap_delta(a2 - b2))


@dataclass(frozen=True)
class StandardMap:
    """Chirikov standard map with stochasticity parameter ``K``."""

    K: float = 2.0


@dataclass(frozen=True)
class Identity:
    """The trivial flow: every point is fixed."""


@dataclass(frozen=True)
class CyclicList:
    """A flow defined only on a finite cycle ``points[i] -> points[i+1 mod p]``."""

    points: tuple
    match_tol: float = 1e-9

    def __post_init__(self):
        pts = tuple(p if isinstance(p, PhasePoint) else PhasePoint(*p) for p in self.points)
        if not pts:
            raise DomainError("CyclicList needs at least one point")
        object.__setattr__(self, "points", pts)
        object.__setattr__(
            self, "_array", np.array([[p.theta1, p.theta2] for p in pts], dtype=float)
        )

    def index_of(self, theta) -> int:
        a1, a2 = _as_pair(theta)
        d = np.hypot(wrap_delta(self._array[:, 0] - a1), wrap_delta(self._array[:, 1] - a2))
        i = int(np.argmin(d))
        if d[i] > self.match_tol:
            raise FlowUndefinedError(
                f"point ({a1:.6g}, {a2:.6g}) is not on the cyclic list "
                f"(nearest listed point at distance {d[i]:.3e})"
            )
        return i


FlowSpec = Union[StandardMap, CyclicList, Identity]


def _step_pair(flow, a: float, b: float) -> tuple[float, float]:
    if isinstance(flow, StandardMap):
        s = flow.K * math.sin(b)
        return wrap_angle(a + s), wrap_angle(a + b + s)
    if isinstance(flow, CyclicList):
        i = flow.index_of((a, b))
        nxt = flow.points[(i + 1) % len(flow.points)]
        return nxt.theta1, nxt.theta2
    if isinstance(flow, Identity):
        return a, b
    raise UnsupportedFlowError(f"unknown flow kind {type(flow).__name__}")


def step(flow: FlowSpec, theta) -> PhasePoint:
    """Apply the flow once."""
    a, b = _as_pair(theta)
    return PhasePoint(*_step_pair(flow, a, b))


def step_array(flow: FlowSpec, thetas: np.ndarray) -> np.ndarray:
    """Vectorised :func:`step` over an ``(n, 2)`` array of points."""
    thetas = np.asarray(thetas, dtype=float)
    if isinstance(flow, StandardMap):
        s = flow.K * np.sin(thetas[:, 1])
        out = np.empty_like(thetas)
        out[:, 0] = wrap_angle(thetas[:, 0] + s)
        out[:, 1] = wrap_angle(thetas[:, 0] + thetas[:, 1] + s)
        return out
    if isinstance(flow, Identity):
        return thetas.copy()
    return np.array([_step_pair(flow, a, b) for a, b in thetas], dtype=float).reshape(-1, 2)


def jacobian(flow: FlowSpec, theta) -> np.ndarray:
    """Tangent map of the flow at ``theta``.

    For the standard map this is ``[[1, K cos t2], [1, 1 + K cos t2]]``,
    whose determinant is exactly one.
    """
    if isinstance(flow, StandardMap):
        _, b = _as_pair(theta)
        c = flow.K * math.cos(b)
        return np.array([[1.0, c], [1.0, 1.0 + c]])
    if isinstance(flow, Identity):
        return np.eye(2)
    raise UnsupportedFlowError(f"{type(flow).__name__} has no tangent map")


@dataclass(frozen=True)
class Orbit:
    """A stored trajectory ``points[n] = flow^n(seed)`` (read-only array)."""

    seed: PhasePoint
    points: np.ndarray = field(repr=False)
    flow: FlowSpec

    def __len__(self):
        return len(self.points)

    def __getitem__(self, n) -> PhasePoint:
        return PhasePoint(*self.points[n])


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def orbit(flow: FlowSpec, seed, n: int) -> Orbit:
    """Return the orbit ``seed, flow(seed), ..., flow^n(seed)`` (``n + 1`` points)."""
    if n < 0:
        raise DomainError("orbit length must be non-negative")
    a, b = _as_pair(seed)
    pts = np.empty((n + 1, 2))
    pts[0] = a, b
    for k in range(1, n + 1):
        a, b = _step_pair(flow, a, b)
        pts[k] = a, b
    return Orbit(PhasePoint(*pts[0]), _freeze(pts), flow)


@dataclass(frozen=True)
class RecurrenceRecord:
    """First return of an orbit within ``epsilon`` of its seed.

    ``displacement`` is ``flow^p(seed) - seed`` wrapped per component.
    ``orbit`` holds the ``p + 1`` points ``seed ... flow^p(seed)``.
    """

    epsilon: float
    p: int
    displacement: np.ndarray
    orbit: Orbit = field(repr=False)

    @property
    def seed(self) -> PhasePoint:
        return self.orbit.seed

    @property
    def points(self) -> np.ndarray:
        """The epsilon-orbit ``theta_0 .. theta_{p-1}``."""
        return self.orbit.points[: self.p]


def first_recurrence(flow: FlowSpec, theta0, epsilon: float, n_max: int = 10**6) -> RecurrenceRecord:
    """Smallest ``p`` in ``[1, n_max]`` with ``d(flow^p(theta0), theta0) < epsilon``.

    Raises
    ------
    RecurrenceNotFound
        If no such ``p`` exists; the exception carries the closest approach.
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    if n_max < 1:
        raise DomainError("n_max must be at least 1")
    a0, b0 = _as_pair(theta0)
    a, b = a0, b0
    pts = [(a0, b0)]
    best, arg = math.inf, 0
    for n in range(1, n_max + 1):
        a, b = _step_pair(flow, a, b)
        pts.append((a, b))
        d = math.hypot(wrap_delta(a - a0), wrap_delta(b - b0))
        if d < epsilon:
            disp = np.array([wrap_delta(a - a0), wrap_delta(b - b0)])
            orb = Orbit(PhasePoint(a0, b0), _freeze(np.array(pts)), flow)
            return RecurrenceRecord(float(epsilon), n, _freeze(disp), orb)
        if d < best:
            best, arg = d, n
    raise RecurrenceNotFound(epsilon, n_max, best, arg)


def lyapunov_exponent(
    flow: FlowSpec, theta0, n: int = 10**5, renorm_every: int = 32, clamp: float = 1e-3
) -> float:
    """Largest Lyapunov exponent (nats per step) from ``n`` tangent-map products.

    The tangent vector starts at (1, 0) and is renormalised every
    ``renorm_every`` steps.  Estimates below ``clamp`` are reported as 0.
    """
    if n < 1:
        raise DomainError("n must be positive")
    if isinstance(flow, Identity):
        return 0.0
    if not isinstance(flow, StandardMap):
        raise UnsupportedFlowError(f"{type(flow).__name__} has no tangent map")
    K = flow.K
    a, b = _as_pair(theta0)
    v1, v2 = 1.0, 0.0
    total = 0.0
    for k in range(1, n + 1):
        c = K * math.cos(b)
        v1, v2 = v1 + c * v2, v1 + (1.0 + c) * v2
        s = K * math.sin(b)
        a, b = a + s, a + b + s
        if k % renorm_every == 0:
            # only cos/sin of b are needed, so reduction can be lazy
            a, b = math.fmod(a, TWO_PI), math.fmod(b, TWO_PI)
            norm = math.hypot(v1, v2)
            total += math.log(norm)
            v1, v2 = v1 / norm, v2 / norm
    total += math.log(math.hypot(v1, v2))
    lam = total / n
    return 0.0 if lam < clamp else lam


def _circular_mean(x: np.ndarray) -> float:
    return math.atan2(float(np.mean(np.sin(x))), float(np.mean(np.cos(x))))


def mean_diameter(points: np.ndarray, components: int = 1, n_directions: int = 720) -> float:
    """Mean diameter of an (almost) closed orbit.

    Each of the ``components`` interleaved sub-orbits (points with index
    ``n = c mod components``) is charted around its circular mean.  Its
    diameter is ``(D_max + D_min) / 2`` with ``D_max`` the largest and
    ``D_min`` the smallest width of the point set over ``n_directions``
    projection directions.  Component diameters are averaged.
    """
    points = np.asarray(points, dtype=float)
    if components < 1:
        raise DomainError("components must be >= 1")
    alphas = np.linspace(0.0, math.pi, n_directions, endpoint=False)
    dirs = np.stack([np.cos(alphas), np.sin(alphas)])
    diam = []
    for c in range(components):
        sub = points[c::components]
        if len(sub) < 2:
            diam.append(0.0)
            continue
        centre = np.array([_circular_mean(sub[:, 0]), _circular_mean(sub[:, 1])])
        local = wrap_delta(sub - centre)
        proj = local @ dirs
        widths = proj.max(axis=0) - proj.min(axis=0)
        diam.append(0.5 * (widths.max() + widths.min()))
    return float(np.mean(diam))


@dataclass(frozen=True)
class OrbitStats:
    p: int
    diameter: float
    lyapunov: float


def orbit_stats(
    flow: FlowSpec,
    theta0,
    epsilon: float,
    n_lyap: int = 10**5,
    components: int = 1,
    chaos_threshold: float = 0.05,
    n_max: int = 10**6,
) -> OrbitStats:
    """Almost-period, mean diameter and Lyapunov exponent of an orbit.

    Orbits with a Lyapunov exponent above ``chaos_threshold`` belong to a
    chaotic component covering the torus; their diameter is reported as 2pi.
    Flows without a tangent map report a NaN exponent.
    """
    rec = first_recurrence(flow, theta0, epsilon, n_max)
    try:
        lam = lyapunov_exponent(flow, theta0, n_lyap)
    except UnsupportedFlowError:
        lam = math.nan
    if lam > chaos_threshold:
        diam = TWO_PI
    else:
        diam = mean_diameter(rec.points, components)
    return OrbitStats(rec.p, diam, lam)


def write_phase_portrait_csv(path, orbits: Iterable[Orbit | np.ndarray]) -> None:
    """Write ``seed_index,n,theta1,theta2`` rows for each orbit."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed_index", "n", "theta1", "theta2"])
        for i, orb in enumerate(orbits):
            pts = orb.points if isinstance(orb, Orbit) else np.asarray(orb)
            for n, (a, b) in enumerate(pts):
                w.writerow([i, n, format(a, ".15g"), format(b, ".15g")])
