"""Longitudinal vehicle primitives: states, limits, double-integrator motion,
rear-end safety geometry, and the traffic-disruption metric.

All quantities are SI (m, m/s, m/s^2, s). Vehicles are point masses with
controllable acceleration; positions are measured along the road from a
common origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VehicleState",
    "VehicleLimits",
    "SafetyParams",
    "DisruptionWeights",
    "Trajectory",
    "safe_distance",
    "propagate",
    "check_safety_triplet",
    "disruption",
]


@dataclass(frozen=True)
class VehicleState:
    """Longitudinal position and speed of one vehicle at an instant."""

    x: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.v)):
            raise ValueError(f"non-finite vehicle state ({self.x}, {self.v})")
        if self.v < 0.0:
            raise ValueError(f"negative speed {self.v}")


@dataclass(frozen=True)
class VehicleLimits:
    """Box bounds on acceleration and speed."""

    u_min: float = -7.0
    u_max: float = 3.3
    v_min: float = 15.0
    v_max: float = 35.0

    def __post_init__(self):
        if not self.u_min < 0.0 < self.u_max:
            raise ValueError("acceleration bounds must straddle zero")
        if not 0.0 < self.v_min < self.v_max:
            raise ValueError("speed bounds must satisfy 0 < v_min < v_max")


@dataclass(frozen=True)
class SafetyParams:
    """Reaction time phi (s) and standstill gap delta (m) of the headway rule."""

    phi: float = 0.6
    delta: float = 1.5

    def __post_init__(self):
        if self.phi < 0.0:
            raise ValueError("reaction time must be nonnegative")
        if self.delta <= 0.0:
            raise ValueError("standstill gap must be positive")


@dataclass(frozen=True)
class DisruptionWeights:
    """Convex weights on position shortfall vs. speed deviation."""

    gamma_x: float = 0.5
    gamma_v: float = 0.5

    def __post_init__(self):
        if self.gamma_x < 0.0 or self.gamma_v < 0.0:
            raise ValueError("disruption weights must be nonnegative")
        if abs(self.gamma_x + self.gamma_v - 1.0) > 1e-12:
            raise ValueError("disruption weights must sum to 1")


def safe_distance(v: float, p: SafetyParams) -> float:
    """Minimum speed-dependent headway phi*v + delta a follower at speed v needs."""
    if v < 0.0:
        raise ValueError(f"negative speed {v}")
    return p.phi * v + p.delta


def propagate(state: VehicleState, u, t0: float, t1: float, n_sub: int = 64) -> VehicleState:
    """Flow the double integrator from t0 to t1 under control u.

    u may be a constant (exact closed form) or a callable u(t). Callables are
    integrated with composite 3-point Gauss-Legendre, which is exact for
    control profiles that are polynomials of degree <= 5.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    if not (math.isfinite(state.x) and math.isfinite(state.v)):
        raise ValueError("non-finite state")
    dt = t1 - t0
    if np.isscalar(u) or isinstance(u, float):
        uu = float(u)
        if not math.isfinite(uu):
            raise ValueError("non-finite control")
        v1 = state.v + uu * dt
        x1 = state.x + state.v * dt + 0.5 * uu * dt * dt
        return VehicleState(x1, max(v1, 0.0) if abs(v1) < 1e-12 else v1)

    # Gauss-Legendre nodes/weights on [-1, 1]
    gl_t = np.array([-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)])
    gl_w = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
    edges = np.linspace(t0, t1, n_sub + 1)
    x, v = state.x, state.v
    for a, b in zip(edges[:-1], edges[1:]):
        h = b - a
        ts = 0.5 * (a + b) + 0.5 * h * gl_t
        us = np.array([u(t) for t in ts], dtype=float)
        if not np.all(np.isfinite(us)):
            raise ValueError("non-finite control sample")
        # v(b) = v(a) + int u ; x(b) = x(a) + v(a) h + int (b - t) u(t) dt
        x = x + v * h + 0.5 * h * float(np.dot(gl_w, (b - ts) * us))
        v = v + 0.5 * h * float(np.dot(gl_w, us))
    return VehicleState(x, v)


@dataclass(frozen=True)
class Trajectory:
    """Sampled motion of one vehicle with piecewise-constant control.

    Controls u[k] act on [t[k], t[k+1]); speed is piecewise linear and
    position piecewise quadratic, so sample states are exact flows of the
    sampled controls.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray  # len(t) - 1 interval controls

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("need at least two sample times")
        if np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if len(self.x) != len(t) or len(self.v) != len(t) or len(self.u) != len(t) - 1:
            raise ValueError("inconsistent sample array lengths")

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @classmethod
    def from_controls(cls, init: VehicleState, t, u) -> "Trajectory":
        """Build a trajectory by exact propagation of interval controls."""
        t = np.asarray(t, dtype=float)
        u = np.asarray(u, dtype=float)
        x = np.empty_like(t)
        v = np.empty_like(t)
        x[0], v[0] = init.x, init.v
        dt = np.diff(t)
        for k in range(len(u)):
            v[k + 1] = v[k] + u[k] * dt[k]
            x[k + 1] = x[k] + v[k] * dt[k] + 0.5 * u[k] * dt[k] ** 2
        return cls(t, x, v, u)

    @classmethod
    def constant_speed(cls, init: VehicleState, t0: float, t1: float, n: int = 2) -> "Trajectory":
        t = np.linspace(t0, t1, max(n, 2))
        return cls(t, init.x + init.v * (t - t0), np.full_like(t, init.v), np.zeros(len(t) - 1))

    def _locate(self, tq: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self.t, tq, side="right") - 1
        return np.clip(k, 0, len(self.t) - 2)

    def position(self, tq):
        tq = np.asarray(tq, dtype=float)
        k = self._locate(tq)
        s = tq - self.t[k]
        out = self.x[k] + self.v[k] * s + 0.5 * self.u[k] * s * s
        return float(out) if out.ndim == 0 else out

    def speed(self, tq):
        tq = np.asarray(tq, dtype=float)
        k = self._locate(tq)
        out = self.v[k] + self.u[k] * (tq - self.t[k])
        return float(out) if out.ndim == 0 else out

    def control(self, tq):
        tq = np.asarray(tq, dtype=float)
        out = self.u[self._locate(tq)]
        return float(out) if out.ndim == 0 else out

    def state(self, tq: float) -> VehicleState:
        return VehicleState(float(self.position(tq)), float(self.speed(tq)))

    def resampled(self, t_new) -> "Trajectory":
        """Resample onto a new grid (exact under piecewise-constant control only
        when t_new contains the original breakpoints; otherwise controls are
        taken from the covering interval)."""
        t_new = np.asarray(t_new, dtype=float)
        mid = 0.5 * (t_new[:-1] + t_new[1:])
        return Trajectory(t_new, self.position(t_new), self.speed(t_new), self.control(mid))

    def concat(self, other: "Trajectory", tol: float = 1e-8) -> "Trajectory":
        if abs(other.t[0] - self.t[-1]) > tol:
            raise ValueError("trajectories do not abut in time")
        t = np.concatenate([self.t, other.t[1:]])
        x = np.concatenate([self.x, other.x[1:]])
        v = np.concatenate([self.v, other.v[1:]])
        u = np.concatenate([self.u, other.u])
        return Trajectory(t, x, v, u)


@dataclass(frozen=True)
class SafetyViolation:
    constraint: str  # "gap_1_H" | "gap_C_H_terminal" | "gap_1_C_terminal"
    time: float
    slack: float


def check_safety_triplet(traj_1: Trajectory, traj_C: Trajectory, traj_H: Trajectory,
                         p: SafetyParams, t_f: float, tol: float = 1e-6):
    """Verify the rear-end safety system for the (1, C, H) triplet.

    Along the whole horizon the fast-lane leader 1 must stay a full headway
    ahead of the HDV; at t_f the merged order additionally requires C ahead of
    H and 1 ahead of C by their headways. Returns violations with negative
    slack beyond tol (empty list means safe).
    """
    for tr in (traj_C, traj_H):
        if abs(tr.t[0] - traj_1.t[0]) > 1e-9 or tr.t[-1] < t_f - 1e-9:
            raise ValueError("trajectories must share the checked time interval")
    ts = traj_H.t[traj_H.t <= t_f + 1e-12]
    slack_1H = traj_1.position(ts) - traj_H.position(ts) - (p.phi * traj_H.speed(ts) + p.delta)
    violations = [
        SafetyViolation("gap_1_H", float(t), float(s))
        for t, s in zip(ts, slack_1H) if s < -tol
    ]
    s_CH = (traj_C.position(t_f) - traj_H.position(t_f)
            - (p.phi * traj_H.speed(t_f) + p.delta))
    if s_CH < -tol:
        violations.append(SafetyViolation("gap_C_H_terminal", float(t_f), float(s_CH)))
    s_1C = (traj_1.position(t_f) - traj_C.position(t_f)
            - (p.phi * traj_C.speed(t_f) + p.delta))
    if s_1C < -tol:
        violations.append(SafetyViolation("gap_1_C_terminal", float(t_f), float(s_1C)))
    return violations


def disruption(traj: Trajectory, x0: float, v0: float, v_d: float,
               w: DisruptionWeights, mode: str = "average") -> float:
    """Traffic disruption of one vehicle relative to its undisturbed motion.

    Pointwise D(t) = gamma_x * shortfall(t)^2 + gamma_v * (v(t) - v_d)^2 where
    shortfall is position lost against the constant-speed reference
    x0 + v0 (t - t0) (zero when the vehicle is ahead of it). Aggregated over
    the trajectory horizon per `mode`: "average" (time mean, default),
    "integral", or "terminal".
    """
    if mode not in ("average", "integral", "terminal"):
        raise ValueError(f"unknown disruption mode {mode!r}")
    ts = traj.t
    ref = x0 + v0 * (ts - ts[0])
    short = np.minimum(traj.x - ref, 0.0)
    d = w.gamma_x * short**2 + w.gamma_v * (traj.v - v_d) ** 2
    if mode == "terminal":
        return float(d[-1])
    total = float(np.trapezoid(d, ts))
    if mode == "integral":
        return total
    horizon = ts[-1] - ts[0]
    return total / horizon if horizon > 0 else float(d[-1])
