"""Catch-up phase planning: three candidate policies for the merging CAV to
draw level with the fast-lane HDV, and minimum-cost selection.

The fast-lane vehicles are assumed to hold constant speed during this phase,
except under the cooperative policy where the fast-lane CAV decelerates to
squeeze the HDV back toward the merging vehicle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import nlp
from .vehicles import SafetyParams, Trajectory, VehicleLimits, VehicleState

__all__ = [
    "CostWeights",
    "Phase1Outcome",
    "solve_noncooperative",
    "solve_constant_accel",
    "solve_cooperative",
    "select_phase1",
]

_POLICY_ORDER = {"noncooperative": 0, "constant_accel": 1, "cooperative": 2}


@dataclass(frozen=True)
class CostWeights:
    """Weights on travel time, control effort (w/2 u^2), and terminal speed
    deviation."""

    alpha_t: float
    alpha_u: float
    alpha_v: float

    def __post_init__(self):
        if min(self.alpha_t, self.alpha_u, self.alpha_v) < 0:
            raise ValueError("cost weights must be nonnegative")


@dataclass
class Phase1Outcome:
    policy: str
    cost: float  # math.inf when the policy is unavailable
    t1: float
    traj_C: Optional[Trajectory]
    traj_1: Optional[Trajectory] = None
    detail: str = ""

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.cost)


def _already_level(cav_c: VehicleState, hdv: VehicleState, policy: str,
                   t0: float) -> Phase1Outcome:
    traj = Trajectory.constant_speed(cav_c, t0, t0 + 1e-6)
    return Phase1Outcome(policy, 0.0, t0, traj, detail="already level with HDV")


def solve_constant_accel(cav_c: VehicleState, hdv: VehicleState,
                         limits: VehicleLimits, weights: CostWeights,
                         v_d_target: float, t0: float = 0.0,
                         n_nodes: int = 101) -> Phase1Outcome:
    """Full-throttle catch-up: hold u_max until the speed cap, then coast.

    The catch time solves x_C(t1) = x_H(t0) + v_H(t0) (t1 - t0) in closed
    form (quadratic during acceleration, linear after saturation); the cost
    evaluates the standard phase cost on this fixed profile.
    """
    if cav_c.x >= hdv.x:
        return _already_level(cav_c, hdv, "constant_accel", t0)
    gap = hdv.x - cav_c.x
    dv = cav_c.v - hdv.v
    um = limits.u_max
    t_sat = (limits.v_max - cav_c.v) / um
    # accelerating branch: 0.5 um t^2 + dv t - gap = 0
    disc = dv * dv + 2.0 * um * gap
    t_acc = (-dv + math.sqrt(disc)) / um
    if t_acc <= t_sat:
        t_catch = t_acc
    else:
        gain_sat = 0.5 * um * t_sat**2 + dv * t_sat
        rel = limits.v_max - hdv.v
        if rel <= 1e-12:
            return Phase1Outcome("constant_accel", math.inf, math.inf, None,
                                 detail="speed cap below HDV speed: no catch-up")
        t_catch = t_sat + (gap - gain_sat) / rel
    t1 = t0 + t_catch
    t_burn = min(t_catch, t_sat)
    v1 = min(cav_c.v + um * t_catch, limits.v_max)
    cost = (weights.alpha_t * t_catch
            + 0.5 * weights.alpha_u * um * um * t_burn
            + weights.alpha_v * (v1 - v_d_target) ** 2)
    # grid including the saturation breakpoint, if interior
    ts = np.linspace(t0, t1, n_nodes)
    if 0.0 < t_sat < t_catch:
        ts = np.unique(np.concatenate([ts, [t0 + t_sat]]))
    mids = 0.5 * (ts[:-1] + ts[1:])
    u = np.where(mids - t0 < t_burn, um, 0.0)
    traj = Trajectory.from_controls(cav_c, ts, u)
    return Phase1Outcome("constant_accel", cost, t1, traj)


def solve_noncooperative(cav_c: VehicleState, hdv: VehicleState,
                         limits: VehicleLimits, weights: CostWeights,
                         v_d_target: float, T: float, t0: float = 0.0,
                         n_nodes: int = 101,
                         tol: nlp.Tolerances = nlp.Tolerances(),
                         abort_on_saturation: bool = True) -> Phase1Outcome:
    """Solo catch-up as a free-final-time OCP against the cruising HDV.

    With `abort_on_saturation` (default), a solution that rides the control
    or speed limits is reported unavailable (cost inf): catching a faster
    vehicle from behind then demands authority the vehicle cannot sustain,
    and the maneuver is aborted at t0 in favor of the fallback policies.
    """
    if cav_c.x >= hdv.x:
        return _already_level(cav_c, hdv, "noncooperative", t0)
    spec = nlp.OcpSpec(
        agents=[nlp.AgentSpec(init=cav_c, limits=limits,
                              effort_weight=weights.alpha_u,
                              v_des=v_d_target,
                              term_dev_weight=weights.alpha_v)],
        horizon=nlp.Horizon(t0=t0, tf=T, free=True, tf_min=t0 + 1e-2, tf_max=T),
        time_weight=weights.alpha_t,
        terminal_constraints=[nlp.TerminalConstraint(
            ax={0: 1.0}, av={}, c0=-hdv.x + hdv.v * t0, c_t=-hdv.v,
            label="catch_up")],
    )
    sol = nlp.solve_free_time(spec, n_nodes, tol=tol)
    if not sol.converged:
        return Phase1Outcome("noncooperative", math.inf, math.inf, None,
                             detail=f"solver status: {sol.status}")
    traj = sol.trajectories[0]
    if abort_on_saturation:
        sat_tol = 1e-6
        saturated = (np.any(traj.u >= limits.u_max - sat_tol)
                     or np.any(traj.u <= limits.u_min + sat_tol)
                     or np.any(traj.v >= limits.v_max - sat_tol)
                     or np.any(traj.v <= limits.v_min + sat_tol))
        if saturated:
            return Phase1Outcome("noncooperative", math.inf, sol.t_f, traj,
                                 detail="catch-up requires saturated authority")
    return Phase1Outcome("noncooperative", sol.objective, sol.t_f, traj)


def solve_cooperative(cav_1: VehicleState, cav_c: VehicleState, hdv: VehicleState,
                      limits: VehicleLimits, weights: CostWeights,
                      v_d_1: float, v_d_C: float, p: SafetyParams, T: float,
                      t0: float = 0.0, n_nodes: int = 101,
                      tol: nlp.Tolerances = nlp.Tolerances()) -> Phase1Outcome:
    """Joint catch-up: the fast-lane CAV decelerates so the HDV (held one
    headway behind it) falls back to the merging vehicle.

    Terminal surface: x_1(t1) = x_C(t1) + phi v_H(t0) + delta, with the HDV
    headway frozen at its initial speed.
    """
    if cav_c.x >= hdv.x:
        return _already_level(cav_c, hdv, "cooperative", t0)
    K = p.phi * hdv.v + p.delta
    spec = nlp.OcpSpec(
        agents=[
            nlp.AgentSpec(init=cav_1, limits=limits, effort_weight=weights.alpha_u,
                          v_des=v_d_1, term_dev_weight=weights.alpha_v),
            nlp.AgentSpec(init=cav_c, limits=limits, effort_weight=weights.alpha_u,
                          v_des=v_d_C, term_dev_weight=weights.alpha_v),
        ],
        horizon=nlp.Horizon(t0=t0, tf=T, free=True, tf_min=t0 + 1e-2, tf_max=T),
        time_weight=weights.alpha_t,
        terminal_constraints=[nlp.TerminalConstraint(
            ax={0: 1.0, 1: -1.0}, av={}, c0=-K, label="induced_squeeze")],
    )
    sol = nlp.solve_free_time(spec, n_nodes, tol=tol)
    if not sol.converged:
        return Phase1Outcome("cooperative", math.inf, math.inf, None, None,
                             detail=f"solver status: {sol.status}")
    return Phase1Outcome("cooperative", sol.objective, sol.t_f,
                         sol.trajectories[1], sol.trajectories[0])


def select_phase1(outcomes: List[Phase1Outcome]) -> Optional[Phase1Outcome]:
    """Minimum-cost feasible policy; ties break on earlier t1, then on the
    fixed policy order. None when every policy is unavailable."""
    if not outcomes:
        raise ValueError("no outcomes to select from")
    feasible = [o for o in outcomes if o.feasible]
    if not feasible:
        return None
    return min(feasible, key=lambda o: (o.cost, o.t1, _POLICY_ORDER.get(o.policy, 99)))
