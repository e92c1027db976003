"""Interaction-phase game: ideal merge-ahead-of-HDV plan, per-vehicle best
responses, and the iterated best-response fixed point with horizon
relaxation.

Round order is HDV -> merging CAV -> fast-lane CAV; the convergence test
compares the merging CAV's last two control iterates (scaled discrete L2)
right after the HDV response, before anything is re-solved. If a horizon
exhausts its rounds without convergence the terminal time is inflated by
the relaxation factor and the process restarts, up to the hard time cap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import nlp
from .hdv import HdvProfile, solve_hdv_response
from .phase1 import CostWeights, Phase1Outcome
from .vehicles import SafetyParams, Trajectory, VehicleLimits, VehicleState

__all__ = [
    "IbrConfig",
    "IbrResult",
    "solve_ideal_phase2",
    "solve_cavC_response",
    "solve_cav1_response",
    "run_ibr",
    "cost_merge_ahead_hdv",
]


@dataclass(frozen=True)
class IbrConfig:
    n_rounds: int = 5          # best-response rounds per horizon
    epsilon: float = 0.05      # control-change tolerance, sqrt(dt)-scaled L2
    relaxation: float = 1.8    # horizon inflation factor when not converged
    T: float = 15.0            # hard cap on the terminal time

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ValueError("need at least one round")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.relaxation <= 1.0:
            raise ValueError("relaxation factor must exceed 1")
        if self.T <= 0:
            raise ValueError("time cap must be positive")


@dataclass
class IbrResult:
    converged: bool
    iterations: int
    t_f: float
    traj_1: Optional[Trajectory]
    traj_C: Optional[Trajectory]
    traj_H: Optional[Trajectory]
    J_C_II: float
    control_changes: List[float] = field(default_factory=list)
    relaxations: int = 0
    hdv_objective: float = math.nan
    cav1_objective: float = math.nan
    ideal_objective: float = math.nan
    feasible: bool = True
    detail: str = ""


def _control_change(u_new: np.ndarray, u_old: np.ndarray, h: float) -> float:
    """Discrete L2 distance between control iterates, scaled by sqrt(dt)."""
    n = min(len(u_new), len(u_old))
    return float(math.sqrt(h * np.sum((u_new[:n] - u_old[:n]) ** 2)))


def solve_ideal_phase2(init_C: VehicleState, hdv_at_t1: VehicleState,
                       weights: CostWeights, v_des: float, T: float,
                       p: SafetyParams, limits: VehicleLimits, t1: float = 0.0,
                       n_nodes: int = 101,
                       tol: nlp.Tolerances = nlp.Tolerances()) -> nlp.NlpSolution:
    """Free-final-time plan assuming the HDV keeps cruising: end at least one
    HDV headway ahead of its extrapolated position."""
    return nlp.solve_free_time(
        _ideal_spec(init_C, hdv_at_t1, weights, v_des, T, p, limits, t1),
        n_nodes, tol=tol)


def _ideal_spec(init_C, hdv_at_t1, weights, v_des, T, p, limits, t1,
                fixed_tf=None):
    off = hdv_at_t1.x + p.phi * hdv_at_t1.v + p.delta
    if fixed_tf is None:
        horizon = nlp.Horizon(t0=t1, tf=T, free=True, tf_min=t1 + 1e-2, tf_max=T)
    else:
        horizon = nlp.Horizon(t0=t1, tf=fixed_tf)
    return nlp.OcpSpec(
        agents=[nlp.AgentSpec(init=init_C, limits=limits,
                              effort_weight=weights.alpha_u, v_des=v_des,
                              term_dev_weight=weights.alpha_v)],
        horizon=horizon,
        time_weight=weights.alpha_t,
        terminal_constraints=[nlp.TerminalConstraint(
            ax={0: 1.0}, av={}, c0=-off, c_t=-hdv_at_t1.v, kind="ineq",
            label="clear_of_hdv")],
    )


def solve_cavC_response(x_H_terminal: VehicleState, init_C: VehicleState,
                        weights: CostWeights, v_des: float,
                        t1: float, t_f: float, p: SafetyParams,
                        limits: VehicleLimits, n_nodes: int = 101,
                        tol: nlp.Tolerances = nlp.Tolerances(),
                        warm: Optional[Trajectory] = None) -> nlp.NlpSolution:
    """Merging CAV's best response on a fixed window: minimum effort plus
    terminal speed deviation, ending one headway ahead of the HDV's predicted
    terminal state."""
    off = x_H_terminal.x + p.phi * x_H_terminal.v + p.delta
    spec = nlp.OcpSpec(
        agents=[nlp.AgentSpec(init=init_C, limits=limits,
                              effort_weight=weights.alpha_u, v_des=v_des,
                              term_dev_weight=weights.alpha_v)],
        horizon=nlp.Horizon(t0=t1, tf=t_f),
        terminal_constraints=[nlp.TerminalConstraint(
            ax={0: 1.0}, av={}, c0=-off, kind="ineq", label="clear_of_hdv")],
    )
    prog = nlp.transcribe(spec, n_nodes)
    z0 = prog.warm_start([warm]) if warm is not None else None
    return nlp.solve(prog, z0=z0, tol=tol)


def solve_cav1_response(x_C_terminal: VehicleState, init_1: VehicleState,
                        weights: CostWeights, v_des: float,
                        t1: float, t_f: float, p: SafetyParams,
                        limits: VehicleLimits, n_nodes: int = 101,
                        tol: nlp.Tolerances = nlp.Tolerances(),
                        warm: Optional[Trajectory] = None) -> nlp.NlpSolution:
    """Fast-lane CAV's best response: stay one headway ahead of the merging
    vehicle's predicted terminal state."""
    off = x_C_terminal.x + p.phi * x_C_terminal.v + p.delta
    spec = nlp.OcpSpec(
        agents=[nlp.AgentSpec(init=init_1, limits=limits,
                              effort_weight=weights.alpha_u, v_des=v_des,
                              term_dev_weight=weights.alpha_v)],
        horizon=nlp.Horizon(t0=t1, tf=t_f),
        terminal_constraints=[nlp.TerminalConstraint(
            ax={0: 1.0}, av={}, c0=-off, kind="ineq", label="clear_of_merger")],
    )
    prog = nlp.transcribe(spec, n_nodes)
    z0 = prog.warm_start([warm]) if warm is not None else None
    return nlp.solve(prog, z0=z0, tol=tol)


def run_ibr(init_1: VehicleState, init_C: VehicleState, init_H: VehicleState,
            weights: CostWeights, v_d_1: float, v_d_C: float,
            profile: HdvProfile, cfg: IbrConfig, p: SafetyParams,
            limits: VehicleLimits, t1: float = 0.0, n_nodes: int = 101,
            tol: nlp.Tolerances = nlp.Tolerances(),
            include_time_in_cost: bool = False) -> IbrResult:
    """Iterated best responses from the end-of-catch-up states.

    Initialization solves the ideal (cruising-HDV) plan for the merging CAV
    and extrapolates the fast-lane CAV at constant speed. Each round solves
    the HDV response, checks convergence of the merging CAV's control, then
    re-solves both CAV responses. J_C_II is the merging CAV's equilibrium
    cost (effort + terminal speed deviation; the travel-time term enters only
    through the ideal problem that fixes the horizon, unless
    include_time_in_cost is set).
    """
    ideal = nlp.solve_free_time(
        _ideal_spec(init_C, init_H, weights, v_d_C, cfg.T, p, limits, t1),
        n_nodes, tol=tol)
    if not ideal.converged:
        return IbrResult(False, 0, math.nan, None, None, None, math.inf,
                         feasible=False, detail=f"ideal plan: {ideal.status}")
    t_f = ideal.t_f
    traj_C = ideal.trajectories[0]
    traj_1 = Trajectory.constant_speed(init_1, t1, t_f, n_nodes)
    u_prev = traj_C.u.copy()
    ideal_obj = ideal.objective

    changes: List[float] = []
    relaxations = 0
    hdv_sol = None
    c_sol = None
    one_sol = None
    k_used = 0

    while True:
        converged = False
        failed = False
        last_change = None  # change recorded within the current horizon only
        for k in range(1, cfg.n_rounds + 1):
            k_used = k
            h = (t_f - t1) / (n_nodes - 1)
            hdv_sol = solve_hdv_response(
                traj_C, traj_1, init_H, profile, t1, t_f, p, limits, n_nodes, tol,
                warm=hdv_sol.trajectories[0] if hdv_sol and hdv_sol.converged else None)
            if not hdv_sol.converged:
                failed = True
                break
            traj_H = hdv_sol.trajectories[0]
            if k >= 2:
                if last_change is not None and last_change <= cfg.epsilon:
                    converged = True
                    break
            c_sol = solve_cavC_response(
                traj_H.state(t_f), init_C, weights, v_d_C, t1, t_f, p, limits,
                n_nodes, tol, warm=traj_C)
            if not c_sol.converged:
                failed = True
                break
            last_change = _control_change(c_sol.trajectories[0].u, u_prev, h)
            changes.append(last_change)
            u_prev = c_sol.trajectories[0].u.copy()
            traj_C = c_sol.trajectories[0]
            one_sol = solve_cav1_response(
                traj_C.state(t_f), init_1, weights, v_d_1, t1, t_f, p, limits,
                n_nodes, tol, warm=traj_1)
            if not one_sol.converged:
                failed = True
                break
            traj_1 = one_sol.trajectories[0]

        if converged and not failed:
            break
        # relax the horizon and restart; give up at the time cap
        t_f_new = cfg.relaxation * t_f
        if t_f_new > cfg.T:
            traj_H = hdv_sol.trajectories[0] if hdv_sol and hdv_sol.converged else None
            J = _phase2_cost(c_sol, ideal, weights, t_f, t1, include_time_in_cost)
            return IbrResult(False, k_used, t_f, traj_1, traj_C, traj_H, J,
                             changes, relaxations, ideal_objective=ideal_obj,
                             detail="time cap reached; applying last iterate")
        relaxations += 1
        t_f = t_f_new
        re_ideal = nlp.solve(
            nlp.transcribe(_ideal_spec(init_C, init_H, weights, v_d_C, cfg.T, p,
                                       limits, t1, fixed_tf=t_f), n_nodes), tol=tol)
        if re_ideal.converged:
            traj_C = re_ideal.trajectories[0]
        else:
            traj_C = Trajectory.constant_speed(init_C, t1, t_f, n_nodes)
        traj_1 = Trajectory.constant_speed(init_1, t1, t_f, n_nodes)
        u_prev = traj_C.u.copy()
        hdv_sol = c_sol = one_sol = None

    traj_H = hdv_sol.trajectories[0]
    J = _phase2_cost(c_sol, ideal, weights, t_f, t1, include_time_in_cost)
    return IbrResult(
        True, k_used, t_f, traj_1, traj_C, traj_H, J, changes, relaxations,
        hdv_objective=hdv_sol.objective,
        cav1_objective=one_sol.objective if one_sol else math.nan,
        ideal_objective=ideal_obj)


def _phase2_cost(c_sol, ideal, weights, t_f, t1, include_time) -> float:
    if c_sol is not None and c_sol.converged:
        J = c_sol.objective
    else:
        # converged before any re-solve: the ideal plan is the equilibrium
        J = ideal.objective - weights.alpha_t * (ideal.t_f - t1)
    if include_time:
        J += weights.alpha_t * (t_f - t1)
    return J


def cost_merge_ahead_hdv(phase1: Optional[Phase1Outcome], ibr: IbrResult) -> float:
    """Policy cost of merging ahead of the HDV: catch-up cost plus the
    merging CAV's interaction-phase cost; inf if either stage failed."""
    if phase1 is None or not phase1.feasible or not ibr.feasible:
        return math.inf
    return phase1.cost + ibr.J_C_II
