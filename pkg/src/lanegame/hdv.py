"""Human-driver model: sigmoid collision-risk cost and the best-response
problem the merging CAV uses to estimate the HDV's motion.

The driver trades off smoothness (squared acceleration), staying near a
desired speed (integrated), and keeping the merging vehicle out of a soft
"unsafe region" ahead, while never violating the hard headway behind its
fast-lane leader.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nlp
from .vehicles import SafetyParams, Trajectory, VehicleLimits, VehicleState

__all__ = ["HdvProfile", "sigmoid_safety", "make_risk_penalty", "solve_hdv_response"]

_EXP_CLAMP = 50.0


@dataclass(frozen=True)
class HdvProfile:
    """Behavioral weights of the human driver.

    beta_u, beta_v, beta_s weight effort, speed keeping, and collision risk;
    v_d_H is the desired speed (None: use the initial speed); mu sets the
    sigmoid steepness and d shifts the unsafe-region boundary.
    """

    beta_u: float = 0.9
    beta_v: float = 0.1
    beta_s: float = 0.1
    v_d_H: Optional[float] = None
    mu: float = 1.0
    d: float = 0.0

    def __post_init__(self):
        if min(self.beta_u, self.beta_v, self.beta_s) < 0:
            raise ValueError("driver weights must be nonnegative")
        if self.mu <= 0:
            raise ValueError("sigmoid steepness must be positive")

    def desired_speed(self, init: VehicleState) -> float:
        return init.v if self.v_d_H is None else self.v_d_H


def _clamped_exp(z):
    return np.exp(np.clip(z, -_EXP_CLAMP, _EXP_CLAMP))


def sigmoid_safety(gap, profile: HdvProfile):
    """Collision-risk level 1 / (1 + mu exp(mu (gap - d))).

    Strictly decreasing in the bumper gap; exponents are clamped at +-50 so
    extreme gaps saturate instead of overflowing.
    """
    gap = np.asarray(gap, dtype=float)
    if not np.all(np.isfinite(gap)):
        raise ValueError("gap must be finite")
    e = profile.mu * _clamped_exp(profile.mu * (gap - profile.d))
    out = 1.0 / (1.0 + e)
    return float(out) if out.ndim == 0 else out


def _sigmoid_derivs(gap, profile: HdvProfile):
    """(s, ds/dgap, d2s/dgap2) with the same clamping as sigmoid_safety."""
    mu = profile.mu
    e = mu * _clamped_exp(mu * (gap - profile.d))
    denom = (1.0 + e)
    s = 1.0 / denom
    ds = -mu * e / denom**2
    d2s = mu * mu * e * (e - 1.0) / denom**3
    return s, ds, d2s


def make_risk_penalty(leading_traj: Trajectory, profile: HdvProfile) -> nlp.PositionPenalty:
    """Running penalty beta_s * s(x_lead(t) - x) for the follower's problem."""

    def value(ts, x):
        s, _, _ = _sigmoid_derivs(leading_traj.position(ts) - x, profile)
        return s

    def slope(ts, x):  # d/dx = -ds/dgap
        _, ds, _ = _sigmoid_derivs(leading_traj.position(ts) - x, profile)
        return -ds

    def curvature(ts, x):
        _, _, d2s = _sigmoid_derivs(leading_traj.position(ts) - x, profile)
        return d2s

    return nlp.PositionPenalty(profile.beta_s, value, slope, curvature)


def solve_hdv_response(x_C_star: Trajectory, x_1_star: Trajectory,
                       init: VehicleState, profile: HdvProfile,
                       t1: float, t_f: float, p: SafetyParams,
                       limits: VehicleLimits, n_nodes: int = 101,
                       tol: nlp.Tolerances = nlp.Tolerances(),
                       warm: Optional[Trajectory] = None) -> nlp.NlpSolution:
    """Estimated driver best response on the fixed window [t1, t_f].

    Minimizes beta_u/2 u^2 + beta_v (v - v_d)^2 + beta_s s(x_C*(t) - x)
    integrated, subject to the hard headway behind the fast-lane leader:
    x_1*(t) - x(t) >= phi v(t) + delta at every node.
    """
    v_des = profile.desired_speed(init)
    penalty = make_risk_penalty(x_C_star, profile) if profile.beta_s > 0 else None
    spec = nlp.OcpSpec(
        agents=[nlp.AgentSpec(init=init, limits=limits,
                              effort_weight=profile.beta_u,
                              v_des=v_des,
                              run_dev_weight=profile.beta_v,
                              penalty=penalty)],
        horizon=nlp.Horizon(t0=t1, tf=t_f),
        path_constraints=[nlp.PathConstraint(
            ax={0: -1.0}, av={0: -p.phi},
            offset=lambda ts: x_1_star.position(ts) - p.delta)],
    )
    prog = nlp.transcribe(spec, n_nodes)
    z0 = prog.warm_start([warm]) if warm is not None else None
    return nlp.solve(prog, z0=z0, tol=tol)
