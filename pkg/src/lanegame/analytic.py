"""Closed-form solver for the cooperative "merge ahead of the fast-lane CAV"
maneuver.

With control and speed limits inactive, stationarity makes both optimal
controls linear in time, speeds quadratic, and positions cubic:

    u_i(t) = (a_i t + b_i) / alpha_u,   i in {leader 1, merging C}

with costates lam_i^x = a_i (constant) and lam_i^v = -(a_i t + b_i). The
eight polynomial coefficients, the free terminal time, and the terminal
constraint multiplier nu solve a 10-equation algebraic system assembled from
the costate boundary conditions, the initial conditions, the terminal gap
equality x_C - x_1 = phi v_1 + delta, and the free-time condition H(t_f) = 0.
The system is solved by damped Newton with an analytic Jacobian; time is
shifted so the polynomials are conditioned around zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .vehicles import SafetyParams, Trajectory, VehicleLimits, VehicleState

__all__ = [
    "PolynomialSolution",
    "MergeAheadResult",
    "solve_merge_ahead_cav1",
    "residuals",
    "eval_polynomial",
    "costates",
    "hamiltonian",
]


@dataclass(frozen=True)
class PolynomialSolution:
    """Integration constants of the two cubic trajectories, plus t_f and nu.

    Times are absolute; internally the polynomials are expressed in
    tau = t - t_start.
    """

    a_1: float
    b_1: float
    c_1: float
    d_1: float
    a_C: float
    b_C: float
    c_C: float
    d_C: float
    t_start: float
    t_f: float
    nu: float
    alpha_u: float

    @property
    def duration(self) -> float:
        return self.t_f - self.t_start


def _agent_eval(a, b, c, d, au, tau):
    u = (a * tau + b) / au
    v = (0.5 * a * tau**2 + b * tau + c) / au
    x = (a * tau**3 / 6.0 + 0.5 * b * tau**2 + c * tau + d) / au
    return x, v, u


def eval_polynomial(sol: PolynomialSolution, t, tol: float = 1e-9):
    """States and controls (x_1, v_1, u_1, x_C, v_C, u_C) at absolute time t."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < sol.t_start - tol) or np.any(t_arr > sol.t_f + tol):
        raise ValueError("evaluation time outside the maneuver interval")
    tau = t_arr - sol.t_start
    x1, v1, u1 = _agent_eval(sol.a_1, sol.b_1, sol.c_1, sol.d_1, sol.alpha_u, tau)
    xC, vC, uC = _agent_eval(sol.a_C, sol.b_C, sol.c_C, sol.d_C, sol.alpha_u, tau)
    return x1, v1, u1, xC, vC, uC


def costates(sol: PolynomialSolution, t):
    """(lam_1^x, lam_1^v, lam_C^x, lam_C^v) at absolute time t."""
    tau = np.asarray(t, dtype=float) - sol.t_start
    lam1x = sol.a_1 * np.ones_like(tau)
    lamCx = sol.a_C * np.ones_like(tau)
    lam1v = -(sol.a_1 * tau + sol.b_1)
    lamCv = -(sol.a_C * tau + sol.b_C)
    return lam1x, lam1v, lamCx, lamCv


def hamiltonian(sol: PolynomialSolution, t, alpha_t: float):
    """H(t) along the solution; constant and zero at t_f for a true optimum."""
    x1, v1, u1, xC, vC, uC = eval_polynomial(sol, t)
    lam1x, lam1v, lamCx, lamCv = costates(sol, t)
    au = sol.alpha_u
    return (0.5 * au * (u1**2 + uC**2) + alpha_t
            + lam1x * v1 + lam1v * u1 + lamCx * vC + lamCv * uC)


def _system(z, init_1: VehicleState, init_C: VehicleState,
            alpha_t, alpha_u, alpha_v, v_d_1, v_d_C, p: SafetyParams):
    """Residuals of the 10-equation terminal system (time shifted to tau=0)."""
    a1, b1, c1, d1, aC, bC, cC, dC, T, nu = z
    au = alpha_u
    x1f, v1f, u1f = _agent_eval(a1, b1, c1, d1, au, T)
    xCf, vCf, uCf = _agent_eval(aC, bC, cC, dC, au, T)
    return np.array([
        a1 + nu,
        aC - nu,
        a1 * T + b1 - alpha_v * (v_d_1 - v1f) - nu * p.phi,
        aC * T + bC - alpha_v * (v_d_C - vCf),
        c1 / au - init_1.v,
        cC / au - init_C.v,
        d1 / au - init_1.x,
        dC / au - init_C.x,
        xCf - x1f - p.phi * v1f - p.delta,
        -0.5 * (b1**2 + bC**2) + au * alpha_t + a1 * c1 + aC * cC,
    ])


def _jacobian(z, alpha_u, alpha_v, p: SafetyParams):
    a1, b1, c1, d1, aC, bC, cC, dC, T, nu = z
    au = alpha_u
    J = np.zeros((10, 10))
    # columns: a1 b1 c1 d1 aC bC cC dC T nu
    _, v1f, u1f = _agent_eval(a1, b1, c1, d1, au, T)
    _, vCf, uCf = _agent_eval(aC, bC, cC, dC, au, T)
    J[0, 0] = 1.0
    J[0, 9] = 1.0
    J[1, 4] = 1.0
    J[1, 9] = -1.0
    # r2 = a1 T + b1 - av (vd1 - v1f) - nu phi
    J[2, 0] = T + alpha_v * T**2 / (2 * au)
    J[2, 1] = 1.0 + alpha_v * T / au
    J[2, 2] = alpha_v / au
    J[2, 8] = a1 + alpha_v * u1f
    J[2, 9] = -p.phi
    J[3, 4] = T + alpha_v * T**2 / (2 * au)
    J[3, 5] = 1.0 + alpha_v * T / au
    J[3, 6] = alpha_v / au
    J[3, 8] = aC + alpha_v * uCf
    J[4, 2] = 1.0 / au
    J[5, 6] = 1.0 / au
    J[6, 3] = 1.0 / au
    J[7, 7] = 1.0 / au
    # r8 = xCf - x1f - phi v1f - delta
    J[8, 4] = T**3 / (6 * au)
    J[8, 5] = T**2 / (2 * au)
    J[8, 6] = T / au
    J[8, 7] = 1.0 / au
    J[8, 0] = -T**3 / (6 * au) - p.phi * T**2 / (2 * au)
    J[8, 1] = -T**2 / (2 * au) - p.phi * T / au
    J[8, 2] = -T / au - p.phi / au
    J[8, 3] = -1.0 / au
    J[8, 8] = vCf - v1f - p.phi * u1f
    # r9 = -(b1^2 + bC^2)/2 + au at + a1 c1 + aC cC
    J[9, 0] = c1
    J[9, 1] = -b1
    J[9, 2] = a1
    J[9, 4] = cC
    J[9, 5] = -bC
    J[9, 6] = aC
    return J


@dataclass
class MergeAheadResult:
    solution: Optional[PolynomialSolution]
    objective: float  # math.inf when unsolved
    converged: bool
    bounds_ok: bool
    max_residual: float
    detail: str = ""


def _catch_up_seed(init_1: VehicleState, init_C: VehicleState,
                   limits: VehicleLimits, p: SafetyParams) -> float:
    """Kinematic horizon estimate: close the gap past the leader at max accel."""
    need = (init_1.x - init_C.x) + p.phi * init_1.v + p.delta
    dv = init_C.v - init_1.v
    disc = dv * dv + 2.0 * limits.u_max * max(need, 1.0)
    t = (-dv + math.sqrt(disc)) / limits.u_max
    return max(t, 1.0)


def objective_value(sol: PolynomialSolution, alpha_t, alpha_v, v_d_1, v_d_C) -> float:
    """Closed-form cost: time + effort (cubic in t_f) + half-weighted terminal
    speed deviations."""
    au = sol.alpha_u
    T = sol.duration

    def effort(a, b):
        return (a * a * T**3 / 3.0 + a * b * T**2 + b * b * T) / au**2

    _, v1f, _ = _agent_eval(sol.a_1, sol.b_1, sol.c_1, sol.d_1, au, T)
    _, vCf, _ = _agent_eval(sol.a_C, sol.b_C, sol.c_C, sol.d_C, au, T)
    return (alpha_t * T
            + 0.5 * au * (effort(sol.a_1, sol.b_1) + effort(sol.a_C, sol.b_C))
            + 0.5 * alpha_v * ((v1f - v_d_1) ** 2 + (vCf - v_d_C) ** 2))


def solve_merge_ahead_cav1(init_1: VehicleState, init_C: VehicleState,
                           alpha_t: float, alpha_u: float, alpha_v: float,
                           v_d_1: float, v_d_C: float, p: SafetyParams,
                           limits: VehicleLimits, t_start: float = 0.0,
                           newton_tol: float = 1e-11,
                           bound_tol: float = 1e-9) -> MergeAheadResult:
    """Solve the terminal algebraic system by damped Newton with retries.

    Verifies afterwards that controls and speeds stay strictly inside the
    limits on a 201-point grid; `bounds_ok=False` signals that the inactive-
    limits assumption behind the closed form failed and a transcription-based
    solve should be used instead.
    """
    if alpha_u <= 0:
        raise ValueError("effort weight must be positive for the closed form")
    t_seed = _catch_up_seed(init_1, init_C, limits, p)
    au = alpha_u
    seeds = [t_seed * f for f in (1.0, 0.5, 0.75, 1.25, 1.5, 2.0)]
    best = None
    for T0 in seeds:
        z = np.array([
            0.0, au * (v_d_1 - init_1.v) / T0, au * init_1.v, au * init_1.x,
            0.0, au * (v_d_C - init_C.v) / T0, au * init_C.v, au * init_C.x,
            T0, 0.0,
        ])
        ok = False
        for _ in range(100):
            r = _system(z, init_1, init_C, alpha_t, alpha_u, alpha_v, v_d_1, v_d_C, p)
            rn = float(np.max(np.abs(r)))
            if not math.isfinite(rn):
                break
            if rn <= newton_tol:
                ok = True
                break
            J = _jacobian(z, alpha_u, alpha_v, p)
            try:
                step = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                break
            # damped update: backtrack on the residual norm
            alpha = 1.0
            base = rn
            for _ls in range(30):
                z_new = z + alpha * step
                r_new = _system(z_new, init_1, init_C, alpha_t, alpha_u, alpha_v,
                                v_d_1, v_d_C, p)
                if np.all(np.isfinite(r_new)) and np.max(np.abs(r_new)) < base:
                    z = z_new
                    break
                alpha *= 0.5
            else:
                break
        if ok and z[8] > 1e-6:
            sol = PolynomialSolution(*z[:8], t_start, t_start + z[8], z[9], alpha_u)
            J = objective_value(sol, alpha_t, alpha_v, v_d_1, v_d_C)
            if best is None or J < best[1]:
                best = (sol, J)
    if best is None:
        return MergeAheadResult(None, math.inf, False, False, math.inf,
                                "newton failed from all seeds")
    sol, J = best
    ts = np.linspace(sol.t_start, sol.t_f, 201)
    _, v1, u1, _, vC, uC = eval_polynomial(sol, ts)
    bounds_ok = bool(
        np.all(u1 >= limits.u_min - bound_tol) and np.all(u1 <= limits.u_max + bound_tol)
        and np.all(uC >= limits.u_min - bound_tol) and np.all(uC <= limits.u_max + bound_tol)
        and np.all(v1 >= limits.v_min - bound_tol) and np.all(v1 <= limits.v_max + bound_tol)
        and np.all(vC >= limits.v_min - bound_tol) and np.all(vC <= limits.v_max + bound_tol))
    res = residuals(sol, init_1, init_C, alpha_t, alpha_u, alpha_v, v_d_1, v_d_C, p)
    return MergeAheadResult(sol, J, True, bounds_ok, float(np.max(np.abs(res))))


def residuals(sol: PolynomialSolution, init_1: VehicleState, init_C: VehicleState,
              alpha_t, alpha_u, alpha_v, v_d_1, v_d_C, p: SafetyParams) -> np.ndarray:
    """The 10 algebraic residuals plus |H(t_f)| (transversality) appended."""
    z = np.array([sol.a_1, sol.b_1, sol.c_1, sol.d_1,
                  sol.a_C, sol.b_C, sol.c_C, sol.d_C, sol.duration, sol.nu])
    r = _system(z, init_1, init_C, alpha_t, alpha_u, alpha_v, v_d_1, v_d_C, p)
    h_tf = float(hamiltonian(sol, sol.t_f, alpha_t))
    return np.append(r, abs(h_tf))


def sampled_trajectories(sol: PolynomialSolution, n_nodes: int = 101
                         ) -> Tuple[Trajectory, Trajectory]:
    """Sample the closed-form pair onto a uniform grid (controls at interval
    midpoints, which reproduces the node speeds of the linear control exactly)."""
    ts = np.linspace(sol.t_start, sol.t_f, n_nodes)
    mid = 0.5 * (ts[:-1] + ts[1:])
    x1, v1, _, xC, vC, _ = eval_polynomial(sol, ts)
    _, _, u1m, _, _, uCm = eval_polynomial(sol, mid)
    return Trajectory(ts, x1, v1, u1m), Trajectory(ts, xC, vC, uCm)
