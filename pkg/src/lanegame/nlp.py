"""Direct transcription and a dense augmented-Lagrangian solver for
double-integrator optimal control problems.

Problems are transcribed on a uniform grid with per-node states and
per-interval (piecewise-constant) controls; dynamics enter as trapezoidal
defect equalities, which are exact for this parameterization. Free final
times are handled by treating t_f as a bounded decision variable that scales
the grid. The solver runs an augmented-Lagrangian outer loop (equalities,
path and terminal inequalities) with projected damped-Newton inner
iterations on analytic derivatives; variable boxes (controls, speeds, t_f)
are enforced by projection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .vehicles import Trajectory, VehicleLimits, VehicleState

__all__ = [
    "AgentSpec",
    "PositionPenalty",
    "PathConstraint",
    "TerminalConstraint",
    "Horizon",
    "OcpSpec",
    "Tolerances",
    "Program",
    "NlpSolution",
    "transcribe",
    "solve",
    "solve_free_time",
]


@dataclass(frozen=True)
class PositionPenalty:
    """Pointwise running penalty weight * integral p(t, x) dt on one agent.

    `value`, `slope`, `curvature` are vectorized in (t, x) and return the
    penalty and its first/second derivative with respect to x.
    """

    weight: float
    value: Callable
    slope: Callable
    curvature: Callable


@dataclass(frozen=True)
class AgentSpec:
    init: VehicleState
    limits: Optional[VehicleLimits]
    effort_weight: float = 0.0        # (w/2) int u^2 dt
    v_des: float = 0.0
    term_dev_weight: float = 0.0      # w (v(tf) - v_des)^2
    run_dev_weight: float = 0.0       # w int (v - v_des)^2 dt
    penalty: Optional[PositionPenalty] = None


@dataclass(frozen=True)
class PathConstraint:
    """sum_a ax[a] x_a(t) + av[a] v_a(t) + offset(t) >= 0 at every node."""

    ax: Dict[int, float]
    av: Dict[int, float]
    offset: Callable  # vectorized offset(t)


@dataclass(frozen=True)
class TerminalConstraint:
    """sum_a ax[a] x_a(tf) + av[a] v_a(tf) + c0 + c_t (tf - t0)  (==|>=) 0."""

    ax: Dict[int, float]
    av: Dict[int, float]
    c0: float
    c_t: float = 0.0
    kind: str = "eq"  # "eq" | "ineq"
    label: str = ""


@dataclass(frozen=True)
class Horizon:
    t0: float
    tf: float
    free: bool = False
    tf_min: float = 0.0
    tf_max: float = math.inf

    def __post_init__(self):
        if self.free:
            if not math.isfinite(self.tf_max) or self.tf_max <= self.t0:
                raise ValueError("free horizon requires a positive, finite upper bound")
        elif self.tf <= self.t0:
            raise ValueError("horizon must have positive duration")


@dataclass(frozen=True)
class OcpSpec:
    agents: Sequence[AgentSpec]
    horizon: Horizon
    time_weight: float = 0.0
    path_constraints: Sequence[PathConstraint] = field(default_factory=tuple)
    terminal_constraints: Sequence[TerminalConstraint] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.agents) == 0:
            raise ValueError("at least one agent required")
        weights = [self.time_weight]
        for a in self.agents:
            weights += [a.effort_weight, a.term_dev_weight, a.run_dev_weight]
            if a.penalty is not None:
                weights.append(a.penalty.weight)
        if any(w < 0 for w in weights):
            raise ValueError("cost weights must be nonnegative")
        if self.horizon.free:
            if any(a.penalty is not None for a in self.agents) or self.path_constraints:
                raise NotImplementedError(
                    "pointwise penalties/path constraints with a free horizon")


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-6
    stationarity: float = 1e-6
    max_outer: int = 50
    max_inner: int = 100


class Program:
    """Finite-dimensional transcription of an OcpSpec.

    Variable layout per agent a at offset a*(3N-1):
    [x_0..x_{N-1}, v_0..v_{N-1}, u_0..u_{N-2}]; a trailing t_f variable is
    appended for free horizons. Control/speed/horizon boxes are variable
    bounds; dynamics and terminal equalities plus path/terminal inequalities
    are general constraints.
    """

    def __init__(self, spec: OcpSpec, n_nodes: int):
        if n_nodes < 3:
            raise ValueError("need at least 3 nodes")
        self.spec = spec
        self.N = n_nodes
        self.na = len(spec.agents)
        self.free_tf = spec.horizon.free
        self.per = 3 * self.N - 1
        self.n = self.na * self.per + (1 if self.free_tf else 0)
        self.t0 = spec.horizon.t0
        self._trap = np.ones(self.N)
        self._trap[0] = self._trap[-1] = 0.5
        self._build_structure()

    # ---- variable indexing -------------------------------------------------
    def x_idx(self, a):
        return np.arange(a * self.per, a * self.per + self.N)

    def v_idx(self, a):
        return np.arange(a * self.per + self.N, a * self.per + 2 * self.N)

    def u_idx(self, a):
        return np.arange(a * self.per + 2 * self.N, a * self.per + 3 * self.N - 1)

    @property
    def tf_idx(self):
        return self.n - 1 if self.free_tf else None

    def tf_of(self, z):
        return float(z[self.tf_idx]) if self.free_tf else self.spec.horizon.tf

    def h_of(self, z):
        return (self.tf_of(z) - self.t0) / (self.N - 1)

    def times(self, z):
        return self.t0 + self.h_of(z) * np.arange(self.N)

    # ---- structure ---------------------------------------------------------
    def _build_structure(self):
        N = self.N
        # variable boxes
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        for a, ag in enumerate(self.spec.agents):
            if ag.limits is not None:
                lb[self.u_idx(a)] = ag.limits.u_min
                ub[self.u_idx(a)] = ag.limits.u_max
                lb[self.v_idx(a)] = ag.limits.v_min
                ub[self.v_idx(a)] = ag.limits.v_max
        if self.free_tf:
            lb[self.tf_idx] = max(self.spec.horizon.tf_min, self.t0 + 1e-2)
            ub[self.tf_idx] = self.spec.horizon.tf_max
        self.lb, self.ub = lb, ub

        # equality rows: per agent [x0, v0, dv_0..dv_{N-2}, dx_0..dx_{N-2}],
        # then terminal equalities
        self.m_eq_dyn = self.na * (2 + 2 * (N - 1))
        self.term_eq = [c for c in self.spec.terminal_constraints if c.kind == "eq"]
        self.term_ineq = [c for c in self.spec.terminal_constraints if c.kind == "ineq"]
        self.m_eq = self.m_eq_dyn + len(self.term_eq)
        self.m_path = len(self.spec.path_constraints) * N
        self.m_ineq = self.m_path + len(self.term_ineq)

    # ---- initial guesses -----------------------------------------------------
    def initial_guess(self) -> np.ndarray:
        """Constant-speed rollout; for free horizons, seed t_f at mid-range and
        pick least-norm constant controls consistent with terminal equalities."""
        z = np.zeros(self.n)
        if self.free_tf:
            z[self.tf_idx] = 0.5 * (self.lb[self.tf_idx] + min(self.ub[self.tf_idx], 4.0 * self.lb[self.tf_idx] + 20.0))
        u_const = np.zeros(self.na)
        if self.term_eq:
            u_const = self._consistent_controls(self.tf_of(z))
        ts = self.times(z)
        for a, ag in enumerate(self.spec.agents):
            z[self.u_idx(a)] = u_const[a]
            z[self.v_idx(a)] = ag.init.v + u_const[a] * (ts - self.t0)
            z[self.x_idx(a)] = (ag.init.x + ag.init.v * (ts - self.t0)
                                + 0.5 * u_const[a] * (ts - self.t0) ** 2)
        return np.clip(z, self.lb, self.ub)

    def _consistent_controls(self, tf) -> np.ndarray:
        """Least-norm constant controls satisfying the terminal equalities."""
        dt = tf - self.t0
        A = np.zeros((len(self.term_eq), self.na))
        b = np.zeros(len(self.term_eq))
        for i, tc in enumerate(self.term_eq):
            val = tc.c0 + tc.c_t * dt
            for a, w in tc.ax.items():
                ag = self.spec.agents[a]
                val += w * (ag.init.x + ag.init.v * dt)
                A[i, a] += w * 0.5 * dt * dt
            for a, w in tc.av.items():
                val += w * self.spec.agents[a].init.v
                A[i, a] += w * dt
            b[i] = -val
        sol, *_ = np.linalg.lstsq(A, b, rcond=None)
        caps = np.array([max(abs(ag.limits.u_min), ag.limits.u_max) if ag.limits else 10.0
                         for ag in self.spec.agents])
        return np.clip(sol, -caps, caps)

    def warm_start(self, trajectories: Sequence[Trajectory], tf: Optional[float] = None) -> np.ndarray:
        z = np.zeros(self.n)
        if self.free_tf:
            z[self.tf_idx] = float(np.clip(
                tf if tf is not None else trajectories[0].t_end,
                self.lb[self.tf_idx], self.ub[self.tf_idx]))
        ts = self.times(z)
        mids = 0.5 * (ts[:-1] + ts[1:])
        for a, tr in enumerate(trajectories):
            z[self.x_idx(a)] = tr.position(ts)
            z[self.v_idx(a)] = tr.speed(ts)
            z[self.u_idx(a)] = tr.control(mids)
        return np.clip(z, self.lb, self.ub)

    # ---- objective ---------------------------------------------------------
    def objective(self, z) -> float:
        h = self.h_of(z)
        ts = self.times(z)
        J = self.spec.time_weight * (self.tf_of(z) - self.t0)
        for a, ag in enumerate(self.spec.agents):
            u = z[self.u_idx(a)]
            v = z[self.v_idx(a)]
            J += 0.5 * ag.effort_weight * h * float(np.sum(u * u))
            if ag.run_dev_weight:
                d = v - ag.v_des
                J += ag.run_dev_weight * h * float(np.dot(self._trap, d * d))
            if ag.term_dev_weight:
                J += ag.term_dev_weight * (v[-1] - ag.v_des) ** 2
            if ag.penalty is not None:
                x = z[self.x_idx(a)]
                J += ag.penalty.weight * h * float(np.dot(self._trap, ag.penalty.value(ts, x)))
        return J

    def gradient(self, z) -> np.ndarray:
        N = self.N
        h = self.h_of(z)
        ts = self.times(z)
        g = np.zeros(self.n)
        if self.free_tf:
            g[self.tf_idx] += self.spec.time_weight
        for a, ag in enumerate(self.spec.agents):
            u = z[self.u_idx(a)]
            v = z[self.v_idx(a)]
            g[self.u_idx(a)] += ag.effort_weight * h * u
            if self.free_tf:
                g[self.tf_idx] += 0.5 * ag.effort_weight * float(np.sum(u * u)) / (N - 1)
            if ag.run_dev_weight:
                d = v - ag.v_des
                g[self.v_idx(a)] += 2.0 * ag.run_dev_weight * h * self._trap * d
                if self.free_tf:
                    g[self.tf_idx] += ag.run_dev_weight * float(np.dot(self._trap, d * d)) / (N - 1)
            if ag.term_dev_weight:
                g[self.v_idx(a)[-1]] += 2.0 * ag.term_dev_weight * (v[-1] - ag.v_des)
            if ag.penalty is not None:
                x = z[self.x_idx(a)]
                g[self.x_idx(a)] += ag.penalty.weight * h * self._trap * ag.penalty.slope(ts, x)
        return g

    def hessian(self, z) -> np.ndarray:
        N = self.N
        h = self.h_of(z)
        ts = self.times(z)
        H = np.zeros((self.n, self.n))
        for a, ag in enumerate(self.spec.agents):
            ui = self.u_idx(a)
            vi = self.v_idx(a)
            u = z[ui]
            v = z[vi]
            H[ui, ui] += ag.effort_weight * h
            if self.free_tf:
                H[ui, self.tf_idx] += ag.effort_weight * u / (N - 1)
                H[self.tf_idx, ui] += ag.effort_weight * u / (N - 1)
            if ag.run_dev_weight:
                d = v - ag.v_des
                H[vi, vi] += 2.0 * ag.run_dev_weight * h * self._trap
                if self.free_tf:
                    cross = 2.0 * ag.run_dev_weight * self._trap * d / (N - 1)
                    H[vi, self.tf_idx] += cross
                    H[self.tf_idx, vi] += cross
            if ag.term_dev_weight:
                H[vi[-1], vi[-1]] += 2.0 * ag.term_dev_weight
            if ag.penalty is not None:
                xi = self.x_idx(a)
                H[xi, xi] += ag.penalty.weight * h * self._trap * ag.penalty.curvature(ts, z[xi])
        return H

    # ---- equality constraints ----------------------------------------------
    def cons_eq(self, z) -> np.ndarray:
        N = self.N
        h = self.h_of(z)
        c = np.empty(self.m_eq)
        pos = 0
        for a, ag in enumerate(self.spec.agents):
            x = z[self.x_idx(a)]
            v = z[self.v_idx(a)]
            u = z[self.u_idx(a)]
            c[pos] = x[0] - ag.init.x
            c[pos + 1] = v[0] - ag.init.v
            pos += 2
            c[pos:pos + N - 1] = v[1:] - v[:-1] - h * u
            pos += N - 1
            c[pos:pos + N - 1] = x[1:] - x[:-1] - 0.5 * h * (v[:-1] + v[1:])
            pos += N - 1
        tf = self.tf_of(z)
        for tc in self.term_eq:
            val = tc.c0 + tc.c_t * (tf - self.t0)
            for a, w in tc.ax.items():
                val += w * z[self.x_idx(a)[-1]]
            for a, w in tc.av.items():
                val += w * z[self.v_idx(a)[-1]]
            c[pos] = val
            pos += 1
        return c

    def jac_eq(self, z) -> np.ndarray:
        N = self.N
        h = self.h_of(z)
        J = np.zeros((self.m_eq, self.n))
        pos = 0
        rng = np.arange(N - 1)
        for a, ag in enumerate(self.spec.agents):
            xi, vi, ui = self.x_idx(a), self.v_idx(a), self.u_idx(a)
            u = z[ui]
            v = z[vi]
            J[pos, xi[0]] = 1.0
            J[pos + 1, vi[0]] = 1.0
            pos += 2
            r = pos + rng
            J[r, vi[1:]] = 1.0
            J[r, vi[:-1]] += -1.0
            J[r, ui] = -h
            if self.free_tf:
                J[r, self.tf_idx] = -u / (N - 1)
            pos += N - 1
            r = pos + rng
            J[r, xi[1:]] = 1.0
            J[r, xi[:-1]] += -1.0
            J[r, vi[:-1]] += -0.5 * h
            J[r, vi[1:]] += -0.5 * h
            if self.free_tf:
                J[r, self.tf_idx] = -0.5 * (v[:-1] + v[1:]) / (N - 1)
            pos += N - 1
        for tc in self.term_eq:
            for a, w in tc.ax.items():
                J[pos, self.x_idx(a)[-1]] = w
            for a, w in tc.av.items():
                J[pos, self.v_idx(a)[-1]] = w
            if self.free_tf:
                J[pos, self.tf_idx] = tc.c_t
            pos += 1
        return J

    def hess_eq_combo(self, z, w) -> np.ndarray:
        """sum_i w_i * hess(c_i): only free-horizon defects are non-linear."""
        H = np.zeros((self.n, self.n))
        if not self.free_tf:
            return H
        N = self.N
        pos = 0
        rng = np.arange(N - 1)
        col = self.tf_idx
        for a in range(self.na):
            vi, ui = self.v_idx(a), self.u_idx(a)
            pos += 2
            wv = w[pos + rng]  # speed defects: -h u  -> cross (u_k, tf)
            H[ui, col] += -wv / (N - 1)
            H[col, ui] += -wv / (N - 1)
            pos += N - 1
            wx = w[pos + rng]  # position defects: cross (v_k, tf), (v_{k+1}, tf)
            acc = np.zeros(N)
            acc[:-1] += -0.5 * wx / (N - 1)
            acc[1:] += -0.5 * wx / (N - 1)
            H[vi, col] += acc
            H[col, vi] += acc
            pos += N - 1
        return H

    # ---- general inequality constraints (g(z) >= 0) -------------------------
    def cons_ineq(self, z) -> np.ndarray:
        if self.m_ineq == 0:
            return np.empty(0)
        g = np.empty(self.m_ineq)
        pos = 0
        if self.m_path:
            ts = self.times(z)
            for pc in self.spec.path_constraints:
                val = np.asarray(pc.offset(ts), dtype=float) * np.ones(self.N)
                for a, w in pc.ax.items():
                    val = val + w * z[self.x_idx(a)]
                for a, w in pc.av.items():
                    val = val + w * z[self.v_idx(a)]
                g[pos:pos + self.N] = val
                pos += self.N
        tf = self.tf_of(z)
        for tc in self.term_ineq:
            val = tc.c0 + tc.c_t * (tf - self.t0)
            for a, w in tc.ax.items():
                val += w * z[self.x_idx(a)[-1]]
            for a, w in tc.av.items():
                val += w * z[self.v_idx(a)[-1]]
            g[pos] = val
            pos += 1
        return g

    def jac_ineq(self) -> np.ndarray:
        J = np.zeros((self.m_ineq, self.n))
        pos = 0
        for pc in self.spec.path_constraints:
            for a, w in pc.ax.items():
                J[pos + np.arange(self.N), self.x_idx(a)] += w
            for a, w in pc.av.items():
                J[pos + np.arange(self.N), self.v_idx(a)] += w
            pos += self.N
        for tc in self.term_ineq:
            for a, w in tc.ax.items():
                J[pos, self.x_idx(a)[-1]] = w
            for a, w in tc.av.items():
                J[pos, self.v_idx(a)[-1]] = w
            if self.free_tf:
                J[pos, self.tf_idx] = tc.c_t
            pos += 1
        return J

    # ---- solution extraction -------------------------------------------------
    def extract(self, z) -> List[Trajectory]:
        ts = self.times(z)
        return [Trajectory(ts, z[self.x_idx(a)], z[self.v_idx(a)], z[self.u_idx(a)])
                for a in range(self.na)]


@dataclass
class NlpSolution:
    status: str  # converged | max-iterations | infeasible | breakdown
    objective: float
    t_f: float
    trajectories: List[Trajectory]
    term_eq_multipliers: List[float]
    term_ineq_multipliers: List[float]
    feasibility: float
    stationarity: float
    outer_iterations: int
    z: np.ndarray

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def transcribe(spec: OcpSpec, n_nodes: int = 101) -> Program:
    return Program(spec, n_nodes)


def _al_value(prog, z, lam, mu, rho):
    f = prog.objective(z)
    c = prog.cons_eq(z)
    val = f - float(lam @ c) + 0.5 * rho * float(c @ c)
    if prog.m_ineq:
        g = prog.cons_ineq(z)
        m = np.maximum(0.0, mu - rho * g)
        val += float(np.sum(m * m - mu * mu)) / (2.0 * rho)
    return val


def solve(prog: Program, z0: Optional[np.ndarray] = None,
          tol: Tolerances = Tolerances()) -> NlpSolution:
    """Augmented-Lagrangian outer loop; projected damped Newton inner loop."""
    lb, ub = prog.lb, prog.ub
    z = prog.initial_guess() if z0 is None else np.clip(np.asarray(z0, dtype=float), lb, ub)
    lam = np.zeros(prog.m_eq)
    mu = np.zeros(prog.m_ineq)
    rho = 10.0
    eta = 0.1
    inner_tol = 1e-3
    Jin = prog.jac_ineq() if prog.m_ineq else np.empty((0, prog.n))
    status = "max-iterations"
    outer = 0
    broke = False
    feas_prev = math.inf

    Jin_sp = sp.csr_matrix(Jin) if prog.m_ineq else None

    def al_grad_hess(z):
        c = prog.cons_eq(z)
        Jeq = sp.csr_matrix(prog.jac_eq(z))
        w_eq = rho * c - lam
        grad = prog.gradient(z) + Jeq.T @ w_eq
        H = (sp.csr_matrix(prog.hessian(z) + prog.hess_eq_combo(z, w_eq))
             + rho * (Jeq.T @ Jeq))
        if prog.m_ineq:
            g = prog.cons_ineq(z)
            m = np.maximum(0.0, mu - rho * g)
            grad -= Jin_sp.T @ m
            act = m > 0.0
            if np.any(act):
                Ja = Jin_sp[np.flatnonzero(act)]
                H = H + rho * (Ja.T @ Ja)
        return grad, H.tocsc()

    for outer in range(1, tol.max_outer + 1):
        # ---- inner: projected Newton on the AL subproblem
        tau = 0.0
        for _ in range(tol.max_inner):
            grad, H = al_grad_hess(z)
            if not np.all(np.isfinite(grad)):
                broke = True
                break
            at_lo = (z <= lb + 1e-11) & (grad > 0)
            at_hi = (z >= ub - 1e-11) & (grad < 0)
            free = ~(at_lo | at_hi)
            pg = np.where(free, grad, 0.0)
            if float(np.max(np.abs(pg))) <= max(inner_tol, 0.02 * tol.stationarity):
                break
            F = np.flatnonzero(free)
            Hff = H[F][:, F].tocsc()
            gF = grad[F]
            nf = len(F)
            step = None
            for _try in range(40):
                try:
                    lu = splu(Hff + tau * sp.identity(nf, format="csc"),
                              diag_pivot_thresh=0.0,
                              options={"SymmetricMode": True})
                    cand = lu.solve(-gF)
                except RuntimeError:
                    tau = max(10.0 * tau, 1e-8)
                    continue
                # accept only finite descent directions (guards indefiniteness)
                if np.all(np.isfinite(cand)) and float(gF @ cand) < 0.0:
                    step = cand
                    break
                tau = max(10.0 * tau, 1e-8)
            if step is None:
                broke = True
                break
            p = np.zeros(prog.n)
            p[F] = step
            f0 = _al_value(prog, z, lam, mu, rho)
            alpha = 1.0
            accepted = False
            for _ls in range(40):
                z_new = np.clip(z + alpha * p, lb, ub)
                f1 = _al_value(prog, z_new, lam, mu, rho)
                # projected Armijo: compare against the projected decrease
                dec = float(grad @ (z_new - z))
                if math.isfinite(f1) and f1 <= f0 + 1e-4 * min(dec, 0.0) and f1 < f0 + 1e-12 * max(1.0, abs(f0)):
                    z = z_new
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                tau = max(10.0 * tau, 1e-6)
                if tau > 1e13:
                    break
                continue
            tau *= 0.2
        if broke:
            break

        # ---- multiplier / penalty update
        inner_tol = max(0.2 * inner_tol, 0.02 * tol.stationarity)
        c = prog.cons_eq(z)
        g = prog.cons_ineq(z) if prog.m_ineq else np.empty(0)
        feas = max(float(np.max(np.abs(c))) if len(c) else 0.0,
                   float(np.max(np.maximum(0.0, -g))) if len(g) else 0.0)
        if feas <= max(eta, tol.feasibility):
            lam = lam - rho * c
            if prog.m_ineq:
                mu = np.maximum(0.0, mu - rho * g)
            eta = max(eta / rho**0.9, 0.1 * tol.feasibility)
            if feas <= tol.feasibility:
                grad_L = prog.gradient(z) - prog.jac_eq(z).T @ lam
                if prog.m_ineq:
                    grad_L -= Jin.T @ mu
                at_lo = (z <= lb + 1e-9) & (grad_L > 0)
                at_hi = (z >= ub - 1e-9) & (grad_L < 0)
                stat = float(np.max(np.abs(np.where(at_lo | at_hi, 0.0, grad_L))))
                if stat <= tol.stationarity:
                    status = "converged"
                    break
        else:
            if feas > 0.25 * feas_prev:
                rho = min(rho * 4.0, 1e10)
            eta = max(0.1 / rho**0.1, tol.feasibility)
        feas_prev = feas

    if not np.all(np.isfinite(z)):
        broke = True
        z = prog.initial_guess()
    c = prog.cons_eq(z)
    g = prog.cons_ineq(z) if prog.m_ineq else np.empty(0)
    feas = max(float(np.max(np.abs(c))) if len(c) else 0.0,
               float(np.max(np.maximum(0.0, -g))) if len(g) else 0.0)
    grad_L = prog.gradient(z) - prog.jac_eq(z).T @ lam
    if prog.m_ineq:
        grad_L -= Jin.T @ mu
    at_lo = (z <= lb + 1e-9) & (grad_L > 0)
    at_hi = (z >= ub - 1e-9) & (grad_L < 0)
    stat = float(np.max(np.abs(np.where(at_lo | at_hi, 0.0, grad_L))))
    if broke:
        status = "breakdown"
    elif status != "converged":
        status = "infeasible" if feas > 10.0 * tol.feasibility else "max-iterations"

    n_te = len(prog.term_eq)
    te_mult = list(lam[prog.m_eq_dyn:prog.m_eq_dyn + n_te]) if n_te else []
    ti_mult = list(mu[prog.m_ineq - len(prog.term_ineq):]) if prog.term_ineq else []
    return NlpSolution(
        status=status,
        objective=prog.objective(z),
        t_f=prog.tf_of(z),
        trajectories=prog.extract(z),
        term_eq_multipliers=te_mult,
        term_ineq_multipliers=ti_mult,
        feasibility=feas,
        stationarity=stat,
        outer_iterations=outer,
        z=z,
    )


def solve_free_time(spec: OcpSpec, n_nodes: int = 101,
                    z0: Optional[np.ndarray] = None,
                    tol: Tolerances = Tolerances()) -> NlpSolution:
    """Solve a free-final-time spec; infeasible when no t_f within bounds works."""
    if not spec.horizon.free:
        raise ValueError("spec horizon is not free")
    prog = transcribe(spec, n_nodes)
    sol = solve(prog, z0=z0, tol=tol)
    best = sol if sol.converged else None
    if not sol.converged and z0 is None:
        lo = max(spec.horizon.tf_min, spec.horizon.t0 + 1e-2)
        hi = spec.horizon.tf_max
        for frac in (0.15, 0.45, 0.75, 0.95):
            zg = prog.initial_guess()
            zg[prog.tf_idx] = lo + frac * (hi - lo)
            tfg = zg[prog.tf_idx]
            u_const = (prog._consistent_controls(tfg) if prog.term_eq
                       else np.zeros(prog.na))
            ts = prog.t0 + (tfg - prog.t0) / (prog.N - 1) * np.arange(prog.N)
            for a, ag in enumerate(spec.agents):
                zg[prog.u_idx(a)] = u_const[a]
                zg[prog.v_idx(a)] = ag.init.v + u_const[a] * (ts - prog.t0)
                zg[prog.x_idx(a)] = (ag.init.x + ag.init.v * (ts - prog.t0)
                                     + 0.5 * u_const[a] * (ts - prog.t0) ** 2)
            zg = np.clip(zg, prog.lb, prog.ub)
            alt = solve(prog, z0=zg, tol=tol)
            if alt.converged and (best is None or alt.objective < best.objective):
                best = alt
                break
    return best if best is not None else sol
