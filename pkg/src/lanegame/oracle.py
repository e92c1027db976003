"""Brute-force verification oracle: exhaustive piecewise-constant control
search with exact simulation.

Deliberately independent of the transcription solver; used in tests to bound
solver objectives from above on coarse control grids.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nlp import OcpSpec
from .vehicles import Trajectory

__all__ = ["OracleResult", "brute_force_oracle"]

_MAX_COMBOS = 2_000_000


@dataclass
class OracleResult:
    feasible: bool
    objective: float
    controls: Optional[np.ndarray]  # (n_agents, n_segments)
    t_f: float


def _segment_objective(spec: OcpSpec, xs, vs, us, edges) -> float:
    """Exact cost of piecewise-constant controls (Simpson for quadratics)."""
    J = spec.time_weight * (edges[-1] - edges[0])
    for a, ag in enumerate(spec.agents):
        dt = np.diff(edges)
        J += 0.5 * ag.effort_weight * float(np.sum(us[a] ** 2 * dt))
        if ag.run_dev_weight:
            # (v - v_des)^2 is quadratic on each segment: Simpson is exact
            v0 = vs[a][:-1] - ag.v_des
            v1 = vs[a][1:] - ag.v_des
            vm = 0.5 * (v0 + v1)
            J += ag.run_dev_weight * float(np.sum(dt / 6.0 * (v0**2 + 4 * vm**2 + v1**2)))
        if ag.term_dev_weight:
            J += ag.term_dev_weight * (vs[a][-1] - ag.v_des) ** 2
        if ag.penalty is not None:
            # fine trapezoid; penalties are smooth and bounded
            ts = np.linspace(edges[0], edges[-1], 24 * len(dt) + 1)
            tr = Trajectory.from_controls(
                ag.init, edges, us[a])
            J += ag.penalty.weight * float(np.trapezoid(
                ag.penalty.value(ts, tr.position(ts)), ts))
    return J


def _feasible(spec: OcpSpec, xs, vs, us, edges, eq_tol, n_check) -> bool:
    tf = edges[-1]
    t0 = edges[0]
    for a, ag in enumerate(spec.agents):
        lim = ag.limits
        if lim is None:
            continue
        if np.any(us[a] < lim.u_min - 1e-12) or np.any(us[a] > lim.u_max + 1e-12):
            return False
        # v is piecewise linear: endpoint checks suffice
        if np.any(vs[a] < lim.v_min - 1e-9) or np.any(vs[a] > lim.v_max + 1e-9):
            return False
    if spec.path_constraints:
        ts = np.linspace(t0, tf, n_check * (len(edges) - 1) + 1)
        trajs = [Trajectory.from_controls(ag.init, edges, us[a])
                 for a, ag in enumerate(spec.agents)]
        for pc in spec.path_constraints:
            val = np.asarray(pc.offset(ts), dtype=float) * np.ones_like(ts)
            for a, w in pc.ax.items():
                val = val + w * trajs[a].position(ts)
            for a, w in pc.av.items():
                val = val + w * trajs[a].speed(ts)
            if np.any(val < -1e-9):
                return False
    for tc in spec.terminal_constraints:
        val = tc.c0 + tc.c_t * (tf - t0)
        for a, w in tc.ax.items():
            val += w * xs[a][-1]
        for a, w in tc.av.items():
            val += w * vs[a][-1]
        if tc.kind == "eq":
            if abs(val) > eq_tol:
                return False
        elif val < -1e-9:
            return False
    return True


def brute_force_oracle(spec: OcpSpec, n_segments: int, control_grid: Sequence[float],
                       t_f_grid: Optional[Sequence[float]] = None,
                       eq_tol: float = 1e-6, n_check: int = 8) -> OracleResult:
    """Exhaustively evaluate piecewise-constant control sequences.

    Every agent takes one grid value per segment; states are propagated
    exactly and infeasible sequences discarded. Equality terminal constraints
    are accepted within eq_tol (supply a t_f grid containing the matching
    horizon). n_segments is capped at 5 to keep enumeration honest.
    """
    if n_segments < 1 or n_segments > 5:
        raise ValueError("n_segments must be in 1..5")
    grid = np.asarray(list(control_grid), dtype=float)
    if grid.size == 0:
        raise ValueError("empty control grid")
    if t_f_grid is None:
        if spec.horizon.free:
            raise ValueError("free horizon requires an explicit t_f grid")
        t_f_grid = [spec.horizon.tf]
    na = len(spec.agents)
    n_comb = len(grid) ** (n_segments * na) * len(t_f_grid)
    if n_comb > _MAX_COMBOS:
        raise ValueError(f"{n_comb} combinations exceed oracle budget")

    best = OracleResult(False, math.inf, None, math.nan)
    t0 = spec.horizon.t0
    for tf in t_f_grid:
        if spec.horizon.free and not (spec.horizon.tf_min - 1e-12 <= tf <= spec.horizon.tf_max + 1e-12):
            continue
        edges = np.linspace(t0, tf, n_segments + 1)
        dt = np.diff(edges)
        for combo in itertools.product(grid, repeat=n_segments * na):
            us = np.asarray(combo, dtype=float).reshape(na, n_segments)
            xs, vs = [], []
            for a, ag in enumerate(spec.agents):
                v = ag.init.v + np.concatenate(([0.0], np.cumsum(us[a] * dt)))
                x = ag.init.x + np.concatenate(
                    ([0.0], np.cumsum(0.5 * (v[:-1] + v[1:]) * dt)))
                xs.append(x)
                vs.append(v)
            if not _feasible(spec, xs, vs, us, edges, eq_tol, n_check):
                continue
            J = _segment_objective(spec, xs, vs, us, edges)
            if J < best.objective:
                best = OracleResult(True, J, us.copy(), float(tf))
    return best
