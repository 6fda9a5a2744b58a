"""Implicit time stepping: backward Euler in time, full Newton per step,
sparse direct linear solves.

A model object supplies the equation system plus three hooks: ``set_dt``,
``before_step(t)`` (refresh time-dependent data) and ``refresh_lagged()``
(snapshot coefficients that enter discretizations). Within one Newton
iteration all lagged coefficients come from the same snapshot; the snapshot
is refreshed after each state update.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from mdflow.errors import NumericalBreakdown, SingularMatrix, StepFailure

logger = logging.getLogger(__name__)

__all__ = ["SolverConfig", "StepRecord", "SolveReport", "newton_step",
           "solve_time_step", "time_loop"]


@dataclass
class SolverConfig:
    dt: float | list = 1.0  # fixed step or explicit schedule [s]
    t_end: float = 1.0
    newton_tol: float = 1e-10  # relative to the step's first residual
    newton_abs: float = 1e-14  # absolute floor
    max_newton_iters: int = 15
    diverged_factor: float = 1e4
    max_dt_halvings: int = 4

    def __post_init__(self):
        steps = self.dt if isinstance(self.dt, (list, tuple)) else [self.dt]
        if any(d <= 0 for d in steps):
            raise ValueError("dt must be positive")
        if self.newton_tol <= 0 or self.newton_abs <= 0:
            raise ValueError("tolerances must be positive")

    def nominal_dt(self, step_index):
        if isinstance(self.dt, (list, tuple)):
            return float(self.dt[min(step_index, len(self.dt) - 1)])
        return float(self.dt)


@dataclass
class StepRecord:
    t: float
    dt: float
    iterations: int
    residuals: list
    wall_time: float
    halvings: int = 0
    converged: bool = True


@dataclass
class SolveReport:
    steps: list = field(default_factory=list)
    failed: bool = False

    def total_iterations(self):
        return sum(s.iterations for s in self.steps)

    def to_text(self):
        lines = [
            "step  time          dt            iters  halvings  residuals"
        ]
        for i, s in enumerate(self.steps):
            res = " ".join(f"{r:.3e}" for r in s.residuals)
            lines.append(
                f"{i:<5d} {s.t:<13.6g} {s.dt:<13.6g} {s.iterations:<6d} "
                f"{s.halvings:<9d} {res}"
            )
        lines.append(f"failed: {self.failed}")
        return "\n".join(lines)


def _solve_linear(jacobian, rhs):
    try:
        lu = spla.splu(sps.csc_matrix(jacobian))
    except RuntimeError as err:
        raise SingularMatrix(f"sparse factorization failed: {err}") from err
    dx = lu.solve(rhs)
    if not np.all(np.isfinite(dx)):
        raise SingularMatrix("linear solve produced non-finite update")
    return dx


def newton_step(model, config: SolverConfig) -> float:
    """One Newton iteration: assemble, solve, full update, refresh snapshots.

    Returns the 2-norm of the update.
    """
    residual, jacobian = model.sys.assemble()
    dx = _solve_linear(jacobian, -residual)
    model.sys.state += dx
    model.refresh_lagged()
    return float(np.linalg.norm(dx))


def solve_time_step(model, config: SolverConfig) -> StepRecord:
    """Run Newton to tolerance for the already-prepared step."""
    sys_ = model.sys
    tic = _time.perf_counter()
    residuals = []
    residual, jacobian = sys_.assemble()
    r0 = float(np.linalg.norm(residual))
    residuals.append(r0)
    limit = config.newton_tol * r0 + config.newton_abs
    if r0 <= config.newton_abs:
        return StepRecord(model.time, float(model.dt_param.value), 0,
                          residuals, _time.perf_counter() - tic)
    for it in range(1, config.max_newton_iters + 1):
        sys_.shift_iterate()
        dx = _solve_linear(jacobian, -residual)
        sys_.state += dx
        model.refresh_lagged()
        residual, jacobian = sys_.assemble()
        rn = float(np.linalg.norm(residual))
        residuals.append(rn)
        if not np.isfinite(rn):
            raise NumericalBreakdown("non-finite residual norm")
        if rn <= limit:
            return StepRecord(model.time, float(model.dt_param.value), it,
                              residuals, _time.perf_counter() - tic)
        if rn > config.diverged_factor * (r0 + config.newton_abs):
            break
    return StepRecord(model.time, float(model.dt_param.value),
                      len(residuals) - 1, residuals,
                      _time.perf_counter() - tic, converged=False)


def time_loop(model, config: SolverConfig, callbacks=()) -> SolveReport:
    """March the model from its current time to t_end.

    Each step shifts the time state, refreshes step data and solves with
    Newton; a non-converged step restores the state, halves dt and retries
    up to config.max_dt_halvings times before raising StepFailure.
    """
    report = SolveReport()
    t = model.time
    step_index = 0
    eps = 1e-12 * max(abs(config.t_end), 1.0)
    while t < config.t_end - eps:
        dt = min(config.nominal_dt(step_index), config.t_end - t)
        model.sys.shift_time()
        halvings = 0
        while True:
            model.set_dt(dt)
            model.before_step(t + dt)
            record = solve_time_step(model, config)
            if record.converged:
                break
            halvings += 1
            if halvings > config.max_dt_halvings:
                report.failed = True
                report.steps.append(record)
                raise StepFailure(
                    f"step at t={t:.6g} failed after "
                    f"{config.max_dt_halvings} dt reductions"
                )
            model.sys.state[:] = model.sys.state_prev_time
            model.refresh_lagged()
            dt *= 0.5
            logger.info("halving dt to %.3e at t=%.6g", dt, t)
        t += dt
        model.time = t
        record.t = t
        record.halvings = halvings
        report.steps.append(record)
        for cb in callbacks:
            cb(model, t, step_index)
        step_index += 1
    return report
