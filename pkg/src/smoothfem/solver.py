"""Implicit time stepping with a monolithic Newton-Raphson scheme on (u, phi)."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DOFS_PER_NODE, Discretization, SystemState, assemble, update_history
from .constitutive import KinematicsError
from .smoothing import InvertedDomainError

DOF_COMPONENT = {"ux": 0, "uy": 1, "uz": 2, "phi": 3}


class SingularSystemError(np.linalg.LinAlgError):
    pass


class NewtonError(RuntimeError):
    def __init__(self, message, step=None, history=None):
        self.step = step
        self.history = history or []
        super().__init__(message if step is None else f"step {step}: {message}")


@dataclass(frozen=True)
class NewtonSettings:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-8
    max_iter: int = 25
    dt: float = 1.0  # ms

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet condition on one dof kind of a node set, piecewise linear in time."""

    nodes: np.ndarray
    dof: str  # ux | uy | uz | phi
    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if self.dof not in DOF_COMPONENT:
            raise ValueError(f"unknown dof kind {self.dof!r}")
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("profile needs matching, non-empty times and values")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("profile times must be non-decreasing")

    def value(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    def dofs(self) -> np.ndarray:
        return DOFS_PER_NODE * np.asarray(self.nodes, dtype=np.int64) + DOF_COMPONENT[self.dof]


@dataclass(frozen=True)
class Step:
    name: str
    duration: float
    bcs: tuple[BoundaryCondition, ...]

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"step {self.name!r} needs a positive duration")


def prescribed_values(bcs, t: float, n_dofs: int):
    """Mask of constrained dofs and their values at time t (later entries win)."""
    mask = np.zeros(n_dofs, dtype=bool)
    vals = np.zeros(n_dofs)
    for bc in bcs:
        d = bc.dofs()
        mask[d] = True
        vals[d] = bc.value(t)
    return mask, vals


# ---------------------------------------------------------------------------
# linear and nonlinear solves
# ---------------------------------------------------------------------------


def linear_solve(K, R, check: float = 1e-6) -> np.ndarray:
    """Direct sparse LU solve of K dx = R."""
    K = sp.csc_matrix(K)
    if K.shape[0] != K.shape[1] or K.shape[0] != len(R):
        raise ValueError("K must be square and match R")
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from None
    dx = lu.solve(np.asarray(R, dtype=float))
    nR = np.linalg.norm(R)
    if not np.all(np.isfinite(dx)):
        raise SingularSystemError("non-finite solution")
    if nR > 0 and np.linalg.norm(K @ dx - R) > check * nR:
        raise SingularSystemError("numerically singular system")
    return dx


@dataclass
class NewtonResult:
    state: SystemState
    iterations: int
    history: list[float] = field(default_factory=list)


def newton_solve(
    disc: Discretization,
    state: SystemState,
    dt: float,
    constrained: np.ndarray,
    values: np.ndarray,
    settings: NewtonSettings = NewtonSettings(),
    tangent_scale: float = 1.0,
) -> NewtonResult:
    """Solve R(x) = 0 for the end-of-increment state.

    ``state`` holds the start-of-increment values and is not modified.
    ``tangent_scale`` deliberately corrupts the tangent (negative controls only).
    """
    st = state.copy()
    x = st.x
    x[constrained] = values[constrained]
    st.set_x(x)
    history: list[float] = []
    tol = None
    solves = 0
    for _ in range(settings.max_iter + 1):
        try:
            sys_ = assemble(disc, st, dt, constrained)
        except (InvertedDomainError, KinematicsError) as exc:
            raise NewtonError(f"step rejected: {exc}", history=history) from None
        res = float(np.linalg.norm(sys_.R))
        history.append(res)
        if not np.isfinite(res):
            raise NewtonError("non-finite residual", history=history)
        if tol is None:
            tol = max(settings.abs_tol, settings.rel_tol * res)
        if solves > 0 and res < tol:
            return NewtonResult(st, solves, history)
        if solves == settings.max_iter:
            break
        K = sys_.K if tangent_scale == 1.0 else tangent_scale * sys_.K
        try:
            dx = linear_solve(K, sys_.R)
        except SingularSystemError as exc:
            raise NewtonError(f"singular tangent: {exc}", history=history) from None
        solves += 1
        st.set_x(st.x + dx)
    raise NewtonError(f"no convergence after {settings.max_iter} iterations", history=history)


# ---------------------------------------------------------------------------
# time loop
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)  # output times relative to the origin
    outputs: dict[str, list[float]] = field(default_factory=dict)
    snapshots: list[SystemState] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)


def _is_output_time(t, origin, interval, eps=1e-9):
    if t < origin - eps:
        return False
    k = (t - origin) / interval
    return abs(k - round(k)) * interval < eps


def time_loop(
    disc: Discretization,
    steps: list[Step],
    settings: NewtonSettings = NewtonSettings(),
    outputs: dict | None = None,
    output_interval: float = 5.0,
    output_origin: float = 0.0,
    state: SystemState | None = None,
    log=sys.stdout,
    keep_snapshots: bool = True,
) -> Trajectory:
    """Run all steps with fixed increments; ``outputs`` maps names to f(state) -> float."""
    outputs = outputs or {}
    st = state.copy() if state is not None else disc.initial_state()
    traj = Trajectory(outputs={k: [] for k in outputs})

    def record(s):
        traj.times.append(round(s.time - output_origin, 9))
        for k, f in outputs.items():
            traj.outputs[k].append(float(f(s)))
        if keep_snapshots:
            traj.snapshots.append(s.copy())

    if _is_output_time(st.time, output_origin, output_interval):
        record(st)
    inc = 0
    t_start = st.time
    for step in steps:
        n_inc = int(round(step.duration / settings.dt))
        if n_inc < 1 or abs(n_inc * settings.dt - step.duration) > 1e-9 * max(1.0, step.duration):
            raise ValueError(f"step {step.name!r}: duration not a multiple of dt")
        for i in range(1, n_inc + 1):
            inc += 1
            t = t_start + i * settings.dt
            mask, vals = prescribed_values(step.bcs, t, disc.n_dofs)
            try:
                res = newton_solve(disc, st, settings.dt, mask, vals, settings)
            except NewtonError as exc:
                raise NewtonError(str(exc), step=inc, history=exc.history) from None
            st = res.state
            st.time = t
            update_history(disc, st, settings.dt)
            st.phi_n = st.phi.copy()
            traj.iterations.append(res.iterations)
            if log is not None:
                print(f"step={inc} t={t:.6g} iters={res.iterations} res={res.history[-1]:.6e}", file=log)
            if _is_output_time(t, output_origin, output_interval):
                record(st)
        t_start += n_inc * settings.dt
    return traj
