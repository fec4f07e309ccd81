"""BDF1/BDF2 time marching on the active meshes of a moving level-set domain."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from . import assembly, cutgeom, levelset
from .errors import SolverDivergence
from .mesh import build_background, check_containment, choose_delta, classify_elements

log = logging.getLogger(__name__)

LEDGER_COLUMNS = ("n", "t", "l2_omega", "h1_omega", "ghost_energy", "solver_iters")


# --------------------------------------------------------------------------
# problems


@dataclass
class HeatProblem:
    """Data of ``u_t - Laplace u = f`` in the domain with ``grad u . n = g`` on its boundary."""

    field: levelset.LevelSetField
    initial: Callable
    source_fn: Callable | None = None
    flux_fn: Callable | None = None

    def source(self, x, t):
        if self.source_fn is None:
            return np.zeros(len(x))
        return np.asarray(self.source_fn(x, t), dtype=float)

    def flux(self, x, t, normals):
        if self.flux_fn is None:
            return np.zeros(len(x))
        return np.asarray(self.flux_fn(x, t, normals), dtype=float)

    @property
    def has_exact(self):
        return False


class ManufacturedProblem(HeatProblem):
    """Problem generated from a prescribed exact solution.

    Source and flux follow from ``f = u_t - Laplace u`` and ``g = grad u . n``.
    """

    def __init__(self, field, u, grad_u, u_t, lap_u, name="manufactured"):
        self.field = field
        self.u, self.grad_u, self.u_t, self.lap_u = u, grad_u, u_t, lap_u
        self.name = name
        self.source_fn = lambda x, t: self.u_t(x, t) - self.lap_u(x, t)
        self.flux_fn = lambda x, t, n: np.sum(self.grad_u(x, t) * n, axis=-1)

    def initial(self, x):
        return self.u(x, 0.0)

    @property
    def has_exact(self):
        return True

    @classmethod
    def squared_level_set(cls, field):
        """``u = phi^2 + x1 + x2 + 1``."""

        def u(x, t):
            return field.value(x, t) ** 2 + x[..., 0] + x[..., 1] + 1.0

        def grad_u(x, t):
            return 2.0 * field.value(x, t)[..., None] * field.gradient(x, t) + 1.0

        def u_t(x, t):
            return 2.0 * field.value(x, t) * field.time_derivative(x, t)

        def lap_u(x, t):
            g = field.gradient(x, t)
            return 2.0 * np.sum(g * g, axis=-1) + 2.0 * field.value(x, t) * field.laplacian(x, t)

        return cls(field, u, grad_u, u_t, lap_u, name="squared_level_set")

    @classmethod
    def affine(cls, field, a=(1.0, 1.0), c=1.0):
        """Stationary harmonic ``u = a . x + c``."""
        a = np.asarray(a, dtype=float)
        return cls(
            field,
            lambda x, t: x @ a + c,
            lambda x, t: np.broadcast_to(a, np.shape(x)).copy(),
            lambda x, t: np.zeros(np.shape(x)[:-1]),
            lambda x, t: np.zeros(np.shape(x)[:-1]),
            name="affine",
        )


# --------------------------------------------------------------------------
# state


@dataclass
class LedgerRow:
    n: int
    t: float
    l2_omega: float
    h1_omega: float
    ghost_energy: float
    solver_iters: int

    def as_tuple(self):
        return (self.n, self.t, self.l2_omega, self.h1_omega, self.ghost_energy, self.solver_iters)


@dataclass
class TimeStepState:
    n: int
    t: float
    active: object
    space: assembly.FeSpace
    geometry: cutgeom.CutGeometry
    u: np.ndarray
    history: tuple = ()
    """Earlier ``(active, space, u)`` triples, newest first."""
    ledger: list = field(default_factory=list)
    system: object = None

    @property
    def u_prev(self):
        return self.history[0][2] if self.history else None


@dataclass
class Discretization:
    """Everything a step needs besides the state."""

    mesh: object
    problem: HeatProblem
    order: int
    dt: float
    delta: float
    c_gamma: float = 1.0
    depth: int = 2
    solver_tol: float = 1e-11

    @property
    def field(self):
        return self.problem.field

    @property
    def gamma(self):
        return assembly.gamma_s(self.c_gamma, self.dt, self.mesh.h)

    def geometry_at(self, n, t):
        active = classify_elements(self.mesh, self.field, t, self.delta, time_index=n, sample_depth=self.depth)
        space = assembly.FeSpace(active, self.order)
        geo = cutgeom.cut_geometry(self.mesh, self.field, t, self.depth, elements=np.flatnonzero(active.physical))
        return active, space, geo

    def initial_state(self, initial=None):
        active, space, geo = self.geometry_at(0, 0.0)
        u0 = space.interpolate(initial or self.problem.initial)
        state = TimeStepState(0, 0.0, active, space, geo, u0)
        M, A = assembly.assemble_bulk(space, geo)
        S = assembly.assemble_ghost_penalty(space, active, self.mesh.h, self.gamma)
        state.ledger.append(_ledger_row(0, 0.0, u0, M, A, S, 0))
        return state

    def system(self, space, active, geo, mass_coef):
        M, A = assembly.assemble_bulk(space, geo)
        S = assembly.assemble_ghost_penalty(space, active, self.mesh.h, self.gamma)
        return assembly.SystemMatrix(M, A, S, self.dt, mass_coef)


def _ledger_row(n, t, u, M, A, S, iters):
    return LedgerRow(n, t, float(u @ (M @ u)), float(u @ (A @ u)), float(u @ (S @ u)), int(iters))


def solve_spd(K, b, x0=None, rtol=1e-11):
    """Jacobi-preconditioned CG; raises SolverDivergence when the tolerance is missed."""
    n = K.shape[0]
    if n == 0:
        return np.zeros(0), 0
    if not np.any(b) and (x0 is None or not np.any(x0)):
        return np.zeros(n), 0
    d = K.diagonal()
    if np.any(d <= 0):
        raise SolverDivergence("system matrix has a non-positive diagonal entry")
    pre = sp.diags(1.0 / d)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = cg(K, b, x0=x0, rtol=rtol, atol=0.0, maxiter=20 * n, M=pre, callback=count)
    if info != 0 or not np.all(np.isfinite(x)):
        res = np.linalg.norm(K @ x - b) / max(np.linalg.norm(b), 1e-300)
        raise SolverDivergence(f"CG stopped after {iters} iterations with relative residual {res:.3e}")
    return x, iters


def _advance(state, disc, method):
    n = state.n + 1
    t = n * disc.dt
    active, space, geo = disc.geometry_at(n, t)
    check_containment(state.active, active)
    bdf2 = method == "bdf2" and len(state.history) >= 1
    if bdf2:
        check_containment(state.history[0][0], active)
    if state.t < _critical_time(disc.field) <= t:
        log.info("step %d crosses the critical time %.6g", n, _critical_time(disc.field))

    prev = space.transfer_from(state.space, state.u)
    coef = 1.5 if bdf2 else 1.0
    system = disc.system(space, active, geo, coef)
    if bdf2:
        _, old_space, old_u = state.history[0]
        hist = (2.0 * prev - 0.5 * space.transfer_from(old_space, old_u)) / disc.dt
    else:
        hist = prev / disc.dt
    b = system.mass @ hist + assembly.assemble_rhs(space, geo, disc.problem, t)
    K = system.matrix
    guess = prev
    if state.history:
        _, old_space, old_u = state.history[0]
        guess = 2.0 * prev - space.transfer_from(old_space, old_u)
    u, iters = solve_spd(K, b, x0=guess, rtol=disc.solver_tol)
    history = ((state.active, state.space, state.u),) + state.history[:1]
    new = TimeStepState(n, t, active, space, geo, u, history, state.ledger, system)
    new.ledger.append(_ledger_row(n, t, u, system.mass, system.stiffness, system.ghost, iters))
    return new


def _critical_time(field):
    cp = getattr(field, "critical_point", None)
    return cp[1] if cp is not None else math.nan


def step_bdf1(state, disc):
    """Implicit Euler step: ``(M/dt + A + S) u^n = M/dt P u^{n-1} + b``."""
    return _advance(state, disc, "bdf1")


def step_bdf2(state, disc):
    """BDF2 step (BDF1 when only one history level exists)."""
    return _advance(state, disc, "bdf2")


STEPS = {"bdf1": step_bdf1, "bdf2": step_bdf2}


# --------------------------------------------------------------------------
# driver


_VMAX_CACHE = {}


def evolution_constants(field, T, exclusion_radius=0.1):
    """Sampled ``V_max^+`` on ``[0, T]``, skipping a ball around a known critical point."""
    key = (field.name, float(T), float(exclusion_radius))
    if key not in _VMAX_CACHE:
        cp = getattr(field, "critical_point", None)
        _VMAX_CACHE[key] = levelset.estimate_v_max_plus(
            field, (0.0, T), exclude=cp, exclusion_radius=exclusion_radius if cp is not None else 0.0
        )
    return _VMAX_CACHE[key]


def make_discretization(config, problem=None, field=None):
    field = field or levelset.get_scenario(config.scenario)
    problem = problem or ManufacturedProblem.squared_level_set(field)
    mesh = build_background(config.rect, config.h0, config.Lx)
    dt = config.dt
    constants = evolution_constants(field, max(config.T, dt), config.exclusion_radius)
    delta = choose_delta(constants, dt, config.delta_safety)
    if config.method == "bdf2":
        delta *= 2.0
    return Discretization(mesh, problem, config.order, dt, delta, config.c_gamma, config.depth, config.solver_tol)


def run(problem, config, on_step=None, initial=None):
    """March ``[0, T]`` and return ``(ConvergenceRecord, ledger rows)``.

    ``on_step(state)`` is called after the initial state and after every step.
    """
    from .verify import ConvergenceRecord, ErrorAccumulator

    disc = make_discretization(config, problem, problem.field if problem is not None else None)
    step = STEPS[config.method]
    state = disc.initial_state(initial)
    acc = ErrorAccumulator(disc.problem, disc.order) if disc.problem.has_exact else None
    if acc is not None:
        acc.add(state, disc.dt)
    if on_step is not None:
        on_step(state)
    for _ in range(config.n_steps):
        state = step(state, disc)
        if acc is not None:
            acc.add(state, disc.dt)
        if on_step is not None:
            on_step(state)
    record = None
    if acc is not None:
        record = ConvergenceRecord(config.Lx, config.time_level, disc.mesh.h, disc.dt,
                                   acc.linf_l2, acc.l2_h1)
    if config.ledger_csv:
        write_ledger(config.ledger_csv, state.ledger)
    return record, state.ledger


def write_ledger(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for r in rows:
            w.writerow([r.n, repr(r.t), repr(r.l2_omega), repr(r.h1_omega), repr(r.ghost_energy), r.solver_iters])
