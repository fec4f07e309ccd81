"""Error norms, convergence orders and identity checks for evolving domains."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import assembly, cutgeom
from .levelset import normal_velocities
from .mesh import fit_background, structured_mesh


# --------------------------------------------------------------------------
# convergence records

CONVERGENCE_COLUMNS = ("Lx", "Lt", "h", "dt", "err_linf_l2", "err_l2_h1", "eoc_l2", "eoc_h1")


@dataclass
class ConvergenceRecord:
    Lx: int
    Lt: int
    h: float
    dt: float
    err_linf_l2: float
    err_l2_h1: float
    eoc_l2: float = math.nan
    eoc_h1: float = math.nan

    def as_row(self):
        return [self.Lx, self.Lt, repr(self.h), repr(self.dt), repr(self.err_linf_l2), repr(self.err_l2_h1),
                _fmt(self.eoc_l2), _fmt(self.eoc_h1)]


def _fmt(x):
    return "" if math.isnan(x) else repr(x)


def eoc(err_coarse, err_fine, h_coarse, h_fine):
    """Experimental order ``log(e_c / e_f) / log(h_c / h_f)``."""
    if err_coarse <= 0 or err_fine <= 0:
        return math.nan
    return math.log(err_coarse / err_fine) / math.log(h_coarse / h_fine)


def with_orders(records):
    """Copy of ``records`` with EOC columns filled from each coarser predecessor."""
    out = []
    for k, r in enumerate(records):
        r = ConvergenceRecord(**asdict(r))
        if k > 0:
            p = out[k - 1]
            r.eoc_l2 = eoc(p.err_linf_l2, r.err_linf_l2, p.h, r.h)
            r.eoc_h1 = eoc(p.err_l2_h1, r.err_l2_h1, p.h, r.h)
        out.append(r)
    return out


def write_convergence_csv(path, records, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONVERGENCE_COLUMNS)
        for r in records:
            w.writerow(r.as_row())


def format_table(records):
    lines = [f"{'Lx':>3} {'Lt':>3} {'h':>10} {'dt':>11} {'L2 err':>11} {'eoc':>6} {'H1 err':>11} {'eoc':>6}"]
    for r in records:
        e2 = "" if math.isnan(r.eoc_l2) else f"{r.eoc_l2:6.2f}"
        e1 = "" if math.isnan(r.eoc_h1) else f"{r.eoc_h1:6.2f}"
        lines.append(f"{r.Lx:>3} {r.Lt:>3} {r.h:10.4g} {r.dt:11.4g} {r.err_linf_l2:11.4e} {e2:>6} "
                     f"{r.err_l2_h1:11.4e} {e1:>6}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# error norms


def step_errors(space, geo, u, exact, grad_exact, t, order=None):
    """Squared ``L2`` and ``H1``-seminorm errors of ``u`` on the reconstructed domain."""
    order = order or 2 * space.order + 2
    l2 = h1 = 0.0
    rule = geo.volume_rule(order, pieces_only=True)
    if len(rule.points):
        val, grad = space.evaluate(u, rule.element, rule.points, gradient=True, ref=rule.ref)
        e = val - exact(rule.points, t)
        ge = grad - grad_exact(rule.points, t)
        l2 += float(rule.weights @ (e * e))
        h1 += float(rule.weights @ np.sum(ge * ge, axis=1))
    whole = assembly.tabulated_rule(space, geo, order)
    if len(whole):
        val, grad = assembly.evaluate_tabulated(space, u, whole, gradient=True)
        pts = whole.points.reshape(-1, 2)
        e = val.ravel() - exact(pts, t)
        ge = grad.reshape(-1, 2) - grad_exact(pts, t)
        w = whole.weights.ravel()
        l2 += float(w @ (e * e))
        h1 += float(w @ np.sum(ge * ge, axis=1))
    return l2, h1


@dataclass
class ErrorAccumulator:
    """Running ``max_n ||e^n||`` and ``dt * sum_{n>=1} ||grad e^n||^2``."""

    problem: object
    order: int
    linf_sq: float = 0.0
    h1_sum: float = 0.0
    per_step: list = field(default_factory=list)

    def add(self, state, dt):
        l2, h1 = step_errors(state.space, state.geometry, state.u, self.problem.u, self.problem.grad_u, state.t)
        self.per_step.append((state.n, state.t, l2, h1))
        self.linf_sq = max(self.linf_sq, l2)
        if state.n >= 1:
            self.h1_sum += dt * h1

    @property
    def linf_l2(self):
        return math.sqrt(self.linf_sq)

    @property
    def l2_h1(self):
        return math.sqrt(self.h1_sum)


def error_norms(steps, exact, grad_exact, dt, Lx=0, Lt=0):
    """ConvergenceRecord from ``(space, geometry, u, t)`` tuples of steps ``0..N``."""
    linf, h1 = 0.0, 0.0
    h = None
    for n, (space, geo, u, t) in enumerate(steps):
        l2, g2 = step_errors(space, geo, u, exact, grad_exact, t)
        linf = max(linf, l2)
        if n >= 1:
            h1 += dt * g2
        h = space.mesh.h
    return ConvergenceRecord(Lx, Lt, h, dt, math.sqrt(linf), math.sqrt(h1))


# --------------------------------------------------------------------------
# transport identity


@dataclass
class TransportCheck:
    lhs: float
    rhs: float
    rel_err: float


def _const(c):
    return lambda x: np.full(len(x), float(c))


def _time_nodes(t0, t1, slices, npts, singular=None):
    """Composite Gauss-Legendre nodes; slices touching ``singular`` are graded quadratically towards it."""
    edges = np.linspace(t0, t1, slices + 1)
    if singular is not None and t0 < singular < t1:
        edges = np.union1d(edges, [singular])
    s, w = leggauss(npts)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        tau = b - a
        if singular is not None and abs(a - singular) < 1e-14 * max(1.0, abs(singular)):
            nodes.append(a + tau * s**2)
            weights.append(tau * 2.0 * s * w)
        elif singular is not None and abs(b - singular) < 1e-14 * max(1.0, abs(singular)):
            nodes.append(b - tau * s**2)
            weights.append(tau * 2.0 * s * w)
        else:
            nodes.append(a + tau * s)
            weights.append(tau * w)
    return np.concatenate(nodes), np.concatenate(weights)


def transport_identity_check(field, u=None, t0=0.0, dt=0.1, resolution=8, depth=3, npts=3, h_ref=1.0):
    """Compare ``||u||^2_{Omega(t0+dt)} - ||u||^2_{Omega(t0)}`` with ``int int_Gamma V u^2``.

    ``resolution`` sets both the number of time slices and the background
    spacing ``h_ref / resolution``; ``u`` is a time-independent callable
    (default ``1``).
    """
    u = u or _const(1.0)
    mesh = fit_background(field.bulk, h_ref / resolution)
    vol_order = 8

    def mass(t):
        # two volume integrals only: a finer reconstruction keeps their difference below the surface error
        rule = cutgeom.cut_geometry(mesh, field, t, depth + 2).volume_rule(vol_order)
        return float(rule.weights @ np.asarray(u(rule.points), dtype=float) ** 2) if len(rule.points) else 0.0

    lhs = mass(t0 + dt) - mass(t0)
    cp = getattr(field, "critical_point", None)
    times, tw = _time_nodes(t0, t0 + dt, resolution, npts, None if cp is None else cp[1])
    rhs = 0.0
    for t, wt in zip(times, tw):
        rule = cutgeom.cut_geometry(mesh, field, float(t), depth).surface_rule(npts)
        if not len(rule.points):
            continue
        v, ok = normal_velocities(field, rule.points, float(t))
        uu = np.asarray(u(rule.points), dtype=float) ** 2
        rhs += wt * float(np.sum(rule.weights[ok] * v[ok] * uu[ok]))
    rel = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    if lhs == 0.0 and rhs == 0.0:
        rel = 0.0
    return TransportCheck(float(lhs), float(rhs), float(rel))


# --------------------------------------------------------------------------
# narrow band


@dataclass
class NarrowBand:
    lhs: float
    norm_sq: float
    grad_sq: float
    dt: float
    hold_all: tuple

    @property
    def ratio(self):
        return max(self.lhs, 0.0) / (self.dt * (self.norm_sq + self.grad_sq))

    @property
    def signed_ratio(self):
        return self.lhs / (self.dt * (self.norm_sq + self.grad_sq))


def _rect_integral(f, rect, n=48):
    s, w = leggauss(n)
    (x0, x1), (y0, y1) = rect
    xs = 0.5 * (x1 - x0) * (s + 1) + x0
    ys = 0.5 * (y1 - y0) * (s + 1) + y0
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    W = np.outer(w, w) * 0.25 * (x1 - x0) * (y1 - y0)
    vals = np.asarray(f(np.column_stack([X.ravel(), Y.ravel()])), dtype=float)
    return float(W.ravel() @ vals)


def narrow_band_terms(field, u, grad_u, t0, dt, h=1.0 / 32, depth=3, n_box_slices=5):
    """Numerator and ``H1(O)`` normalisation of the narrow-band estimate with ``eps = 1``.

    The hold-all ``O`` is the bounding box of ``Omega(t)``, ``t in [t0, t0+dt]``,
    inflated by ``2h``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    mesh = fit_background(field.bulk, h)

    def mass(t):
        rule = cutgeom.cut_geometry(mesh, field, t, depth).volume_rule(8)
        return float(rule.weights @ np.asarray(u(rule.points), dtype=float) ** 2) if len(rule.points) else 0.0

    lo = np.array([np.inf, np.inf])
    hi = -lo
    for t in np.linspace(t0, t0 + dt, n_box_slices):
        geo = cutgeom.cut_geometry(mesh, field, float(t), depth)
        els = geo.elements
        if len(els):
            pts = mesh.corners(els).reshape(-1, 2)
            lo = np.minimum(lo, pts.min(axis=0))
            hi = np.maximum(hi, pts.max(axis=0))
    if not np.all(np.isfinite(lo)):
        return NarrowBand(0.0, 1.0, 0.0, dt, ())
    rect = ((lo[0] - 2 * h, hi[0] + 2 * h), (lo[1] - 2 * h, hi[1] + 2 * h))
    norm_sq = _rect_integral(lambda x: np.asarray(u(x), dtype=float) ** 2, rect)
    grad_sq = _rect_integral(lambda x: np.sum(np.asarray(grad_u(x), dtype=float) ** 2, axis=1), rect)
    return NarrowBand(mass(t0 + dt) - mass(t0), norm_sq, grad_sq, dt, rect)


def narrow_band_monitor(field, u, grad_u, t0, dt, **kwargs):
    """``[lhs]_+ / (dt (||u||^2_O + ||grad u||^2_O))``."""
    return narrow_band_terms(field, u, grad_u, t0, dt, **kwargs).ratio


# --------------------------------------------------------------------------
# blow-up demonstration


@dataclass
class BlowupResult:
    dts: np.ndarray
    values: np.ndarray
    slope: float
    intercept: float


def band_area_difference(field, t_a, t_b, h=1.0 / 128, depth=4):
    """``|Omega(t_b)| - |Omega(t_a)|`` from cut quadrature on the elements that can differ."""
    (x0, x1), (y0, y1) = field.bulk
    nx = int(math.ceil((x1 - x0) / h))
    ny = int(math.ceil((y1 - y0) / h))
    mesh = structured_mesh(field.bulk, nx, ny)
    va = field.value(mesh.vertices, t_a)
    vb = field.value(mesh.vertices, t_b)
    g = np.linalg.norm(field.gradient(mesh.vertices, t_a), axis=1)
    slack = 2.0 * mesh.h * max(1.0, float(g.max()))
    tri = mesh.triangles
    lo = np.minimum(va[tri].min(axis=1), vb[tri].min(axis=1))
    hi = np.maximum(va[tri].max(axis=1), vb[tri].max(axis=1))
    band = np.flatnonzero((lo <= slack) & (hi >= -slack))
    area_a = cutgeom.cut_geometry(mesh, field, t_a, depth, elements=band).volume_rule(1).weights.sum()
    area_b = cutgeom.cut_geometry(mesh, field, t_b, depth, elements=band).volume_rule(1).weights.sum()
    return float(area_b - area_a)


def blowup_demo(field, dt_list, h=1.0 / 128, depth=4, side=None):
    """Fit ``log((|Omega(t_c)| - |Omega(t_c -/+ dt)|) / dt)`` against ``log dt``.

    ``side`` is ``-1`` (approach the critical time from below) or ``+1``
    (from above); by default the side on which the domain area grows towards
    ``t_c``.
    """
    tc = field.critical_point[1]
    dts = np.asarray(sorted(dt_list, reverse=True), dtype=float)
    if side is None:
        probe = band_area_difference(field, tc - dts[0], tc, h, depth)
        side = -1 if probe > 0 else 1
    values = []
    for dt in dts:
        diff = band_area_difference(field, tc + side * dt, tc, h, depth)
        values.append(abs(diff) / dt)
    values = np.asarray(values)
    if np.any(values <= 0):
        return BlowupResult(dts, values, 0.0, -np.inf)
    slope, intercept = np.polyfit(np.log(dts), np.log(values), 1)
    return BlowupResult(dts, values, float(slope), float(intercept))
