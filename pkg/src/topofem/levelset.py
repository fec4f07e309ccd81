"""Space-time level set fields, critical points and their classification.

A field describes the evolving domain ``Omega(t) = {x : phi(x, t) < 0}``.
All evaluation methods accept points of shape ``(..., 2)`` and a scalar time
and are vectorized over the leading axes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from enum import Enum

import numpy as np

from .errors import NearCriticalPoint, NoConvergence, NonSmoothField, OutsideBox, Unsupported

EPS_GRAD = 1e-10
DEGENERACY_TOL = 1e-8
PAPER_BULK = ((-2.0, 2.0), (-1.5, 1.5))


class Smoothness(str, Enum):
    C2 = "C2"
    LIPSCHITZ = "Lipschitz-only"


class Classification(str, Enum):
    VANISHING_ISLAND = "VanishingIsland"
    CREATION_ISLAND = "CreationIsland"
    SPLITTING = "Splitting"
    MERGING = "Merging"
    HOLE_CREATION = "HoleCreation"
    HOLE_VANISHING = "HoleVanishing"
    # d=3 only; no 3D geometry is implemented
    THROUGH_HOLE_CREATION = "ThroughHoleCreation"
    THROUGH_HOLE_VANISHING = "ThroughHoleVanishing"
    INTERIOR_HOLE_CREATION = "InteriorHoleCreation"
    INTERIOR_HOLE_VANISHING = "InteriorHoleVanishing"
    DEGENERATE = "Degenerate"
    REGULAR = "Regular"
    LIPSCHITZ_FLAGGED = "LipschitzFlagged"


_TIME_DUAL = {
    Classification.SPLITTING: Classification.MERGING,
    Classification.MERGING: Classification.SPLITTING,
    Classification.VANISHING_ISLAND: Classification.CREATION_ISLAND,
    Classification.CREATION_ISLAND: Classification.VANISHING_ISLAND,
    Classification.HOLE_CREATION: Classification.HOLE_VANISHING,
    Classification.HOLE_VANISHING: Classification.HOLE_CREATION,
}


def time_dual(cls: Classification) -> Classification:
    """Classification obtained when time runs backwards."""
    return _TIME_DUAL.get(cls, cls)


def _split(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1]


def _stack(a, b):
    a, b = np.broadcast_arrays(a, b)
    return np.stack([a, b], axis=-1)


def _hess(h11, h12, h22):
    h11, h12, h22 = np.broadcast_arrays(h11, h12, h22)
    row1 = np.stack([h11, h12], axis=-1)
    row2 = np.stack([h12, h22], axis=-1)
    return np.stack([row1, row2], axis=-2)


def _full(x, value):
    return np.full(np.shape(x)[:-1], float(value))


class LevelSetField:
    """Analytic space-time level set function with its derivatives.

    Subclasses implement :meth:`value`, :meth:`gradient`,
    :meth:`time_derivative`, :meth:`hessian` and :meth:`mixed_derivative`.

    Attributes
    ----------
    name : str
        Catalog name.
    smoothness : Smoothness
        ``C2`` when the interface is C2 away from the critical time.
    bulk : tuple
        Bounding rectangle ``((x_lo, x_hi), (y_lo, y_hi))`` of the hold-all.
    time_span : tuple
        Natural simulation interval.
    search_box : tuple
        Space-time box ``((x_lo, x_hi), (y_lo, y_hi), (t_lo, t_hi))`` used
        by the critical point search.
    time_breaks : tuple
        Times at which a piecewise definition switches branches; critical
        points are only sought strictly between breaks.
    """

    name = "field"
    smoothness = Smoothness.C2
    bulk = PAPER_BULK
    time_span = (0.0, 0.5)
    time_breaks: tuple = ()

    @property
    def search_box(self):
        return (*self.bulk, self.time_span)

    def value(self, x, t):
        raise NotImplementedError

    def gradient(self, x, t):
        raise NotImplementedError

    def time_derivative(self, x, t):
        raise NotImplementedError

    def hessian(self, x, t):
        raise NotImplementedError

    def mixed_derivative(self, x, t):
        raise NotImplementedError

    def laplacian(self, x, t):
        H = self.hessian(x, t)
        return H[..., 0, 0] + H[..., 1, 1]

    def normal(self, x, t):
        g = self.gradient(x, t)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def __call__(self, x, t):
        return self.value(x, t)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"


class PaperField(LevelSetField):
    """``phi = s (t - 0.25) - ((x1^2 - 0.3 x1^4) - x2^2)``.

    ``direction=+1`` splits at ``t = 0.25``; ``direction=-1`` is the
    time-reversed merging variant.
    """

    def __init__(self, direction=1):
        if direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        self.direction = direction
        self.name = "paper_splitting" if direction == 1 else "paper_merging"
        self.critical_point = ((0.0, 0.0), 0.25)

    def value(self, x, t):
        x1, x2 = _split(x)
        q = x1 * x1
        return (self.direction * (t - 0.25) + x2 * x2) - q * (1.0 - 0.3 * q)

    def gradient(self, x, t):
        x1, x2 = _split(x)
        return _stack(x1 * (1.2 * x1 * x1 - 2.0), 2.0 * x2)

    def time_derivative(self, x, t):
        return _full(x, self.direction)

    def hessian(self, x, t):
        x1, x2 = _split(x)
        return _hess(-2.0 + 3.6 * x1**2, 0.0 * x1, 2.0 + 0.0 * x2)

    def mixed_derivative(self, x, t):
        return np.zeros(np.shape(x))

    def laplacian(self, x, t):
        x1, _ = _split(x)
        return 3.6 * x1 * x1


class PinchOffField(LevelSetField):
    """Degenerate pinch-off ``phi = x2^2 - |x1|^(2p) + t`` (critical point at the origin, t=0)."""

    bulk = ((-1.0, 1.0), (-1.0, 1.0))
    time_span = (-0.25, 0.25)

    def __init__(self, p=3.0):
        if p <= 1:
            raise ValueError("p must exceed 1")
        self.p = float(p)
        self.name = "degenerate_pinchoff"
        self.critical_point = ((0.0, 0.0), 0.0)

    def value(self, x, t):
        x1, x2 = _split(x)
        return x2**2 - np.abs(x1) ** (2 * self.p) + t

    def gradient(self, x, t):
        x1, x2 = _split(x)
        q = 2 * self.p
        return _stack(-q * np.abs(x1) ** (q - 1) * np.sign(x1), 2.0 * x2)

    def time_derivative(self, x, t):
        return _full(x, 1.0)

    def hessian(self, x, t):
        x1, x2 = _split(x)
        q = 2 * self.p
        return _hess(-q * (q - 1) * np.abs(x1) ** (q - 2), 0.0 * x1, 2.0 + 0.0 * x2)

    def mixed_derivative(self, x, t):
        return np.zeros(np.shape(x))


class TwoBallsField(LevelSetField):
    """Two unit balls colliding: ``min(phi_{t-1}, phi_{1-t})``; only Lipschitz after contact."""

    smoothness = Smoothness.LIPSCHITZ
    bulk = ((-3.0, 3.0), (-1.5, 1.5))
    time_span = (-0.5, 0.5)

    def __init__(self):
        self.name = "two_balls"
        self.critical_point = ((0.0, 0.0), 0.0)

    def _branches(self, x, t):
        x1, x2 = _split(x)
        left = (x1 - (t - 1.0)) ** 2 + x2**2 - 1.0
        right = (x1 - (1.0 - t)) ** 2 + x2**2 - 1.0
        return x1, x2, left, right, left <= right

    def value(self, x, t):
        _, _, left, right, _ = self._branches(x, t)
        return np.minimum(left, right)

    def gradient(self, x, t):
        x1, x2, _, _, use_left = self._branches(x, t)
        c = np.where(use_left, t - 1.0, 1.0 - t)
        return _stack(2.0 * (x1 - c), 2.0 * x2)

    def time_derivative(self, x, t):
        x1, _, _, _, use_left = self._branches(x, t)
        return np.where(use_left, -2.0 * (x1 - t + 1.0), 2.0 * (x1 - 1.0 + t))

    def hessian(self, x, t):
        x1, _ = _split(x)
        return _hess(2.0 + 0.0 * x1, 0.0 * x1, 2.0 + 0.0 * x1)

    def mixed_derivative(self, x, t):
        x1, _, _, _, use_left = self._branches(x, t)
        return _stack(np.where(use_left, -2.0, 2.0), 0.0 * x1)


class NonsmoothMergeField(LevelSetField):
    """Piecewise field switching at ``t = 0``.

    ``|x1| - x2^2 + t`` for ``t < 0`` and ``x1^2 - x2^4 + t^p`` for
    ``t >= 0``. The interface is C2 on each side of the switch.
    """

    bulk = ((-1.0, 1.0), (-1.0, 1.0))
    time_span = (-0.25, 0.25)
    time_breaks = (0.0,)

    def __init__(self, p=4.0):
        if p < 1:
            raise ValueError("p must be at least 1")
        self.p = float(p)
        self.name = "nonsmooth_merge"
        self.critical_point = ((0.0, 0.0), 0.0)

    def _neg(self, x, t):
        return np.broadcast_to(np.asarray(t) < 0, np.shape(x)[:-1])

    def value(self, x, t):
        x1, x2 = _split(x)
        tp = np.maximum(t, 0.0) ** self.p
        return np.where(self._neg(x, t), np.abs(x1) - x2**2 + t, x1**2 - x2**4 + tp)

    def gradient(self, x, t):
        x1, x2 = _split(x)
        neg = self._neg(x, t)[..., None]
        return np.where(neg, _stack(np.sign(x1), -2.0 * x2), _stack(2.0 * x1, -4.0 * x2**3))

    def time_derivative(self, x, t):
        dt_pos = self.p * np.maximum(t, 0.0) ** (self.p - 1)
        return np.where(self._neg(x, t), 1.0, dt_pos + _full(x, 0.0))

    def hessian(self, x, t):
        x1, x2 = _split(x)
        neg = self._neg(x, t)[..., None, None]
        return np.where(neg, _hess(0.0 * x1, 0.0 * x1, -2.0 + 0.0 * x2), _hess(2.0 + 0.0 * x1, 0.0 * x1, -12.0 * x2**2))

    def mixed_derivative(self, x, t):
        return np.zeros(np.shape(x))


class DiskField(LevelSetField):
    """Disk ``|x|^2 - (r2 + rate * t)``; grows for ``rate > 0``."""

    def __init__(self, r2=1.0, rate=1.0, name=None, time_span=None, search_time=None):
        self.r2 = float(r2)
        self.rate = float(rate)
        self.name = name or ("growing_disk" if rate > 0 else "shrinking_disk")
        if time_span is not None:
            self.time_span = tuple(time_span)
        self._search_time = tuple(search_time) if search_time is not None else self.time_span

    @property
    def search_box(self):
        return (*self.bulk, self._search_time)

    def radius(self, t):
        return math.sqrt(self.r2 + self.rate * t)

    def value(self, x, t):
        x1, x2 = _split(x)
        return x1**2 + x2**2 - (self.r2 + self.rate * t)

    def gradient(self, x, t):
        x1, x2 = _split(x)
        return _stack(2.0 * x1, 2.0 * x2)

    def time_derivative(self, x, t):
        return _full(x, -self.rate)

    def hessian(self, x, t):
        x1, _ = _split(x)
        return _hess(2.0 + 0.0 * x1, 0.0 * x1, 2.0 + 0.0 * x1)

    def mixed_derivative(self, x, t):
        return np.zeros(np.shape(x))


class LinearField(LevelSetField):
    """Affine field ``a . x + b t + c`` (no critical points unless ``a = 0``)."""

    def __init__(self, a=(1.0, 0.0), b=0.0, c=0.0, name="linear"):
        self.a = np.asarray(a, dtype=float)
        self.b = float(b)
        self.c = float(c)
        self.name = name

    def value(self, x, t):
        x = np.asarray(x, dtype=float)
        return x @ self.a + self.b * t + self.c

    def gradient(self, x, t):
        return np.broadcast_to(self.a, np.shape(x)).copy()

    def time_derivative(self, x, t):
        return _full(x, self.b)

    def hessian(self, x, t):
        return np.zeros(np.shape(x)[:-1] + (2, 2))

    def mixed_derivative(self, x, t):
        return np.zeros(np.shape(x))


class ScaledField(LevelSetField):
    """``c * phi`` for a positive constant ``c`` (same domain)."""

    def __init__(self, base, c):
        if c <= 0:
            raise ValueError("scale must be positive")
        self.base = base
        self.c = float(c)
        self.name = f"{base.name}*{c:g}"
        self.smoothness = base.smoothness
        self.bulk = base.bulk
        self.time_span = base.time_span
        self.time_breaks = base.time_breaks
        self._box = base.search_box

    @property
    def search_box(self):
        return self._box

    def value(self, x, t):
        return self.c * self.base.value(x, t)

    def gradient(self, x, t):
        return self.c * self.base.gradient(x, t)

    def time_derivative(self, x, t):
        return self.c * self.base.time_derivative(x, t)

    def hessian(self, x, t):
        return self.c * self.base.hessian(x, t)

    def mixed_derivative(self, x, t):
        return self.c * self.base.mixed_derivative(x, t)


class TimeReversedField(LevelSetField):
    """``phi(x, 2 t_ref - t)``: runs the base evolution backwards around ``t_ref``."""

    def __init__(self, base, t_ref):
        self.base = base
        self.t_ref = float(t_ref)
        self.name = f"{base.name}_reversed"
        self.smoothness = base.smoothness
        self.bulk = base.bulk
        lo, hi = base.time_span
        self.time_span = (2 * t_ref - hi, 2 * t_ref - lo)
        self.time_breaks = tuple(2 * t_ref - b for b in base.time_breaks)
        bx, by, (tlo, thi) = base.search_box
        self._box = (bx, by, (2 * t_ref - thi, 2 * t_ref - tlo))

    @property
    def search_box(self):
        return self._box

    def _t(self, t):
        return 2 * self.t_ref - t

    def value(self, x, t):
        return self.base.value(x, self._t(t))

    def gradient(self, x, t):
        return self.base.gradient(x, self._t(t))

    def time_derivative(self, x, t):
        return -self.base.time_derivative(x, self._t(t))

    def hessian(self, x, t):
        return self.base.hessian(x, self._t(t))

    def mixed_derivative(self, x, t):
        return -self.base.mixed_derivative(x, self._t(t))


def builtin_scenarios(nonsmooth_p=4.0, pinchoff_p=3.0):
    """The named scenario catalog, in a fixed order."""
    return [
        PaperField(1),
        PaperField(-1),
        PinchOffField(pinchoff_p),
        TwoBallsField(),
        NonsmoothMergeField(nonsmooth_p),
        DiskField(1.0, 1.0, name="growing_disk", time_span=(0.0, 1.0)),
        DiskField(1.0, -1.0, name="shrinking_disk", time_span=(0.0, 0.9), search_time=(0.0, 1.2)),
    ]


def get_scenario(name, **kwargs):
    for fld in builtin_scenarios(**kwargs):
        if fld.name == name:
            return fld
    known = ", ".join(f.name for f in builtin_scenarios())
    raise KeyError(f"unknown scenario {name!r}; known: {known}")


def scenario_names():
    return [f.name for f in builtin_scenarios()]


# --------------------------------------------------------------------------
# normal velocity


def normal_velocity(field, x, t, eps_grad=EPS_GRAD):
    """Normal velocity ``-phi_t / |grad phi|`` at a single point."""
    x = np.asarray(x, dtype=float)
    g = float(np.linalg.norm(field.gradient(x, t)))
    if g < eps_grad:
        raise NearCriticalPoint(f"|grad phi| = {g:.3e} < {eps_grad:.1e} at x={x.tolist()}, t={t}")
    return float(-field.time_derivative(x, t) / g)


def normal_velocities(field, x, t, eps_grad=EPS_GRAD):
    """Vectorized normal velocity; returns ``(v, ok)`` with NaN where ``|grad phi| < eps_grad``."""
    g = np.linalg.norm(field.gradient(x, t), axis=-1)
    ok = g >= eps_grad
    v = np.full(g.shape, np.nan)
    v[ok] = -np.asarray(field.time_derivative(x, t))[ok] / g[ok]
    return v, ok


# --------------------------------------------------------------------------
# critical points


@dataclass(frozen=True)
class CriticalPointReport:
    location: tuple | None
    grad_norm_at_root: float
    hessian_eigenvalues: tuple
    dphi_dt: float
    degenerate: bool
    classification: Classification
    iterations: int = 0

    @property
    def x_c(self):
        return None if self.location is None else self.location[0]

    @property
    def t_c(self):
        return None if self.location is None else self.location[1]

    def to_record(self, name):
        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)

        lam = self.hessian_eigenvalues
        return {
            "name": name,
            "x_c": None if self.x_c is None else [float(v) for v in self.x_c],
            "t_c": num(self.t_c),
            "lambda1": num(lam[0]) if lam else None,
            "lambda2": num(lam[1]) if lam else None,
            "dphi_dt": num(self.dphi_dt),
            "class": self.classification.value,
        }

    def to_json(self, name):
        return json.dumps(self.to_record(name), sort_keys=False)


def regular_report():
    return CriticalPointReport(None, float("nan"), (), float("nan"), False, Classification.REGULAR)


def lipschitz_report():
    return CriticalPointReport(None, float("nan"), (), float("nan"), False, Classification.LIPSCHITZ_FLAGGED)


def classify_eigenvalues(eigenvalues, dphi_dt):
    """Topological transition type from Hessian eigenvalues and ``dphi/dt``.

    Assumes a nondegenerate critical point; only d=2 is supported.
    """
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    if lam.size == 3:
        raise Unsupported("d=3 classification is typed but no 3D geometry is implemented")
    if lam.size != 2:
        raise ValueError("expected two eigenvalues")
    if dphi_dt == 0 or not np.all(lam != 0):
        return Classification.DEGENERATE
    forward = dphi_dt > 0
    if lam[0] > 0:
        return Classification.VANISHING_ISLAND if forward else Classification.CREATION_ISLAND
    if lam[1] < 0:
        return Classification.HOLE_CREATION if forward else Classification.HOLE_VANISHING
    return Classification.SPLITTING if forward else Classification.MERGING


def _residual(field, z):
    x, t = z[:, :2], z[:, 2]
    g = field.gradient(x, t)
    F = np.column_stack([field.value(x, t), g])
    J = np.empty(z.shape + (3,))
    J[:, 0, :2] = g
    J[:, 0, 2] = field.time_derivative(x, t)
    J[:, 1:, :2] = field.hessian(x, t)
    J[:, 1:, 2] = field.mixed_derivative(x, t)
    return F, J


def _newton(field, starts, tol, max_iter):
    z = np.array(starts, dtype=float).reshape(-1, 3)
    done = np.zeros(len(z), dtype=bool)
    iters = np.zeros(len(z), dtype=int)
    res = np.full(len(z), np.inf)
    alive = np.ones(len(z), dtype=bool)
    with np.errstate(all="ignore"):
        for it in range(max_iter + 1):
            idx = np.flatnonzero(alive & ~done)
            if idx.size == 0:
                break
            F, J = _residual(field, z[idx])
            r = np.linalg.norm(F, axis=1)
            res[idx] = r
            conv = r <= tol
            done[idx[conv]] = True
            iters[idx[conv]] = it
            if it == max_iter:
                break
            step_idx = idx[~conv]
            if step_idx.size == 0:
                break
            dz = np.einsum("kij,kj->ki", np.linalg.pinv(J[~conv]), F[~conv])
            z[step_idx] -= dz
            bad = ~np.all(np.isfinite(z[step_idx]), axis=1)
            alive[step_idx[bad]] = False
    return z, done, res, iters


def _in_box(z, box, rtol=1e-9):
    ok = np.ones(len(z), dtype=bool)
    for k, (lo, hi) in enumerate(box):
        pad = rtol * max(1.0, abs(hi - lo))
        ok &= (z[:, k] >= lo - pad) & (z[:, k] <= hi + pad)
    return ok


BREAK_MARGIN = 1e-2


def _off_breaks(z, field, box):
    # Newton stalls near a non-smooth time with tiny residual; such roots are not classifiable
    ok = np.ones(len(z), dtype=bool)
    span = box[2][1] - box[2][0]
    for b in field.time_breaks:
        ok &= np.abs(z[:, 2] - b) > BREAK_MARGIN * span
    return ok


def _report(field, z, res, iters, degeneracy_tol):
    x, t = z[:2], float(z[2])
    H = np.asarray(field.hessian(x, t), dtype=float)
    H = 0.5 * (H + H.T)
    lam = np.linalg.eigvalsh(H)
    dphi_dt = float(field.time_derivative(x, t))
    det = float(np.linalg.det(H))
    degenerate = abs(det) < degeneracy_tol * float(np.sum(H * H))
    cls = Classification.DEGENERATE if degenerate else classify_eigenvalues(lam, dphi_dt)
    return CriticalPointReport(
        location=((float(x[0]), float(x[1])), t),
        grad_norm_at_root=float(res),
        hessian_eigenvalues=(float(lam[0]), float(lam[1])),
        dphi_dt=dphi_dt,
        degenerate=bool(cls is Classification.DEGENERATE),
        classification=cls,
        iterations=int(iters),
    )


def _grid_starts(box, n=8):
    axes = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for lo, hi in box]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)


def find_critical_points(field, box=None, *, tol=1e-12, max_iter=50, grid=8, degeneracy_tol=DEGENERACY_TOL):
    """All distinct critical points found by multi-start Newton from a fixed grid."""
    if field.smoothness is not Smoothness.C2:
        raise NonSmoothField(f"{field.name} is {field.smoothness.value}")
    box = box or field.search_box
    z, done, res, iters = _newton(field, _grid_starts(box, grid), tol, max_iter)
    keep = done & _in_box(z, box) & _off_breaks(z, field, box)
    roots = []
    scale = max(hi - lo for lo, hi in box)
    for k in np.flatnonzero(keep):
        if all(np.linalg.norm(z[k] - r[0]) > 1e-6 * scale for r in roots):
            roots.append((z[k].copy(), res[k], iters[k]))
    return [_report(field, zr, r, it, degeneracy_tol) for zr, r, it in roots]


def find_critical_point(
    field, seed=None, box=None, *, tol=1e-12, max_iter=50, multistart=True, degeneracy_tol=DEGENERACY_TOL
):
    """Solve ``phi = 0, grad phi = 0`` for ``(x1, x2, t)`` by Newton iteration.

    Parameters
    ----------
    field : LevelSetField
        Must be tagged C2.
    seed : sequence of 3 floats, optional
        Starting point ``(x1, x2, t)``.
    box : tuple, optional
        Space-time search box; defaults to ``field.search_box``.
    multistart : bool
        When the seed fails, retry from an 8x8x8 grid over the box and
        return a ``Regular`` report if nothing converges inside it.

    Returns
    -------
    CriticalPointReport
    """
    if field.smoothness is not Smoothness.C2:
        raise NonSmoothField(f"{field.name} is {field.smoothness.value}; critical points are undefined")
    box = box or field.search_box
    if seed is not None:
        z, done, res, iters = _newton(field, [seed], tol, max_iter)
        if done[0]:
            inside = _in_box(z, box)[0] and _off_breaks(z, field, box)[0]
            if inside:
                return _report(field, z[0], res[0], iters[0], degeneracy_tol)
            if not multistart:
                raise OutsideBox(f"root {z[0].tolist()} outside search box {box}")
        elif not multistart:
            raise NoConvergence(f"residual {res[0]:.3e} after {max_iter} iterations")
    roots = find_critical_points(field, box, tol=tol, max_iter=max_iter, degeneracy_tol=degeneracy_tol)
    if not roots:
        return regular_report()
    if seed is None:
        return roots[0]
    s = np.asarray(seed, dtype=float)
    return min(roots, key=lambda r: np.linalg.norm(np.r_[r.x_c, r.t_c] - s))


def classify_scenario(field, box=None):
    """Critical-point report for a catalog entry; Lipschitz-only fields are flagged, not solved."""
    if field.smoothness is not Smoothness.C2:
        return lipschitz_report()
    return find_critical_point(field, box=box)


# --------------------------------------------------------------------------
# evolution constants


@dataclass
class EvolutionConstants:
    v_max_plus: float
    sample_count: int
    excluded_near_singular: int
    slice_max: np.ndarray = dc_field(default_factory=lambda: np.zeros(0), repr=False)


def estimate_v_max_plus(
    field,
    time_interval,
    exclude=None,
    exclusion_radius=0.0,
    n_slices=200,
    mesh=None,
    depth=1,
    eps_grad=EPS_GRAD,
):
    """Sampled ``sup [V]_+`` over interface quadrature points on a time grid.

    ``exclude`` is a critical point ``(x_c, t_c)`` (or a report); samples
    inside the space-time ball of radius ``exclusion_radius`` around it are
    skipped and counted together with the near-singular ones.
    """
    from .cutgeom import cut_geometry
    from .mesh import fit_background

    if mesh is None:
        mesh = fit_background(field.bulk, 1.0 / 16.0)
    if isinstance(exclude, CriticalPointReport):
        exclude = None if exclude.location is None else exclude.location
    t0, t1 = time_interval
    times = np.linspace(t0, t1, n_slices) if n_slices > 1 else np.array([t0])
    vmax, count, excluded = 0.0, 0, 0
    slice_max = np.zeros(len(times))
    for k, t in enumerate(times):
        geo = cut_geometry(mesh, field, float(t), depth=depth)
        pts = geo.surface_rule(2).points
        if len(pts) == 0:
            continue
        keep = np.ones(len(pts), dtype=bool)
        if exclude is not None and exclusion_radius > 0:
            (xc, tc) = exclude
            d2 = np.sum((pts - np.asarray(xc)) ** 2, axis=1) + (t - tc) ** 2
            keep &= d2 > exclusion_radius**2
        v, ok = normal_velocities(field, pts, float(t), eps_grad)
        keep &= ok
        excluded += int(np.count_nonzero(~keep))
        count += int(np.count_nonzero(keep))
        if np.any(keep):
            slice_max[k] = max(0.0, float(np.max(v[keep])))
            vmax = max(vmax, slice_max[k])
    return EvolutionConstants(vmax, count, excluded, slice_max)
