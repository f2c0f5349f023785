"""Fixed-point solver for the singular first-order system on the (t, r) strip.

The unknowns (U, V, W) are the quadratically flat error parts of the
degenerate hyperbolic system obtained below the sonic line t = 0.  One
sweep integrates the frozen-coefficient transport equations

    dU/d1t = (u+v)/(2t) + b1,   dV/d2t = (u+v)/(2t) + b2,   dW/d3t = b3

backwards along the three characteristic families to t = 0, where all
fields vanish, and re-evaluates the integrals with composite Simpson on
the grid's t-levels.  Sweeps repeat from the zero seed until the weighted
metric  d = sup|dU|/t^2 + sup|dV|/t^2 + sup|dW|/t^2  drops below tol.

Singular structure handled here:
    - the factor (u+v)/(2t) is evaluated as t*[(u+v)/t^2]/2 from stored
      weighted arrays, continuous with value 0 at t = 0;
    - all eigenvalues vanish at t = 0 (families 1, 2 like t^2, family 3
      like t), so characteristics always reach the data line;
    - the lateral boundaries shrink quadratically, r1 + c*t^2 and
      r2 - c*t^2, with c three times the safe minimum estimated from the
      zero-seed eigenvalue bound; family 3 drifts like t^2, which a cubic
      shrink would not dominate near t = 0.

Grid convention: t_j = j*delta/nt for j = 0..nt; each level carries nr
uniform r-nodes between the lateral boundaries, so the r-grid shears with
t and interpolation between levels goes through the normalized coordinate
s = (r - rbar1) / (rbar2 - rbar1).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boundary import HodographBoundary
from .errors import (DomainError, DomainExit, GridMismatch, NoContraction,
                     SingularDenominator)
from .kernels import MultiSpline, weight_matrix

# ----------------------------------------------------------------------
# Degeneracy weights of the transformed system


def F_of_t(t, gc):
    """F(t) = (1 - t^2) * (kappa + 1 - t^2); the wave-speed denominator."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= 1.0) or np.any(t < 0.0):
        raise DomainError("F(t) requires 0 <= t < 1")
    out = (1.0 - t * t) * (gc.kappa + 1.0 - t * t)
    return out if out.ndim else float(out)


def G_of_t(t, gc):
    """G(t) = ((1 - t^2) / (kappa + 1 - t^2)) ** ((kappa + 1) / (2 kappa))."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= 1.0) or np.any(t < 0.0):
        raise DomainError("G(t) requires 0 <= t < 1")
    k = gc.kappa
    out = ((1.0 - t * t) / (k + 1.0 - t * t)) ** ((k + 1.0) / (2.0 * k))
    return out if out.ndim else float(out)


def psi_phi(t, r, hb, gc):
    """Affine denominator offsets psi = a0 + a1 t - G H0, phi = -a0 + a1 t + G H0."""
    a0 = hb.a0(r)
    a1 = hb.a1(r)
    GH0 = G_of_t(t, gc) * hb.H0(r)
    return a0 + a1 * t - GH0, -a0 + a1 * t + GH0


# ----------------------------------------------------------------------
# Pointwise eigenvalues and source terms (shared by the public API and
# the vectorized sweep)

def _lam_terms(u, v, w, t, a0, a1, H0, gc, eps0, where=""):
    """Eigenvalues of the three families; zero at t = 0 by continuity."""
    t = np.asarray(t, dtype=float)
    F = (1.0 - t * t) * (gc.kappa + 1.0 - t * t)
    k = gc.kappa
    G = ((1.0 - t * t) / (k + 1.0 - t * t)) ** ((k + 1.0) / (2.0 * k))
    s = np.sqrt(1.0 - t * t)
    psi = a0 + a1 * t - G * H0
    phi = -a0 + a1 * t + G * H0
    Dv = v - G * w + psi
    Du = u + G * w + phi
    Dw = u + v + 2.0 * a1 * t

    guard = max(1e-3 * eps0, 1e-14)
    if np.any(np.abs(Dv) < guard):
        raise SingularDenominator("V - G*W + psi", float(np.min(np.abs(Dv))), where)
    if np.any(np.abs(Du) < guard):
        raise SingularDenominator("U + G*W + phi", float(np.min(np.abs(Du))), where)
    tpos = t > 0.0
    if np.any(np.abs(np.where(tpos, Dw, 1.0)) < guard * np.where(tpos, t, 1.0)):
        bad = np.abs(Dw) / np.where(tpos, t, 1.0)
        raise SingularDenominator("U + V + 2*a1*t",
                                  float(np.min(np.where(tpos, bad, np.inf))), where)

    lam1 = -s * (v + a0 + a1 * t) * t * t / (F * Dv)
    lam2 = s * (u - a0 + a1 * t) * t * t / (F * Du)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam3 = np.where(tpos, s * (u - v - 2.0 * a0) * t * t
                        / (F * np.where(tpos, Dw, 1.0)), 0.0)
    return lam1, lam2, lam3


def _b_terms(u, v, w, t, a0, a0p, a1, a1p, H0, H0p, gc, uv2t, eps0, where=""):
    """Source terms b1, b2, b3 with the guarded factor (u+v)/(2t) supplied."""
    t = np.asarray(t, dtype=float)
    k = gc.kappa
    F = (1.0 - t * t) * (k + 1.0 - t * t)
    G = ((1.0 - t * t) / (k + 1.0 - t * t)) ** ((k + 1.0) / (2.0 * k))
    s = np.sqrt(1.0 - t * t)
    psi = a0 + a1 * t - G * H0
    phi = -a0 + a1 * t + G * H0
    Dv = v - G * w + psi
    Du = u + G * w + phi
    Dw = u + v + 2.0 * a1 * t

    guard = max(1e-3 * eps0, 1e-14)
    if np.any(np.abs(Dv) < guard):
        raise SingularDenominator("V - G*W + psi", float(np.min(np.abs(Dv))), where)
    if np.any(np.abs(Du) < guard):
        raise SingularDenominator("U + G*W + phi", float(np.min(np.abs(Du))), where)

    um = u - a0 + a1 * t        # trace-shifted first unknown
    vp = v + a0 + a1 * t        # trace-shifted second unknown
    wh = w + H0                 # full entropy-gradient variable
    t2 = t * t
    gfac = uv2t + a1

    b1 = (-gfac * ((k + 1.0) * Dw - t2 * ((k + 2.0 - t2) * vp - (k + 1.0 - t2) * G * wh))
          + t2 * s * (-a0p + a1p * t) * vp
          + ((k + 2.0 - 2.0 * t2) * um + (k + 1.0 - t2) * G * wh) * vp * t) / (F * Dv)
    b2 = (-gfac * ((k + 1.0) * Dw - t2 * ((k + 2.0 - t2) * um + (k + 1.0 - t2) * G * wh))
          - t2 * s * (a0p + a1p * t) * um
          + ((k + 2.0 - 2.0 * t2) * vp - (k + 1.0 - t2) * G * wh) * um * t) / (F * Du)

    tpos = t > 0.0
    if np.any(np.abs(np.where(tpos, Dw, 1.0)) < guard * np.where(tpos, t, 1.0)):
        bad = np.abs(Dw) / np.where(tpos, t, 1.0)
        raise SingularDenominator("U + V + 2*a1*t",
                                  float(np.min(np.where(tpos, bad, np.inf))), where)
    with np.errstate(divide="ignore", invalid="ignore"):
        b3 = np.where(tpos, -t2 * s * (u - v - 2.0 * a0) * H0p
                      / (F * np.where(tpos, Dw, 1.0)), 0.0)
    return b1, b2, b3


def lambdas(U, V, W, t, r, hb: HodographBoundary, gc):
    """Eigenvalues (lam1, lam2, lam3) of the frozen system at (t, r)."""
    r = np.asarray(r, dtype=float)
    out = _lam_terms(np.asarray(U, float), np.asarray(V, float), np.asarray(W, float),
                     t, hb.a0(r), hb.a1(r), hb.H0(r), gc, hb.eps0)
    return tuple(o if np.ndim(o) else float(o) for o in out)


def sources(U, V, W, t, r, hb: HodographBoundary, gc):
    """Source terms (b1, b2, b3); at t = 0 the continuous extension is zero."""
    t_arr = np.asarray(t, dtype=float)
    U, V = np.asarray(U, float), np.asarray(V, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        uv2t = np.where(t_arr > 0.0, (U + V) / np.where(t_arr > 0.0, 2.0 * t_arr, 1.0), 0.0)
    r = np.asarray(r, dtype=float)
    out = _b_terms(U, V, np.asarray(W, float), t_arr,
                   hb.a0(r), hb.a0(r, 1), hb.a1(r), hb.a1(r, 1),
                   hb.H0(r), hb.H0(r, 1), gc, uv2t, hb.eps0)
    return tuple(o if np.ndim(o) else float(o) for o in out)


# ----------------------------------------------------------------------
# Grid and field containers


@dataclass
class HodographGrid:
    """Shearing grid on 0 <= t <= delta with shrinking lateral boundaries."""

    delta: float
    nt: int
    nr: int
    rbar1: object
    rbar2: object
    auto_shrink: bool = True
    shrink_coef: float = 0.0

    def __post_init__(self):
        if self.nt < 4 or self.nr < 8:
            raise DomainError("need nt >= 4 and nr >= 8")
        if not 0.0 < self.delta < 1.0:
            raise DomainError("need 0 < delta < 1")
        self.t_levels = self.delta * np.arange(self.nt + 1) / self.nt
        self.ht = self.delta / self.nt
        lo = np.array([self.rbar1(t) for t in self.t_levels])
        hi = np.array([self.rbar2(t) for t in self.t_levels])
        if np.any(hi - lo <= 0):
            raise DomainError("lateral boundaries cross inside [0, delta]")
        self.r_lo = lo
        self.r_span = hi - lo
        self.r_nodes = lo[:, None] + self.r_span[:, None] * \
            (np.arange(self.nr) / (self.nr - 1))[None, :]
        self.weight_mat = weight_matrix(self.nt)

    @classmethod
    def build(cls, hb: HodographBoundary, gc, delta, nt, nr,
              shrink_coef=None, rbar1=None, rbar2=None):
        """Default grid: quadratic inward shrink sized from the zero-seed
        eigenvalue bound with safety factor 3."""
        if rbar1 is not None or rbar2 is not None:
            if rbar1 is None or rbar2 is None:
                raise DomainError("provide both lateral boundaries or neither")
            return cls(delta, nt, nr, rbar1, rbar2, auto_shrink=False)
        if shrink_coef is None:
            shrink_coef = 1.5 * _zero_seed_rate_bound(hb, gc, delta)
        r1, r2 = hb.r1, hb.r2
        width = r2 - r1
        if 2.0 * shrink_coef * delta ** 2 > 0.8 * width:
            raise DomainError(
                f"shrink {shrink_coef:.3g}*t^2 would consume the r-interval; "
                "reduce delta")
        c = float(shrink_coef)
        grid = cls(delta, nt, nr,
                   (lambda t, _r=r1, _c=c: _r + _c * t * t),
                   (lambda t, _r=r2, _c=c: _r - _c * t * t),
                   auto_shrink=True, shrink_coef=c)
        return grid

    def compatible(self, other):
        return (self.nt == other.nt and self.nr == other.nr
                and self.delta == other.delta
                and np.array_equal(self.r_nodes, other.r_nodes))


def _zero_seed_rate_bound(hb, gc, delta):
    """sup over a scan grid of |lambda_i| / t for the zero fields."""
    t = np.linspace(delta / 32.0, delta, 33)
    r = np.linspace(hb.r1, hb.r2, 65)
    bound = 0.0
    for tv in t:
        z = np.zeros_like(r)
        l1, l2, l3 = _lam_terms(z, z, z, tv, hb.a0(r), hb.a1(r), hb.H0(r),
                                gc, hb.eps0)
        bound = max(bound, float(np.max(np.abs(l1))) / tv,
                    float(np.max(np.abs(l2))) / tv,
                    float(np.max(np.abs(l3))) / tv)
    return bound


@dataclass
class FieldTriple:
    """Error fields on the grid; identically zero on the sonic row t = 0."""

    grid: HodographGrid
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        shape = (self.grid.nt + 1, self.grid.nr)
        for name in ("U", "V", "W"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise GridMismatch(f"{name} has shape {arr.shape}, grid wants {shape}")
            setattr(self, name, arr)

    @classmethod
    def zeros(cls, grid):
        shape = (grid.nt + 1, grid.nr)
        return cls(grid, np.zeros(shape), np.zeros(shape), np.zeros(shape))

    def weighted(self, arr):
        """arr / t^2 rowwise, with the t = 0 row mapped to zero."""
        out = np.zeros_like(arr)
        t = self.grid.t_levels[1:, None]
        out[1:] = arr[1:] / (t * t)
        return out

    def weighted_norm(self):
        t = self.grid.t_levels[1:, None]
        return float(np.max((np.abs(self.U[1:]) + np.abs(self.V[1:])
                             + np.abs(self.W[1:])) / (t * t)))


def weighted_distance(A: FieldTriple, B: FieldTriple):
    """Sum of the componentwise sup norms of (A - B) / t^2."""
    if A.grid is not B.grid and not A.grid.compatible(B.grid):
        raise GridMismatch("fields live on different grids")
    t = A.grid.t_levels[1:, None]
    t2 = t * t
    return float(np.max(np.abs(A.U[1:] - B.U[1:]) / t2)
                 + np.max(np.abs(A.V[1:] - B.V[1:]) / t2)
                 + np.max(np.abs(A.W[1:] - B.W[1:]) / t2))


# ----------------------------------------------------------------------
# Frozen-field evaluation context for one sweep


def _fast_eval(fn, nu):
    """Cheapest callable view of an Fn1D derivative (skips dispatch)."""
    if fn.kind == "table":
        return fn._splines[nu]
    return fn._poly[nu]


class _Ctx:
    """Per-sweep snapshot: level splines of the frozen fields and data.

    Fields are bundled per level into one MultiSpline with rows
    (U, V, W, (U+V)/t^2) so the hot loops do one interval lookup per
    evaluation site.  When the boundary functions are tables on a shared
    node set (the usual case), their value and first-derivative splines
    are bundled the same way; otherwise a generic fallback evaluates the
    Fn1D objects directly.
    """

    def __init__(self, fields: FieldTriple, hb: HodographBoundary, gc):
        g = fields.grid
        self.grid = g
        self.hb = hb
        self.gc = gc
        self.eps0 = hb.eps0
        dr = g.r_span / (g.nr - 1)
        # quadratically flat fields are stored as field / t^2 rows; the
        # t = 0 row is filled by linear extrapolation so that blends over
        # the first interval keep the flat structure to O(h^2) in the
        # weighted variable (hence O(h^4) in the field itself)
        t2 = g.t_levels[1:, None] ** 2
        wt = np.empty((4, g.nt + 1, g.nr))
        wt[0, 1:] = fields.U[1:] / t2
        wt[1, 1:] = fields.V[1:] / t2
        wt[2, 1:] = fields.W[1:] / t2
        wt[3, 1:] = wt[0, 1:] + wt[1, 1:]
        wt[:, 0] = 2.0 * wt[:, 1] - wt[:, 2]
        self.t2_lvl = np.concatenate([[0.0], t2[:, 0]])
        self.lvl = [MultiSpline(g.r_lo[j], dr[j], wt[:, j, :])
                    for j in range(g.nt + 1)]
        fns = (hb.a0, hb.a1, hb.H0)
        if all(f.kind == "table" for f in fns):
            try:
                self.d6 = MultiSpline.stack(
                    [f._splines[nu] for f in fns for nu in (0, 1)])
            except DomainError:
                self.d6 = None
        else:
            self.d6 = None
        self._fn6 = [(_fast_eval(f, 0), _fast_eval(f, 1)) for f in fns]

    # -- data access --------------------------------------------------

    def data6(self, r):
        """(a0, a0', a1, a1', H0, H0') at r."""
        if self.d6 is not None:
            return self.d6.eval(r)
        return np.stack([f(r) for pair in self._fn6 for f in pair])

    # -- frozen-field access --------------------------------------------

    @staticmethod
    def _unweight(rows, t):
        out = np.empty_like(rows)
        t2 = t * t
        out[0] = t2 * rows[0]
        out[1] = t2 * rows[1]
        out[2] = t2 * rows[2]
        out[3] = rows[3]
        return out

    def fields_at_level(self, j, r):
        """(U, V, W, (U+V)/t^2) rows exactly on level j."""
        return self._unweight(self.lvl[j].eval(r), self.grid.t_levels[j])

    def fields_blend(self, t, r):
        """Rows at arbitrary t: normalized-s blend of the weighted rows,
        then multiplication by t^2."""
        g = self.grid
        if t <= 0.0:
            return np.zeros((4, r.size))
        m = min(int(t / g.ht), g.nt - 1)
        frac = (t - g.t_levels[m]) / g.ht
        if frac <= 0.0:
            return self.fields_at_level(m, r)
        lo_t, hi_t = g.rbar1(t), g.rbar2(t)
        s = (r - lo_t) / (hi_t - lo_t)
        r_m = g.r_lo[m] + s * g.r_span[m]
        r_m1 = g.r_lo[m + 1] + s * g.r_span[m + 1]
        rows = (1.0 - frac) * self.lvl[m].eval(r_m) \
            + frac * self.lvl[m + 1].eval(r_m1)
        return self._unweight(rows, t)

    def uvw_at(self, t, r):
        """Frozen fields (U, V, W) at scalar t, vector r."""
        rows = self.fields_blend(t, np.asarray(r, dtype=float))
        return rows[0], rows[1], rows[2]

    # -- eigenvalues and integrands ---------------------------------------

    def _lam_rows(self, rows, t, r):
        d = self.data6(r)
        return _lam_terms(rows[0], rows[1], rows[2], t, d[0], d[2], d[4],
                          self.gc, self.eps0, where=f"t={t:.4g}")

    def lam(self, fam, t, r):
        """Eigenvalue of one family at scalar t, vector r."""
        r = np.asarray(r, dtype=float)
        if t <= 0.0:
            return np.zeros_like(r)
        return self._lam_rows(self.fields_blend(t, r), t, r)[fam - 1]

    def _lam_all_at(self, t, R3, level=None):
        """(3, n) eigenvalues, each family at its own positions."""
        if t <= 0.0:
            return np.zeros_like(R3)
        flat = R3.reshape(-1)
        rows = self.fields_at_level(level, flat) if level is not None \
            else self.fields_blend(t, flat)
        out = self._lam_rows(rows, t, flat)
        n = R3.shape[1]
        lam = np.empty_like(R3)
        lam[0] = out[0][:n]
        lam[1] = out[1][n:2 * n]
        lam[2] = out[2][2 * n:]
        return lam

    def integrand_level(self, fam, j, r):
        """Sweep integrand of one family on level j at positions r."""
        if j == 0:
            return np.zeros_like(r)
        t = self.grid.t_levels[j]
        rows = self.fields_at_level(j, r)
        uv2t = 0.5 * t * rows[3]
        d = self.data6(r)
        b1, b2, b3 = _b_terms(rows[0], rows[1], rows[2], t, d[0], d[1], d[2],
                              d[3], d[4], d[5], self.gc, uv2t, self.eps0,
                              where=f"level {j}")
        if fam == 1:
            return uv2t + b1
        if fam == 2:
            return uv2t + b2
        return b3

    def _integrand_rows(self, t, rows, flat, n):
        uv2t = 0.5 * t * rows[3]
        d = self.data6(flat)
        b1, b2, b3 = _b_terms(rows[0], rows[1], rows[2], t, d[0], d[1], d[2],
                              d[3], d[4], d[5], self.gc, uv2t, self.eps0,
                              where=f"t={t:.4g}")
        out = np.empty((3, n))
        out[0] = (uv2t + b1)[:n]
        out[1] = (uv2t + b2)[n:2 * n]
        out[2] = b3[2 * n:]
        return out

    def integrand_all(self, j, R3):
        """All three integrands at their own positions on level j."""
        if j == 0:
            return np.zeros_like(R3)
        flat = R3.reshape(-1)
        return self._integrand_rows(self.grid.t_levels[j],
                                    self.fields_at_level(j, flat),
                                    flat, R3.shape[1])

    def integrand_mid(self, t, R3):
        """Integrands between levels (used by the first-panel Simpson)."""
        flat = R3.reshape(-1)
        return self._integrand_rows(t, self.fields_blend(t, flat),
                                    flat, R3.shape[1])

    def rk4_down(self, fam, i, r):
        """One backward characteristic step from level i to level i-1."""
        g = self.grid
        h = g.ht
        t1 = g.t_levels[i]
        t0 = g.t_levels[i - 1]
        tm = t1 - 0.5 * h
        k1 = self.lam(fam, t1, r)
        k2 = self.lam(fam, tm, r - 0.5 * h * k1)
        k3 = self.lam(fam, tm, r - 0.5 * h * k2)
        k4 = self.lam(fam, t0, r - h * k3)
        return r - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def rk4_down_all(self, i, R3):
        """Backward step of all three families at once; R3 is (3, n)."""
        g = self.grid
        h = g.ht
        t1 = g.t_levels[i]
        t0 = g.t_levels[i - 1]
        tm = t1 - 0.5 * h
        k1 = self._lam_all_at(t1, R3, level=i)
        k2 = self._lam_all_at(tm, R3 - 0.5 * h * k1)
        k3 = self._lam_all_at(tm, R3 - 0.5 * h * k2)
        k4 = self._lam_all_at(t0, R3 - h * k3, level=i - 1)
        return R3 - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_inside(grid, level, r, fam, target_of=None, capture=None):
    """Lateral containment test; raises DomainExit or records the first exit."""
    lo = grid.r_lo[level]
    hi = lo + grid.r_span[level]
    band = 1e-9 * max(grid.r_span[0], 1e-12)
    bad = (r < lo - band) | (r > hi + band)
    if np.any(bad):
        idx = int(np.argmax(bad))
        target = None if target_of is None else target_of(idx)
        exc = DomainExit(fam, float(grid.t_levels[level]), float(r[idx]), target)
        if capture is None:
            raise exc
        capture.append(exc)
        # park escaped paths on the boundary so the rest can continue
        np.clip(r, lo, hi, out=r)
    return r


def trace_characteristic(family, xi, eta, fields: FieldTriple,
                         hb: HodographBoundary, gc):
    """Backward characteristic of one family from (xi, eta) to t = 0.

    Returns (t_path, r_path) sampled on the grid's t-levels, ascending in
    t.  Raises DomainExit when the path leaves the lateral boundaries.
    """
    grid = fields.grid
    j = int(round(xi / grid.ht))
    if not 0 <= j <= grid.nt or abs(grid.t_levels[j] - xi) > 1e-9 * grid.delta:
        raise DomainError("xi must sit on a grid t-level")
    ctx = _Ctx(fields, hb, gc)
    r_path = np.empty(j + 1)
    r_path[j] = eta
    cur = np.array([eta], dtype=float)
    for i in range(j, 0, -1):
        cur = ctx.rk4_down(family, i, cur)
        _check_inside(grid, i - 1, cur, family, target_of=lambda _: (j, eta))
        r_path[i - 1] = cur[0]
    return grid.t_levels[: j + 1].copy(), r_path


def _sweep_columns(ctx: _Ctx, cols):
    """Integrate the three updates over the grid nodes in column set `cols`.

    All families march together: positions live in a (3, n_active) block
    whose rows are the family-1, -2 and -3 paths of the same targets.
    """
    g = ctx.grid
    nt = g.nt
    nc = len(cols)
    Wmat = g.weight_mat
    nodes = g.r_nodes[:, cols]                       # (nt+1, nc)
    R3 = np.broadcast_to(nodes.reshape(-1), (3, (nt + 1) * nc)).copy()
    tj = np.repeat(np.arange(nt + 1), nc)
    acc = np.zeros_like(R3)
    # contribution of each target's own level (the upper quadrature node)
    for j in range(1, nt + 1):
        blk = slice(j * nc, (j + 1) * nc)
        acc[:, blk] = Wmat[j, j] * ctx.integrand_all(j, R3[:, blk])
    for i in range(nt, 0, -1):
        act = slice(i * nc, None)
        stepped = ctx.rk4_down_all(i, R3[:, act])
        base = act.start
        for fam in (1, 2, 3):
            _check_inside(g, i - 1, stepped[fam - 1], fam,
                          target_of=lambda k, b=base: ((b + k) // nc,
                                                       cols[(b + k) % nc]))
        R3[:, act] = stepped
        if i - 1 >= 1:
            gvals = ctx.integrand_all(i - 1, stepped)
            acc[:, act] += Wmat[tj[act], i - 1] * gvals
    out = g.ht * acc.reshape(3, nt + 1, nc)
    out[:, 0, :] = 0.0
    return out


def _worker_count():
    try:
        return max(1, int(os.environ.get("SONIC_THREADS", "1") or "1"))
    except ValueError:
        return 1


def apply_T(fields: FieldTriple, hb: HodographBoundary, gc) -> FieldTriple:
    """One sweep of the iteration mapping; the input snapshot is not mutated.

    Targets are independent, so SONIC_THREADS > 1 splits the r-columns
    over a thread pool.  Every operation is elementwise, hence results are
    bitwise identical for any worker count.
    """
    ctx = _Ctx(fields, hb, gc)
    g = fields.grid
    shape = (g.nt + 1, g.nr)
    new_U = np.empty(shape)
    new_V = np.empty(shape)
    new_W = np.empty(shape)
    workers = min(_worker_count(), g.nr)
    col_groups = [list(chunk) for chunk in
                  np.array_split(np.arange(g.nr), workers)]
    if workers == 1:
        results = [_sweep_columns(ctx, col_groups[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda c: _sweep_columns(ctx, c), col_groups))
    for cols, out in zip(col_groups, results):
        new_U[:, cols] = out[0]
        new_V[:, cols] = out[1]
        new_W[:, cols] = out[2]
    return FieldTriple(fields.grid, new_U, new_V, new_W)


# ----------------------------------------------------------------------
# Outer fixed-point loop


def estimate_K(hb: HodographBoundary, gc, delta):
    """Data constant: 1 + C^3 norms of a0, a1, H0 + bounds of F, G on [0, delta]."""
    t = np.linspace(0.0, delta, 65)
    K = 1.0 + hb.a0.c_norm(3) + hb.a1.c_norm(3) + hb.H0.c_norm(3)
    K += float(np.max(F_of_t(t, gc))) + float(np.max(G_of_t(t, gc)))
    return K


@dataclass
class IterationReport:
    distances: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    weighted_norms: list = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False
    delta: float = 0.0
    delta_history: list = field(default_factory=list)
    K_est: float = 0.0
    M_est: float = 0.0
    delta_proof: float = 0.0
    within_M_bound: bool = True
    message: str = ""

    @property
    def max_weighted_norm(self):
        return max(self.weighted_norms) if self.weighted_norms else 0.0

    def as_dict(self):
        return {
            "distances": list(self.distances),
            "ratios": list(self.ratios),
            "weighted_norms": list(self.weighted_norms),
            "sweeps": self.sweeps,
            "converged": self.converged,
            "delta": self.delta,
            "delta_history": list(self.delta_history),
            "K_est": self.K_est,
            "M_est": self.M_est,
            "delta_proof": self.delta_proof,
            "max_weighted_norm": self.max_weighted_norm,
            "within_M_bound": self.within_M_bound,
            "message": self.message,
        }


def solve_fixed_point(hb: HodographBoundary, grid: HodographGrid, gc,
                      tol=1e-10, max_iter=50, retries=6):
    """Iterate the mapping from the zero seed until the weighted metric
    drops below tol.

    Non-contraction (three consecutive ratios >= 1) or a characteristic
    escaping the domain triggers a delta-halving rebuild of the grid, up
    to `retries` times.  Returns (fields, IterationReport).
    """
    delta_history = []
    failure = None
    for attempt in range(retries + 1):
        delta_history.append(grid.delta)
        K_est = estimate_K(hb, gc, grid.delta)
        M_est = 64.0 * K_est
        report = IterationReport(delta=grid.delta, delta_history=list(delta_history),
                                 K_est=K_est, M_est=M_est,
                                 delta_proof=min(1.0 / M_est, grid.delta))
        fields = FieldTriple.zeros(grid)
        failure = None
        for sweep in range(1, max_iter + 1):
            try:
                new = apply_T(fields, hb, gc)
            except DomainExit as exc:
                failure = exc
                report.message = f"domain exit: {exc}"
                break
            d = weighted_distance(new, fields)
            report.distances.append(d)
            if sweep >= 2:
                prev = report.distances[-2]
                report.ratios.append(d / prev if prev > 0.0 else 0.0)
            report.weighted_norms.append(new.weighted_norm())
            fields = new
            report.sweeps = sweep
            if d <= tol:
                report.converged = True
                break
            if len(report.ratios) >= 3 and all(x >= 1.0 for x in report.ratios[-3:]):
                failure = NoContraction(
                    f"ratios {report.ratios[-3:]} >= 1 at delta = {grid.delta}")
                report.message = str(failure)
                break
        report.within_M_bound = report.max_weighted_norm <= M_est
        if failure is None:
            if not report.converged:
                report.message = (f"max_iter = {max_iter} reached with "
                                  f"d = {report.distances[-1]:.3e}")
            return fields, report
        if attempt < retries:
            grid = _rebuild_half(grid, hb, gc)
            continue
    if isinstance(failure, DomainExit):
        raise failure
    raise NoContraction(f"retry budget exhausted; deltas tried: {delta_history}")


def _rebuild_half(grid, hb, gc):
    if grid.auto_shrink:
        return HodographGrid.build(hb, gc, grid.delta / 2.0, grid.nt, grid.nr)
    return HodographGrid(grid.delta / 2.0, grid.nt, grid.nr,
                         grid.rbar1, grid.rbar2, auto_shrink=False)


def reconstruct_bar_fields(fields: FieldTriple, hb: HodographBoundary):
    """Undo the flat-error shift: Ubar = U - a0 + a1 t, Vbar = V + a0 + a1 t,
    Hbar = W + H0.  Boundary rows carry (-a0, a0, H0)."""
    g = fields.grid
    t = g.t_levels[:, None]
    a0 = hb.a0(g.r_nodes)
    a1 = hb.a1(g.r_nodes)
    H0 = hb.H0(g.r_nodes)
    return (fields.U - a0 + a1 * t,
            fields.V + a0 + a1 * t,
            fields.W + H0)


@dataclass
class DeterminacyReport:
    passed: bool
    exits: list = field(default_factory=list)

    def as_dict(self):
        return {"passed": self.passed,
                "exits": [{"family": e.family, "t_exit": e.t_exit,
                           "r": e.r_value, "target": e.target}
                          for e in self.exits]}


def check_strong_determinacy(grid: HodographGrid, fields: FieldTriple,
                             hb: HodographBoundary, gc) -> DeterminacyReport:
    """Trace all three families from boundary-adjacent nodes; report exits."""
    ctx = _Ctx(fields, hb, gc)
    nt, nr = grid.nt, grid.nr
    cols = sorted(set([0, 1, nr - 2, nr - 1]))
    exits = []
    for fam in (1, 2, 3):
        # lateral edge columns at every level plus the whole top row
        tj, rr = [], []
        for j in range(1, nt + 1):
            for k in cols:
                tj.append(j)
                rr.append(grid.r_nodes[j, k])
        for k in range(nr):
            tj.append(nt)
            rr.append(grid.r_nodes[nt, k])
        tj = np.asarray(tj)
        cur = np.asarray(rr, dtype=float)
        start = np.asarray(rr, dtype=float)
        captured = []
        for i in range(nt, 0, -1):
            sel = np.nonzero(tj >= i)[0]
            if sel.size == 0:
                break
            stepped = ctx.rk4_down(fam, i, cur[sel])
            _check_inside(grid, i - 1, stepped, fam,
                          target_of=lambda k, s=sel: (int(tj[s[k]]),
                                                      float(start[s[k]])),
                          capture=captured)
            cur[sel] = stepped
        exits.extend(captured)
    return DeterminacyReport(passed=not exits, exits=exits)
