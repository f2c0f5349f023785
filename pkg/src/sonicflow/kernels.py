"""Shared numerical kernels: splines, quadrature, ODE stepping, inversion.

Conventions:
    - All sampled functions live on uniformly spaced nodes.  Table
      derivatives are taken with 4th-order finite differences (one-sided
      stencils at the ends) and re-splined, so a table behaves like a C^4
      function up to O(h^4).
    - Cubic splines use not-a-knot end conditions and therefore reproduce
      polynomials up to degree 3 exactly.
    - Composite Simpson weights fall back to a 3/8 tail when the panel
      count is odd and to the trapezoid on a single panel.  The t = 0
      endpoint is always included with the continuous limit value of the
      integrand.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError, InversionFailure, OutOfRange, TooFewNodes

try:
    from numba import njit as _njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

if _HAVE_NUMBA:
    @_njit(cache=True)
    def _horner_multi(c, x0, inv_dx, dx, n, x, out):
        m = c.shape[0]
        for j in range(x.size):
            k = int((x[j] - x0) * inv_dx)
            if k < 0:
                k = 0
            elif k > n - 2:
                k = n - 2
            xi = x[j] - (x0 + k * dx)
            for f in range(m):
                out[f, j] = ((c[f, 0, k] * xi + c[f, 1, k]) * xi
                             + c[f, 2, k]) * xi + c[f, 3, k]

# 4th-order first-derivative stencils on uniform nodes.
# Rows: two left one-sided, centered, two right one-sided.
_D1_LEFT = np.array([
    [-25.0, 48.0, -36.0, 16.0, -3.0],
    [-3.0, -10.0, 18.0, -6.0, 1.0],
]) / 12.0
_D1_CENTER = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D1_RIGHT = np.array([
    [-1.0, 6.0, -18.0, 10.0, 3.0],
    [3.0, -16.0, 36.0, -48.0, 25.0],
]) / 12.0


def diff4(values, h):
    """First derivative of uniformly sampled values, 4th order.

    Centered 5-point stencil inside, one-sided 5-point stencils at the
    two nodes nearest each end.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 5:
        raise TooFewNodes("need at least 5 samples for 4th-order differences")
    d = np.empty_like(values)
    d[2:-2] = np.convolve(values, _D1_CENTER[::-1], mode="valid") / h
    d[0] = _D1_LEFT[0] @ values[:5] / h
    d[1] = _D1_LEFT[1] @ values[:5] / h
    d[-2] = _D1_RIGHT[0] @ values[-5:] / h
    d[-1] = _D1_RIGHT[1] @ values[-5:] / h
    return d


class UniformSpline:
    """Not-a-knot cubic spline on uniform nodes with O(1) interval lookup.

    Evaluation outside the node range extrapolates with the end cubic;
    range policing is left to the caller (see Fn1D for the strict variant).
    """

    __slots__ = ("x0", "dx", "n", "c", "_inv_dx")

    def __init__(self, x0, dx, values):
        values = np.asarray(values, dtype=float)
        self.x0 = float(x0)
        self.dx = float(dx)
        self._inv_dx = 1.0 / self.dx
        self.n = values.size
        if self.n < 4:
            raise TooFewNodes("cubic spline needs at least 4 nodes")
        x = x0 + dx * np.arange(self.n)
        self.c = CubicSpline(x, values).c  # (4, n-1)

    @classmethod
    def from_nodes(cls, x, values):
        x = np.asarray(x, dtype=float)
        dx = np.diff(x)
        if dx.size == 0 or not np.allclose(dx, dx[0], rtol=1e-8, atol=0.0):
            raise DomainError("UniformSpline requires uniformly spaced nodes")
        return cls(x[0], dx[0], values)

    def __call__(self, x, nu=0):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        if scalar:
            x = x.reshape(1)
        idx = ((x - self.x0) * self._inv_dx).astype(np.int64)
        np.minimum(idx, self.n - 2, out=idx)
        np.maximum(idx, 0, out=idx)
        xi = x - (self.x0 + idx * self.dx)
        c0, c1, c2, c3 = self.c[0, idx], self.c[1, idx], self.c[2, idx], self.c[3, idx]
        if nu == 0:
            out = ((c0 * xi + c1) * xi + c2) * xi + c3
        elif nu == 1:
            out = (3.0 * c0 * xi + 2.0 * c1) * xi + c2
        elif nu == 2:
            out = 6.0 * c0 * xi + 2.0 * c1
        elif nu == 3:
            out = 6.0 * c0 + 0.0 * xi
        else:
            raise DomainError(f"spline derivative order {nu} not available")
        return float(out[0]) if scalar else out


class MultiSpline:
    """Several cubic splines sharing one uniform node set.

    Evaluation does the interval lookup once and returns a (m, len(x))
    matrix; used in the solver's hot loops where three or more fields are
    sampled at identical positions.
    """

    __slots__ = ("x0", "dx", "_inv_dx", "n", "c")

    def __init__(self, x0, dx, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] < 4:
            raise TooFewNodes("MultiSpline wants (m, n >= 4) samples")
        self.x0 = float(x0)
        self.dx = float(dx)
        self._inv_dx = 1.0 / self.dx
        self.n = values.shape[1]
        x = x0 + dx * np.arange(self.n)
        # scipy puts the interpolation axis first in c: (4, n-1, m)
        c = CubicSpline(x, values, axis=1).c
        self.c = np.ascontiguousarray(np.moveaxis(c, 2, 0))  # (m, 4, n-1)

    @classmethod
    def stack(cls, splines):
        """Combine existing UniformSplines defined on identical nodes."""
        s0 = splines[0]
        for s in splines[1:]:
            if (abs(s.x0 - s0.x0) > 1e-12 * max(1.0, abs(s0.x0))
                    or abs(s.dx - s0.dx) > 1e-12 * s0.dx or s.n != s0.n):
                raise DomainError("splines do not share a node set")
        obj = cls.__new__(cls)
        obj.x0, obj.dx, obj._inv_dx, obj.n = s0.x0, s0.dx, s0._inv_dx, s0.n
        obj.c = np.ascontiguousarray(np.stack([s.c for s in splines]))
        return obj

    def eval(self, x):
        x = np.ascontiguousarray(x, dtype=float)
        if _HAVE_NUMBA and x.size >= 16:
            out = np.empty((self.c.shape[0], x.size))
            _horner_multi(self.c, self.x0, self._inv_dx, self.dx, self.n, x, out)
            return out
        idx = ((x - self.x0) * self._inv_dx).astype(np.int64)
        np.minimum(idx, self.n - 2, out=idx)
        np.maximum(idx, 0, out=idx)
        xi = x - (self.x0 + idx * self.dx)
        c = self.c
        return ((c[:, 0, idx] * xi + c[:, 1, idx]) * xi + c[:, 2, idx]) * xi \
            + c[:, 3, idx]


class Fn1D:
    """Scalar function on an interval with derivatives up to order 4.

    Two storage forms:
        poly  -- exact polynomial (numpy Polynomial), exact derivatives
        table -- uniform samples; derivative tables built with diff4 and
                 each represented by its own spline

    Use from_callable to sample an analytic expression into a table.
    """

    MAX_DERIV = 4

    def __init__(self, kind, x1, x2, poly=None, splines=None):
        self.kind = kind
        self.x1 = float(x1)
        self.x2 = float(x2)
        self._poly = poly
        self._splines = splines

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_poly(cls, coeffs, x1, x2):
        poly = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
        polys = [poly]
        for _ in range(cls.MAX_DERIV):
            polys.append(polys[-1].deriv())
        return cls("poly", x1, x2, poly=polys)

    @classmethod
    def from_table(cls, x, f):
        x = np.asarray(x, dtype=float)
        f = np.asarray(f, dtype=float)
        if x.ndim != 1 or x.size != f.size:
            raise DomainError("table arrays must be 1-D and of equal length")
        if x.size < 5:
            raise TooFewNodes("table needs at least 5 samples")
        h = np.diff(x)
        if np.any(h <= 0):
            raise DomainError("table nodes must be strictly increasing")
        if not np.allclose(h, h[0], rtol=1e-8, atol=0.0):
            raise DomainError("table nodes must be uniformly spaced")
        h = h[0]
        splines = [UniformSpline(x[0], h, f)]
        d = f
        for _ in range(cls.MAX_DERIV):
            d = diff4(d, h)
            splines.append(UniformSpline(x[0], h, d))
        return cls("table", x[0], x[-1], splines=splines)

    @classmethod
    def from_callable(cls, f, x1, x2, n=513):
        x = np.linspace(x1, x2, n)
        return cls.from_table(x, np.asarray([f(v) for v in x], dtype=float))

    @classmethod
    def constant(cls, value, x1, x2):
        return cls.from_poly([value], x1, x2)

    # -- evaluation --------------------------------------------------------

    def __call__(self, x, nu=0):
        if not 0 <= nu <= self.MAX_DERIV:
            raise DomainError(f"derivative order {nu} outside 0..{self.MAX_DERIV}")
        x = np.asarray(x, dtype=float)
        if self.kind == "poly":
            out = self._poly[nu](x)
            return out if np.ndim(out) else float(out)
        return self._splines[nu](x)

    def sample(self, x, max_order=0):
        """Stack of derivative arrays f, f', ..., f^(max_order) at x."""
        return [self(x, nu) for nu in range(max_order + 1)]

    def c_norm(self, order, n=257):
        """max over nu <= order of sup |f^(nu)| on the interval."""
        x = np.linspace(self.x1, self.x2, n)
        return max(float(np.max(np.abs(self(x, nu)))) for nu in range(order + 1))


def spline_eval(f: Fn1D, x, nu=0):
    """Strict evaluation of a sampled function; extrapolation is an error."""
    xa = np.asarray(x, dtype=float)
    tol = 1e-12 * max(1.0, abs(f.x2 - f.x1))
    if np.any(xa < f.x1 - tol) or np.any(xa > f.x2 + tol):
        raise OutOfRange(f"query outside [{f.x1}, {f.x2}]")
    return f(x, nu)


def rk4_step(rate, t, r, dt):
    """One classical 4-stage Runge-Kutta step for dr/dt = rate(t, r)."""
    k1 = rate(t, r)
    k2 = rate(t + 0.5 * dt, r + 0.5 * dt * k1)
    k3 = rate(t + 0.5 * dt, r + 0.5 * dt * k2)
    k4 = rate(t + dt, r + dt * k3)
    return r + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def quadrature_weights(n_panels):
    """Weights w such that h * sum(w_i f_i) integrates levels 0..n_panels.

    Composite Simpson for an even panel count; Simpson plus a 3/8 tail
    for an odd count >= 3; trapezoid for a single panel.  All weights are
    positive and the rule is exact for cubics.
    """
    n = int(n_panels)
    if n < 1:
        raise TooFewNodes("quadrature needs at least one panel")
    w = np.zeros(n + 1)
    if n == 1:
        w[:] = 0.5
        return w
    if n % 2 == 0:
        w[0] = w[-1] = 1.0 / 3.0
        w[1:-1:2] = 4.0 / 3.0
        w[2:-1:2] = 2.0 / 3.0
        return w
    # odd >= 3: Simpson on the first n-3 panels, 3/8 rule on the last three
    m = n - 3
    if m > 0:
        w[0] = 1.0 / 3.0
        w[1:m:2] = 4.0 / 3.0
        w[2:m:2] = 2.0 / 3.0
        w[m] = 1.0 / 3.0
    w[m] += 3.0 / 8.0
    w[m + 1] += 9.0 / 8.0
    w[m + 2] += 9.0 / 8.0
    w[m + 3] += 3.0 / 8.0
    return w


def weight_matrix(n_levels):
    """Row j holds the quadrature weights for integrating levels 0..j."""
    W = np.zeros((n_levels + 1, n_levels + 1))
    for j in range(1, n_levels + 1):
        W[j, : j + 1] = quadrature_weights(j)
    return W


def simpson_open(values, h):
    """Integrate uniformly sampled values over [0, n*h].

    The first entry must already be the continuous limit of the integrand
    at the singular endpoint; the rule itself is the positive-weight
    composite Simpson family from quadrature_weights.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 3:
        raise TooFewNodes("simpson_open needs at least 3 levels")
    return h * float(quadrature_weights(values.size - 1) @ values)


def invert_decreasing(f, df, y, x1, x2, tol=1e-12, newton_iter=8):
    """Solve f(x) = y for a strictly decreasing f on [x1, x2].

    Bisection brackets the root to ~1e-8 of the interval, then Newton
    (with df) polishes it to the requested tolerance.  Raises
    InversionFailure when y is outside [f(x2), f(x1)] or the refinement
    stalls.
    """
    flo, fhi = f(x2), f(x1)
    span = abs(x2 - x1)
    tol_y = tol * max(1.0, abs(fhi - flo))
    if y > fhi + 1e-9 or y < flo - 1e-9:
        raise InversionFailure(f"target {y} outside the range [{flo}, {fhi}]")
    a, b = x1, x2  # f(a) >= y >= f(b)
    for _ in range(30):
        mid = 0.5 * (a + b)
        if f(mid) >= y:
            a = mid
        else:
            b = mid
    x = 0.5 * (a + b)
    for _ in range(newton_iter):
        fx = f(x) - y
        slope = df(x)
        if slope == 0.0:
            raise InversionFailure("zero derivative during Newton refinement")
        x = min(max(x - fx / slope, x1), x2)
        if abs(fx) <= tol_y and abs(fx / slope) <= tol * max(1.0, span):
            return x
    if abs(f(x) - y) <= 1e3 * tol_y:
        return x
    raise InversionFailure("Newton refinement did not converge")
