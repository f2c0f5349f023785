"""Physical-plane recovery from a converged hodograph solution.

Output stays parametrized by (t, r) on the largest rectangle inside the
shrinking computational domain: r in [rbar1(delta), rbar2(delta)], which
every t-level contains.  Per r-line, the map (x, y)(t, r) solves two ODEs
in t whose right sides carry an explicit factor t, so they extend
continuously to the sonic row with value zero and the curve anchors the
initial data: x(0, r) = xbar(r), y(0, r) = phi(xbar(r)).

The entropy and Bernoulli fields ride the third characteristic family
(semi-Lagrangian: trace to t = 0, evaluate the boundary function), and
the remaining physical state follows algebraically:

    theta = r, omega = arccos t, c^2 = 2 kappa sin^2(omega) B / (kappa + sin^2 omega),
    q = c / sin(omega), rho = (2 kappa B sin^2 omega / (gamma (kappa + sin^2 omega) S))^(1/(gamma-1)),
    p = S rho^gamma.

The Jacobian j = t / (2 F [2 Ubar Vbar + G Hbar (Vbar - Ubar)]) must stay
strictly negative for t > 0; the bracket is sign-definite on admissible
data and is exported for checking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .boundary import HodographBoundary
from .errors import DomainError, NonPositiveState, SingularDenominator
from .hodograph import FieldTriple, G_of_t, _check_inside, _Ctx

CSV_COLUMNS = ["t", "r", "x", "y", "theta", "omega", "U", "V", "W",
               "S", "B", "c", "u", "v", "rho", "p", "E"]


def _bar_at(ctx, hb, t, r):
    """Full unknowns Ubar, Vbar, Hbar at scalar t, vector r."""
    u, v, w = ctx.uvw_at(t, r)
    a0 = hb.a0(r)
    a1 = hb.a1(r)
    return u - a0 + a1 * t, v + a0 + a1 * t, w + hb.H0(r)


def _bracket(ub, vb, hbar, t, gc):
    return 2.0 * ub * vb + G_of_t(t, gc) * hbar * (vb - ub)


def _xy_rate(ctx, hb, gc, t, r):
    """Right sides of the x_t, y_t ODEs; both carry the factor t."""
    ub, vb, hbar = _bar_at(ctx, hb, t, r)
    D = _bracket(ub, vb, hbar, t, gc)
    guard = max(1e-3 * hb.eps0 ** 2, 1e-14)
    if np.any(np.abs(D) < guard):
        raise SingularDenominator("2*Ubar*Vbar + G*Hbar*(Vbar - Ubar)",
                                  float(np.min(np.abs(D))), f"t={t:.4g}")
    F = (1.0 - t * t) * (gc.kappa + 1.0 - t * t)
    s = np.sqrt(1.0 - t * t)
    den = 2.0 * F * D
    ct, st = np.cos(r), np.sin(r)
    xdot = -((t * ct + s * st) * ub + (t * ct - s * st) * vb) * t / den
    ydot = -((t * st - s * ct) * ub + (t * st + s * ct) * vb) * t / den
    return xdot, ydot


def integrate_xy(fields: FieldTriple, hb: HodographBoundary, gc, r_out=None):
    """Solve the two initial-value problems per r-line with RK4 on the
    grid's t-levels; returns (r_out, x, y)."""
    grid = fields.grid
    if r_out is None:
        r_out = _default_rect(grid)
    ctx = _Ctx(fields, hb, gc)
    nt = grid.nt
    h = grid.ht
    x = np.empty((nt + 1, r_out.size))
    y = np.empty_like(x)
    x[0] = hb.x_bar(r_out)
    y[0] = hb.y_bar(r_out)
    for j in range(nt):
        t0 = grid.t_levels[j]
        xj, yj = x[j], y[j]
        k1x, k1y = _xy_rate(ctx, hb, gc, t0, r_out)
        k2x, k2y = _xy_rate(ctx, hb, gc, t0 + 0.5 * h, r_out)
        k4x, k4y = _xy_rate(ctx, hb, gc, t0 + h, r_out)
        # the rates do not depend on (x, y): RK4 collapses to Simpson
        x[j + 1] = xj + (h / 6.0) * (k1x + 4.0 * k2x + k4x)
        y[j + 1] = yj + (h / 6.0) * (k1y + 4.0 * k2y + k4y)
    return r_out, x, y


def _default_rect(grid):
    lo = grid.r_lo[-1]
    hi = lo + grid.r_span[-1]
    return np.linspace(lo, hi, grid.nr)


def jacobian_j(fields: FieldTriple, hb: HodographBoundary, gc, t, r):
    """j = t / (2 F [2 Ubar Vbar + G Hbar (Vbar - Ubar)]) at (t, r)."""
    ctx = _Ctx(fields, hb, gc)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    ub, vb, hbar = _bar_at(ctx, hb, float(t), r)
    D = _bracket(ub, vb, hbar, float(t), gc)
    guard = max(1e-3 * hb.eps0 ** 2, 1e-14)
    if np.any(np.abs(D) < guard):
        raise SingularDenominator("2*Ubar*Vbar + G*Hbar*(Vbar - Ubar)",
                                  float(np.min(np.abs(D))))
    F = (1.0 - t * t) * (gc.kappa + 1.0 - t * t)
    out = t / (2.0 * F * D)
    return out if out.size > 1 else float(out[0])


def transport_SB(fields: FieldTriple, hb: HodographBoundary, gc, r_out=None):
    """Transport S and B along the third family: trace each rectangle node
    back to t = 0 and evaluate S0, B0 at the foot."""
    grid = fields.grid
    if r_out is None:
        r_out = _default_rect(grid)
    ctx = _Ctx(fields, hb, gc)
    nt = grid.nt
    n = r_out.size
    feet = np.tile(r_out, nt + 1)
    tj = np.repeat(np.arange(nt + 1), n)
    for i in range(nt, 0, -1):
        act = slice(i * n, None)
        stepped = ctx.rk4_down(3, i, feet[act])
        base = act.start
        _check_inside(grid, i - 1, stepped, 3,
                      target_of=lambda k, b=base: ((b + k) // n, (b + k) % n))
        feet[act] = stepped
    del tj
    S = hb.S0(feet).reshape(nt + 1, n)
    B = hb.B0(feet).reshape(nt + 1, n)
    return S, B


@dataclass
class PhysicalSolution:
    """Physical state on the (t, r) rectangle, sonic row included."""

    gamma: float
    t: np.ndarray          # (m,)
    r: np.ndarray          # (n,)
    x: np.ndarray          # (m, n) and likewise below
    y: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    Ubar: np.ndarray
    Vbar: np.ndarray
    Hbar: np.ndarray
    S: np.ndarray
    B: np.ndarray
    c: np.ndarray
    u: np.ndarray
    v: np.ndarray
    rho: np.ndarray
    p: np.ndarray
    E: np.ndarray
    jac: np.ndarray
    bracket: np.ndarray

    def to_csv(self, path):
        """Node table, row-major over (t-level, r-node), full round-trip
        precision so reruns are byte-identical."""
        cols = {"t": np.broadcast_to(self.t[:, None], self.x.shape),
                "r": np.broadcast_to(self.r[None, :], self.x.shape)}
        for name in CSV_COLUMNS[2:]:
            cols[name] = getattr(self, name)
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            m, n = self.x.shape
            for j in range(m):
                for k in range(n):
                    writer.writerow([repr(float(cols[c][j, k])) for c in CSV_COLUMNS])

    @classmethod
    def from_csv(cls, path, hb: HodographBoundary, gc):
        """Rebuild the solution object (with derived members) from a table."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != CSV_COLUMNS:
                raise DomainError(f"unexpected CSV header {header}")
            rows = np.array([[float(v) for v in row] for row in reader])
        t = np.unique(rows[:, 0])
        r = np.unique(rows[:, 1])
        m, n = t.size, r.size
        if m * n != rows.shape[0]:
            raise DomainError("CSV does not hold a full rectangle of nodes")
        data = {name: rows[:, i].reshape(m, n) for i, name in enumerate(CSV_COLUMNS)}
        a0 = hb.a0(r)[None, :]
        a1 = hb.a1(r)[None, :]
        H0 = hb.H0(r)[None, :]
        tcol = t[:, None]
        Ubar = data["U"] - a0 + a1 * tcol
        Vbar = data["V"] + a0 + a1 * tcol
        Hbar = data["W"] + H0
        D = 2.0 * Ubar * Vbar + G_of_t(tcol, gc) * Hbar * (Vbar - Ubar)
        F = (1.0 - tcol * tcol) * (gc.kappa + 1.0 - tcol * tcol)
        return cls(gamma=gc.gamma, t=t, r=r, x=data["x"], y=data["y"],
                   theta=data["theta"], omega=data["omega"],
                   alpha=data["theta"] + data["omega"],
                   beta=data["theta"] - data["omega"],
                   U=data["U"], V=data["V"], W=data["W"],
                   Ubar=Ubar, Vbar=Vbar, Hbar=Hbar,
                   S=data["S"], B=data["B"], c=data["c"], u=data["u"],
                   v=data["v"], rho=data["rho"], p=data["p"], E=data["E"],
                   jac=tcol / (2.0 * F * D), bracket=D)


def recover_physical(fields: FieldTriple, hb: HodographBoundary, gc,
                     nr_out=None) -> PhysicalSolution:
    """Full recovery chain: inverse map, transport, algebraic state.

    Raises NonPositiveState when the transported S, B produce a
    non-positive density, pressure or sound speed.
    """
    grid = fields.grid
    if nr_out is None:
        r_out = _default_rect(grid)
    else:
        lo = grid.r_lo[-1]
        r_out = np.linspace(lo, lo + grid.r_span[-1], nr_out)

    ctx = _Ctx(fields, hb, gc)
    m = grid.nt + 1
    U = np.empty((m, r_out.size))
    V = np.empty_like(U)
    W = np.empty_like(U)
    for j in range(m):
        rows = ctx.fields_at_level(j, r_out)
        U[j], V[j], W[j] = rows[0], rows[1], rows[2]

    _, x, y = integrate_xy(fields, hb, gc, r_out)
    S, B = transport_SB(fields, hb, gc, r_out)

    t = grid.t_levels.copy()
    tcol = t[:, None]
    theta = np.broadcast_to(r_out[None, :], U.shape).copy()
    omega = np.broadcast_to(np.arccos(tcol), U.shape).copy()

    k = gc.kappa
    g = gc.gamma
    sin2 = 1.0 - tcol * tcol
    if np.any(S <= 0.0) or np.any(B <= 0.0):
        raise NonPositiveState("transported S or B not positive")
    c2 = 2.0 * k * sin2 * B / (k + sin2)
    if np.any(c2 <= 0.0):
        raise NonPositiveState("sound speed collapsed")
    c = np.sqrt(c2)
    sinw = np.sqrt(sin2)
    u = c * np.cos(theta) / sinw
    v = c * np.sin(theta) / sinw
    rho = (2.0 * k * B * sin2 / (g * (k + sin2) * S)) ** (1.0 / (g - 1.0))
    p = S * rho ** g
    if np.any(rho <= 0.0) or np.any(p <= 0.0):
        raise NonPositiveState("density or pressure not positive")
    E = 0.5 * (u * u + v * v) + p / ((g - 1.0) * rho)

    a0 = hb.a0(r_out)[None, :]
    a1 = hb.a1(r_out)[None, :]
    H0 = hb.H0(r_out)[None, :]
    Ubar = U - a0 + a1 * tcol
    Vbar = V + a0 + a1 * tcol
    Hbar = W + H0
    D = _bracket(Ubar, Vbar, Hbar, tcol, gc)
    F = (1.0 - tcol * tcol) * (k + 1.0 - tcol * tcol)

    return PhysicalSolution(
        gamma=g, t=t, r=r_out, x=x, y=y, theta=theta, omega=omega,
        alpha=theta + omega, beta=theta - omega, U=U, V=V, W=W,
        Ubar=Ubar, Vbar=Vbar, Hbar=Hbar, S=S, B=B, c=c, u=u, v=v,
        rho=rho, p=p, E=E, jac=tcol / (2.0 * F * D), bracket=D)


def resample_cartesian(phys: PhysicalSolution, field, nx=64, ny=64, power=2.0):
    """Inverse-distance resampling of one field onto a Cartesian raster.

    Convenience output only; the parametric table is the primary product.
    Returns (X, Y, values) with NaN outside the mapped point cloud's hull
    estimate (nearest-node distance filter).
    """
    from scipy.spatial import cKDTree

    pts = np.column_stack([phys.x.ravel(), phys.y.ravel()])
    vals = np.asarray(getattr(phys, field)).ravel()
    tree = cKDTree(pts)
    X, Y = np.meshgrid(np.linspace(pts[:, 0].min(), pts[:, 0].max(), nx),
                       np.linspace(pts[:, 1].min(), pts[:, 1].max(), ny))
    q = np.column_stack([X.ravel(), Y.ravel()])
    dist, idx = tree.query(q, k=min(8, len(pts)))
    dist = np.maximum(dist, 1e-300)
    wgt = dist ** (-power)
    out = (wgt * vals[idx]).sum(axis=1) / wgt.sum(axis=1)
    # mask raster cells far from any mapped node
    scale = np.median(tree.query(pts, k=2)[0][:, 1])
    out[dist[:, 0] > 4.0 * scale] = np.nan
    return X, Y, out.reshape(X.shape)
