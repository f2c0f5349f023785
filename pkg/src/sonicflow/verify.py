"""Finite-difference residual checks of the governing identities.

Each operator evaluates one family of identities on solver output and
reports the worst absolute residual.  Derivatives in the physical plane
come from the computed map itself: centered differences of the (x, y)
arrays in the (t, r) chart are inverted per node, so the checks measure
the mutual consistency of fields and map rather than re-using analytic
Jacobian formulas.

Near the sonic row the map Jacobian vanishes like t and difference
errors amplify like h^2 / t, so order-checked maxima are taken over
t >= delta/8 by default (the full-domain maximum is reported alongside).
Convergence orders are Richardson estimates over two resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch
from .hodograph import FieldTriple, G_of_t, _b_terms, _lam_terms, _Ctx
from .inverse import PhysicalSolution, _default_rect
from .tricomi import TricomiField, TricomiProblem, apply_T_tricomi

DEFAULT_CUT = 0.125  # drop t < cut * delta from order-checked maxima


@dataclass
class ResidualEntry:
    max_abs: float
    h: float
    order: float | None = None

    def as_dict(self):
        return {"max_abs": self.max_abs, "h": self.h, "order": self.order}


@dataclass
class ResidualReport:
    name: str
    entries: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def max_abs(self):
        return max(e.max_abs for e in self.entries.values())

    def as_dict(self):
        return {"name": self.name,
                "entries": {k: e.as_dict() for k, e in self.entries.items()},
                "details": self.details}


def richardson_orders(coarse: ResidualReport, fine: ResidualReport) -> ResidualReport:
    """Attach order estimates to the fine report: log(Rc/Rf) / log(hc/hf)."""
    if coarse.name != fine.name:
        raise GridMismatch("reports come from different operators")
    out = ResidualReport(fine.name, details=dict(fine.details))
    for key, fe in fine.entries.items():
        ce = coarse.entries[key]
        order = None
        if fe.max_abs > 0.0 and ce.max_abs > 0.0 and ce.h != fe.h:
            order = float(np.log(ce.max_abs / fe.max_abs) / np.log(ce.h / fe.h))
        out.entries[key] = ResidualEntry(fe.max_abs, fe.h, order)
    return out


def _cut_mask(t, cut_frac):
    """Row selector excluding the sonic boundary layer and untouched edges."""
    delta = t[-1]
    keep = t >= cut_frac * delta
    keep[0] = False
    return keep


def _masked_max(arr, row_mask):
    return float(np.max(np.abs(arr[row_mask, :])))


# ----------------------------------------------------------------------
# Residual of the flat-error system itself, on the output rectangle


def residual_hodograph_system(fields: FieldTriple, hb, gc, nr_out=None,
                              cut_frac=DEFAULT_CUT) -> ResidualReport:
    """Centered-difference residual of the three transport equations for
    (U, V, W) with their eigenvalues and sources evaluated pointwise."""
    grid = fields.grid
    r = _default_rect(grid) if nr_out is None else np.linspace(
        grid.r_lo[-1], grid.r_lo[-1] + grid.r_span[-1], nr_out)
    t = grid.t_levels
    ctx = _Ctx(fields, hb, gc)
    m, n = t.size, r.size
    U = np.empty((m, n))
    V = np.empty_like(U)
    W = np.empty_like(U)
    for j in range(m):
        rows = ctx.fields_at_level(j, r)
        U[j], V[j], W[j] = rows[0], rows[1], rows[2]

    U_t, U_r = np.gradient(U, t, r, edge_order=2)
    V_t, V_r = np.gradient(V, t, r, edge_order=2)
    W_t, W_r = np.gradient(W, t, r, edge_order=2)

    tc = t[:, None]
    rb = np.broadcast_to(r[None, :], U.shape)
    a0, a0p = hb.a0(rb), hb.a0(rb, 1)
    a1, a1p = hb.a1(rb), hb.a1(rb, 1)
    H0, H0p = hb.H0(rb), hb.H0(rb, 1)
    lam1, lam2, lam3 = _lam_terms(U, V, W, tc, a0, a1, H0, gc, hb.eps0)
    with np.errstate(divide="ignore", invalid="ignore"):
        uv2t = np.where(tc > 0.0, (U + V) / np.where(tc > 0.0, 2.0 * tc, 1.0), 0.0)
    b1, b2, b3 = _b_terms(U, V, W, tc, a0, a0p, a1, a1p, H0, H0p, gc,
                          uv2t, hb.eps0)

    res_U = U_t + lam1 * U_r - (uv2t + b1)
    res_V = V_t + lam2 * V_r - (uv2t + b2)
    res_W = W_t + lam3 * W_r - b3

    keep = _cut_mask(t, cut_frac)
    h = max(grid.ht, float(r[1] - r[0]))
    rep = ResidualReport("hodograph_system")
    for key, arr in (("hodo_U", res_U), ("hodo_V", res_V), ("hodo_W", res_W)):
        rep.entries[key] = ResidualEntry(_masked_max(arr, keep), h)
        rep.details[key + "_full"] = float(np.max(np.abs(arr[1:])))
    return rep


# ----------------------------------------------------------------------
# Map-consistent directional derivatives on a physical solution


class _ChartDerivatives:
    """Per-node inversion of the finite-differenced map (t, r) -> (x, y)."""

    def __init__(self, phys: PhysicalSolution):
        t, r = phys.t, phys.r
        self.x_t, self.x_r = np.gradient(phys.x, t, r, edge_order=2)
        self.y_t, self.y_r = np.gradient(phys.y, t, r, edge_order=2)
        self.jac_fd = self.x_t * self.y_r - self.x_r * self.y_t
        self.t, self.r = t, r

    def grad_xy(self, f):
        f_t, f_r = np.gradient(f, self.t, self.r, edge_order=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            f_x = (self.y_r * f_t - self.y_t * f_r) / self.jac_fd
            f_y = (self.x_t * f_r - self.x_r * f_t) / self.jac_fd
        return f_x, f_y

    def along(self, f, angle):
        f_x, f_y = self.grad_xy(f)
        return np.cos(angle) * f_x + np.sin(angle) * f_y


def residual_characteristic_form(phys: PhysicalSolution, gc,
                                 cut_frac=DEFAULT_CUT) -> ResidualReport:
    """Residuals of the first-order characteristic identities:

        dtheta/d+- +- cos^2(w)/(sin^2(w)+kappa) * dw/d+- = +-sin(2w) G H
        dH/d0 = dS/d0 = dB/d0 = 0
    """
    ch = _ChartDerivatives(phys)
    k = gc.kappa
    w = phys.omega
    coef = np.cos(w) ** 2 / (np.sin(w) ** 2 + k)
    GH = G_of_t(phys.t[:, None], gc) * phys.Hbar
    rhs = np.sin(2.0 * w) * GH

    res_p = ch.along(phys.theta, phys.alpha) + coef * ch.along(w, phys.alpha) - rhs
    res_m = ch.along(phys.theta, phys.beta) - coef * ch.along(w, phys.beta) - rhs
    res_H = ch.along(phys.Hbar, phys.theta)
    res_S = ch.along(phys.S, phys.theta)
    res_B = ch.along(phys.B, phys.theta)

    keep = _cut_mask(phys.t, cut_frac)
    h = max(float(phys.t[1] - phys.t[0]), float(phys.r[1] - phys.r[0]))
    rep = ResidualReport("characteristic_form")
    for key, arr in (("plus_family", res_p), ("minus_family", res_m),
                     ("transport_H", res_H), ("transport_S", res_S),
                     ("transport_B", res_B)):
        rep.entries[key] = ResidualEntry(_masked_max(arr, keep), h)
        rep.details[key + "_full"] = float(np.max(np.abs(arr[1:])))
    return rep


def residual_decomposition_Xi(phys: PhysicalSolution, gc,
                              cut_frac=DEFAULT_CUT) -> ResidualReport:
    """Second-order decomposition check for the degeneracy potential

        Xi = (1/4k) ln(sin^2 w / (k + sin^2 w)) - (1/4k)((1/g) ln S - ln B).

    Nested directional differences lose one order; the report carries
    whatever order the data supports rather than asserting one.
    """
    k = gc.kappa
    g = gc.gamma
    w = phys.omega
    sin2 = np.sin(w) ** 2
    Xi = (np.log(sin2 / (k + sin2)) - ((1.0 / g) * np.log(phys.S)
                                       - np.log(phys.B))) / (4.0 * k)
    ch = _ChartDerivatives(phys)
    P = ch.along(Xi, phys.alpha)   # d Xi / d+
    Q = ch.along(Xi, phys.beta)    # d Xi / d-
    GH = G_of_t(phys.t[:, None], gc) * phys.Hbar
    cos2w = np.cos(w) ** 2
    c2w = np.cos(2.0 * w)

    rhs_p = ((k * P + (k + sin2) * GH) / cos2w * (P - c2w * Q)
             + P / cos2w * (P + c2w ** 2 * Q))
    rhs_m = ((k * Q - (k + sin2) * GH) / cos2w * (Q - c2w * P)
             + Q / cos2w * (Q + c2w ** 2 * P))

    res_p = ch.along(P, phys.beta) - rhs_p
    res_m = ch.along(Q, phys.alpha) - rhs_m

    keep = _cut_mask(phys.t, cut_frac)
    # nested stencils spoil the two outermost rows on each side
    keep[-2:] = False
    h = max(float(phys.t[1] - phys.t[0]), float(phys.r[1] - phys.r[0]))
    rep = ResidualReport("decomposition_Xi")
    rep.entries["decomp_plus"] = ResidualEntry(
        float(np.max(np.abs(res_p[keep, 2:-2]))), h)
    rep.entries["decomp_minus"] = ResidualEntry(
        float(np.max(np.abs(res_m[keep, 2:-2]))), h)
    return rep


def residual_euler(phys: PhysicalSolution, gc, cut_frac=DEFAULT_CUT) -> ResidualReport:
    """Residuals of the four conservation-form balance laws on the
    recovered state, with physical derivatives from the per-cell map."""
    ch = _ChartDerivatives(phys)
    rho, u, v, p, E = phys.rho, phys.u, phys.v, phys.p, phys.E

    def div(fx, fy):
        dx = ch.grad_xy(fx)[0]
        dy = ch.grad_xy(fy)[1]
        return dx + dy

    res = {
        "mass": div(rho * u, rho * v),
        "momentum_x": div(rho * u * u + p, rho * u * v),
        "momentum_y": div(rho * u * v, rho * v * v + p),
        "energy": div(rho * E * u + p * u, rho * E * v + p * v),
    }
    keep = _cut_mask(phys.t, cut_frac)
    h = max(float(phys.t[1] - phys.t[0]), float(phys.r[1] - phys.r[0]))
    rep = ResidualReport("euler")
    for key, arr in res.items():
        rep.entries[key] = ResidualEntry(_masked_max(arr, keep), h)
        rep.details[key + "_full"] = float(np.max(np.abs(arr[1:])))
    return rep


def residual_tricomi_integral(field: TricomiField, prob: TricomiProblem) -> ResidualReport:
    """Fixed-point residual of the linear model problem: per-component max
    of |T(F) - F| on the nodes (quadrature-exactness check)."""
    mapped = apply_T_tricomi(field, prob)
    h = prob.ht
    rep = ResidualReport("tricomi_integral")
    rep.entries["R"] = ResidualEntry(float(np.max(np.abs(mapped.R - field.R))), h)
    rep.entries["S"] = ResidualEntry(float(np.max(np.abs(mapped.S - field.S))), h)
    rep.entries["W"] = ResidualEntry(float(np.max(np.abs(mapped.W - field.W))), h)
    return rep
