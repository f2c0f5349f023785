"""Degenerate Goursat solver for y u_xx + u_yy = 0 below the line y = 0.

With t = sqrt(-y) and the Riemann-type variables built from
u_y +- t u_x, the problem becomes a first-order system whose flat error
parts (R, S, W) vanish quadratically at t = 0 and satisfy

    R_t + 2 t^2 R_x = (R - S)/(2t) - 2 t^2 (u1' + u0'' t)
    S_t - 2 t^2 S_x = (S - R)/(2t) + 2 t^2 (u1' - u0'' t)
    W_t - 2 t^2 W_x = -2 t (R + u1)

on the cusp region x1 + (2/3) t^3 <= x <= x2 - (2/3) t^3.  The
characteristics are the exact cubics x(t) = +-(2/3) t^3 + const, so one
sweep of the iteration mapping is a pure quadrature along known paths.
This linear problem exercises every ingredient of the nonlinear solver
(weighted metric, flat seeds, Simpson sweeps, spline transfer) against
closed-form solutions.

W is defined as the error of u itself against u0(x); substituting
u = W + u0 back into the first-order system reproduces the three
equations above and gives the zero trace W(x, 0) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GridMismatch, NoContraction
from .kernels import Fn1D, UniformSpline, weight_matrix
from .hodograph import IterationReport


def closure_extent(x1, x2):
    """Largest admissible t-extent: the cusp characteristics from the two
    interval ends meet at t = (3 (x2 - x1) / 4) ** (1/3)."""
    return (0.75 * (x2 - x1)) ** (1.0 / 3.0)


@dataclass
class TricomiProblem:
    """Boundary data u(x, 0) = u0, u_y(x, 0) = u1 and grid resolution."""

    x1: float
    x2: float
    u0: Fn1D
    u1: Fn1D
    delta: float
    nt: int = 64
    nr: int = 129

    def __post_init__(self):
        if not self.x2 > self.x1:
            raise DomainError("need x2 > x1")
        if self.nt < 4 or self.nr < 8:
            raise DomainError("need nt >= 4 and nr >= 8")
        dmax = closure_extent(self.x1, self.x2)
        if not 0.0 < self.delta <= dmax + 1e-12:
            raise DomainError(
                f"delta = {self.delta} outside (0, {dmax:.6g}]; the domain "
                "closes at the characteristic intersection")
        self.t_levels = self.delta * np.arange(self.nt + 1) / self.nt
        self.ht = self.delta / self.nt
        cub = (2.0 / 3.0) * self.t_levels ** 3
        self.x_lo = self.x1 + cub
        self.x_span = (self.x2 - cub) - self.x_lo
        self.x_nodes = self.x_lo[:, None] + self.x_span[:, None] * \
            (np.arange(self.nr) / (self.nr - 1))[None, :]
        self.weight_mat = weight_matrix(self.nt)

    def K_data(self):
        """Data constant 1 + |u1|_C3 + delta * |u0|_C4 used for the
        empirical flatness bound M = 10 K."""
        return 1.0 + self.u1.c_norm(3) + self.delta * self.u0.c_norm(4)


@dataclass
class TricomiField:
    """Flat error fields on the cusp grid; zero on the row t = 0."""

    prob: TricomiProblem
    R: np.ndarray
    S: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        shape = (self.prob.nt + 1, self.prob.nr)
        for name in ("R", "S", "W"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise GridMismatch(f"{name} has shape {arr.shape}, grid wants {shape}")
            setattr(self, name, arr)

    @classmethod
    def zeros(cls, prob):
        shape = (prob.nt + 1, prob.nr)
        return cls(prob, np.zeros(shape), np.zeros(shape), np.zeros(shape))

    def weighted_norm(self):
        t = self.prob.t_levels[1:, None]
        return float(np.max((np.abs(self.R[1:]) + np.abs(self.S[1:])
                             + np.abs(self.W[1:])) / (t * t)))


def tricomi_distance(A: TricomiField, B: TricomiField):
    if A.prob is not B.prob and not np.array_equal(A.prob.x_nodes, B.prob.x_nodes):
        raise GridMismatch("fields live on different grids")
    t = A.prob.t_levels[1:, None]
    t2 = t * t
    return float(np.max(np.abs(A.R[1:] - B.R[1:]) / t2)
                 + np.max(np.abs(A.S[1:] - B.S[1:]) / t2)
                 + np.max(np.abs(A.W[1:] - B.W[1:]) / t2))


def tricomi_characteristics(eta, xi):
    """Exact cubic characteristics through (eta, xi): x_plus, x_minus.

    x_pm(t) = +-(2/3) t^3 + eta -+ (2/3) xi^3, anchored so that
    x_pm(xi) = eta.  No ODE solve is involved.
    """
    c = (2.0 / 3.0) * xi ** 3

    def x_plus(t):
        t = np.asarray(t, dtype=float)
        out = (2.0 / 3.0) * t ** 3 + eta - c
        return out if out.ndim else float(out)

    def x_minus(t):
        t = np.asarray(t, dtype=float)
        out = -(2.0 / 3.0) * t ** 3 + eta + c
        return out if out.ndim else float(out)

    return x_plus, x_minus


def apply_T_tricomi(fieldin: TricomiField, prob: TricomiProblem) -> TricomiField:
    """One sweep: Simpson quadrature of the frozen sources along the exact
    characteristics, for every grid node at once.

    (r - s)/(2t) is formed as t * [(r - s)/t^2] / 2 from the stored
    weighted difference, which is continuous with value 0 at t = 0.
    """
    nt, nr = prob.nt, prob.nr
    t_lev = prob.t_levels
    Wmat = prob.weight_mat
    dr = prob.x_span / (nr - 1)

    t2 = t_lev[1:, None] ** 2
    wdiff = np.zeros_like(fieldin.R)
    wdiff[1:] = (fieldin.R[1:] - fieldin.S[1:]) / t2
    spl_r = [UniformSpline(prob.x_lo[j], dr[j], fieldin.R[j]) for j in range(nt + 1)]
    spl_d = [UniformSpline(prob.x_lo[j], dr[j], wdiff[j]) for j in range(nt + 1)]

    x_flat = prob.x_nodes.reshape(-1)
    tj = np.repeat(np.arange(nt + 1), nr)
    xi3 = (2.0 / 3.0) * t_lev[tj] ** 3
    shift_p = x_flat - xi3
    shift_m = x_flat + xi3

    acc_R = np.zeros_like(x_flat)
    acc_S = np.zeros_like(x_flat)
    acc_W = np.zeros_like(x_flat)
    u0, u1 = prob.u0, prob.u1
    for i in range(1, nt + 1):
        sel = slice(i * nr, None)
        ti = t_lev[i]
        cub = (2.0 / 3.0) * ti ** 3
        XP = cub + shift_p[sel]
        XM = -cub + shift_m[sel]
        w = Wmat[tj[sel], i]
        half_rs_p = 0.5 * ti * spl_d[i](XP)
        half_rs_m = 0.5 * ti * spl_d[i](XM)
        acc_R[sel] += w * (half_rs_p - 2.0 * ti * ti * (u1(XP, 1) + u0(XP, 2) * ti))
        acc_S[sel] += w * (-half_rs_m + 2.0 * ti * ti * (u1(XM, 1) - u0(XM, 2) * ti))
        acc_W[sel] += w * (-2.0 * ti * (spl_r[i](XM) + u1(XM)))

    h = prob.ht
    R = (h * acc_R).reshape(nt + 1, nr)
    S = (h * acc_S).reshape(nt + 1, nr)
    W = (h * acc_W).reshape(nt + 1, nr)
    R[0] = S[0] = W[0] = 0.0
    return TricomiField(prob, R, S, W)


def solve_tricomi(prob: TricomiProblem, tol=1e-10, max_iter=100):
    """Fixed-point iteration from the zero seed in the weighted metric.

    Returns (field, IterationReport).  The mapping is affine, so the
    recorded ratios settle to the contraction factor of its linear part.
    """
    K = prob.K_data()
    report = IterationReport(delta=prob.delta, delta_history=[prob.delta],
                             K_est=K, M_est=10.0 * K, delta_proof=min(0.5, prob.delta))
    fields = TricomiField.zeros(prob)
    for sweep in range(1, max_iter + 1):
        new = apply_T_tricomi(fields, prob)
        d = tricomi_distance(new, fields)
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
            raise NoContraction(
                f"ratios {report.ratios[-3:]} >= 1 at delta = {prob.delta}")
    report.within_M_bound = report.max_weighted_norm <= report.M_est
    if not report.converged:
        report.message = (f"max_iter = {max_iter} reached with "
                          f"d = {report.distances[-1]:.3e}")
    return fields, report


@dataclass
class TricomiSolution:
    """Recovered second-order solution sampled on the mapped grid."""

    prob: TricomiProblem
    t: np.ndarray        # (nt+1,)
    y: np.ndarray        # (nt+1,), y = -t^2
    x: np.ndarray        # (nt+1, nr)
    u: np.ndarray
    Rbar: np.ndarray     # u_y + sqrt(-y) u_x reconstruction
    Sbar: np.ndarray     # u_y - sqrt(-y) u_x reconstruction
    field: TricomiField


def recover_u(field: TricomiField, prob: TricomiProblem) -> TricomiSolution:
    """Map the flat errors back to u(x, y) on y = -t^2.

    u = W + u0(x); the first-order reconstructions add back the boundary
    Taylor parts: Rbar = R + u1 + u0' t, Sbar = S + u1 - u0' t.
    """
    x = prob.x_nodes
    t = prob.t_levels[:, None]
    u0x = prob.u0(x)
    du0 = prob.u0(x, 1)
    u1x = prob.u1(x)
    return TricomiSolution(
        prob=prob,
        t=prob.t_levels.copy(),
        y=-prob.t_levels ** 2,
        x=x.copy(),
        u=field.W + u0x,
        Rbar=field.R + u1x + du0 * t,
        Sbar=field.S + u1x - du0 * t,
        field=field,
    )


def u_interpolator(field: TricomiField, prob: TricomiProblem):
    """Continuous u(x, t) from level splines of W + u0, linear in t through
    the normalized lateral coordinate."""
    nt, nr = prob.nt, prob.nr
    dr = prob.x_span / (nr - 1)
    vals = field.W + prob.u0(prob.x_nodes)
    spl = [UniformSpline(prob.x_lo[j], dr[j], vals[j]) for j in range(nt + 1)]

    def at(t, x):
        x = np.asarray(x, dtype=float)
        if t <= 0.0:
            return spl[0](x)
        m = min(int(t / prob.ht), nt - 1)
        frac = (t - prob.t_levels[m]) / prob.ht
        cub = (2.0 / 3.0) * t ** 3
        lo = prob.x1 + cub
        span = (prob.x2 - cub) - lo
        s = (x - lo) / span
        xm = prob.x_lo[m] + s * prob.x_span[m]
        xm1 = prob.x_lo[m + 1] + s * prob.x_span[m + 1]
        return (1.0 - frac) * spl[m](xm) + frac * spl[m + 1](xm1)

    return at


# ----------------------------------------------------------------------
# Built-in cases with closed-form references


@dataclass
class TricomiCase:
    name: str
    prob: TricomiProblem
    exact: dict | None   # callables R(x,t), S(x,t), W(x,t), u(x,y); None if custom


def make_case(name, x1=0.0, x2=1.0, delta=0.4, nt=64, nr=129,
              u0=None, u1=None) -> TricomiCase:
    """Built-in verification cases 'exact1', 'exact2', 'zero', or 'custom'
    with user polynomials."""
    if name == "exact1":
        # u = 3 x^2 - y^3
        prob = TricomiProblem(x1, x2, Fn1D.from_poly([0, 0, 3], x1, x2),
                              Fn1D.from_poly([0], x1, x2), delta, nt, nr)
        exact = {
            "R": lambda x, t: -3.0 * t ** 4 + 0.0 * x,
            "S": lambda x, t: -3.0 * t ** 4 + 0.0 * x,
            "W": lambda x, t: t ** 6 + 0.0 * x,
            "u": lambda x, y: 3.0 * x ** 2 - y ** 3,
        }
    elif name == "exact2":
        # u = x^2 y - y^4 / 6
        prob = TricomiProblem(x1, x2, Fn1D.from_poly([0], x1, x2),
                              Fn1D.from_poly([0, 0, 1], x1, x2), delta, nt, nr)
        exact = {
            "R": lambda x, t: (2.0 / 3.0) * t ** 6 - 2.0 * x * t ** 3,
            "S": lambda x, t: (2.0 / 3.0) * t ** 6 + 2.0 * x * t ** 3,
            "W": lambda x, t: -x ** 2 * t ** 2 - t ** 8 / 6.0,
            "u": lambda x, y: x ** 2 * y - y ** 4 / 6.0,
        }
    elif name == "zero":
        prob = TricomiProblem(x1, x2, Fn1D.from_poly([0], x1, x2),
                              Fn1D.from_poly([0], x1, x2), delta, nt, nr)
        exact = {
            "R": lambda x, t: 0.0 * x * t,
            "S": lambda x, t: 0.0 * x * t,
            "W": lambda x, t: 0.0 * x * t,
            "u": lambda x, y: 0.0 * x * y,
        }
    elif name == "custom":
        if u0 is None or u1 is None:
            raise DomainError("custom case needs u0 and u1")
        prob = TricomiProblem(x1, x2, u0, u1, delta, nt, nr)
        exact = None
    else:
        raise DomainError(f"unknown case '{name}'")
    return TricomiCase(name=name, prob=prob, exact=exact)


def max_node_errors(field: TricomiField, case: TricomiCase):
    """Max abs deviation of (R, S, W) from the case reference, per field."""
    if case.exact is None:
        raise DomainError("case has no reference solution")
    prob = case.prob
    x = prob.x_nodes
    t = prob.t_levels[:, None]
    return {
        "R": float(np.max(np.abs(field.R - case.exact["R"](x, t)))),
        "S": float(np.max(np.abs(field.S - case.exact["S"](x, t)))),
        "W": float(np.max(np.abs(field.W - case.exact["W"](x, t)))),
    }
