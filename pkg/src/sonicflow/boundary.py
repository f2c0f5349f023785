"""Sonic-curve boundary data: admissibility checks and derived functions.

The input is a curve y = phi(x) on [x1, x2] carrying primitive gas data
(rho, u, v, p) that is exactly sonic: gamma*p = rho*(u^2 + v^2).  From it
we derive the entropy and Bernoulli traces, the flow angle theta and its
monotone inverse x = xbar(r), and the three functions a0(r), a1(r), H0(r)
that drive the degenerate hyperbolic solver on the (t, r) half-plane.

Sign conventions (all enforced, with margins reported):
    p' <= 0,  theta' < 0,  cos(theta)*phi' - sin(theta) > 0,
    cos(theta) + sin(theta)*phi' > 0
and consequently a0 < 0, a1 < 0, H0 >= 0 on [r1, r2].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (DomainError, GeometryViolation, InversionFailure,
                     MarginFailure, MonotonicityViolation, NonSonicData,
                     PressureViolation)
from .kernels import Fn1D, invert_decreasing

STRICT_MARGIN = 1e-8       # strict inequalities must clear this
SONIC_RTOL = 1e-10         # relative tolerance of the sonic identity
ROUNDOFF_SLACK = 1e-12     # slack for '<=' conditions on tabulated data


@dataclass(frozen=True)
class GasConstants:
    """Polytropic gas constants derived from the adiabatic exponent."""

    gamma: float

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise DomainError(f"gamma must exceed 1, got {self.gamma}")

    @property
    def kappa(self):
        return 0.5 * (self.gamma - 1.0)

    @property
    def G0(self):
        # value of the degeneracy weight G at the sonic line t = 0
        k = self.kappa
        return (k + 1.0) ** (-(k + 1.0) / (2.0 * k))


@dataclass
class SonicBoundaryData:
    """Curve phi and primitive data (rho, u, v, p) on [x1, x2].

    Each function is an Fn1D (polynomial or uniform table) providing
    derivatives up to order 4.  n_samples controls the resolution at
    which conditions are checked and derived functions are tabulated.
    """

    x1: float
    x2: float
    phi: Fn1D
    rho: Fn1D
    u: Fn1D
    v: Fn1D
    p: Fn1D
    n_samples: int = 257

    def __post_init__(self):
        if not self.x2 > self.x1:
            raise DomainError("need x2 > x1")
        if self.n_samples < 5:
            raise DomainError("need at least 5 samples")

    @property
    def x(self):
        return np.linspace(self.x1, self.x2, self.n_samples)


@dataclass
class ConditionCheck:
    name: str
    margin: float        # positive = satisfied, worst case over samples
    passed: bool
    worst_x: float

    def as_dict(self):
        return {"name": self.name, "margin": self.margin,
                "passed": self.passed, "worst_x": self.worst_x}


@dataclass
class ValidationReport:
    conditions: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.conditions)

    def add(self, name, margins, x, strict):
        """Record the worst sample of one condition; margins >= 0 pass."""
        i = int(np.argmin(margins))
        threshold = STRICT_MARGIN if strict else -ROUNDOFF_SLACK
        self.conditions.append(ConditionCheck(
            name, float(margins[i]), bool(margins[i] >= threshold), float(x[i])))
        return self.conditions[-1]

    def as_dict(self):
        return {"passed": self.passed,
                "conditions": [c.as_dict() for c in self.conditions]}


def _flow_angle(data: SonicBoundaryData):
    """theta = atan2(v, u) unwrapped, and theta' from the quotient rule."""
    x = data.x
    u, du = data.u(x), data.u(x, 1)
    v, dv = data.v(x), data.v(x, 1)
    q2 = u * u + v * v
    if np.any(q2 <= 0):
        raise NonSonicData("flow speed vanishes on the curve")
    theta = np.unwrap(np.arctan2(v, u))
    dtheta = (u * dv - v * du) / q2
    return theta, dtheta


def validate_boundary(data: SonicBoundaryData, gc: GasConstants,
                      raise_on_fail=True) -> ValidationReport:
    """Check every admissibility condition and report worst-case margins.

    Raises the specific violation (NonSonicData, PressureViolation,
    MonotonicityViolation, GeometryViolation) unless raise_on_fail is
    False, in which case the failing report is returned.
    """
    x = data.x
    rho, p = data.rho(x), data.p(x)
    u, v = data.u(x), data.v(x)
    dp = data.p(x, 1)
    dphi = data.phi(x, 1)

    report = ValidationReport()
    report.add("rho > 0", rho, x, strict=True)
    report.add("p > 0", p, x, strict=True)

    q2 = u * u + v * v
    scale = np.maximum(gc.gamma * p, 1e-300)
    sonic_err = np.abs(gc.gamma * p - rho * q2) / scale
    report.add("sonic identity |gamma*p - rho*q^2| / (gamma*p) <= 1e-10",
               SONIC_RTOL - sonic_err, x, strict=False)

    theta, dtheta = _flow_angle(data)
    report.add("p' <= 0", -dp, x, strict=False)
    report.add("theta' < 0", -dtheta, x, strict=True)
    report.add("cos(theta)*phi' - sin(theta) > 0",
               np.cos(theta) * dphi - np.sin(theta), x, strict=True)
    report.add("cos(theta) + sin(theta)*phi' > 0",
               np.cos(theta) + np.sin(theta) * dphi, x, strict=True)

    if raise_on_fail and not report.passed:
        errors = {
            0: NonSonicData, 1: NonSonicData, 2: NonSonicData,
            3: PressureViolation, 4: MonotonicityViolation,
            5: GeometryViolation, 6: GeometryViolation,
        }
        for i, cond in enumerate(report.conditions):
            if not cond.passed:
                exc = errors[i](f"{cond.name} fails: margin {cond.margin:.3e} "
                                f"at x = {cond.worst_x:.6g}")
                exc.report = report
                raise exc
    return report


@dataclass
class DerivedBoundary:
    """Entropy, Bernoulli, flow angle and solver coefficients, sampled in x."""

    x: np.ndarray
    S_hat: np.ndarray
    B_hat: np.ndarray
    theta_hat: np.ndarray
    dtheta_hat: np.ndarray
    H_hat: np.ndarray
    a0_tilde: np.ndarray
    a1_tilde: np.ndarray
    data: SonicBoundaryData
    gc: GasConstants


def derive_boundary(data: SonicBoundaryData, gc: GasConstants) -> DerivedBoundary:
    """Evaluate the derived boundary functions on the sample grid.

    S = p*rho^-gamma, B = q^2/2 + gamma*p/((gamma-1)*rho), and the
    closed-form trace of the entropy-Bernoulli gradient
        H = -((gamma+1)/2)^((gamma+1)/(2(gamma-1)))
            * p' / (2*gamma*p*(cos(theta)*phi' - sin(theta))),
    together with
        a0 = theta' / (2*(cos(theta) + phi'*sin(theta)))
        a1 = (sin(theta) - phi'*cos(theta)) / (cos(theta) + phi'*sin(theta))
             * (-a0 + G0*H).
    """
    g = gc.gamma
    x = data.x
    rho, p = data.rho(x), data.p(x)
    u, v = data.u(x), data.v(x)
    dp = data.p(x, 1)
    dphi = data.phi(x, 1)
    theta, dtheta = _flow_angle(data)

    S_hat = p * rho ** (-g)
    B_hat = 0.5 * (u * u + v * v) + g / (g - 1.0) * p / rho

    cross = np.cos(theta) * dphi - np.sin(theta)   # cos(theta)*phi' - sin(theta)
    along = np.cos(theta) + np.sin(theta) * dphi   # cos(theta) + sin(theta)*phi'
    if np.any(cross <= 0) or np.any(along <= 0):
        raise DomainError("trigonometric denominators not positive; "
                          "run validate_boundary first")

    amp = ((g + 1.0) / 2.0) ** ((g + 1.0) / (2.0 * (g - 1.0)))
    H_hat = -amp * dp / (2.0 * g * p * cross)
    a0 = dtheta / (2.0 * along)
    a1 = ((np.sin(theta) - dphi * np.cos(theta)) / along) * (-a0 + gc.G0 * H_hat)

    return DerivedBoundary(x=x, S_hat=S_hat, B_hat=B_hat, theta_hat=theta,
                           dtheta_hat=dtheta, H_hat=H_hat, a0_tilde=a0,
                           a1_tilde=a1, data=data, gc=gc)


def hat_H_from_transport(db: DerivedBoundary) -> np.ndarray:
    """Independent route to H via the gradient of S/B^gamma along the curve.

    Used as a consistency check against the closed form in
    derive_boundary; the two agree to the accuracy of the S', B' samples.
    """
    g = db.gc.gamma
    data, x = db.data, db.x
    rho, p = data.rho(x), data.p(x)
    drho, dp = data.rho(x, 1), data.p(x, 1)
    u, du = data.u(x), data.u(x, 1)
    v, dv = data.v(x), data.v(x, 1)
    dphi = data.phi(x, 1)
    theta = db.theta_hat

    dS = dp * rho ** (-g) - g * p * rho ** (-g - 1.0) * drho
    dB = u * du + v * dv + g / (g - 1.0) * (dp * rho - p * drho) / rho ** 2
    ratio = db.S_hat / db.B_hat ** g
    dratio = dS / db.B_hat ** g - g * ratio * dB / db.B_hat

    cross = np.cos(theta) * dphi - np.sin(theta)
    grad_along_plus = dratio / cross
    amp = ((g + 1.0) / 2.0) ** ((g + 1.0) / (2.0 * (g - 1.0)))
    return (amp / (2.0 * g * (g - 1.0))) * (db.B_hat ** g / db.S_hat) * grad_along_plus


@dataclass
class HodographBoundary:
    """Boundary functions of the flow angle r on [r1, r2] plus margins.

    a0, a1 are the value and slope traces of the degenerate system's
    unknowns at t = 0; H0 is the entropy-gradient trace; S0, B0 feed the
    transport recovery; x_bar/y_bar anchor the inverse map on the curve.
    """

    r1: float
    r2: float
    a0: Fn1D
    a1: Fn1D
    H0: Fn1D
    S0: Fn1D
    B0: Fn1D
    x_bar: Fn1D
    y_bar: Fn1D
    eps0: float
    gc: GasConstants

    @classmethod
    def from_functions(cls, r1, r2, a0, a1, H0, gc, S0=None, B0=None,
                       x_bar=None, y_bar=None, eps0=None, n=257):
        """Assemble directly from callables or constants (test helper)."""
        def fn(obj, default):
            if obj is None:
                return Fn1D.constant(default, r1, r2)
            if isinstance(obj, Fn1D):
                return obj
            if np.isscalar(obj):
                return Fn1D.constant(float(obj), r1, r2)
            return Fn1D.from_callable(obj, r1, r2, n)
        a0f, a1f, H0f = fn(a0, 0.0), fn(a1, 0.0), fn(H0, 0.0)
        if eps0 is None:
            r = np.linspace(r1, r2, n)
            eps0 = 0.99 * float(min(np.min(np.abs(a0f(r))), np.min(np.abs(a1f(r)))))
        return cls(r1=r1, r2=r2, a0=a0f, a1=a1f, H0=H0f,
                   S0=fn(S0, 1.0), B0=fn(B0, 1.0),
                   x_bar=fn(x_bar, 0.0), y_bar=fn(y_bar, 0.0),
                   eps0=float(eps0), gc=gc)


def to_hodograph(db: DerivedBoundary, n_samples=None) -> HodographBoundary:
    """Re-parametrize the derived boundary by the flow angle r.

    The inverse x = xbar(r) of theta is computed per node by bisection
    plus Newton to 1e-12; every derived function is then tabulated on a
    uniform r-grid.  eps0 is 0.99 times the sampled minimum of
    (-a0, -a1) to guard interpolation undershoot.
    """
    if np.any(-db.dtheta_hat < STRICT_MARGIN):
        raise InversionFailure("theta is not strictly decreasing; "
                               "cannot invert the flow angle")
    if n_samples is None:
        n_samples = db.x.size
    data = db.data

    # invert the tabulated angle through its spline; node values are exact
    th = Fn1D.from_table(db.x, db.theta_hat)

    def f(xx):
        return float(th(xx))

    def df(xx):
        return float(th(xx, 1))

    r1 = float(db.theta_hat[-1])
    r2 = float(db.theta_hat[0])
    r = np.linspace(r1, r2, n_samples)
    xbar = np.empty_like(r)
    xbar[0], xbar[-1] = db.x[-1], db.x[0]
    for i in range(1, n_samples - 1):
        xbar[i] = invert_decreasing(f, df, r[i], data.x1, data.x2)
    if np.any(np.diff(xbar) >= 0):
        raise InversionFailure("inverse of theta is not strictly decreasing")

    def resample(values):
        tab = Fn1D.from_table(db.x, values)
        return Fn1D.from_table(r, tab(xbar))

    a0 = resample(db.a0_tilde)
    a1 = resample(db.a1_tilde)
    H0 = resample(db.H_hat)
    S0 = resample(db.S_hat)
    B0 = resample(db.B_hat)
    xb = Fn1D.from_table(r, xbar)
    yb = Fn1D.from_table(r, data.phi(xbar))

    eps0 = 0.99 * float(min(np.min(-a0(r)), np.min(-a1(r))))
    if eps0 <= 0.0:
        raise MarginFailure(f"no positive margin for a0, a1 (eps0 = {eps0:.3e})")
    return HodographBoundary(r1=r1, r2=r2, a0=a0, a1=a1, H0=H0, S0=S0, B0=B0,
                             x_bar=xb, y_bar=yb, eps0=eps0, gc=db.gc)
