"""Gas and viscosity laws, active-potential coefficients and the explicit
a priori constants for the regularized barotropic system.

Pressure is ``p(rho) = rho**gamma`` and the degenerate viscosity
``mu(rho) = rho**alpha`` is replaced by

    mu_eps(rho) = max(rho**alpha, eps * rho**alpha_star),
    alpha_star  = min(alpha, 1/2) / 2.

All functions accept scalars or numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class GasModel:
    """Exponents of the pressure and viscosity laws.

    Construction enforces ``gamma > 1``, ``alpha > 0`` and
    ``alpha <= gamma <= alpha + 1``.
    """

    gamma: float
    alpha: float
    alpha_star: float = field(init=False)
    theta: float = field(init=False)

    def __post_init__(self):
        g, a = float(self.gamma), float(self.alpha)
        if not (math.isfinite(g) and math.isfinite(a)):
            raise DomainError(f"non-finite exponents gamma={g}, alpha={a}")
        if g <= 1.0:
            raise DomainError(f"gamma must exceed 1, got {g}")
        if a <= 0.0:
            raise DomainError(f"alpha must be positive, got {a}")
        if not (a <= g <= a + 1.0):
            raise DomainError(f"need alpha <= gamma <= alpha + 1, got gamma={g}, alpha={a}")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "alpha", a)
        a_star = 0.5 * min(a, 0.5)
        object.__setattr__(self, "alpha_star", a_star)
        object.__setattr__(self, "theta", g / (a - a_star))

    @property
    def deregularization_exponent(self):
        """Exponent ``1/(alpha - alpha_star)``: mu_eps = mu iff rho >= eps**this."""
        return 1.0 / (self.alpha - self.alpha_star)

    def to_dict(self):
        return {"gamma": self.gamma, "alpha": self.alpha}


def _check_eps(eps):
    if not (0.0 < eps < 1.0):
        raise DomainError(f"eps must lie in (0, 1), got {eps}")


def _as_density(rho, strict):
    r = np.asarray(rho, dtype=float)
    bad = ~(r > 0.0) if strict else ~(r >= 0.0)
    if np.any(bad):
        kind = "positive" if strict else "nonnegative"
        raise DomainError(f"density must be {kind}, got min {np.min(r)!r}")
    return r


def _out(value, like):
    return float(value) if np.ndim(like) == 0 else value


def pressure(model, rho):
    r = _as_density(rho, strict=False)
    return _out(r ** model.gamma, rho)


def pressure_deriv(model, rho):
    r = _as_density(rho, strict=False)
    return _out(model.gamma * r ** (model.gamma - 1.0), rho)


def mu(model, rho):
    """Unregularized viscosity ``rho**alpha``."""
    r = _as_density(rho, strict=False)
    return _out(r ** model.alpha, rho)


def mu_eps(model, eps, rho):
    _check_eps(eps)
    r = _as_density(rho, strict=False)
    return _out(np.maximum(r ** model.alpha, eps * r ** model.alpha_star), rho)


def mu_branch(model, eps, rho):
    """True where the physical branch ``rho**alpha`` attains the max (ties included)."""
    _check_eps(eps)
    r = _as_density(rho, strict=False)
    return r ** model.alpha >= eps * r ** model.alpha_star


def mu_eps_deriv(model, eps, rho):
    """Derivative of ``mu_eps``; at the kink the physical-branch slope is used."""
    _check_eps(eps)
    r = _as_density(rho, strict=True)
    a, s = model.alpha, model.alpha_star
    on_mu = r ** a >= eps * r ** s
    d = np.where(on_mu, a * r ** (a - 1.0), eps * s * r ** (s - 1.0))
    return _out(d, rho)


def _pieces(model, eps, rho):
    r = _as_density(rho, strict=True)
    m = np.asarray(mu_eps(model, eps, r))
    dm = np.asarray(mu_eps_deriv(model, eps, r))
    p = r ** model.gamma
    dp = model.gamma * r ** (model.gamma - 1.0)
    return r, m, r * dm + m, p, dp


def coefficients_f(model, eps, rho):
    """Coefficients of the active-potential equation

        dw/dt = (mu/rho) w_xx - (u + mu rho_x / rho**2) w_x + f1 w - f2 w**2 + f3.
    """
    r, m, s, p, dp = _pieces(model, eps, rho)
    f2 = s / m**2
    f1 = r * dp / m - 2.0 * p * f2
    f3 = (r * dp / m - p * f2) * p
    return _out(f1, rho), _out(f2, rho), _out(f3, rho)


def j_coefficients(model, eps, rho):
    """Drift and forcing of the comparison ODE ``w_M' <= J1 w_M + J2``."""
    r, m, s, p, _ = _pieces(model, eps, rho)
    g = model.gamma
    j1 = p / m**2 * (g * m - 2.0 * s)
    j2 = p * p / m**2 * (g * m - s)
    return _out(j1, rho), _out(j2, rho)


def velocity_gradient_identity(model, eps, rho, w):
    """Recover ``u_x`` from density and active potential: ``(w + p) / mu_eps``."""
    r = _as_density(rho, strict=True)
    val = (np.asarray(w, dtype=float) + r ** model.gamma) / np.asarray(mu_eps(model, eps, r))
    return _out(val, rho) if np.ndim(w) == 0 else val


def active_potential_pointwise(model, eps, rho, dudx):
    """``w = -p(rho) + mu_eps(rho) * u_x`` for given gradient values."""
    r = _as_density(rho, strict=False)
    val = -(r ** model.gamma) + np.asarray(mu_eps(model, eps, r)) * np.asarray(dudx, dtype=float)
    return _out(val, rho) if np.ndim(dudx) == 0 else val


@dataclass(frozen=True)
class TheoryBounds:
    horizon_T: float
    kappa0_lower: float
    eps_gamma: float
    C_gamma: float
    q_of_gamma: float
    delta_1: float
    kappa_T: float
    delta_T: float
    theta: float

    def w_bound(self, eps):
        """Upper bound ``C_gamma * eps**theta`` on the active potential."""
        return self.C_gamma * eps**self.theta

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def potential_bound_constants(model, T):
    """``(eps_gamma, C_gamma)`` such that ``w <= C_gamma eps**theta`` for ``eps <= eps_gamma``."""
    if not (T > 0.0 and math.isfinite(T)):
        raise DomainError(f"horizon T must be positive, got {T}")
    g, a, s = model.gamma, model.alpha, model.alpha_star
    growth = math.exp(T * abs(g - 2.0 * (s + 1.0)))
    drift = T * abs(g - (s + 1.0))
    if g > a:
        return (1.0 / (1.0 + drift)) ** ((a - s) / (g - a)), 2.0 * growth
    # only eps <= 1 is imposed when gamma == alpha
    return 1.0, 2.0 * (1.0 + drift) * growth


def _pow(base, exponent):
    # terms of a minimum: overflow just means the term does not bind
    try:
        return base**exponent
    except OverflowError:
        return math.inf


def theory_bounds(model, T, kappa0_lower):
    """Closed-form constants for horizon ``T`` and initial density floor ``kappa0_lower``."""
    if not (T > 0.0 and math.isfinite(T)):
        raise DomainError(f"horizon T must be positive, got {T}")
    if not (kappa0_lower > 0.0 and math.isfinite(kappa0_lower)):
        raise DomainError(f"kappa0_lower must be positive, got {kappa0_lower}")
    g, a, s, th = model.gamma, model.alpha, model.alpha_star, model.theta
    eps_gamma, C_gamma = potential_bound_constants(model, T)

    if g > a:
        q = th
        delta_1 = min(
            eps_gamma,
            (kappa0_lower / 4.0) ** (a - s),
            _pow((2.0**a - 1.0) / (a * (2.0**g + C_gamma) * T), g / (q * (g - a))),
        )
        kappa_T = delta_1 ** (q / g)
    else:
        q = 1.0
        delta_1 = min(
            eps_gamma,
            (kappa0_lower / 4.0) ** a,
            _pow((2.0**a - 1.0) * math.exp(-a * T) / C_gamma, (a - s) / s),
        )
        kappa_T = math.exp(-T) * delta_1 ** (1.0 / a)

    delta_T = min(kappa_T ** (a - s), delta_1)
    return TheoryBounds(
        horizon_T=float(T),
        kappa0_lower=float(kappa0_lower),
        eps_gamma=eps_gamma,
        C_gamma=C_gamma,
        q_of_gamma=q,
        delta_1=delta_1,
        kappa_T=kappa_T,
        delta_T=delta_T,
        theta=th,
    )


def gronwall_closed_form(model, eps, T):
    """Right side of the explicit envelope estimate for ``w_M`` on ``[0, T]``."""
    g, a, s = model.gamma, model.alpha, model.alpha_star
    return math.exp(T * abs(g - 2.0 * (s + 1.0))) * (
        eps**model.theta + eps ** ((2.0 * g - a) / (a - s)) * T * abs(g - (s + 1.0))
    )
