"""Far-field backgrounds, admissible initial data and hypothesis checks."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betainc
from scipy.stats import beta as beta_dist

from .errors import ConstructionError, DomainError, StructuralError
from .grid import Grid1D, ddx
from .model import GasModel

FAMILIES = ("constant", "background-exact", "compressive-pulse", "expansive-pulse")

# mono-w0 is enforced with this safety factor by the pulse generators
MONO_MARGIN = 0.9
DECAY_TOL = 1e-12


@dataclass(frozen=True)
class FarFieldStates:
    rho_minus: float
    rho_plus: float
    u_minus: float = 0.0
    u_plus: float = 0.0

    def __post_init__(self):
        for name in ("rho_minus", "rho_plus"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise DomainError(f"{name} must be positive, got {v}")
        for name in ("u_minus", "u_plus"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")

    def to_dict(self):
        return {"rho_minus": self.rho_minus, "rho_plus": self.rho_plus,
                "u_minus": self.u_minus, "u_plus": self.u_plus}


@dataclass(frozen=True)
class BackgroundProfile:
    """Monotone transition between the far-field states on ``[-1, 1]``.

    The transition is ``left + (right - left) * S((x + 1) / 2)`` with ``S`` the
    degree ``2*order + 1`` smoothstep, i.e. the regularized incomplete beta
    function ``I_t(order + 1, order + 1)``. Derivatives up to ``order``
    vanish at ``x = +-1`` and the profile is exactly constant outside.
    """

    far_field: FarFieldStates
    smoothness_order: int = 4

    def _blend(self, x, left, right):
        x = np.asarray(x, dtype=float)
        n = self.smoothness_order + 1
        t = np.clip(0.5 * (x + 1.0), 0.0, 1.0)
        inner = left + (right - left) * betainc(n, n, t)
        out = np.where(x <= -1.0, left, np.where(x >= 1.0, right, inner))
        return float(out) if out.ndim == 0 else out

    def rho(self, x):
        return self._blend(x, self.far_field.rho_minus, self.far_field.rho_plus)

    def u(self, x):
        return self._blend(x, self.far_field.u_minus, self.far_field.u_plus)

    def _slope(self, x, left, right):
        x = np.asarray(x, dtype=float)
        n = self.smoothness_order + 1
        inside = (x > -1.0) & (x < 1.0)
        t = np.clip(0.5 * (x + 1.0), 0.0, 1.0)
        return np.where(inside, 0.5 * (right - left) * beta_dist.pdf(t, n, n), 0.0)

    def drho(self, x):
        return self._slope(x, self.far_field.rho_minus, self.far_field.rho_plus)

    def du(self, x):
        return self._slope(x, self.far_field.u_minus, self.far_field.u_plus)


def make_background(ff, order=4):
    if int(order) != order or order < 4:
        raise DomainError(f"smoothness order must be an integer >= 4, got {order}")
    if not isinstance(ff, FarFieldStates):
        ff = FarFieldStates(**ff)
    return BackgroundProfile(ff, int(order))


@dataclass
class InitialData:
    grid: Grid1D
    rho0: np.ndarray
    u0: np.ndarray
    background: BackgroundProfile
    kappa0_lower: float = field(init=False)
    kappa0_upper: float = field(init=False)
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rho0 = np.asarray(self.rho0, dtype=float)
        self.u0 = np.asarray(self.u0, dtype=float)
        n = self.grid.nodes
        if self.rho0.shape != (n,) or self.u0.shape != (n,):
            raise StructuralError(
                f"initial arrays must have {n} nodes, got {self.rho0.shape} and {self.u0.shape}"
            )
        self.kappa0_lower = max(float(np.min(self.rho0)), 0.0)
        self.kappa0_upper = float(np.max(self.rho0))


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    worst_index: int | None = None
    worst_x: float | None = None
    worst_value: float | None = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    kappa0_lower: float
    kappa0_upper: float

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self):
        return [c for c in self.checks if not c.passed]


def mono_w0_excess(model, grid, rho0, u0):
    """Pointwise ``u0_x - rho0**(gamma - alpha)`` with the solver stencil."""
    return ddx(u0, grid.dx) - np.asarray(rho0) ** (model.gamma - model.alpha)


def validate_initial(model: GasModel, data: InitialData, check_mono=True) -> ValidationReport:
    grid, x = data.grid, data.grid.x
    rho0, u0 = data.rho0, data.u0
    if rho0.shape != x.shape or u0.shape != x.shape:
        raise StructuralError("initial arrays do not match the grid")
    checks = []

    i = int(np.argmin(rho0))
    finite = bool(np.all(np.isfinite(rho0)) and np.all(np.isfinite(u0)))
    checks.append(Check(
        "positivity", bool(finite and rho0[i] > 0.0), i, float(x[i]), float(rho0[i]),
        f"kappa0_lower={data.kappa0_lower:.6g}, kappa0_upper={data.kappa0_upper:.6g}",
    ))

    bg = data.background
    dev = np.array([
        abs(rho0[0] - bg.far_field.rho_minus), abs(rho0[-1] - bg.far_field.rho_plus),
        abs(u0[0] - bg.far_field.u_minus), abs(u0[-1] - bg.far_field.u_plus),
    ])
    k = int(np.argmax(dev))
    j = 0 if k in (0, 2) else grid.nodes - 1
    checks.append(Check("decay", bool(dev[k] <= DECAY_TOL), j, float(x[j]), float(dev[k]),
                        "deviation from far-field values at the domain ends"))

    if check_mono:
        excess = mono_w0_excess(model, grid, np.maximum(rho0, 0.0), u0)
        m = int(np.argmax(excess))
        checks.append(Check("mono_w0", bool(excess[m] <= 0.0), m, float(x[m]), float(excess[m]),
                            "max of u0_x - rho0^(gamma-alpha)"))
    return ValidationReport(tuple(checks), data.kappa0_lower, data.kappa0_upper)


def _pulse_shape(x, center, width):
    z = (x - center) / width
    out = z * np.exp(-z * z)
    # end nodes carry the far-field values exactly
    out[0] = out[-1] = 0.0
    return out


def _bump(x, center, width):
    z = (x - center) / width
    out = np.exp(-z * z)
    out[0] = out[-1] = 0.0
    return out


def _pin_ends(data_rho, data_u, ff):
    data_rho[0], data_rho[-1] = ff.rho_minus, ff.rho_plus
    data_u[0], data_u[-1] = ff.u_minus, ff.u_plus


def make_initial_family(name, model, grid, far_field=None, *, order=4, rho=1.0, u=0.0,
                        velocity_amplitude=1.0, rho_amplitude=0.0, width=0.5, center=0.0,
                        enforce_mono=True) -> InitialData:
    """Build one of the test-data families.

    ``constant`` uses ``rho``/``u``; the others take ``far_field``. Pulse
    families superpose a density bump of ``rho_amplitude`` and a velocity
    pulse ``-+velocity_amplitude * z exp(-z^2)`` (``z = (x - center)/width``).
    With ``enforce_mono`` the velocity amplitude is reduced until
    ``max u0_x <= 0.9 * min rho0**(gamma - alpha)``.
    """
    if name not in FAMILIES:
        raise DomainError(f"unknown initial-data family {name!r}; expected one of {FAMILIES}")
    x = grid.x
    params = {"order": order}
    if name == "constant":
        ff = FarFieldStates(rho, rho, u, u)
        params.update(rho=rho, u=u)
    else:
        if far_field is None:
            raise DomainError(f"family {name!r} requires far_field states")
        ff = far_field if isinstance(far_field, FarFieldStates) else FarFieldStates(**far_field)
    bg = make_background(ff, order)
    rho0 = np.asarray(bg.rho(x), dtype=float).copy()
    u0 = np.asarray(bg.u(x), dtype=float).copy()

    if name in ("compressive-pulse", "expansive-pulse"):
        if not (width > 0.0):
            raise DomainError(f"pulse width must be positive, got {width}")
        if velocity_amplitude < 0.0:
            raise DomainError("velocity_amplitude must be nonnegative")
        rho0 = rho0 + rho_amplitude * _bump(x, center, width)
        if np.any(rho0 <= 0.0):
            raise ConstructionError("density bump makes rho0 nonpositive", 0.0)
        sign = -1.0 if name == "compressive-pulse" else 1.0
        shape = sign * _pulse_shape(x, center, width)
        amp = velocity_amplitude
        if enforce_mono:
            amp = _limit_amplitude(model, grid, rho0, u0, shape, velocity_amplitude)
        u0 = u0 + amp * shape
        params.update(velocity_amplitude=velocity_amplitude, effective_amplitude=amp,
                      rho_amplitude=rho_amplitude, width=width, center=center)
    _pin_ends(rho0, u0, ff)
    params["far_field"] = ff.to_dict()
    params["enforce_mono"] = enforce_mono
    return InitialData(grid, rho0, u0, bg, family=name, params=params)


def _limit_amplitude(model, grid, rho0, ubar, shape, requested):
    bound = MONO_MARGIN * float(np.min(rho0 ** (model.gamma - model.alpha)))
    dbar = ddx(ubar, grid.dx)
    dshape = ddx(shape, grid.dx)
    if np.max(dbar) > bound:
        raise ConstructionError(
            f"background velocity slope {np.max(dbar):.6g} already exceeds the mono-w0 "
            f"bound {bound:.6g}; limiting amplitude is 0", 0.0)
    pos = dshape > 0.0
    with np.errstate(over="ignore"):
        limit = float(np.min((bound - dbar[pos]) / dshape[pos])) if np.any(pos) else math.inf
    amp = min(requested, limit)
    # guard against rounding pushing the re-check over the bound
    while amp > 0.0 and np.max(ddx(ubar + amp * shape, grid.dx)) > bound:
        amp *= 1.0 - 1e-12
    return amp


def write_initial_csv(data: InitialData, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "rho0", "u0"])
        for row in zip(data.grid.x, data.rho0, data.u0):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_initial_csv(path, order=4) -> InitialData:
    """Load ``x, rho0, u0`` columns; far-field states are taken from the end values."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"x", "rho0", "u0"} - set(reader.fieldnames or ())
        if missing:
            raise StructuralError(f"{path}: missing CSV columns {sorted(missing)}")
        rows = [(float(r["x"]), float(r["rho0"]), float(r["u0"])) for r in reader]
    if len(rows) < 17:
        raise StructuralError(f"{path}: need at least 17 rows, got {len(rows)}")
    arr = np.array(rows)
    x = arr[:, 0]
    grid = Grid1D(half_length=float(x[-1]), cells=len(x) - 1)
    if not np.allclose(x, grid.x, rtol=0.0, atol=1e-9 * grid.half_length):
        raise StructuralError(f"{path}: x column is not a symmetric uniform grid")
    ff = FarFieldStates(arr[0, 1], arr[-1, 1], arr[0, 2], arr[-1, 2])
    return InitialData(grid, arr[:, 1], arr[:, 2], make_background(ff, order),
                       family="csv", params={"source": str(path)})
