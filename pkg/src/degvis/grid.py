"""Uniform node grid on a truncated domain and the simulation state."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, StructuralError


@dataclass(frozen=True)
class Grid1D:
    """``cells + 1`` equispaced nodes on ``[-half_length, half_length]``."""

    half_length: float
    cells: int

    def __post_init__(self):
        if int(self.cells) != self.cells or self.cells < 16:
            raise DomainError(f"cell count must be an integer >= 16, got {self.cells}")
        if not self.half_length >= 2.0:
            raise DomainError(f"half length must be >= 2, got {self.half_length}")
        object.__setattr__(self, "cells", int(self.cells))
        object.__setattr__(self, "half_length", float(self.half_length))

    @property
    def dx(self):
        return 2.0 * self.half_length / self.cells

    @property
    def nodes(self):
        return self.cells + 1

    @cached_property
    def x(self):
        x = -self.half_length + self.dx * np.arange(self.nodes)
        x[-1] = self.half_length
        x.flags.writeable = False
        return x

    def refine(self, factor=2):
        return Grid1D(self.half_length, self.cells * factor)


def ddx(f, dx):
    """First derivative: central in the interior, second-order one-sided at the ends.

    This is the stencil used by the solver, the mono-w0 check and the
    active potential, so all three see the same discrete gradient.
    """
    f = np.asarray(f, dtype=float)
    if f.size < 3:
        raise StructuralError("need at least 3 nodes for a derivative")
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * dx)
    # one-sided ends written in differences so constants give exactly zero
    out[0] = (4.0 * (f[1] - f[0]) - (f[2] - f[0])) / (2.0 * dx)
    out[-1] = ((f[-3] - f[-1]) - 4.0 * (f[-2] - f[-1])) / (2.0 * dx)
    return out


def d2dx2(f, dx):
    """Second difference on interior nodes (ends set to zero)."""
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / (dx * dx)
    return out


def trapezoid(f, dx):
    f = np.asarray(f, dtype=float)
    if f.size < 2:
        return 0.0
    return float(dx * (np.sum(f) - 0.5 * (f[0] + f[-1])))


@dataclass
class SimState:
    """Time, node values of density and velocity, and the time-integrated
    boundary mass inflow accumulated since ``t = 0``."""

    t: float
    rho: np.ndarray
    u: np.ndarray
    grid: Grid1D
    boundary_inflow: float = 0.0
    steps: int = field(default=0, compare=False)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.rho.shape != (self.grid.nodes,) or self.u.shape != (self.grid.nodes,):
            raise StructuralError(
                f"state arrays must have {self.grid.nodes} nodes, "
                f"got rho {self.rho.shape} and u {self.u.shape}"
            )

    def copy(self):
        return SimState(self.t, self.rho.copy(), self.u.copy(), self.grid,
                        self.boundary_inflow, self.steps)

    def mass(self):
        return trapezoid(self.rho, self.grid.dx)
