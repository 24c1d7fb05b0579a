"""Transport of the stretching concentration along the interface.

The concentration c starts at 1; values below 1 mark locally stretched
membrane and values above 1 compressed membrane.  Each step solves

    (c - c_n)/tau + v . grad c + c P:grad v = theta div(P grad c)

implicitly, with c = 1 on the whole domain boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fields import ScalarField, VectorField, interface_geometry, surface_divergence, velocity_jacobian
from .linalg import SolverError, SolverSettings, SparsityPattern, factor_for, solve
from .mesh import Boundary, Mesh
from .phasefield import elements_for

log = logging.getLogger(__name__)

C_MIN = 1e-3
C_WARN = 0.1


@dataclass(eq=False)
class StretchState:
    c: ScalarField
    theta: float = 0.01

    def __post_init__(self):
        if not self.theta >= 0:
            raise ValueError("theta must be non-negative")

    @classmethod
    def unstretched(cls, mesh: Mesh, theta: float = 0.01) -> "StretchState":
        return cls(ScalarField.constant(mesh, 1.0), theta)

    def copy(self) -> "StretchState":
        return StretchState(self.c.copy(), self.theta)


class StretchSystem:
    """Cached pattern, boundary rows and factor handle for the c equation."""

    def __init__(self, mesh: Mesh, solver: SolverSettings | None = None):
        self.mesh = mesh
        self.el = elements_for(mesh)
        self.solver = solver or SolverSettings()
        cells = self.el.cells2
        n = mesh.p2.size
        self.pattern = SparsityPattern([(cells, cells, 0, 0)], (n, n))
        self.boundary = np.flatnonzero(mesh.p2.tags != Boundary.INTERIOR)
        self.factor = factor_for(self.solver)

    def assemble(self, c_old: np.ndarray, v: VectorField, phi: ScalarField, tau: float,
                 theta: float):
        el = self.el
        geom = interface_geometry(el.p2_gradients(phi.coeffs))
        rate = surface_divergence(velocity_jacobian(el, v), geom)
        vel = np.stack([el.p2_values(v.x.coeffs), el.p2_values(v.y.coeffs)], axis=-1)
        local = el.mass(1.0 / tau + rate) + el.advection(vel)
        if theta > 0:
            local = local + el.stiffness_tensor(theta, geom.proj)
        A = self.pattern.matrix([local])
        rhs = el.load(el.p2_values(c_old) / tau)
        self.pattern.set_identity_rows(A, self.boundary)
        rhs[self.boundary] = 1.0
        return A, rhs

    def advance(self, state: StretchState, v: VectorField, phi: ScalarField, tau: float) -> StretchState:
        A, rhs = self.assemble(state.c.coeffs, v, phi, tau, state.theta)
        x, report = solve(A, rhs, self.solver, self.factor)
        if not report.converged:
            raise SolverError(f"stretch solve residual {report.residual:.3e}", report)
        x[self.boundary] = 1.0
        low = x.min()
        if low < C_WARN:
            log.warning("stretch concentration down to %.3e", low)
        if low < C_MIN:
            log.warning("stretch concentration floored at %.0e", C_MIN)
            x = np.maximum(x, C_MIN)
        return StretchState(ScalarField(self.mesh, "P2", x), state.theta)


def stretch_system(mesh: Mesh, solver: SolverSettings | None = None) -> StretchSystem:
    sys_ = mesh.cache.get("stretch")
    if sys_ is None or (solver is not None and sys_.solver != solver):
        sys_ = mesh.cache["stretch"] = StretchSystem(mesh, solver)
    return sys_


def advance_c(state: StretchState, v: VectorField, phi: ScalarField, tau: float,
              solver: SolverSettings | None = None) -> StretchState:
    """One backward Euler step of the c equation with v and phi at the new time."""
    return stretch_system(phi.mesh, solver).advance(state, v, phi, tau)
