"""Finite element fields and interface geometry at quadrature points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, p1_basis, p2_basis

# |grad phi|^2 below this is treated as "no interface": P = I, delta = 0
GRAD_FLOOR = 1e-10


@dataclass(eq=False)
class ScalarField:
    mesh: Mesh
    space: str
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        n = self.mesh.dofmap(self.space).size
        if self.coeffs.shape != (n,):
            raise ValueError(f"{self.space} field needs {n} coefficients, got {self.coeffs.shape}")

    @classmethod
    def zeros(cls, mesh: Mesh, space: str = "P2") -> "ScalarField":
        return cls(mesh, space, np.zeros(mesh.dofmap(space).size))

    @classmethod
    def constant(cls, mesh: Mesh, value: float, space: str = "P2") -> "ScalarField":
        return cls(mesh, space, np.full(mesh.dofmap(space).size, float(value)))

    @classmethod
    def interpolate(cls, mesh: Mesh, func, space: str = "P2") -> "ScalarField":
        xy = mesh.dofmap(space).coords
        vals = np.broadcast_to(np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float), (len(xy),))
        return cls(mesh, space, vals.copy())

    def copy(self) -> "ScalarField":
        return ScalarField(self.mesh, self.space, self.coeffs.copy())

    def eval_with_gradient(self, tri: int, bary) -> tuple[float, np.ndarray]:
        """Value and gradient at barycentric point ``bary`` = (L0, L1, L2) of triangle ``tri``."""
        return eval_with_gradient(self, tri, bary)


@dataclass(eq=False)
class VectorField:
    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        if self.x.mesh is not self.y.mesh or self.x.space != self.y.space:
            raise ValueError("vector components must share mesh and space")

    @property
    def mesh(self) -> Mesh:
        return self.x.mesh

    @classmethod
    def zeros(cls, mesh: Mesh) -> "VectorField":
        return cls(ScalarField.zeros(mesh), ScalarField.zeros(mesh))

    @classmethod
    def interpolate(cls, mesh: Mesh, func) -> "VectorField":
        xy = mesh.p2.coords
        vx, vy = func(xy[:, 0], xy[:, 1])
        n = len(xy)
        return cls(
            ScalarField(mesh, "P2", np.broadcast_to(np.asarray(vx, float), (n,)).copy()),
            ScalarField(mesh, "P2", np.broadcast_to(np.asarray(vy, float), (n,)).copy()),
        )

    def copy(self) -> "VectorField":
        return VectorField(self.x.copy(), self.y.copy())

    def jacobian(self, tri: int, bary) -> np.ndarray:
        """(grad v)_{ij} = d v_i / d x_j at a point."""
        _, gx = eval_with_gradient(self.x, tri, bary)
        _, gy = eval_with_gradient(self.y, tri, bary)
        return np.vstack([gx, gy])


def eval_with_gradient(field: ScalarField, tri: int, bary) -> tuple[float, np.ndarray]:
    bary = np.asarray(bary, dtype=float)
    xi = bary[None, 1:3]
    if field.space == "P2":
        val, grad = p2_basis(xi)
    else:
        val, grad = p1_basis(xi)
    mesh = field.mesh
    dofs = mesh.dofmap(field.space).cell_dofs[tri]
    jinv = np.linalg.inv(mesh.jacobians[tri])
    c = field.coeffs[dofs]
    value = float(val[0] @ c)
    gradient = (grad[0].T @ c) @ jinv
    return value, gradient


@dataclass(frozen=True)
class InterfaceGeometry:
    """Interface quantities at one point or an array of points.

    ``grad`` has shape (..., 2), ``proj`` shape (..., 2, 2).
    """

    grad: np.ndarray
    norm_sq: np.ndarray
    delta: np.ndarray
    proj: np.ndarray

    @property
    def normal(self) -> np.ndarray:
        """Unit normal -grad phi / |grad phi| pointing out of the vesicle (zero off-interface)."""
        n = np.sqrt(self.norm_sq)
        safe = np.where(self.norm_sq > GRAD_FLOOR, n, 1.0)
        return np.where((self.norm_sq > GRAD_FLOOR)[..., None], -self.grad / safe[..., None], 0.0)


def interface_geometry(grad_phi) -> InterfaceGeometry:
    """Projection P = I - grad phi (x) grad phi / |grad phi|^2 and delta = |grad phi| / 2.

    Accepts a single gradient (2,) or an array (..., 2).  Where
    |grad phi|^2 is below ``GRAD_FLOOR`` the result is P = I, delta = 0.
    """
    g = np.asarray(grad_phi, dtype=float)
    nsq = np.einsum("...d,...d->...", g, g)
    active = nsq > GRAD_FLOOR
    safe = np.where(active, nsq, 1.0)
    outer = g[..., :, None] * g[..., None, :] / safe[..., None, None]
    eye = np.broadcast_to(np.eye(2), outer.shape)
    proj = np.where(active[..., None, None], eye - outer, eye)
    delta = np.where(active, 0.5 * np.sqrt(nsq), 0.0)
    return InterfaceGeometry(g, nsq, delta, proj)


def surface_divergence(jac_v, geom: InterfaceGeometry):
    """P : grad v with (grad v)_{ij} = d v_i / d x_j; arrays broadcast over leading axes."""
    return np.einsum("...ij,...ij->...", geom.proj, np.asarray(jac_v, dtype=float))


def velocity_jacobian(elements, v: VectorField) -> np.ndarray:
    """grad v at all quadrature points, shape (ntri, nq, 2, 2)."""
    gx = elements.p2_gradients(v.x.coeffs)
    gy = elements.p2_gradients(v.y.coeffs)
    return np.stack([gx, gy], axis=2)
