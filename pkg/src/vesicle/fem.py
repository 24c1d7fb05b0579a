"""Element tables and local form kernels shared by every assembly routine.

All kernels are vectorized over triangles and return arrays of shape
(ntri, nrow_loc, ncol_loc) ready for ``SparsityPattern.matrix``.
Coefficients are sampled at quadrature points, shape (ntri, nq).
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .mesh import Mesh, QuadratureRule, dunavant5, p1_basis, p2_basis


class Elements:
    def __init__(self, mesh: Mesh, quad: QuadratureRule | None = None):
        self.mesh = mesh
        self.quad = quad or dunavant5()
        jac = mesh.jacobians
        det = np.linalg.det(jac)
        self.jinv = np.linalg.inv(jac)  # (ntri, 2, 2)
        self.wdet = np.abs(det)[:, None] * self.quad.weights[None, :]
        self.N2, ref2 = p2_basis(self.quad.xi)
        self.N1, ref1 = p1_basis(self.quad.xi)
        # physical gradient: dN/dx = J^{-T} dN/dxi
        self.dN2 = np.einsum("qia,tab->tqib", ref2, self.jinv, optimize=True)
        self.dN1 = np.einsum("ia,tab->tib", ref1[0], self.jinv, optimize=True)
        self.cells2 = mesh.p2.cell_dofs
        self.cells1 = mesh.p1.cell_dofs
        self._NN2 = (self.N2[:, :, None] * self.N2[:, None, :]).reshape(len(self.N2), 36)

    @property
    def ntri(self) -> int:
        return self.mesh.n_triangles

    @property
    def nq(self) -> int:
        return len(self.quad.weights)

    @cached_property
    def points(self) -> np.ndarray:
        return self.mesh.map_points(self.quad.xi)

    # -- evaluation -------------------------------------------------------
    def p2_values(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs[self.cells2] @ self.N2.T

    def p2_gradients(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("ti,tqid->tqd", coeffs[self.cells2], self.dN2, optimize=True)

    def p1_values(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs[self.cells1] @ self.N1.T

    def integral(self, values: np.ndarray) -> float:
        return float(np.sum(self.wdet * values))

    # -- local matrices (P2 x P2 unless noted) ----------------------------
    def mass(self, coef=1.0) -> np.ndarray:
        wc = self.wdet * coef
        return (wc @ self._NN2).reshape(-1, 6, 6)

    def stiffness(self, coef=1.0) -> np.ndarray:
        """sum_q w c grad N_i . grad N_j"""
        wc = np.broadcast_to(self.wdet * coef, self.wdet.shape)
        return np.einsum("tq,tqid,tqjd->tij", wc, self.dN2, self.dN2, optimize=True)

    def stiffness_tensor(self, coef, tensor: np.ndarray) -> np.ndarray:
        """sum_q w c grad N_i . T grad N_j with T of shape (ntri, nq, 2, 2)."""
        wc = np.broadcast_to(self.wdet * coef, self.wdet.shape)
        tg = np.einsum("tqab,tqjb->tqja", tensor, self.dN2, optimize=True)
        return np.einsum("tq,tqia,tqja->tij", wc, self.dN2, tg, optimize=True)

    def derivative_pair(self, coef, a: int, b: int) -> np.ndarray:
        """sum_q w c d_a N_i d_b N_j (row i differentiated in a, column j in b)."""
        wc = np.broadcast_to(self.wdet * coef, self.wdet.shape)
        return np.einsum(
            "tq,tqi,tqj->tij", wc, self.dN2[..., a], self.dN2[..., b], optimize=True
        )

    def advection(self, vel: np.ndarray, coef=1.0) -> np.ndarray:
        """sum_q w c N_i (vel . grad N_j) with vel of shape (ntri, nq, 2)."""
        wc = np.broadcast_to(self.wdet * coef, self.wdet.shape)
        vg = np.einsum("tqd,tqjd->tqj", vel, self.dN2, optimize=True)
        return np.einsum("tq,qi,tqj->tij", wc, self.N2, vg, optimize=True)

    def mass_weighted_derivative(self, coef, a: int) -> np.ndarray:
        """sum_q w c N_i d_a N_j (test P2 value, trial P2 derivative)."""
        wc = np.broadcast_to(self.wdet * coef, self.wdet.shape)
        return np.einsum("tq,qi,tqj->tij", wc, self.N2, self.dN2[..., a], optimize=True)

    def p1_p2_divergence(self, a: int) -> np.ndarray:
        """sum_q w M_i d_a N_j with P1 test M and P2 trial N; shape (ntri, 3, 6)."""
        return np.einsum("tq,qi,tqj->tij", self.wdet, self.N1, self.dN2[..., a], optimize=True)

    # -- load vectors -----------------------------------------------------
    def load(self, coef) -> np.ndarray:
        """Assembled P2 vector of sum_q w c N_i."""
        wc = np.broadcast_to(self.wdet * coef, self.wdet.shape)
        local = wc @ self.N2
        return np.bincount(self.cells2.ravel(), local.ravel(), minlength=self.mesh.p2.size)

    def load_gradient(self, vec: np.ndarray) -> np.ndarray:
        """Assembled P2 vector of sum_q w vec . grad N_i, vec of shape (ntri, nq, 2)."""
        local = np.einsum("tq,tqd,tqid->ti", self.wdet, vec, self.dN2, optimize=True)
        return np.bincount(self.cells2.ravel(), local.ravel(), minlength=self.mesh.p2.size)

    def load_vector(self, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Assembled P2 vectors of sum_q w vec_a N_i for a = x, y."""
        out = []
        for a in range(2):
            local = (self.wdet * vec[..., a]) @ self.N2
            out.append(
                np.bincount(self.cells2.ravel(), local.ravel(), minlength=self.mesh.p2.size)
            )
        return out[0], out[1]
