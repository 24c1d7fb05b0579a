"""Phase field initialization, bending forces and the phase field transport step.

Unknown ordering of the coupled step is (phi, f_c, f, g), each a P2
block of the same size.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fem import Elements
from .fields import ScalarField, VectorField
from .linalg import SolverError, SolverSettings, SparsityPattern, factor_for, solve
from .mesh import Mesh

log = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)

def elements_for(mesh: Mesh) -> Elements:
    el = mesh.cache.get("elements")
    if el is None:
        el = mesh.cache["elements"] = Elements(mesh)
    return el


@dataclass(frozen=True)
class PhaseParams:
    eps: float = 0.03
    H0: float = 0.0
    eta: float = 0.1
    ReBe: float = 20.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.eta >= 0:
            # eta = 0 is accepted for pure-advection checks
            raise ValueError("eta must be non-negative")
        if not self.ReBe > 0:
            raise ValueError("ReBe must be positive")


@dataclass(eq=False)
class PhaseState:
    phi: ScalarField
    f: ScalarField
    f_c: ScalarField
    g: ScalarField
    residual: float = 0.0

    def copy(self) -> "PhaseState":
        return PhaseState(self.phi.copy(), self.f.copy(), self.f_c.copy(), self.g.copy(),
                          self.residual)


# -- signed distance ------------------------------------------------------

def ellipse_signed_distance(x, y, center=(0.0, 0.0), semi_axes=(1.0, 1.0), rotation=0.0,
                            tol=1e-12, maxiter=50) -> np.ndarray:
    """Signed distance to an ellipse, negative inside.

    ``semi_axes[0]`` lies along the direction ``rotation`` (radians) from
    the x-axis.  The closest point is found by Newton iteration on the
    monotone secular function of the closest-point problem.
    """
    a, b = (float(s) for s in semi_axes)
    if a <= 0 or b <= 0:
        raise ValueError("semi-axes must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c, s = np.cos(rotation), np.sin(rotation)
    dx, dy = x - center[0], y - center[1]
    u = c * dx + s * dy
    w = -s * dx + c * dy
    if a < b:
        a, b, u, w = b, a, w, u
    p0, p1 = np.abs(u).ravel(), np.abs(w).ravel()
    dist = np.empty_like(p0)

    tiny = 1e-14 * a
    gen = (p0 > tiny) & (p1 > tiny)
    if np.any(gen):
        q0, q1 = p0[gen], p1[gen]
        # iterate on u = t + b^2 > 0 so that small roots keep full relative accuracy
        gap = a * a - b * b
        u = np.maximum(b * q1, a * q0 - gap)
        converged = np.zeros(len(u), dtype=bool)
        for _ in range(maxiter):
            r0 = a * q0 / (u + gap)
            r1 = b * q1 / u
            F = r0 * r0 + r1 * r1 - 1.0
            dF = -2.0 * (r0 * r0 / (u + gap) + r1 * r1 / u)
            step = F / dF
            u = u - step
            converged = np.abs(step) <= tol * u
            if converged.all():
                break
        if not converged.all():
            bad = np.flatnonzero(~converged)
            raise RuntimeError(
                f"closest-point iteration did not converge for {len(bad)} points "
                f"(first at ({q0[bad[0]]:.6g}, {q1[bad[0]]:.6g}))"
            )
        c0 = a * a * q0 / (u + gap)
        c1 = b * b * q1 / u
        dist[gen] = np.hypot(q0 - c0, q1 - c1)

    on_minor = (p0 <= tiny) & ~gen
    dist[on_minor] = np.abs(p1[on_minor] - b)
    on_major = (p1 <= tiny) & ~gen & ~on_minor
    if np.any(on_major):
        q0 = p0[on_major]
        inner = q0 < (a * a - b * b) / a
        d = np.abs(q0 - a)
        c0 = a * a * q0[inner] / (a * a - b * b)
        c1 = b * np.sqrt(np.clip(1.0 - (c0 / a) ** 2, 0.0, None))
        d[inner] = np.hypot(c0 - q0[inner], c1)
        dist[on_major] = d

    inside = (p0 / a) ** 2 + (p1 / b) ** 2 < 1.0
    dist = np.where(inside, -dist, dist)
    return dist.reshape(np.shape(x))


def tanh_profile(r, eps):
    """Equilibrium phase field for signed distance ``r``."""
    return np.tanh(-np.asarray(r) / (SQRT2 * eps))


# -- functionals ----------------------------------------------------------

def volume_area(phi: ScalarField, params: PhaseParams) -> tuple[float, float]:
    """V = int (phi + 1) / 2 and A = int eps/2 |grad phi|^2 + (phi^2 - 1)^2 / (4 eps)."""
    el = elements_for(phi.mesh)
    val = el.p2_values(phi.coeffs)
    grad = el.p2_gradients(phi.coeffs)
    eps = params.eps
    V = el.integral(0.5 * (val + 1.0))
    A = el.integral(0.5 * eps * np.sum(grad * grad, axis=-1) + (val * val - 1.0) ** 2 / (4.0 * eps))
    return V, A


# -- the coupled system ---------------------------------------------------

def _wells(phi, H0):
    """Double-well terms and derivatives: (W, W', W_c, W_c')."""
    W = (phi * phi - 1.0) * phi
    dW = 3.0 * phi * phi - 1.0
    Wc = (phi * phi - 1.0) * (phi + H0)
    dWc = 3.0 * phi * phi + 2.0 * H0 * phi - 1.0
    return W, dW, Wc, dWc


PHI, FC, F, G = 0, 1, 2, 3

# (row field, column field) couplings of the full system
_FULL_LAYOUT = [
    (PHI, PHI), (PHI, F), (PHI, G),
    (FC, FC), (FC, PHI),
    (F, F), (F, PHI),
    (G, G), (G, FC),
]


class PhaseSystem:
    """Cached sparsity data for the (phi, f_c, f, g) block system on one mesh.

    With H0 = 0 the f_c and f rows coincide, so f_c is identified with f
    and a three-field system (phi, f, g) is solved instead.
    """

    def __init__(self, mesh: Mesh, solver: SolverSettings | None = None):
        self.mesh = mesh
        self.el = elements_for(mesh)
        self.solver = solver or SolverSettings()
        self.n = mesh.p2.size
        self.M = self.el.mass()
        self.K = self.el.stiffness()
        self.ones_load = self.el.load(1.0)
        self._variants = {}

    def _variant(self, merged: bool):
        """(position map, layout, pattern, factor) for the full or merged system."""
        if merged not in self._variants:
            if merged:
                pos = {PHI: 0, FC: 1, F: 1, G: 2}
                layout = [(r, c) for r, c in _FULL_LAYOUT if r != FC and c != FC]
                layout.append((G, F))
            else:
                pos = {PHI: 0, FC: 1, F: 2, G: 3}
                layout = list(_FULL_LAYOUT)
            nf = len(set(pos.values()))
            cells, n = self.el.cells2, self.n
            pattern = SparsityPattern(
                [(cells, cells, pos[r] * n, pos[c] * n) for r, c in layout], (nf * n, nf * n)
            )
            self._variants[merged] = (pos, layout, pattern, factor_for(self.solver))
        return self._variants[merged]

    def _chain_rows(self, phi_lag_q, params: PhaseParams):
        """Local blocks and load vectors of the f_c, f and g rows."""
        eps, ReBe = params.eps, params.ReBe
        W, dW, Wc, dWc = _wells(phi_lag_q, params.H0)
        blocks = {
            (FC, FC): self.M,
            (FC, PHI): eps * self.K + self.el.mass(dWc / eps),
            (F, F): self.M,
            (F, PHI): eps * self.K + self.el.mass(dW / eps),
            (G, G): self.M,
            (G, FC): self.K / ReBe + self.el.mass(dWc / (ReBe * eps * eps)),
        }
        loads = {
            FC: self.el.load((dWc * phi_lag_q - Wc) / eps),
            F: self.el.load((dW * phi_lag_q - W) / eps),
            G: np.zeros(self.n),
        }
        return blocks, loads

    def _solve(self, blocks, loads, merged: bool):
        pos, layout, pattern, factor = self._variant(merged)
        if merged:
            blocks = dict(blocks)
            blocks[(G, F)] = blocks.pop((G, FC))
        A = pattern.matrix([blocks.get(key) for key in layout])
        n = self.n
        rhs = np.zeros(A.shape[0])
        for field_, vec in loads.items():
            if merged and field_ == FC:
                continue
            rhs[pos[field_] * n:(pos[field_] + 1) * n] = vec
        x, report = solve(A, rhs, self.solver, factor)
        if not report.converged:
            raise SolverError(f"phase field solve residual {report.residual:.3e}", report)
        fields = {k: ScalarField(self.mesh, "P2", x[p * n:(p + 1) * n].copy()) for k, p in pos.items()}
        if merged:
            fields[FC] = fields[F].copy()
        return fields, report

    def bending_chain(self, phi: ScalarField, params: PhaseParams, phi_lag: ScalarField | None = None):
        """f_c, f and g for a fixed phi, with the cubic terms linearized about ``phi_lag``."""
        phi_lag = phi if phi_lag is None else phi_lag
        lag_q = self.el.p2_values(phi_lag.coeffs)
        blocks, loads = self._chain_rows(lag_q, params)
        # the phi row pins phi to the given field
        blocks[(PHI, PHI)] = self.M
        loads[PHI] = self._mass_apply(phi.coeffs)
        fields, _ = self._solve(blocks, loads, merged=params.H0 == 0.0)
        return fields[F], fields[FC], fields[G]

    def _mass_apply(self, coeffs):
        local = np.einsum("tij,tj->ti", self.M, coeffs[self.el.cells2])
        return np.bincount(self.el.cells2.ravel(), local.ravel(), minlength=self.n)

    def advance(self, state: PhaseState, v: VectorField, lambda_global: float,
                lambda_volume: float, params: PhaseParams, tau: float) -> PhaseState:
        el = self.el
        phi_n = state.phi.coeffs
        lag_q = el.p2_values(phi_n)
        vel = np.stack([el.p2_values(v.x.coeffs), el.p2_values(v.y.coeffs)], axis=-1)
        blocks, loads = self._chain_rows(lag_q, params)
        eta = params.eta
        blocks[(PHI, PHI)] = self.M / tau + el.advection(vel)
        blocks[(PHI, F)] = -eta * lambda_global * self.M
        blocks[(PHI, G)] = eta * self.M
        loads[PHI] = self._mass_apply(phi_n) / tau - eta * lambda_volume * self.ones_load
        fields, report = self._solve(blocks, loads, merged=params.H0 == 0.0)
        phi = fields[PHI]
        peak = np.abs(phi.coeffs).max()
        if peak > 1.2:
            log.warning("phase field out of sanity bounds: max |phi| = %.3f", peak)
        return PhaseState(phi, fields[F], fields[FC], fields[G], report.residual)


def phase_system(mesh: Mesh, solver: SolverSettings | None = None) -> PhaseSystem:
    sys_ = mesh.cache.get("phase")
    if sys_ is None or (solver is not None and sys_.solver != solver):
        sys_ = mesh.cache["phase"] = PhaseSystem(mesh, solver)
    return sys_


def bending_chain(phi: ScalarField, params: PhaseParams, phi_lag: ScalarField | None = None):
    """Return (f, f_c, g) for the given phase field."""
    return phase_system(phi.mesh).bending_chain(phi, params, phi_lag)


def init_ellipse(mesh: Mesh, params: PhaseParams, center=(2.0, 2.0), semi_axes=(0.5, 1.25),
                 rotation_deg: float = 0.0) -> PhaseState:
    """Phase field of an ellipse; ``semi_axes`` = (along x, along y) before rotation."""
    xy = mesh.p2.coords
    a, b = semi_axes
    r = ellipse_signed_distance(xy[:, 0], xy[:, 1], center, (a, b), np.deg2rad(rotation_deg))
    phi = ScalarField(mesh, "P2", tanh_profile(r, params.eps))
    f, f_c, g = bending_chain(phi, params)
    return PhaseState(phi, f, f_c, g)


def advance_phi(state: PhaseState, v: VectorField, multipliers, params: PhaseParams,
                tau: float, solver: SolverSettings | None = None) -> PhaseState:
    """One backward-Euler step of the phase field with bending and constraint forces."""
    return phase_system(state.phi.mesh, solver).advance(
        state, v, multipliers.lambda_global, multipliers.lambda_volume, params, tau
    )
