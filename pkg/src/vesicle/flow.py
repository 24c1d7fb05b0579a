"""Coupled flow solve: momentum, continuity and the local inextensibility multiplier.

Unknown layout: [v_x (P2), v_y (P2), p (P1), lambda_local (P2, models B/C)].

The assembled block structure is

    | A      B^T   C^T | |v|   |F|
    | B      0     0   | |p| = |0|
    | C      0    -L   | |l|   |H|

with B v = -int q div v, C v = int delta mu P : grad v and
L = xi eps^2 int phi^2 grad lambda . grad mu.  The tension force and
the constraint row share C, so the coupling is symmetric and the
multiplier block is negative semi-definite.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .fem import Elements
from .fields import ScalarField, VectorField, interface_geometry
from .linalg import SolveReport, SolverError, SolverSettings, SparsityPattern, factor_for, solve
from .mesh import Boundary, Mesh, p2_basis
from .phasefield import PhaseState, elements_for

log = logging.getLogger(__name__)

C_FLOOR = 1e-3


class ModelVariant(str, enum.Enum):
    A = "A"  # global area constraint only
    B = "B"  # local inextensibility
    C = "C"  # local inextensibility with Hooke relaxation

    @property
    def has_local_multiplier(self) -> bool:
        return self is not ModelVariant.A


@dataclass(frozen=True)
class FlowParams:
    Re: float = 1.0
    visc_ratio: float = 10.0
    dens_ratio: float = 1.0
    xi: float = 1.0
    zeta: float = 0.0
    shear_speed: float = 10.0
    eps: float = 0.03

    def __post_init__(self):
        for name in ("Re", "visc_ratio", "dens_ratio", "xi", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.zeta < 0:
            raise ValueError("zeta must be non-negative")


@dataclass(eq=False)
class FlowState:
    v: VectorField
    p: ScalarField
    lambda_local: ScalarField
    report: SolveReport | None = None

    @classmethod
    def rest(cls, mesh: Mesh, shear_speed: float = 0.0) -> "FlowState":
        v = VectorField.zeros(mesh)
        top = mesh.p2.boundary_dofs(Boundary.TOP)
        bottom = mesh.p2.boundary_dofs(Boundary.BOTTOM)
        v.x.coeffs[top] = shear_speed
        v.x.coeffs[bottom] = -shear_speed
        return cls(v, ScalarField.zeros(mesh, "P1"), ScalarField.zeros(mesh))

    def copy(self) -> "FlowState":
        return FlowState(self.v.copy(), self.p.copy(), self.lambda_local.copy(), self.report)


def material_properties(phi, params: FlowParams):
    """Density and viscosity interpolated affinely in phi, clamped from below."""
    phi = np.asarray(phi, dtype=float)
    rho = 0.5 * (phi + 1.0) * params.dens_ratio + 0.5 * (1.0 - phi)
    nu = 0.5 * (phi + 1.0) * params.visc_ratio + 0.5 * (1.0 - phi)
    rho_min = 0.01 * min(1.0, params.dens_ratio)
    nu_min = 0.01 * min(1.0, params.visc_ratio)
    if np.any(rho < rho_min) or np.any(nu < nu_min):
        log.warning("material property clamp triggered (phi overshoot)")
        rho = np.maximum(rho, rho_min)
        nu = np.maximum(nu, nu_min)
    return rho, nu


def hooke_rhs(c_value, delta, zeta: float, excess=None):
    """zeta (c - 1) / c * delta, with c clamped at ``C_FLOOR``.

    ``excess`` optionally supplies c - 1 directly, so that an unstretched
    field gives an exactly zero term despite interpolation round-off.
    """
    c = np.asarray(c_value, dtype=float)
    excess = c - 1.0 if excess is None else np.asarray(excess, dtype=float)
    if np.any(c <= C_FLOOR):
        log.warning("stretch concentration below %.0e clamped in Hooke term", C_FLOOR)
        c = np.maximum(c, C_FLOOR)
    return zeta * excess / c * delta


class FlowSystem:
    """Cached sparsity and boundary data for one mesh and one model variant."""

    def __init__(self, mesh: Mesh, variant: ModelVariant, solver: SolverSettings | None = None):
        self.mesh = mesh
        self.variant = ModelVariant(variant)
        self.solver = solver or SolverSettings()
        self.el: Elements = elements_for(mesh)
        n2, n1 = mesh.p2.size, mesh.p1.size
        self.n2, self.n1 = n2, n1
        self.local = self.variant.has_local_multiplier
        self.size = 2 * n2 + n1 + (n2 if self.local else 0)
        off = {"u": 0, "w": n2, "p": 2 * n2, "l": 2 * n2 + n1}
        self.off = off
        c2, c1 = self.el.cells2, self.el.cells1
        self._open_setup()
        bc2 = c2[self.open_tri]
        self.layout = [
            ("uu", c2, c2, off["u"], off["u"]),
            ("uw", c2, c2, off["u"], off["w"]),
            ("wu", c2, c2, off["w"], off["u"]),
            ("ww", c2, c2, off["w"], off["w"]),
            ("up", c2, c1, off["u"], off["p"]),
            ("wp", c2, c1, off["w"], off["p"]),
            ("pu", c1, c2, off["p"], off["u"]),
            ("pw", c1, c2, off["p"], off["w"]),
            ("open_uu", bc2, bc2, off["u"], off["u"]),
            ("open_wu", bc2, bc2, off["w"], off["u"]),
        ]
        if self.local:
            self.layout += [
                ("ul", c2, c2, off["u"], off["l"]),
                ("wl", c2, c2, off["w"], off["l"]),
                ("lu", c2, c2, off["l"], off["u"]),
                ("lw", c2, c2, off["l"], off["w"]),
                ("ll", c2, c2, off["l"], off["l"]),
            ]
        self.pattern = SparsityPattern(
            [(r, c, ro, co) for _, r, c, ro, co in self.layout], (self.size, self.size)
        )
        self.factor = factor_for(self.solver)
        top = mesh.p2.boundary_dofs(Boundary.TOP)
        bottom = mesh.p2.boundary_dofs(Boundary.BOTTOM)
        self.top, self.bottom = top, bottom
        wall = np.concatenate([top, bottom])
        self.dirichlet_rows = np.concatenate([wall + off["u"], wall + off["w"]])
        # divergence pieces do not depend on the state
        self.div = [self.el.p1_p2_divergence(a) for a in range(2)]
        interior = np.flatnonzero(mesh.p2.tags == Boundary.INTERIOR)
        centre = np.array([0.5 * (mesh.x0 + mesh.x1), 0.5 * (mesh.y0 + mesh.y1)])
        d = np.linalg.norm(mesh.p2.coords[interior] - centre, axis=1)
        self.pin_dof = int(interior[np.argmin(d)])

    def _open_setup(self):
        """Edge quadrature data on the left/right (open) boundary."""
        mesh = self.mesh
        x = mesh.vertices[:, 0]
        tri_list, ref_pts, normals, lengths = [], [], [], []
        gl_x, gl_w = np.polynomial.legendre.leggauss(3)
        s = 0.5 * (gl_x + 1.0)
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        tris = mesh.triangles
        for i, j in ((0, 1), (1, 2), (2, 0)):
            a, b = tris[:, i], tris[:, j]
            for xb, nx in ((mesh.x0, -1.0), (mesh.x1, 1.0)):
                for t in np.flatnonzero((x[a] == xb) & (x[b] == xb)):
                    tri_list.append(t)
                    ref_pts.append(corners[i] + s[:, None] * (corners[j] - corners[i]))
                    normals.append(nx)
                    lengths.append(abs(mesh.vertices[b[t], 1] - mesh.vertices[a[t], 1]))
        self.open_tri = np.array(tri_list, dtype=np.int64)
        self.open_nx = np.array(normals)
        self.open_w = np.array(lengths)[:, None] * (0.5 * gl_w)[None, :]
        nb = len(tri_list)
        self.open_vals = np.empty((nb, 3, 6))
        self.open_grads = np.empty((nb, 3, 6, 2))
        for e in range(nb):
            v_, g_ = p2_basis(ref_pts[e])
            self.open_vals[e] = v_
            self.open_grads[e] = g_ @ self.el.jinv[self.open_tri[e]]

    def _open_blocks(self, phi: np.ndarray, params: FlowParams):
        """-int_open nu/(2 Re) (grad v^T n) . w ds; only v_x enters."""
        vals, grads = self.open_vals, self.open_grads
        phi_q = np.einsum("ti,tqi->tq", phi[self.el.cells2[self.open_tri]], vals)
        _, nu = material_properties(phi_q, params)
        c = -self.open_w * nu / (2.0 * params.Re) * self.open_nx[:, None]
        uu = np.einsum("tq,tqi,tqj->tij", c, vals, grads[..., 0])
        wu = np.einsum("tq,tqi,tqj->tij", c, vals, grads[..., 1])
        return uu, wu

    def assemble(self, prev: FlowState, phase: PhaseState, c_field: ScalarField | None,
                 lambda_global: float, lambda_volume: float, params: FlowParams, tau: float):
        el = self.el
        phi = phase.phi.coeffs
        phi_q = el.p2_values(phi)
        gphi = el.p2_gradients(phi)
        rho, nu = material_properties(phi_q, params)
        vn = np.stack([el.p2_values(prev.v.x.coeffs), el.p2_values(prev.v.y.coeffs)], axis=-1)
        visc = nu / params.Re

        adv = el.advection(vn, rho)
        mass = el.mass(rho / tau)
        blocks = {
            "uu": mass + adv + el.derivative_pair(visc, 0, 0) + 0.5 * el.derivative_pair(visc, 1, 1),
            "ww": mass + adv + el.derivative_pair(visc, 1, 1) + 0.5 * el.derivative_pair(visc, 0, 0),
            "uw": 0.5 * el.derivative_pair(visc, 1, 0),
            "wu": 0.5 * el.derivative_pair(visc, 0, 1),
            "up": -self.div[0].transpose(0, 2, 1),
            "wp": -self.div[1].transpose(0, 2, 1),
            "pu": -self.div[0],
            "pw": -self.div[1],
        }
        blocks["open_uu"], blocks["open_wu"] = self._open_blocks(phi, params)

        f_q = el.p2_values(phase.f.coeffs)
        g_q = el.p2_values(phase.g.coeffs)
        force = (g_q - lambda_global * f_q + lambda_volume)[..., None] * gphi
        fx, fy = el.load_vector(force)
        mx = el.load(rho * vn[..., 0] / tau)
        my = el.load(rho * vn[..., 1] / tau)
        rhs = np.zeros(self.size)
        o = self.off
        rhs[o["u"]:o["u"] + self.n2] = mx + fx
        rhs[o["w"]:o["w"] + self.n2] = my + fy

        pin = False
        if self.local:
            geom = interface_geometry(gphi)
            delta, P = geom.delta, geom.proj
            # (P grad N_i)_a for test functions of the x and y components
            pg = np.einsum("tqab,tqib->tqia", P, el.dN2, optimize=True)
            wd = el.wdet * delta
            ul = np.einsum("tq,tqi,qj->tij", wd, pg[..., 0], el.N2, optimize=True)
            wl = np.einsum("tq,tqi,qj->tij", wd, pg[..., 1], el.N2, optimize=True)
            blocks["ul"], blocks["wl"] = ul, wl
            blocks["lu"] = ul.transpose(0, 2, 1)
            blocks["lw"] = wl.transpose(0, 2, 1)
            blocks["ll"] = -el.stiffness(params.xi * params.eps ** 2 * phi_q ** 2)
            if self.variant is ModelVariant.C and c_field is not None and params.zeta > 0:
                excess = el.p2_values(c_field.coeffs - 1.0)
                rhs[o["l"]:] = el.load(hooke_rhs(1.0 + excess, delta, params.zeta, excess))
            pin = el.integral(delta) < 1e-12 * self.mesh.area

        A = self.pattern.matrix([blocks[name] for name, *_ in self.layout])
        self.pattern.set_identity_rows(A, self.dirichlet_rows)
        n2 = self.n2
        rhs[o["u"] + self.top] = params.shear_speed
        rhs[o["u"] + self.bottom] = -params.shear_speed
        rhs[o["w"] + self.top] = 0.0
        rhs[o["w"] + self.bottom] = 0.0
        if pin:
            row = o["l"] + self.pin_dof
            self.pattern.set_identity_rows(A, np.array([row]))
            rhs[row] = 0.0
        return A, rhs

    def solve(self, prev: FlowState, phase: PhaseState, c_field, lambda_global: float,
              lambda_volume: float, params: FlowParams, tau: float) -> FlowState:
        A, rhs = self.assemble(prev, phase, c_field, lambda_global, lambda_volume, params, tau)
        x, report = solve(A, rhs, self.solver, self.factor)
        if not report.converged:
            raise SolverError(f"flow solve residual {report.residual:.3e}", report)
        # identity rows: restore the prescribed values without solver round-off
        x[self.dirichlet_rows] = rhs[self.dirichlet_rows]
        n2, n1, o = self.n2, self.n1, self.off
        mesh = self.mesh
        v = VectorField(ScalarField(mesh, "P2", x[:n2].copy()),
                        ScalarField(mesh, "P2", x[n2:2 * n2].copy()))
        p = ScalarField(mesh, "P1", x[o["p"]:o["p"] + n1].copy())
        lam = (ScalarField(mesh, "P2", x[o["l"]:].copy()) if self.local
               else ScalarField.zeros(mesh))
        return FlowState(v, p, lam, report)


def flow_system(mesh: Mesh, variant, solver: SolverSettings | None = None) -> FlowSystem:
    per_mesh = mesh.cache.setdefault("flow", {})
    variant = ModelVariant(variant)
    sys_ = per_mesh.get(variant)
    if sys_ is None or (solver is not None and sys_.solver != solver):
        sys_ = per_mesh[variant] = FlowSystem(mesh, variant, solver)
    return sys_


def solve_flow(prev: FlowState, phase: PhaseState, c, multipliers, variant, params: FlowParams,
               tau: float, solver: SolverSettings | None = None) -> FlowState:
    """One implicit flow step with all phase-dependent coefficients at time n."""
    c_field = None if c is None else getattr(c, "c", c)
    system = flow_system(prev.v.mesh, variant, solver)
    return system.solve(prev, phase, c_field, multipliers.lambda_global,
                        multipliers.lambda_volume, params, tau)
