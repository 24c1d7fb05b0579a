"""Global volume and area Lagrange multipliers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import VectorField
from .phasefield import PhaseParams, PhaseState, elements_for, volume_area


class ConstantForceError(ValueError):
    """The 2x2 multiplier system is singular because f is (numerically) constant."""


@dataclass(frozen=True)
class GlobalMultipliers:
    lambda_global: float = 0.0
    lambda_volume: float = 0.0


@dataclass(frozen=True)
class ConservationTargets:
    V0: float
    A0: float


@dataclass(frozen=True)
class MultiplierIntegrals:
    """Quadrature integrals entering the 2x2 system."""

    area: float
    int_f: float
    int_f2: float
    int_g: float
    int_gf: float
    int_advf: float  # int (v . grad phi) f
    V: float
    A: float


def multiplier_integrals(phase: PhaseState, v: VectorField, params: PhaseParams) -> MultiplierIntegrals:
    el = elements_for(phase.phi.mesh)
    f = el.p2_values(phase.f.coeffs)
    g = el.p2_values(phase.g.coeffs)
    gphi = el.p2_gradients(phase.phi.coeffs)
    vx = el.p2_values(v.x.coeffs)
    vy = el.p2_values(v.y.coeffs)
    adv = vx * gphi[..., 0] + vy * gphi[..., 1]
    V, A = volume_area(phase.phi, params)
    return MultiplierIntegrals(
        area=el.integral(np.ones_like(f)),
        int_f=el.integral(f),
        int_f2=el.integral(f * f),
        int_g=el.integral(g),
        int_gf=el.integral(g * f),
        int_advf=el.integral(adv * f),
        V=V,
        A=A,
    )


def multiplier_system(I: MultiplierIntegrals, targets: ConservationTargets, tau: float,
                      eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Matrix and right-hand side for (lambda_volume, lambda_global).

    With the transport law d_t phi + v.grad phi = -eta (g - lambda_g f + lambda_v),
    the rows impose d/dt int phi = eta R_V and -int f d_t phi = eta R_A,
    so dV/dt = eta (V0 - V) / (4 tau) and dA/dt = eta (A0 - A) / (2 tau)
    for R_V = (V0 - V) / (2 tau), R_A = (A0 - A) / (2 tau).
    """
    rv = (targets.V0 - I.V) / (2.0 * tau)
    ra = (targets.A0 - I.A) / (2.0 * tau)
    M = np.array([[I.area, -I.int_f], [I.int_f, -I.int_f2]])
    rhs = np.array([-I.int_g - rv, -(I.int_advf / eta + I.int_gf) + ra])
    return M, rhs


def solve_multipliers(phase: PhaseState, v: VectorField, targets: ConservationTargets,
                      params: PhaseParams, tau: float, eta: float | None = None) -> GlobalMultipliers:
    eta = params.eta if eta is None else eta
    if eta == 0:
        # transport without relaxation: multipliers have no effect on phi
        return GlobalMultipliers(0.0, 0.0)
    I = multiplier_integrals(phase, v, params)
    M, rhs = multiplier_system(I, targets, tau, eta)
    det = np.linalg.det(M)
    if abs(det) <= 1e-14 * I.area * I.int_f2 or I.int_f2 == 0.0:
        raise ConstantForceError(
            "f is (numerically) constant: multiplier determinant "
            f"{det:.3e} vanishes"
        )
    lv, lg = np.linalg.solve(M, rhs)
    return GlobalMultipliers(lambda_global=float(lg), lambda_volume=float(lv))
