"""Per-step scalar observables and the diagnostics CSV."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .fields import ScalarField, VectorField, interface_geometry, surface_divergence, velocity_jacobian
from .phasefield import elements_for

log = logging.getLogger(__name__)

# degrees; covers the slight tilt the diagonal mesh imparts to axis-aligned shapes
ANGLE_SNAP = 1e-2


@dataclass(frozen=True)
class DiagRecord:
    t: float
    V: float
    A: float
    E_v: float
    E_c: float
    angle_deg: float
    lambda_global: float
    lambda_volume: float
    flow_residual: float
    phi_residual: float


CSV_COLUMNS = tuple(f.name for f in fields(DiagRecord))


def _interface_weight(phi_q, eps):
    return (1.0 - phi_q * phi_q) ** 2 / eps


def stretching_errors(phi: ScalarField, v: VectorField, c: ScalarField, eps: float) -> tuple[float, float]:
    """Instantaneous and accumulated stretching measured in the diffuse interface.

    E_v = int (1 - phi^2)^2 / eps |P:grad v| and
    E_c = int (1 - phi^2)^2 / eps |(c - 1) / c|.
    """
    el = elements_for(phi.mesh)
    weight = _interface_weight(el.p2_values(phi.coeffs), eps)
    geom = interface_geometry(el.p2_gradients(phi.coeffs))
    div_s = surface_divergence(velocity_jacobian(el, v), geom)
    # interpolate c - 1 directly so that c = 1 gives exactly zero
    excess = el.p2_values(c.coeffs - 1.0)
    E_v = el.integral(weight * np.abs(div_s))
    E_c = el.integral(weight * np.abs(excess / (1.0 + excess)))
    return E_v, E_c


def second_moments(phi: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and second-moment tensor of the indicator (phi + 1) / 2."""
    el = elements_for(phi.mesh)
    ind = 0.5 * (el.p2_values(phi.coeffs) + 1.0)
    pts = el.points
    mass = el.integral(ind)
    if not mass > 1e-12 * phi.mesh.area:
        raise ValueError("no vesicle present (indicator integral is not positive)")
    centre = np.array([el.integral(ind * pts[..., a]) for a in range(2)]) / mass
    d = pts - centre
    M = np.array([[el.integral(ind * d[..., a] * d[..., b]) for b in range(2)] for a in range(2)])
    return centre, M


def _unwrap(angle: float, previous: float) -> float:
    """Shift ``angle`` by multiples of 180 degrees to lie within 90 degrees of ``previous``."""
    return angle - 180.0 * round((angle - previous) / 180.0)


def inclination_angle(phi: ScalarField, previous: float | None = None) -> float:
    """Orientation of the major axis in degrees from the +x axis.

    Without ``previous`` the result lies in (-90, 90]; otherwise it is
    unwrapped to stay within 90 degrees of ``previous``, so a tumbling
    vesicle produces a continuously decreasing angle.  Near-circular
    shapes (eigenvalue gap below 1e-10 of the trace) keep ``previous``.
    """
    _, M = second_moments(phi)
    evals, evecs = np.linalg.eigh(M)
    if evals[1] - evals[0] < 1e-10 * (evals[0] + evals[1]):
        if previous is None:
            log.warning("moment tensor is isotropic; angle defaults to 90")
            return 90.0
        log.warning("moment tensor is isotropic; holding angle %.3f", previous)
        return previous
    major = evecs[:, 1]
    angle = math.degrees(math.atan2(major[1], major[0]))
    # fold into (-90, 90]; a tilt below ANGLE_SNAP off vertical counts as vertical
    if angle <= -90.0 + ANGLE_SNAP:
        angle += 180.0
    elif angle > 90.0 + ANGLE_SNAP:
        angle -= 180.0
    if previous is not None:
        angle = _unwrap(angle, previous)
    return angle


class DiagnosticsWriter:
    """Append-only CSV of ``DiagRecord`` rows in full double precision."""

    def __init__(self, path, append: bool = False):
        self.path = path
        new = not append
        self._fh = open(path, "a" if append else "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if new:
            self._writer.writerow(CSV_COLUMNS)
            self._fh.flush()

    def write(self, rec: DiagRecord) -> None:
        self._writer.writerow([format(x, ".17e") for x in astuple(rec)])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path) -> list[DiagRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected diagnostics header {header}")
        return [DiagRecord(*map(float, row)) for row in reader if row]


# VTK cell type of the 6-node triangle; node order matches the P2 local dofs
_VTK_QUADRATIC_TRIANGLE = 22


def _p1_to_p2(mesh, values: np.ndarray) -> np.ndarray:
    """Nodal P2 values of a P1 field (midpoints get edge averages)."""
    out = np.empty(mesh.p2.size)
    nv = len(mesh.vertices)
    out[:nv] = values
    out[nv:] = 0.5 * (values[mesh.edges[:, 0]] + values[mesh.edges[:, 1]])
    return out


def write_vtk(path, state) -> None:
    """Legacy ASCII VTK snapshot of phi, c, lambda_local, p and v on quadratic triangles."""
    mesh = state.phase.phi.mesh
    coords = mesh.p2.coords
    cells = mesh.p2.cell_dofs
    n = len(coords)
    flow = state.flow
    lines = [
        "# vtk DataFile Version 3.0",
        f"vesicle snapshot step {state.n} t {state.t:.17e}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines += [f"{x:.17e} {y:.17e} 0" for x, y in coords]
    lines.append(f"CELLS {len(cells)} {7 * len(cells)}")
    lines += ["6 " + " ".join(map(str, row)) for row in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(_VTK_QUADRATIC_TRIANGLE)] * len(cells)
    lines.append(f"POINT_DATA {n}")
    scalars = {
        "phi": state.phase.phi.coeffs,
        "c": state.stretch.c.coeffs,
        "lambda_local": flow.lambda_local.coeffs,
        "p": _p1_to_p2(mesh, flow.p.coeffs),
    }
    for name, vals in scalars.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{x:.17e}" for x in vals]
    lines.append("VECTORS v double")
    lines += [f"{a:.17e} {b:.17e} 0" for a, b in zip(flow.v.x.coeffs, flow.v.y.coeffs)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
