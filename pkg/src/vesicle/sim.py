"""Simulation driver: configuration, the per-step splitting loop, checkpoints and epsilon sweeps.

Each step runs, in this order: the coupled flow solve with all phase
quantities at time n, the phase field update with the new velocity, the
global multipliers from the new phase field, and the stretch transport
with the new velocity and phase field.
"""

from __future__ import annotations

import dataclasses
import gc
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .diagnostics import DiagnosticsWriter, DiagRecord, inclination_angle, stretching_errors, write_vtk
from .fields import ScalarField, VectorField
from .flow import FlowParams, FlowState, ModelVariant, solve_flow
from .linalg import SolverError, SolverSettings
from .mesh import Mesh, build_uniform
from .multipliers import (
    ConservationTargets,
    ConstantForceError,
    GlobalMultipliers,
    solve_multipliers,
)
from .phasefield import PhaseParams, PhaseState, advance_phi, init_ellipse, volume_area
from .stretch import StretchState, advance_c

log = logging.getLogger(__name__)

# h / eps of the reference resolution (h = 2^-5 at eps = 0.03)
RESOLUTION_RATIO = 2.0 ** -5 / 0.03
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class SimulationError(RuntimeError):
    """A sub-solve failed; carries the step index, stage and last residual."""

    def __init__(self, step: int, stage: str, residual: float, cause: Exception):
        super().__init__(f"step {step}: {stage} failed (residual {residual:.3e}): {cause}")
        self.step = step
        self.stage = stage
        self.residual = residual


def resolution_nx(eps: float, width: float) -> int:
    """Smallest even cell count with width / nx <= eps * RESOLUTION_RATIO."""
    n = math.ceil(width / (eps * RESOLUTION_RATIO) * (1.0 - 1e-12))
    return n + (n % 2)


@dataclass(frozen=True)
class SimConfig:
    """All inputs of one run.  Defaults reproduce the reference shear-flow setup.

    ``nx``/``ny`` of None derive the mesh from ``epsilon``; ``zeta`` of None
    means 1/tau.
    """

    model: ModelVariant = ModelVariant.C
    domain: tuple[float, float, float, float] = (0.0, 4.0, 0.0, 4.0)
    nx: int | None = None
    ny: int | None = None
    Re: float = 1.0
    Be: float = 20.0
    H0: float = 0.0
    visc_ratio: float = 10.0
    dens_ratio: float = 1.0
    shear_speed: float = 10.0
    epsilon: float = 0.03
    tau: float = 5e-4
    t_end: float = 8.0
    eta: float = 0.1
    xi: float = 1.0
    zeta: float | None = None
    theta: float = 0.01
    solver_tol: float = 1e-10
    solver_backend: str = "auto"
    center: tuple[float, float] = (2.0, 2.0)
    semi_axes: tuple[float, float] = (0.5, 1.25)
    rotation_deg: float = 0.0
    csv_path: str = "diagnostics.csv"
    snapshot_stride: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "model", ModelVariant(self.model))
        except ValueError:
            raise ConfigError("model", f"unknown model {self.model!r} (expected A, B or C)") from None
        object.__setattr__(self, "domain", tuple(float(x) for x in self.domain))
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))
        object.__setattr__(self, "semi_axes", tuple(float(x) for x in self.semi_axes))
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("domain", "needs x1 > x0 and y1 > y0")
        positive = ("Re", "Be", "visc_ratio", "dens_ratio", "epsilon", "tau", "t_end", "xi",
                    "solver_tol")
        for key in positive:
            val = getattr(self, key)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ConfigError(key, f"must be a positive number, got {val!r}")
        for key in ("eta", "theta", "H0", "shear_speed", "rotation_deg"):
            val = getattr(self, key)
            if not (isinstance(val, (int, float)) and math.isfinite(val)):
                raise ConfigError(key, f"must be a finite number, got {val!r}")
        if self.eta < 0:
            raise ConfigError("eta", "must be non-negative")
        if self.theta < 0:
            raise ConfigError("theta", "must be non-negative")
        if self.zeta is not None and not self.zeta >= 0:
            raise ConfigError("zeta", "must be non-negative")
        if len(self.center) != 2:
            raise ConfigError("center", "needs two coordinates")
        if len(self.semi_axes) != 2 or min(self.semi_axes) <= 0:
            raise ConfigError("semi_axes", "needs two positive lengths")
        if self.solver_backend not in ("auto", "pardiso", "lu", "gmres"):
            raise ConfigError("solver_backend", f"unknown backend {self.solver_backend!r}")
        if not (isinstance(self.snapshot_stride, int) and self.snapshot_stride >= 0):
            raise ConfigError("snapshot_stride", "must be a non-negative integer")
        for key in ("nx", "ny"):
            val = getattr(self, key)
            if val is not None and not (isinstance(val, int) and val >= 1):
                raise ConfigError(key, f"must be a positive integer, got {val!r}")
        nx, ny = self.mesh_size
        limit = self.epsilon * RESOLUTION_RATIO * (1.0 + 1e-9)
        for key, h in (("nx", (x1 - x0) / nx), ("ny", (y1 - y0) / ny)):
            if h > limit:
                raise ConfigError(
                    key, f"mesh width {h:.4g} exceeds the resolution limit {limit:.4g} for "
                    f"epsilon = {self.epsilon}"
                )
        steps = self.t_end / self.tau
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ConfigError("t_end", "must be an integer multiple of tau")

    @property
    def mesh_size(self) -> tuple[int, int]:
        x0, x1, y0, y1 = self.domain
        nx = self.nx if self.nx is not None else resolution_nx(self.epsilon, x1 - x0)
        ny = self.ny if self.ny is not None else resolution_nx(self.epsilon, y1 - y0)
        return nx, ny

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.tau))

    @property
    def zeta_effective(self) -> float:
        return 1.0 / self.tau if self.zeta is None else self.zeta

    def phase_params(self) -> PhaseParams:
        return PhaseParams(eps=self.epsilon, H0=self.H0, eta=self.eta, ReBe=self.Re * self.Be)

    def flow_params(self) -> FlowParams:
        return FlowParams(
            Re=self.Re, visc_ratio=self.visc_ratio, dens_ratio=self.dens_ratio, xi=self.xi,
            zeta=self.zeta_effective if self.model is ModelVariant.C else 0.0,
            shear_speed=self.shear_speed, eps=self.epsilon,
        )

    def solver(self) -> SolverSettings:
        return SolverSettings(tol=self.solver_tol, backend=self.solver_backend)

    def build_mesh(self) -> Mesh:
        nx, ny = self.mesh_size
        return build_uniform(self.domain, nx, ny)

    def to_dict(self) -> dict:
        """Plain values, omitting entries left at None (auto)."""
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if val is None:
                continue
            if isinstance(val, ModelVariant):
                val = val.value
            elif isinstance(val, tuple):
                val = list(val)
            out[f.name] = val
        return out

    def physics_hash(self) -> str:
        """Digest of everything that determines the trajectory (not t_end or output)."""
        d = self.to_dict()
        for key in ("t_end", "csv_path", "snapshot_stride"):
            d.pop(key, None)
        d["mesh_size"] = list(self.mesh_size)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass(eq=False)
class SimState:
    n: int
    t: float
    phase: PhaseState
    flow: FlowState
    stretch: StretchState
    multipliers: GlobalMultipliers
    targets: ConservationTargets
    angle: float = float("nan")

    @property
    def mesh(self) -> Mesh:
        return self.phase.phi.mesh


def _angle(phi: ScalarField, previous: float | None) -> float:
    try:
        return inclination_angle(phi, None if previous is None or math.isnan(previous) else previous)
    except ValueError:
        return float("nan")


def init(config: SimConfig, mesh: Mesh | None = None) -> SimState:
    """State at t = 0: ellipse at rest in the wall-driven channel, c = 1."""
    mesh = mesh or config.build_mesh()
    pp = config.phase_params()
    phase = init_ellipse(mesh, pp, config.center, config.semi_axes, config.rotation_deg)
    V0, A0 = volume_area(phase.phi, pp)
    return SimState(
        n=0,
        t=0.0,
        phase=phase,
        flow=FlowState.rest(mesh, config.shear_speed),
        stretch=StretchState.unstretched(mesh, config.theta),
        multipliers=GlobalMultipliers(),
        targets=ConservationTargets(V0, A0),
        angle=_angle(phase.phi, None),
    )


def _has_vesicle(targets: ConservationTargets) -> bool:
    return targets.V0 > 0 and targets.A0 > 0


def step(state: SimState, config: SimConfig, hooks: dict | None = None) -> tuple[SimState, DiagRecord]:
    """Advance one time step; ``hooks`` maps stage names to callbacks for instrumentation."""
    hooks = hooks or {}
    tau = config.tau
    pp = config.phase_params()
    solver = config.solver()
    n1 = state.n + 1

    def run_stage(name, fn, residual=float("nan")):
        try:
            return fn()
        except SolverError as exc:
            res = exc.report.residual if exc.report is not None else residual
            raise SimulationError(n1, name, res, exc) from exc
        except ConstantForceError as exc:
            raise SimulationError(n1, name, residual, exc) from exc

    if "flow" in hooks:
        hooks["flow"](state)
    flow = run_stage("flow", lambda: solve_flow(
        state.flow, state.phase, state.stretch, state.multipliers, config.model,
        config.flow_params(), tau, solver))
    if "phase" in hooks:
        hooks["phase"](state, flow)
    phase = run_stage("phase", lambda: advance_phi(
        state.phase, flow.v, state.multipliers, pp, tau, solver))
    if "multipliers" in hooks:
        hooks["multipliers"](state, flow, phase)
    if _has_vesicle(state.targets):
        mult = run_stage("multipliers", lambda: solve_multipliers(
            phase, flow.v, state.targets, pp, tau))
    else:
        mult = state.multipliers
    if "stretch" in hooks:
        hooks["stretch"](state, flow, phase)
    stretch = run_stage("stretch", lambda: advance_c(state.stretch, flow.v, phase.phi, tau, solver))

    V, A = volume_area(phase.phi, pp)
    E_v, E_c = stretching_errors(phase.phi, flow.v, stretch.c, config.epsilon)
    angle = _angle(phase.phi, state.angle)
    new = SimState(n1, n1 * tau, phase, flow, stretch, mult, state.targets, angle)
    rec = DiagRecord(
        t=new.t, V=V, A=A, E_v=E_v, E_c=E_c, angle_deg=angle,
        lambda_global=mult.lambda_global, lambda_volume=mult.lambda_volume,
        flow_residual=flow.report.residual if flow.report is not None else 0.0,
        phi_residual=phase.residual,
    )
    return new, rec


# -- checkpoints ----------------------------------------------------------

def save_checkpoint(path, state: SimState, config: SimConfig) -> None:
    """Write every dof vector and scalar of ``state`` to a versioned npz file."""
    ph, fl, st = state.phase, state.flow, state.stretch
    with open(path, "wb") as fh:
        np.savez(
            fh,
            version=CHECKPOINT_VERSION,
            config_hash=config.physics_hash(),
            n=state.n,
            t=state.t,
            angle=state.angle,
            phi=ph.phi.coeffs, f=ph.f.coeffs, f_c=ph.f_c.coeffs, g=ph.g.coeffs,
            phi_residual=ph.residual,
            vx=fl.v.x.coeffs, vy=fl.v.y.coeffs, p=fl.p.coeffs, lam=fl.lambda_local.coeffs,
            flow_residual=np.nan if fl.report is None else fl.report.residual,
            c=st.c.coeffs, theta=st.theta,
            multipliers=[state.multipliers.lambda_global, state.multipliers.lambda_volume],
            targets=[state.targets.V0, state.targets.A0],
        )


def load_checkpoint(path, config: SimConfig, mesh: Mesh | None = None) -> SimState:
    with np.load(path) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
        if str(data["config_hash"]) != config.physics_hash():
            raise ValueError("checkpoint was written for a different configuration")
        mesh = mesh or config.build_mesh()

        def p2(key):
            return ScalarField(mesh, "P2", data[key].copy())

        phase = PhaseState(p2("phi"), p2("f"), p2("f_c"), p2("g"), float(data["phi_residual"]))
        flow = FlowState(VectorField(p2("vx"), p2("vy")), ScalarField(mesh, "P1", data["p"].copy()),
                         p2("lam"))
        lg, lv = (float(x) for x in data["multipliers"])
        V0, A0 = (float(x) for x in data["targets"])
        return SimState(
            n=int(data["n"]), t=float(data["t"]), phase=phase, flow=flow,
            stretch=StretchState(p2("c"), float(data["theta"])),
            multipliers=GlobalMultipliers(lg, lv), targets=ConservationTargets(V0, A0),
            angle=float(data["angle"]),
        )


# -- runs -----------------------------------------------------------------

@dataclass
class RunResult:
    state: SimState
    records: list[DiagRecord] = field(default_factory=list)


def run(config: SimConfig, out_dir=None, state: SimState | None = None,
        checkpoint_every: int = 0, on_step: Callable | None = None) -> RunResult:
    """Step from ``state`` (or a fresh init) to ``config.t_end``.

    With ``out_dir`` the diagnostics CSV is written there row by row
    (appended when resuming), VTK snapshots are written every
    ``config.snapshot_stride`` steps and, if ``checkpoint_every`` > 0,
    checkpoints ``checkpoint_<n>.npz``.
    """
    resumed = state is not None
    state = state if resumed else init(config)
    writer = None
    stride = config.snapshot_stride
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        writer = DiagnosticsWriter(out_dir / config.csv_path, append=resumed)
        if stride and state.n % stride == 0 and not resumed:
            write_vtk(out_dir / f"snapshot_{state.n:06d}.vtk", state)
    result = RunResult(state)
    try:
        while state.n < config.n_steps:
            state, rec = step(state, config)
            result.records.append(rec)
            result.state = state
            if writer is not None:
                writer.write(rec)
                if stride and state.n % stride == 0:
                    write_vtk(out_dir / f"snapshot_{state.n:06d}.vtk", state)
                if checkpoint_every and state.n % checkpoint_every == 0:
                    save_checkpoint(out_dir / f"checkpoint_{state.n:06d}.npz", state, config)
            if on_step is not None:
                on_step(state, rec)
    finally:
        if writer is not None:
            writer.close()
    return result


# -- epsilon sweeps -------------------------------------------------------

OBSERVABLES = {"Ev": "E_v", "Ec": "E_c"}


@dataclass(frozen=True)
class SweepRow:
    eps: float
    value: float
    nx: int
    runtime: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    slope: float


class SweepError(RuntimeError):
    def __init__(self, message: str, rows: list[SweepRow]):
        super().__init__(message)
        self.rows = rows


def fit_loglog_slope(eps, values) -> float:
    """Least-squares slope of log(values) against log(eps)."""
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    if len(x) < 2 or not np.all(np.isfinite(y)):
        raise ValueError("need at least two positive observations")
    A = np.stack([x, np.ones_like(x)], axis=1)
    slope, _ = np.linalg.lstsq(A, y, rcond=None)[0]
    return float(slope)


def _simulate_observable(config: SimConfig, observable: str) -> float:
    res = run(config)
    return getattr(res.records[-1], OBSERVABLES[observable])


def sweep_epsilon(base: SimConfig, eps_list, observable: str, t_measure: float,
                  csv_path=None, evaluate: Callable[[SimConfig], float] | None = None) -> SweepResult:
    """Run ``base`` at each epsilon (mesh refined with it) and fit the convergence slope.

    ``evaluate`` replaces the simulation by a callable config -> value
    (used to test the harness itself).
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3:
        raise ValueError("an epsilon sweep needs at least 3 values")
    if observable not in OBSERVABLES:
        raise ValueError(f"observable must be one of {sorted(OBSERVABLES)}")
    evaluate = evaluate or (lambda cfg: _simulate_observable(cfg, observable))
    rows: list[SweepRow] = []
    fh = open(csv_path, "w") if csv_path is not None else None
    try:
        if fh is not None:
            fh.write("eps,observable,nx,runtime\n")
            fh.flush()
        for eps in eps_list:
            cfg = dataclasses.replace(base, epsilon=eps, nx=None, ny=None, t_end=t_measure)
            t0 = time.perf_counter()
            try:
                value = float(evaluate(cfg))
            except Exception as exc:
                raise SweepError(f"sweep case eps={eps} failed: {exc}", rows) from exc
            row = SweepRow(eps, value, cfg.mesh_size[0], time.perf_counter() - t0)
            rows.append(row)
            log.info("sweep eps=%g %s=%.6e nx=%d (%.1fs)", eps, observable, value, row.nx, row.runtime)
            if fh is not None:
                fh.write(f"{eps:.17e},{value:.17e},{row.nx},{row.runtime:.6e}\n")
                fh.flush()
            # free the finished case's mesh and factorizations before the next one
            gc.collect()
        slope = fit_loglog_slope([r.eps for r in rows], [r.value for r in rows])
        if fh is not None:
            fh.write(f"# slope = {slope:.17e}\n")
    finally:
        if fh is not None:
            fh.close()
    return SweepResult(rows, slope)
