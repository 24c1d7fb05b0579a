"""Acceptance criteria 1-14, one test each, each printing a PASS/FAIL line.

Two profiles, selected with the environment variable ``ARTIFACT_ACCEPTANCE``:

``smoke`` (default)
    Coarse interface (epsilon = 0.0848, 46 x 46 cells) and tau = 2.5e-3 for
    the long shear-flow runs; the epsilon sweeps use the three or four
    largest widths.  About two hours on one core.
``full``
    The reference setup (epsilon = 0.03, 128 x 128 cells, tau = 5e-4,
    t_end = 8 at Re = 1).  Days of compute on one core.

The long runs are session fixtures shared between criteria.  Set
``ARTIFACT_ACCEPTANCE_DIR`` to keep their diagnostics CSVs.
"""

import dataclasses
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import multiplier_integrals_by_loop
from vesicle.fields import GRAD_FLOOR, ScalarField, VectorField, interface_geometry
from vesicle.flow import FlowParams, FlowState, flow_system, solve_flow
from vesicle.mesh import build_uniform, dunavant5, p1_basis, p2_basis
from vesicle.multipliers import (
    ConservationTargets,
    ConstantForceError,
    GlobalMultipliers,
    multiplier_integrals,
    solve_multipliers,
)
from vesicle.phasefield import (
    PhaseParams,
    PhaseState,
    bending_chain,
    elements_for,
    init_ellipse,
    tanh_profile,
)
from vesicle.sim import SimConfig, init, load_checkpoint, run, sweep_epsilon
from vesicle.stretch import StretchState, advance_c

PROFILE = os.environ.get("ARTIFACT_ACCEPTANCE", "smoke")
if PROFILE not in ("smoke", "full"):
    raise ValueError(f"ARTIFACT_ACCEPTANCE must be 'smoke' or 'full', got {PROFILE!r}")

if PROFILE == "full":
    LONG = dict(epsilon=0.03, tau=5e-4)
    T_END = {"tt": 8.0, "tb": 2.5}
    SWEEP_EV = dict(eps=[0.0848, 0.06, 0.0424, 0.03], tau=5e-4)
    SWEEP_EC = dict(eps=[0.0848, 0.06, 0.0424, 0.03], tau=5e-4)
else:
    LONG = dict(epsilon=0.0848, tau=2.5e-3)
    T_END = {"tt": 3.5, "tb": 2.5}
    SWEEP_EV = dict(eps=[0.0848, 0.06, 0.0424, 0.03], tau=5e-4)
    SWEEP_EC = dict(eps=[0.0848, 0.06, 0.0424], tau=2.5e-3)

RE = {"tt": 1.0, "tb": 1.0 / 200.0}
TRANSIENT = 0.5  # time units excluded from the conservation check
pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion, then assert."""

    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:2d}] {'PASS' if ok else 'FAIL'} ({PROFILE}): {detail}")
        assert ok, detail

    return report


def _keep_dir(name):
    root = os.environ.get("ARTIFACT_ACCEPTANCE_DIR")
    if not root:
        return None
    path = Path(root) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _long_run(regime, model):
    cfg = SimConfig(model=model, Re=RE[regime], t_end=T_END[regime], **LONG)
    t0 = time.perf_counter()
    res = run(cfg, _keep_dir(f"{regime}_{model}"))
    print(f"\n{regime} model {model}: {len(res.records)} steps in {time.perf_counter() - t0:.0f}s")
    return res


@pytest.fixture(scope="session")
def tank_treading():
    """Re = 1 runs of all three models."""
    return {m: _long_run("tt", m) for m in "ABC"}


@pytest.fixture(scope="session")
def tumbling():
    """Re = 1/200 runs of all three models."""
    return {m: _long_run("tb", m) for m in "ABC"}


def _series(result, name):
    return np.array([getattr(r, name) for r in result.records])


# -- property based ----------------------------------------------------------

def test_01_couette_exactness(verdict):
    mesh = build_uniform((0.0, 4.0, 0.0, 4.0), 32, 32)
    phase = PhaseState(ScalarField.constant(mesh, -1.0), *(ScalarField.zeros(mesh) for _ in range(3)))
    state = FlowState.rest(mesh, 10.0)
    params = FlowParams(eps=0.03, shear_speed=10.0)
    for _ in range(40):
        state = solve_flow(state, phase, StretchState.unstretched(mesh), GlobalMultipliers(), "C",
                           params, 10.0)
    y = mesh.p2.coords[:, 1]
    err = max(np.max(np.abs(state.v.x.coeffs - 5.0 * (y - 2.0))), np.max(np.abs(state.v.y.coeffs)))
    verdict(1, err < 1e-6, f"max |v - (5(y-2), 0)| = {err:.2e} (tol 1e-6)")


def test_02_equilibrium_profile_identity(verdict):
    eps, sizes = 0.2, (32, 64, 128)
    params = PhaseParams(eps=eps)
    norms, inner = [], []
    for n in sizes:
        mesh = build_uniform((0.0, 4.0, 0.0, 4.0), n, n)
        el = elements_for(mesh)
        phi = ScalarField(mesh, "P2", tanh_profile(2.0 - mesh.p2.coords[:, 1], eps))
        f, f_c, _ = bending_chain(phi, params)
        away = np.abs(el.points[..., 0] - 2.0) < 1.5
        row = []
        for field in (f, f_c):
            sq = el.p2_values(field.coeffs) ** 2
            row.append((math.sqrt(el.integral(sq)), math.sqrt(el.integral(sq * away))))
        norms.append([r[0] for r in row])
        inner.append([r[1] for r in row])
    norms, inner = np.array(norms), np.array(inner)
    rates = np.log2(norms[:-1] / norms[1:])
    inner_rates = np.log2(inner[:-1] / inner[1:])
    detail = (f"L2 orders f {rates[:, 0].round(2).tolist()}, f_c {rates[:, 1].round(2).tolist()} "
              f"(need >= 2); away from the side walls {inner_rates[:, 0].round(2).tolist()}")
    verdict(2, bool(np.all(rates >= 2.0)), detail)


def test_03_invariant_suites(verdict):
    quad = dunavant5()
    x, y = quad.xi[:, 0], quad.xi[:, 1]
    worst = 0.0
    for p in range(6):
        for q in range(6 - p):
            exact = math.factorial(p) * math.factorial(q) / math.factorial(p + q + 2)
            worst = max(worst, abs(np.dot(quad.weights, x ** p * y ** q) - exact))
    for basis in (p1_basis, p2_basis):
        val, grad = basis(quad.xi)
        worst = max(worst, np.max(np.abs(val.sum(axis=1) - 1.0)), np.max(np.abs(grad.sum(axis=1))))
    mesh = build_uniform((0.0, 4.0, 0.0, 4.0), 32, 32)
    el = elements_for(mesh)
    phi = init_ellipse(mesh, PhaseParams(eps=0.15), rotation_deg=30).phi
    geom = interface_geometry(el.p2_gradients(phi.coeffs))
    P = geom.proj[geom.norm_sq > GRAD_FLOOR]
    worst = max(worst, np.max(np.abs(P @ P - P)), np.max(np.abs(P - np.swapaxes(P, -1, -2))),
                np.max(np.abs(np.trace(P, axis1=-2, axis2=-1) - 1.0)))
    verdict(3, worst <= 1e-12, f"largest invariant violation {worst:.2e} (tol 1e-12)")


def test_04_multiplier_oracle(verdict):
    mesh = build_uniform((0.0, 4.0, 0.0, 4.0), 8, 8)
    rng = np.random.default_rng(4)
    xy = mesh.p2.coords
    worst = 0.0
    for _ in range(5):
        def smooth():
            # amplitude kept away from zero so that f is far from constant
            a = rng.normal(size=4)
            amp = 1.0 + abs(a[1])
            return a[0] + amp * np.sin(xy[:, 0] + a[2]) * np.cos(0.7 * xy[:, 1] + a[3])

        phi, f, g, vx, vy = (smooth() for _ in range(5))
        S = lambda c: ScalarField(mesh, "P2", c)
        phase = PhaseState(S(phi), S(f), S(f), S(g))
        v = VectorField(S(vx), S(vy))
        pp, tau = PhaseParams(eps=0.3, eta=0.1), 1e-3
        targets = ConservationTargets(2.0, 5.0)
        I = multiplier_integrals(phase, v, pp)
        ref = multiplier_integrals_by_loop(mesh, phi, f, g, vx, vy)
        rv = (targets.V0 - I.V) / (2 * tau)
        ra = (targets.A0 - I.A) / (2 * tau)
        M = np.array([[ref["area"], -ref["f"]], [ref["f"], -ref["f2"]]])
        rhs = np.array([-ref["g"] - rv, -(ref["advf"] / pp.eta + ref["gf"]) + ra])
        for key, val in (("area", I.area), ("f", I.int_f), ("f2", I.int_f2), ("g", I.int_g),
                         ("gf", I.int_gf), ("advf", I.int_advf)):
            worst = max(worst, abs(val - ref[key]) / max(1.0, abs(ref[key])))
        expected = np.linalg.solve(M, rhs)
        m = solve_multipliers(phase, v, targets, pp, tau)
        got = np.array([m.lambda_volume, m.lambda_global])
        worst = max(worst, np.max(np.abs(got - expected)) / np.max(np.abs(expected)))
    const = ScalarField.constant(mesh, 3.0)
    try:
        solve_multipliers(PhaseState(const, const, const, const), VectorField.zeros(mesh),
                          ConservationTargets(2.0, 5.0), PhaseParams(eps=0.3), 1e-3)
        raised = False
    except ConstantForceError:
        raised = True
    verdict(4, worst <= 1e-12 and raised,
            f"relative deviation of integrals and multipliers from the dense oracle {worst:.2e} (tol 1e-12); constant f raises: {raised}")


def test_05_models_b_and_c_identical_at_unit_concentration(verdict):
    cfg = SimConfig(epsilon=0.06, tau=5e-4, t_end=0.5)
    state = init(cfg)
    args = (state.flow, state.phase, state.stretch.c, 0.4, -0.2, cfg.flow_params(), cfg.tau)
    A_b, rhs_b = flow_system(state.mesh, "B").assemble(*args)
    A_c, rhs_c = flow_system(state.mesh, "C").assemble(*args)
    same = (np.array_equal(A_b.indptr, A_c.indptr) and np.array_equal(A_b.indices, A_c.indices)
            and A_b.data.tobytes() == A_c.data.tobytes() and rhs_b.tobytes() == rhs_c.tobytes())
    verdict(5, same, f"matrix and right-hand side bitwise identical: {same}")


def test_06_stretch_ode_oracle(verdict):
    eps, s, tau, steps = 0.15, 1.0, 1e-3, 100
    mesh = build_uniform((0.0, 4.0, 0.0, 4.0), 32, 32)
    x, y = mesh.p2.coords.T
    phi = ScalarField(mesh, "P2", tanh_profile(2.0 - y, eps))
    # planar interface y = 2 with v = (s (x - 2), 0): surface divergence s
    v = VectorField(ScalarField(mesh, "P2", s * (x - 2.0)), ScalarField.zeros(mesh))
    state = StretchState.unstretched(mesh, 0.0)
    for _ in range(steps):
        state = advance_c(state, v, phi, tau)
    el = elements_for(mesh)
    weight = (1.0 - el.p2_values(phi.coeffs) ** 2) ** 2 * (np.abs(el.points[..., 0] - 2.0) < 0.5)
    avg = el.integral(weight * el.p2_values(state.c.coeffs)) / el.integral(weight)
    exact = math.exp(-s * tau * steps)
    rel = abs(avg / exact - 1.0)
    verdict(6, rel <= 0.02, f"interface mean c = {avg:.6f}, exp(-st) = {exact:.6f}, rel. dev. {rel:.2e} (tol 2%)")


def test_07_determinism_and_restart(verdict, tmp_path):
    cfg = SimConfig(epsilon=0.0848, tau=2.5e-3, t_end=0.025)
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b", checkpoint_every=5)
    half = dataclasses.replace(cfg, t_end=0.0125)
    run(half, tmp_path / "c")
    state = load_checkpoint(tmp_path / "b" / "checkpoint_000005.npz", cfg)
    run(cfg, tmp_path / "c", state=state)
    csv = {k: (tmp_path / k / cfg.csv_path).read_bytes() for k in "abc"}
    repeat, restart = csv["a"] == csv["b"], csv["a"] == csv["c"]
    verdict(7, repeat and restart,
            f"repeat run bitwise equal: {repeat}; checkpoint restart bitwise equal: {restart}")


# -- shear-flow reproduction ------------------------------------------------------

def test_08_conservation(verdict, tank_treading):
    lines, ok = [], True
    area = {}
    for model, res in tank_treading.items():
        t = _series(res, "t")
        late = t >= TRANSIENT
        V0, A0 = res.state.targets.V0, res.state.targets.A0
        dv = np.max(np.abs(_series(res, "V")[late] - V0)) / V0
        area[model] = np.max(np.abs(_series(res, "A")[late] - A0)) / A0
        ok &= dv < 5e-3
        lines.append(f"{model}: max dV/V0 {dv:.2e}, max dA/A0 {area[model]:.2e}")
    ok &= area["B"] <= area["A"] and area["C"] <= area["A"]
    verdict(8, bool(ok), f"t >= {TRANSIENT}: " + "; ".join(lines) + " (need dV < 0.5%, dA of B, C <= A)")


def _sweep(model, observable, t_measure, case):
    base = SimConfig(model=model, tau=case["tau"], t_end=t_measure)
    keep = _keep_dir("sweeps")
    path = keep / f"{observable}_{model}.csv" if keep else None
    return sweep_epsilon(base, case["eps"], observable, t_measure, csv_path=path)


def test_09_stretching_rate_convergence(verdict):
    res = _sweep("B", "Ev", 0.025, SWEEP_EV)
    table = ", ".join(f"{r.eps:g}: {r.value:.4e}" for r in res.rows)
    verdict(9, 1.0 <= res.slope <= 2.0, f"E_v slope {res.slope:.3f} (need [1, 2]); {table}")


def test_10_accumulated_stretching_convergence(verdict):
    slopes, tables = {}, []
    for model in "BC":
        res = _sweep(model, "Ec", 0.5, SWEEP_EC)
        slopes[model] = res.slope
        tables.append(f"{model}: " + ", ".join(f"{r.eps:g}: {r.value:.4e}" for r in res.rows))
    ok = all(1.0 <= s <= 2.0 for s in slopes.values())
    verdict(10, ok, f"E_c slopes B {slopes['B']:.3f}, C {slopes['C']:.3f} (need [1, 2]); " + "; ".join(tables))


def _ordering(runs):
    ec = {m: runs[m].records[-1].E_c for m in "ABC"}
    gap_cb = (ec["B"] - ec["C"]) / ec["B"]
    gap_ba = (ec["A"] - ec["B"]) / ec["A"]
    return ec, gap_cb, gap_ba


def test_11_stretching_ordering(verdict, tank_treading, tumbling):
    ok, parts = True, []
    for label, runs in (("Re=1", tank_treading), ("Re=1/200", tumbling)):
        ec, gap_cb, gap_ba = _ordering(runs)
        ok &= gap_cb >= 0.2 and gap_ba >= 0.2
        parts.append(f"{label}: E_c A {ec['A']:.3e}, B {ec['B']:.3e}, C {ec['C']:.3e}, "
                     f"gaps (B-C)/B {gap_cb:.2f}, (A-B)/A {gap_ba:.2f}")
    verdict(11, bool(ok), "; ".join(parts) + " (need C < B < A, gaps >= 0.2)")


def test_12_tank_treading(verdict, tank_treading):
    final, drift = {}, {}
    for model, res in tank_treading.items():
        t, ang = _series(res, "t"), _series(res, "angle_deg")
        last = t >= t[-1] - 1.0 - 1e-12
        drift[model] = float(np.ptp(ang[last]))
        final[model] = float(ang[-1])
    steady = all(d < 1.0 for d in drift.values())
    diffs = {m: final[m] - final["A"] for m in "BC"}
    ok = steady and all(2.0 <= d <= 6.0 for d in diffs.values())
    verdict(12, ok, f"angle range over the last time unit {dict((m, round(d, 3)) for m, d in drift.items())} "
                    f"(need < 1); final angles {dict((m, round(a, 2)) for m, a in final.items())}, "
                    f"B-A {diffs['B']:.2f}, C-A {diffs['C']:.2f} (need 4 +- 2)")


def _first_tumble(res):
    t, ang = _series(res, "t"), _series(res, "angle_deg")
    below = np.flatnonzero(ang < -90.0)
    return float(t[below[0]]) if len(below) else math.inf


def test_13_tumbling(verdict, tumbling):
    times = {m: _first_tumble(tumbling[m]) for m in "ABC"}
    ok = all(math.isfinite(v) for v in times.values()) and times["B"] > times["A"] and times["C"] > times["A"]
    mins = {m: round(float(_series(tumbling[m], "angle_deg").min()), 1) for m in "ABC"}
    verdict(13, ok, f"first time below -90 deg {times}; lowest angles {mins} (need all finite, B, C later than A)")


def test_14_self_correction(verdict, tumbling):
    parts, ok = [], True
    for model in "BC":
        res = tumbling[model]
        t, ang, ec = _series(res, "t"), _series(res, "angle_deg"), _series(res, "E_c")
        start = np.flatnonzero(ang < 0.0)
        if model == "C":
            if len(start) == 0 or not math.isfinite(_first_tumble(res)):
                ok = False
                parts.append("C: no tumbling event")
                continue
            # baseline: accumulated stretching when the major axis passes the flow direction
            base = ec[start[0]]
            ok &= ec[-1] <= 1.5 * base
            parts.append(f"C: E_c at 0 deg {base:.3e}, peak {ec.max():.3e}, final {ec[-1]:.3e} (need <= 1.5x)")
        else:
            drops = np.diff(ec)
            worst = float(drops.min())
            ok &= worst >= 0.0
            parts.append(f"B: largest per-step decrease of E_c {-min(worst, 0.0):.3e} (need none)")
    verdict(14, bool(ok), "; ".join(parts))
