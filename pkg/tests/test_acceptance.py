"""Acceptance criteria, one PASS/FAIL line each in the terminal summary.

Criteria 1-5 reuse the report written by ``kelsim validate``; the rest run the
coupled and Barenblatt presets at the stated resolutions.
"""

import copy
import json
import math
import time

import numpy as np
import pytest

from kelsim import cli, diagnostics as diag
from kelsim.density import ModelParams
from kelsim.grid import integrate, make_grid
from kelsim.oracles import BarenblattSpec, barenblatt_on_grid
from kelsim.system import weak_form_residual
from kelsim.validation import barenblatt_errors

pytestmark = pytest.mark.slow


def coupled_config(N):
    raw = copy.deepcopy(cli.PRESETS["coupled"])
    raw["grid"]["N"] = N
    return cli.ExperimentConfig.from_dict(raw)


@pytest.fixture(scope="module")
def validate_runs(tmp_path_factory):
    """Two full ``kelsim validate`` runs; the first report feeds criteria 1-5."""
    outs, codes, seconds = [], [], []
    for i in range(2):
        out = tmp_path_factory.mktemp(f"validate{i}")
        start = time.perf_counter()
        codes.append(cli.main(["validate", "--jobs", "5", "--out", str(out)]))
        seconds.append(time.perf_counter() - start)
        outs.append(out)
    report = json.loads((outs[0] / "validate.json").read_text())
    return {"outs": outs, "codes": codes, "seconds": seconds, "checks": {r["name"]: r for r in report["terms"]}}


@pytest.fixture(scope="module")
def coupled_trajs():
    return {N: cli._simulate(coupled_config(N)) for N in (128, 256)}


@pytest.fixture(scope="module")
def barenblatt_traj():
    return cli._simulate(cli.preset_config("barenblatt"))


def test_c01_barenblatt_convergence(validate_runs, acceptance):
    v = validate_runs["checks"]["barenblatt_convergence"]["values"]
    start = time.perf_counter()
    barenblatt_errors()
    seconds = time.perf_counter() - start
    ok = v["l1_error"][-1] <= 0.02 and v["order"] >= 0.8 and seconds <= 60
    detail = f"L1 error at N=512 {v['l1_error'][-1]:.3e} (<= 0.02), order {v['order']:.3f} (>= 0.8), {seconds:.1f} s (<= 60)"
    assert acceptance(1, "Barenblatt convergence", ok, detail), detail


def test_c02_mass_conservation(validate_runs, coupled_trajs, acceptance):
    drifts = validate_runs["checks"]["mass_conservation"]["values"]["drifts"]
    drifts = drifts + [t.mass_drift() for t in coupled_trajs.values()]
    worst = max(drifts)
    detail = f"max relative drift {worst:.3e} over {len(drifts)} trajectories (<= 1e-10)"
    assert acceptance(2, "mass conservation", worst <= 1e-10, detail), detail


def test_c03_elliptic_crossvalidation(validate_runs, acceptance):
    v = validate_runs["checks"]["elliptic_crossvalidation"]["values"]
    ok = v["relative_linf"] <= 1e-4 and v["residual"] <= 1e-10
    detail = f"spectral vs convolution {v['relative_linf']:.3e} (<= 1e-4), residual {v['residual']:.3e} (<= 1e-10)"
    assert acceptance(3, "elliptic cross-validation", ok, detail), detail


def test_c04_bessel_closed_form(validate_runs, acceptance):
    v = validate_runs["checks"]["bessel_kernels"]["values"]
    ok = v["closed_form_rel_error"] <= 1e-8 and abs(v["lattice_integral"] - 1.0 / 2.0) <= 1e-4
    detail = f"n=3 relative error {v['closed_form_rel_error']:.3e} (<= 1e-8), lattice int G {v['lattice_integral']:.8f} vs 1/gamma = 0.5 (1e-4)"
    assert acceptance(4, "Bessel closed form", ok, detail), detail


def test_c05_psi_bounds(validate_runs, acceptance):
    counts = validate_runs["checks"]["psi_bounds"]["values"]["violations"]
    total = sum(counts.values())
    detail = f"{total} violations over {len(counts)} (n, l) pairs x 10^4 samples"
    assert acceptance(5, "psi_l bounds", total == 0 and len(counts) == 9, detail), detail


def test_c06_decoupled_contraction(acceptance):
    start = time.perf_counter()
    params = ModelParams(m=2, q=2, gamma=1.0, chi=0)
    g = make_grid(1, 3.0, 512)
    small, large = BarenblattSpec(2, 1, 1.0, 0.1), BarenblattSpec(2, 1, 1.1, 0.1)
    u0, uh0 = barenblatt_on_grid(g, 0.0, small), barenblatt_on_grid(g, 0.0, large)
    T = 1.0
    samples = np.linspace(0, T, 21)
    ordered = diag.l1_contraction_experiment(params, g, u0, uh0, T, samples)
    # second pair: a bump against its shifted copy, not ordered, in n = 2
    g2 = make_grid(2, 4.0, 128)
    s = np.minimum(g2.radius() / 1.2, 0.999)
    bump = 5.0 * np.where(g2.radius() < 1.2, np.exp(1 - 1 / (1 - s**2)), 0.0)
    cfg = coupled_config(128)
    shifted = cli._perturbed(cfg, bump, {"shift": [0.3, 0.0], "l1": 1e-2})
    unordered = diag.l1_contraction_experiment(params, g2, bump, shifted, 0.05, np.linspace(0, 0.05, 11))
    seconds = time.perf_counter() - start

    ok = True
    worst_rise = 0.0
    for res, u_a, u_b, grid in ((ordered, u0, uh0, g), (unordered, bump, shifted, g2)):
        norm = max(integrate(u_a, grid), integrate(u_b, grid))
        rise = float(np.max(np.diff(res.D))) / norm
        worst_rise = max(worst_rise, rise)
        ok &= rise <= 1e-10 and not any("stopped" in f for f in res.flags)
    band = float(np.max(np.abs(ordered.D - 0.1)))
    ok &= band <= 1e-3 and seconds <= 120
    detail = (f"ordered Barenblatts |D - 0.1| <= {band:.2e} (1e-3), largest rise of D {worst_rise:.2e} x ||u0||_1 "
              f"(<= 1e-10), {seconds:.1f} s (<= 120)")
    assert acceptance(6, "decoupled L1 contraction", ok, detail), detail


def test_c07_coupled_contraction(acceptance):
    results = {}
    for N in (128, 256):
        cfg = coupled_config(N)
        sec = cfg.section("contraction")
        u0 = cli.build_initial(cfg)
        uh = cli._perturbed(cfg, u0, sec)
        T = cfg.need_T()
        results[N] = diag.l1_contraction_experiment(
            cfg.params, cfg.grid, u0, uh, T, np.linspace(0, T, int(sec["samples"]))
        )
    lam = {N: r.lambda_fit for N, r in results.items()}
    ok = all(x is not None and math.isfinite(x) for x in lam.values())
    ok = ok and abs(lam[128] - lam[256]) <= 0.3 * abs(lam[256])
    ratios = {}
    for N, r in results.items():
        T = float(r.times[-1])
        ratios[N] = float(r.D[-1] / r.D[0])
        ok = ok and ratios[N] <= math.exp(lam[N] * T) * 1.05 and not r.flags
    detail = (f"lambda_fit {lam[128]:.4f} (N=128) vs {lam[256]:.4f} (N=256) within 30%; "
              f"D(T)/D(0) {ratios[128]:.4f}, {ratios[256]:.4f} <= exp(lambda T) 1.05")
    assert acceptance(7, "coupled contraction stability", ok, detail), detail


def _fit_with_relative_A(traj, center, t0, R, J, fraction=0.1):
    cyl = diag.make_intrinsic_cylinder(traj, center, t0, R, 1.0)
    return diag.estimate_holder_exponent(traj, center, t0, R, fraction * cyl.omega, J)


def test_c08_holder_decay(barenblatt_traj, acceptance):
    sec = cli.PRESETS["barenblatt"]["holder"]
    t0, R, J = sec["t0"], sec["R"], sec["J"]
    interior = _fit_with_relative_A(barenblatt_traj, sec["center"], t0, R, J)
    edge = BarenblattSpec(2, 1, 1.0, 0.1).support_radius(t0)
    boundary = _fit_with_relative_A(barenblatt_traj, [edge], t0, R, J)
    violations = interior.monotonicity_violations + boundary.monotonicity_violations
    ok = interior.beta >= 0.95 and interior.r2 >= 0.99 and 1.5 <= boundary.beta <= 2.1 and violations == 0
    detail = (f"interior beta {interior.beta:.3f} (>= 0.95), R^2 {interior.r2:.5f} (>= 0.99); "
              f"free boundary x={edge:.4f} beta {boundary.beta:.3f} in [1.5, 2.1]; {violations} monotonicity violations")
    assert acceptance(8, "Holder oscillation decay", ok, detail), detail


def test_c09_energy_audit(coupled_trajs, acceptance):
    sec = cli.PRESETS["coupled"]["energy"]
    reports = {N: diag.energy_audit(t, sec["r"], sec["t1"], sec["t2"], sec["k"], sec["sign"])
               for N, t in coupled_trajs.items()}
    c = {N: r.C_emp for N, r in reports.items()}
    nonneg = all(v >= 0 for r in reports.values() for v in r.terms.values())
    ok = all(x is not None for x in c.values()) and nonneg
    change = abs(c[256] - c[128]) / c[128] if ok else float("nan")
    ok = ok and change < 0.2
    detail = f"C_emp {c[128]:.4f} (N=128) vs {c[256]:.4f} (N=256), change {change:.2%} (< 20%), terms nonnegative: {nonneg}"
    assert acceptance(9, "energy audit stability", ok, detail), detail


def test_c10_weak_form_refinement(coupled_trajs, acceptance):
    res = {N: weak_form_residual(t)["empirical_constants"]["residual"] for N, t in coupled_trajs.items()}
    factor = res[128] / res[256]
    detail = f"residual {res[128]:.4e} (N=128) -> {res[256]:.4e} (N=256), factor {factor:.3f} (>= 1.8)"
    assert acceptance(10, "weak-form residual refinement", factor >= 1.8, detail), detail


def test_c11_validate_determinism(validate_runs, acceptance):
    a, b = (out / "validate.json" for out in validate_runs["outs"])
    same = a.read_bytes() == b.read_bytes()
    same_manifest = (validate_runs["outs"][0] / "manifest.json").read_bytes() == (
        validate_runs["outs"][1] / "manifest.json"
    ).read_bytes()
    codes = validate_runs["codes"]
    ok = same and same_manifest and codes[0] == codes[1]
    detail = f"validate.json identical: {same}, manifest identical: {same_manifest}, exit codes {codes}"
    assert acceptance(11, "validate determinism", ok, detail), detail
