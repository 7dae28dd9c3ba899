"""Oracle suite behind ``kelsim validate``.

Each check returns {name, passed, summary, values}; no timings are recorded so
repeated runs give identical reports.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from kelsim import chemo, kernels, oracles
from kelsim.density import CflConfig, ModelParams, cfl_dt, step_u
from kelsim.grid import integrate, laplacian, make_grid
from kelsim.rng import XorShift64Star
from kelsim.system import InitialData, run

BARENBLATT_NS = (128, 256, 512)


def _result(name, passed, summary, **values):
    return {"name": name, "passed": bool(passed), "summary": summary, "values": values}


def barenblatt_errors(Ns=BARENBLATT_NS, T=1.0, L=3.0, m=2.0):
    """L1 error against the source solution and the relative mass drift, per grid."""
    spec = oracles.BarenblattSpec(m, 1, 1.0, 0.1)
    params = ModelParams(m, 2, 1.0, chi=0)
    errs, drifts = [], []
    for N in Ns:
        g = make_grid(1, L, N)
        u = oracles.barenblatt_on_grid(g, 0.0, spec)
        m0 = integrate(u, g)
        t = 0.0
        while t < T:
            dt = min(cfl_dt(u, None, g, params), T - t)
            u = step_u(u, None, dt, g, params)
            t = T if dt == T - t else t + dt
        errs.append(integrate(np.abs(u - oracles.barenblatt_on_grid(g, T, spec)), g))
        drifts.append(abs(integrate(u, g) - m0) / m0)
    return errs, drifts


def fitted_order(Ns, errs) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(Ns, float)), np.log(np.asarray(errs)), 1)
    return float(-slope)


def check_barenblatt():
    errs, drifts = barenblatt_errors()
    order = fitted_order(BARENBLATT_NS, errs)
    ok = errs[-1] <= 0.02 and order >= 0.8
    return _result(
        "barenblatt_convergence",
        ok,
        f"L1 error at N=512 {errs[-1]:.3e} (<= 0.02), order {order:.3f} (>= 0.8)",
        N=list(BARENBLATT_NS),
        l1_error=errs,
        order=order,
        mass_drift=drifts,
    )


def check_mass():
    """Relative mass drift of coupled runs in both regimes plus the Barenblatt runs."""
    _, drifts = barenblatt_errors()
    g = make_grid(2, 4.0, 64)
    u0 = 5.0 * np.where(g.radius() < 1.2, np.exp(1 - 1 / (1 - np.minimum(g.radius() / 1.2, 0.999) ** 2)), 0.0)
    for delta in (0, 1):
        traj = run(ModelParams(2, 2, 1.0, delta=delta), InitialData(u0), g, 0.05, np.linspace(0, 0.05, 6))
        drifts.append(traj.mass_drift())
    worst = max(drifts)
    return _result("mass_conservation", worst <= 1e-10, f"max relative drift {worst:.3e} (<= 1e-10)", drifts=drifts)


def elliptic_bump(L=12.0, N=256):
    """Smooth bump exp(1 - 1/(1 - s^2)), s = |x| / (L/4), on the n=2 grid."""
    g = make_grid(2, L, N)
    s = g.radius() / (L / 4)
    inside = s < 1
    ss = np.where(inside, s, 0.0)
    return g, np.where(inside, np.exp(1.0 - 1.0 / (1.0 - ss**2)), 0.0)


def elliptic_crossvalidation(center="calibrated", gamma=1.0):
    g, u = elliptic_bump()
    vs = chemo.solve_elliptic_spectral(u, gamma, g)
    vc = chemo.solve_elliptic_convolution(u, kernels.BesselParams(gamma, 2), g, center=center)
    rel = float(np.max(np.abs(vs - vc)) / np.max(np.abs(vs)))
    resid = float(np.max(np.abs(-laplacian(vs, g) + gamma * vs - u)) / np.max(np.abs(u)))
    return rel, resid


def check_elliptic():
    rel, resid = elliptic_crossvalidation()
    rel_avg, _ = elliptic_crossvalidation("average")
    return _result(
        "elliptic_crossvalidation",
        rel <= 1e-4 and resid <= 1e-10,
        f"spectral vs convolution {rel:.3e} (<= 1e-4), residual {resid:.3e} (<= 1e-10)",
        relative_linf=rel,
        relative_linf_cell_average=rel_avg,
        residual=resid,
    )


def bessel_closed_form_error(gammas=(0.5, 1.0, 4.0), samples=400):
    worst = 0.0
    for gamma in gammas:
        z = np.geomspace(0.01, 20.0, samples)
        r = z / math.sqrt(gamma)
        q = kernels.bessel_radial(r, kernels.BesselParams(gamma, 3))
        exact = oracles.bessel_closed_form_3d(r, gamma)
        worst = max(worst, float(np.max(np.abs(q / exact - 1.0))))
    return worst


def lattice_integral(gamma=2.0, h=0.025):
    p = kernels.BesselParams(gamma, 2)
    return kernels.lattice_moment(h, p, 30.0 / math.sqrt(gamma)) + h**2 * kernels.singular_weight(h, p, "average")


def heat_normalization(t=0.05, h=0.02, n=2):
    R = 10 * math.sqrt(t)
    x = np.arange(-int(R / h), int(R / h) + 1) * h
    pts = np.stack(np.meshgrid(*([x] * n), indexing="ij"), axis=-1)
    pts = pts[np.sum(pts**2, axis=-1) <= R * R]
    return float(h**n * np.sum(kernels.heat_kernel(pts, t, n)))


def check_bessel():
    err = bessel_closed_form_error()
    total = lattice_integral()
    heat = heat_normalization()
    ok = err <= 1e-8 and abs(total - 0.5) <= 1e-4 and abs(heat - 1.0) <= 1e-8
    return _result(
        "bessel_kernels",
        ok,
        f"n=3 closed form {err:.3e} (<= 1e-8), lattice int G {total:.8f} vs 0.5 (1e-4), heat mass {heat:.10f}",
        closed_form_rel_error=err,
        lattice_integral=total,
        heat_mass=heat,
    )


def psi_violations(samples=10_000, seed=7):
    """Count points breaking |grad psi_l| <= c1/l sqrt(psi_l) or |lap psi_l| <= c2/l^2."""
    rng = XorShift64Star(seed)
    counts = {}
    for n in (1, 2, 3):
        for l in (1.0, 2.0, 4.0):
            r = np.linspace(0.0, 2.5 * l, samples)
            dirs = np.array([[rng.uniform(-1, 1) for _ in range(n)] for _ in range(samples)])
            dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
            val, grad, lap = kernels.psi_l(r[:, None] * dirs, kernels.CutoffSpec(l, (0.0,) * n))
            g = np.linalg.norm(grad, axis=-1)
            bad_g = g > kernels.C1 / l * np.sqrt(val) * (1 + 1e-12) + 1e-15
            bad_l = np.abs(lap) > kernels.c2(n) / l**2 * (1 + 1e-12)
            counts[f"n={n},l={l:g}"] = int(np.count_nonzero(bad_g | bad_l))
    return counts


def check_psi():
    counts = psi_violations()
    total = sum(counts.values())
    return _result("psi_bounds", total == 0, f"{total} violations on 9 x 10^4 samples", violations=counts)


CHECKS = {
    "barenblatt_convergence": check_barenblatt,
    "mass_conservation": check_mass,
    "elliptic_crossvalidation": check_elliptic,
    "bessel_kernels": check_bessel,
    "psi_bounds": check_psi,
}


def _call(name):
    return CHECKS[name]()


def run_all(jobs: int = 1) -> list[dict]:
    names = list(CHECKS)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_call, names))
    return [_call(name) for name in names]
