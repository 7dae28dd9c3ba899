"""Audits on computed trajectories: level sets, the local energy estimate,
intrinsic-cylinder oscillation decay, Sobolev ratios and L1 contraction.

Every audit reports empirical constants; none of them asserts a magnitude
for an existential constant.  Reports follow one schema,
{op, inputs, terms, empirical_constants, flags}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from kelsim.chemo import solve_elliptic_spectral
from kelsim.density import CflConfig, CflViolation, ModelParams, cfl_dt
from kelsim.grid import GridSpec, check_field, gradient, integrate
from kelsim.grid import lp_norm as _lp_norm
from kelsim.kernels import CutoffSpec, psi_l
from kelsim.system import Trajectory, advance, in_shell, support_mask

MIN_WINDOW_SNAPSHOTS = 8


def lp_norm(f, grid: GridSpec, p: float = 2.0) -> float:
    return _lp_norm(f, grid, p)


def mass(f, grid: GridSpec) -> float:
    return integrate(f, grid)


def _ball(grid: GridSpec, center, r: float) -> np.ndarray:
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.n,))
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    if np.any(np.abs(c) + r > grid.L):
        raise ValueError(f"ball of radius {r} around {tuple(c)} exits the box")
    return grid.radius(c) <= r


# ---------------------------------------------------------------------------
# level sets


@dataclass(frozen=True)
class LevelSetQuery:
    k: float
    r: float
    sign: str = "+"
    t: float = 0.0

    def __post_init__(self):
        if self.sign not in ("+", "-"):
            raise ValueError(f"sign must be '+' or '-', got {self.sign!r}")
        if not self.r > 0:
            raise ValueError("query radius must be positive")


def truncation(w, k: float, sign: str) -> np.ndarray:
    """(w - k)_+ or (w - k)_-."""
    return np.maximum(w - k, 0.0) if sign == "+" else np.maximum(k - w, 0.0)


def level_set_measure(u, grid: GridSpec, query: LevelSetQuery, m: float, center=None) -> float:
    """h^n times the number of cells in B_r(center) where (u^m - k)_sign > 0."""
    u = check_field(grid, u)
    ball = _ball(grid, np.zeros(grid.n) if center is None else center, query.r)
    hit = truncation(u**m, query.k, query.sign) > 0
    return float(np.count_nonzero(ball & hit)) * grid.cell_volume


# ---------------------------------------------------------------------------
# energy audit


@lru_cache(maxsize=32)
def _gauss(nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (x + 1.0), 0.5 * w


def energy_bracket(w, k: float, m: float, sign: str, tol: float = 1e-10, nodes: int = 8, max_nodes: int = 1024):
    """int_0^w (k +- xi)^{1/m - 1} xi dxi for each entry of w >= 0.

    With z = (k +- xi)^{1/m} the integrand becomes m (z^m - k) (plus sign) or
    m (k - z^m) (minus sign), which is smooth even where (k - xi)^{1/m - 1}
    is unbounded.  Gauss-Legendre in z, nodes doubled until the relative
    change drops below ``tol``.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("truncated values must be nonnegative")
    if sign == "-":
        if not k > 0:
            raise ValueError("minus-sign bracket needs k > 0")
        if np.any(w > k):
            raise ValueError("minus-sign bracket needs (u^m - k)_- <= k")
        z0, z1 = np.maximum(k - w, 0.0) ** (1 / m), np.full_like(w, k ** (1 / m))
        f = lambda z: m * (k - z**m)  # noqa: E731
    elif sign == "+":
        if k < 0:
            raise ValueError("plus-sign bracket needs k >= 0 ((k + xi)^{1/m - 1} is undefined below 0)")
        z0, z1 = np.full_like(w, k ** (1 / m)), (k + w) ** (1 / m)
        f = lambda z: m * (z**m - k)  # noqa: E731
    else:
        raise ValueError(f"sign must be '+' or '-', got {sign!r}")
    flat0, flat1 = z0.ravel(), z1.ravel()
    span = flat1 - flat0

    def rule(nn):
        x, wt = _gauss(nn)
        z = flat0[:, None] + span[:, None] * x[None, :]
        return span * (f(z) @ wt)

    prev = rule(nodes)
    while nodes < max_nodes:
        nodes *= 2
        cur = rule(nodes)
        if np.all(np.abs(cur - prev) <= tol * np.maximum(np.abs(cur), 1e-300)):
            prev = cur
            break
        prev = cur
    out = np.where(w.ravel() > 0, prev, 0.0)
    return out.reshape(w.shape)


def energy_bracket_closed_form(w, k: float, m: float, sign: str):
    """Exact value of ``energy_bracket`` by antiderivative in z (test oracle)."""
    w = np.asarray(w, dtype=float)
    F = lambda z: m * (z ** (m + 1) / (m + 1) - k * z)  # noqa: E731
    if sign == "+":
        return F((k + w) ** (1 / m)) - F(k ** (1 / m))
    # z = (k - xi)^{1/m} runs downward from k^{1/m}, which flips the limits
    return F(np.maximum(k - w, 0.0) ** (1 / m)) - F(k ** (1 / m))


@dataclass
class EnergyReport:
    inputs: dict
    terms: dict
    C_emp: float | None
    flags: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def lhs(self) -> float:
        return self.terms["slice_t2"] + self.terms["gradient_energy"]

    @property
    def rhs(self) -> float:
        t = self.terms
        return t["grad_eta"] + t["eta_eta_t"] + t["slice_t1"] + t["chemotaxis"]

    def to_dict(self) -> dict:
        return {
            "op": "energy_audit",
            "inputs": self.inputs,
            "terms": self.terms,
            "empirical_constants": {"C_emp": self.C_emp, **self.extras},
            "flags": self.flags,
        }


def _snapshot_index(times, t: float) -> int:
    i = int(np.argmin(np.abs(np.asarray(times) - t)))
    if abs(times[i] - t) > 1e-12 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not a snapshot time")
    return i


def _trapezoid(values, times) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 1:
        return 0.0
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def _face_energy(f, grid: GridSpec, weight=None) -> float:
    """h^n sum over faces of weight * (difference quotient of f)^2."""
    total = 0.0
    for d in range(grid.n):
        df = (np.roll(f, -1, axis=d) - f) / grid.h
        wf = 1.0 if weight is None else 0.5 * (weight + np.roll(weight, -1, axis=d))
        total += float(np.sum(wf * df * df))
    return total * grid.cell_volume


def energy_audit(
    traj: Trajectory,
    r: float,
    t1: float,
    t2: float,
    k: float,
    sign: str = "-",
    center=None,
    ramp: bool = True,
    a1: float | None = None,
    a2: float = 2.0,
    tol: float = 1e-10,
) -> EnergyReport:
    """Both sides of the local energy estimate on B_r(center) x (t1, t2).

    eta(x, t) = psi(|x - center| / (r/2)) * rho(t), where rho ramps linearly
    from 0 to 1 over the first quarter of (t1, t2) when ``ramp`` is set and
    is 1 otherwise.  Gradients of eta and of eta (u^m - k)_sign are evaluated
    by the same face difference quotients, so the two gradient terms agree
    exactly for spatially constant u.  C_emp = LHS / RHS with the chemotaxis
    term u^{2(q-1)} eta^2 |grad v|^2 on RHS; the level-set measure variant of
    that term is reported alongside using exponents induced by (a1, a2).
    """
    if sign not in ("+", "-"):
        raise ValueError(f"sign must be '+' or '-', got {sign!r}")
    if sign == "-" and not k > 0:
        raise ValueError("minus-sign energy audit needs k > 0")
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    grid, P = traj.grid, traj.params
    n = grid.n
    center = tuple(np.zeros(n)) if center is None else tuple(np.broadcast_to(center, (n,)).astype(float))
    ball = _ball(grid, center, r)
    times, us, vs = traj.with_initial()
    i1, i2 = _snapshot_index(times, t1), _snapshot_index(times, t2)
    window = list(range(i1, i2 + 1))
    if len(window) < MIN_WINDOW_SNAPSHOTS:
        raise ValueError(f"energy audit needs >= {MIN_WINDOW_SNAPSHOTS} snapshots in the window, got {len(window)}")

    spec = CutoffSpec(0.5 * r, center)
    pts = np.stack(np.broadcast_arrays(*grid.mesh()), axis=-1)
    psi_x, grad_psi, _ = psi_l(pts, spec)
    psi_x = np.where(ball, psi_x, 0.0)
    ramp_len = 0.25 * (t2 - t1)

    def rho(t):
        if not ramp:
            return 1.0, 0.0
        s = (t - t1) / ramp_len
        return (min(max(s, 0.0), 1.0), 1.0 / ramp_len if s < 1.0 else 0.0)

    a1 = float(n) if a1 is None else float(a1)
    kappa1 = 1.0 - 1.0 / a2 - n / (2.0 * a1)
    e_in = (1.0 - 1.0 / a1) * a2 / (a2 - 1.0) if a2 > 1 else float("nan")
    e_out = 1.0 - 1.0 / a2

    dV = grid.cell_volume
    series = {key: [] for key in ("grad_energy", "grad_eta", "eta_eta_t", "chemo", "measure")}
    slices = {}
    ts = [times[i] for i in window]
    for i in window:
        t, u, v = times[i], us[i], vs[i]
        rt, drt = rho(t)
        eta = psi_x * rt
        wtr = truncation(u**P.m, k, sign)
        B = energy_bracket(np.where(ball, wtr, 0.0), k, P.m, sign, tol=tol)
        if i in (i1, i2):
            slices[i] = float(np.sum(eta**2 * B)) * dV
        series["grad_energy"].append(_face_energy(eta * wtr, grid))
        series["grad_eta"].append(_face_energy(eta, grid, weight=wtr**2))
        series["eta_eta_t"].append(float(np.sum(B * np.abs(eta * psi_x * drt))) * dV)
        active = (wtr > 0) & ball
        gv2 = gradient(v, grid).norm() ** 2
        series["chemo"].append(float(np.sum(np.where(active, u ** (2 * (P.q - 1)) * eta**2 * gv2, 0.0))) * dV)
        series["measure"].append(float(np.count_nonzero(active)) * dV)

    terms = {
        "slice_t2": slices[i2],
        "gradient_energy": _trapezoid(series["grad_energy"], ts),
        "grad_eta": _trapezoid(series["grad_eta"], ts),
        "eta_eta_t": _trapezoid(series["eta_eta_t"], ts),
        "slice_t1": slices[i1],
        "chemotaxis": P.chi * _trapezoid(series["chemo"], ts),
    }
    meas = np.asarray(series["measure"])
    measure_term = _trapezoid(meas**e_in, ts) ** e_out if np.isfinite(e_in) else float("nan")
    flags = [grid.label()] if n == 1 else []
    if kappa1 <= 0 or kappa1 >= 1:
        flags.append(f"(a1, a2) = ({a1:g}, {a2:g}) gives kappa1 = {kappa1:.4g}, outside (0, 1)")
    report = EnergyReport(
        inputs={
            "center": list(center),
            "r": r,
            "t1": t1,
            "t2": t2,
            "k": k,
            "sign": sign,
            "ramp": ramp,
            "a1": a1,
            "a2": a2,
            "snapshots": len(window),
        },
        terms=terms,
        C_emp=None,
        flags=flags,
    )
    total = report.rhs
    if all(v == 0.0 for v in terms.values()):
        report.flags.append("empty: every term vanishes")
    elif total > 0:
        report.C_emp = report.lhs / total
    else:
        report.flags.append("RHS vanishes while LHS does not")
    alt = terms["grad_eta"] + terms["eta_eta_t"] + terms["slice_t1"] + measure_term
    report.extras = {
        "measure_term": measure_term,
        "measure_exponent_inner": e_in,
        "measure_exponent_outer": e_out,
        "kappa1": kappa1,
        "C_emp_measure_form": report.lhs / alt if alt > 0 else None,
    }
    return report


# ---------------------------------------------------------------------------
# intrinsic cylinders and Holder fits


@dataclass(frozen=True)
class IntrinsicCylinder:
    """B_R(x0) x (t0 - a0^{-alpha} R^2, t0] with a0 = omega / A, alpha = 1 - 1/m."""

    center: tuple
    t0: float
    R: float
    omega: float
    A: float
    m: float
    mu_plus: float = 0.0
    mu_minus: float = 0.0
    eps: float = 0.1
    max_depth: float = math.inf

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("cylinder radius must be positive")
        if not self.A > 0:
            raise ValueError("amplitude divisor A must be positive")
        if self.omega < 0:
            raise ValueError("oscillation must be nonnegative")

    @property
    def alpha(self) -> float:
        return 1.0 - 1.0 / self.m

    @property
    def a0(self) -> float:
        return self.omega / self.A

    @property
    def degenerate(self) -> bool:
        return self.omega == 0.0

    def depth(self, r: float | None = None, factor: float = 1.0) -> float:
        """Time depth factor * a0^{-alpha} r^2, truncated to the trajectory when degenerate."""
        r = self.R if r is None else r
        if self.degenerate:
            return self.max_depth
        return factor * self.a0 ** (-self.alpha) * r * r

    @property
    def admissible(self) -> bool:
        """(omega / A)^alpha > R^eps."""
        return (not self.degenerate) and self.a0**self.alpha > self.R**self.eps

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "t0": self.t0,
            "R": self.R,
            "omega": self.omega,
            "A": self.A,
            "alpha": self.alpha,
            "a0": self.a0,
            "depth": None if math.isinf(self.depth()) else self.depth(),
            "mu_plus": self.mu_plus,
            "mu_minus": self.mu_minus,
            "admissible": self.admissible,
            "degenerate": self.degenerate,
        }


def cylinder_values(traj: Trajectory, center, t0: float, r: float, depth: float) -> np.ndarray:
    """u^m at every (cell, snapshot) with centre in B_r(center) and t0 - depth < t <= t0."""
    times, us, _ = traj.with_initial()
    i0 = _snapshot_index(times, t0)
    if t0 - depth < times[0] - 1e-12 * max(1.0, abs(t0)):
        raise ValueError(f"cylinder of depth {depth:.4g} ending at t0={t0} starts before the trajectory")
    ball = _ball(traj.grid, center, r)
    vals = [us[i][ball] ** traj.params.m for i in range(i0 + 1) if times[i] > t0 - depth or i == i0]
    return np.concatenate(vals)


def oscillation(traj: Trajectory, center, t0: float, r: float, depth: float) -> float:
    vals = cylinder_values(traj, center, t0, r, depth)
    return float(vals.max() - vals.min())


def make_intrinsic_cylinder(traj: Trajectory, center, t0: float, R: float, A: float, eps: float = 0.1):
    """Intrinsic cylinder from the oscillation over the parent Q(2R, R^{2 - eps})."""
    n = traj.grid.n
    center = tuple(float(c) for c in np.broadcast_to(np.asarray(center, dtype=float), (n,)))
    vals = cylinder_values(traj, center, t0, 2 * R, R ** (2 - eps))
    mu_plus, mu_minus = float(vals.max()), float(vals.min())
    times = traj.with_initial()[0]
    return IntrinsicCylinder(
        center,
        float(t0),
        float(R),
        mu_plus - mu_minus,
        float(A),
        traj.params.m,
        mu_plus,
        mu_minus,
        eps,
        max_depth=float(t0 - times[0]),
    )


@dataclass
class HolderFit:
    radii: list
    oscillations: list
    beta: float
    prefactor: float
    r2: float
    cylinder: IntrinsicCylinder
    monotonicity_violations: int = 0
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "op": "estimate_holder_exponent",
            "inputs": self.cylinder.to_dict(),
            "terms": [{"r": r, "osc": o} for r, o in zip(self.radii, self.oscillations)],
            "empirical_constants": {"beta": self.beta, "lambda_star": self.prefactor, "r2": self.r2},
            "flags": self.flags + [f"monotonicity_violations={self.monotonicity_violations}"],
        }


class DegenerateCylinder(ValueError):
    pass


def estimate_holder_exponent(
    traj: Trajectory, center, t0: float, R: float, A: float, J: int = 4, eps: float = 0.1
) -> HolderFit:
    """Fit osc(r) = lambda* omega (r/R)^beta over the dyadic cylinders Q(R/2^j, a0^{-alpha} (R/2^j)^2 / 2)."""
    if J < 4:
        raise ValueError("need at least 4 dyadic levels")
    cyl = make_intrinsic_cylinder(traj, center, t0, R, A, eps)
    if cyl.degenerate:
        raise DegenerateCylinder("degenerate omega = 0: no oscillation to decay")
    radii = [R / 2**j for j in range(J)]
    if radii[-1] < 4 * traj.grid.h:
        raise ValueError(f"smallest radius {radii[-1]:.4g} is below 4 cells (h={traj.grid.h:.4g})")
    oscs = [oscillation(traj, cyl.center, t0, r, cyl.depth(r, 0.5)) for r in radii]
    violations = sum(1 for a, b in zip(oscs, oscs[1:]) if b > a)
    flags = [] if cyl.admissible else ["(omega/A)^alpha > R^eps fails"]
    if traj.grid.n == 1:
        flags.append(traj.grid.label())
    if min(oscs) <= 0:
        raise DegenerateCylinder("oscillation vanishes on a nested cylinder; exponent undefined")
    x = np.log(np.asarray(radii) / R)
    y = np.log(np.asarray(oscs))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return HolderFit(radii, oscs, float(slope), float(math.exp(intercept) / cyl.omega), r2, cyl, violations, flags)


def alternative_fraction(traj: Trajectory, cyl: IntrinsicCylinder, s0: float) -> float:
    """Space-time fraction of the cylinder where u^m < mu^- + omega / 2^{s0}."""
    if cyl.degenerate:
        raise DegenerateCylinder("degenerate cylinder (omega = 0)")
    vals = cylinder_values(traj, cyl.center, cyl.t0, cyl.R, cyl.depth())
    return float(np.count_nonzero(vals < cyl.mu_minus + cyl.omega / 2.0**s0)) / vals.size


# ---------------------------------------------------------------------------
# Sobolev inequalities


def sobolev_check(fields, grid: GridSpec, times=None, eta: CutoffSpec | None = None) -> dict:
    """Discrete sides of ||w||_{2n/(n-2)} <= C ||grad w||_2 and of the space-time
    inequality ||w||^2_{L2L2} <= C (sup ||w||_2^2 + ||grad w||^2_{L2L2}) |{w > 0}|^{2/(n+2)},
    with w = eta f.  A single field is treated as one time slice of unit length.
    """
    if grid.n < 3:
        raise ValueError("the Sobolev exponent 2n/(n-2) needs n >= 3")
    fields = [check_field(grid, f) for f in (fields if isinstance(fields, (list, tuple)) else [fields])]
    n = grid.n
    p_star = 2.0 * n / (n - 2)
    if eta is None:
        cut = 1.0
    else:
        pts = np.stack(np.broadcast_arrays(*grid.mesh()), axis=-1)
        cut = psi_l(pts, eta)[0]
        if np.any(np.abs(np.broadcast_to(eta.center, (n,))) + 2 * eta.l > grid.L):
            raise ValueError("cutoff support exits the box")
    ws = [cut * f for f in fields]
    lhs31 = [lp_norm(w, grid, p_star) for w in ws]
    rhs31 = [math.sqrt(_face_energy(w, grid)) for w in ws]
    ratios = [a / b if b > 0 else None for a, b in zip(lhs31, rhs31)]
    l2sq = [lp_norm(w, grid, 2) ** 2 for w in ws]
    grad2 = [b * b for b in rhs31]
    if len(ws) == 1:
        tt = None
        int_l2, int_grad = l2sq[0], grad2[0]
        support = float(np.count_nonzero(ws[0] > 0)) * grid.cell_volume
    else:
        tt = np.asarray(times, dtype=float)
        if tt.size != len(ws):
            raise ValueError("times and fields differ in length")
        int_l2, int_grad = _trapezoid(l2sq, tt), _trapezoid(grad2, tt)
        support = _trapezoid([np.count_nonzero(w > 0) * grid.cell_volume for w in ws], tt)
    rhs32 = (max(l2sq) + int_grad) * support ** (2.0 / (n + 2))
    flags = []
    valid = [r for r in ratios if r is not None]
    if not valid:
        flags.append("empty: eta f vanishes")
    return {
        "op": "sobolev_check",
        "inputs": {"n": n, "slices": len(ws), "p_star": p_star},
        "terms": [
            {"lhs_3_1": a, "rhs_3_1": b, "ratio_3_1": r} for a, b, r in zip(lhs31, rhs31, ratios)
        ],
        "empirical_constants": {
            "ratio_3_1": max(valid) if valid else None,
            "lhs_3_2": int_l2,
            "rhs_3_2": rhs32,
            "ratio_3_2": int_l2 / rhs32 if rhs32 > 0 else None,
        },
        "flags": flags,
    }


# ---------------------------------------------------------------------------
# L1 contraction


def gronwall_envelope(times, g1, g2, eps: float, C: float = 1.0) -> np.ndarray:
    """C eps e^{G2(t)} int_0^t g1 e^{-G2}, G2 = int_0 g2, at every sample time (trapezoid rule)."""
    t = np.asarray(times, dtype=float)
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    if not (t.shape == g1.shape == g2.shape) or t.ndim != 1:
        raise ValueError("g1, g2 and times must share one 1D time grid")
    if eps < 0 or C < 0:
        raise ValueError("eps and C must be nonnegative")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must increase strictly")
    dt = np.diff(t)
    G2 = np.concatenate([[0.0], np.cumsum(0.5 * (g2[1:] + g2[:-1]) * dt)])
    f = g1 * np.exp(-G2)
    inner = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * dt)])
    return C * eps * np.exp(G2) * inner


def gronwall_bound(times, g1, g2, eps: float, C: float = 1.0, t: float | None = None) -> float:
    env = gronwall_envelope(times, g1, g2, eps, C)
    if t is None:
        return float(env[-1])
    return float(env[_snapshot_index(list(np.asarray(times, dtype=float)), t)])


def _pow(x: float, e: float) -> float:
    if x == 0.0:
        return 0.0 if e > 0 else (1.0 if e == 0 else 0.0)
    return x**e


def contraction_integrands(u, u_hat, v0_sup, v0_hat_sup, grid: GridSpec, params: ModelParams, eps: float):
    """g1 and the two g2 variants (chi_{m,q} = 0 and 1) of the uniqueness argument."""
    m, q = params.m, params.q
    a, b = float(u.max()), float(u_hat.max())
    g1 = _pow(b, q - m - 1) * _face_energy(u_hat**m, grid)
    base = _pow(a, q - 1) + _pow(b, q - 1) + (_pow(a, q - m) + _pow(b, q - m)) / eps
    e = 2 * q - m - 1
    extra = _pow(v0_sup, e) + _pow(v0_hat_sup, e) + _pow(a, e) + _pow(b, e)
    return g1, {"chi_mq_0": base + extra, "chi_mq_1": base}


@dataclass
class ContractionResult:
    times: np.ndarray
    D: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    g1: np.ndarray
    g2: dict
    envelope: dict
    lambda_fit: float | None
    steps: int
    inputs: dict
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        rows = []
        for i, t in enumerate(self.times):
            row = {
                "t": float(t),
                "D": float(self.D[i]),
                "positive_part": float(self.positive[i]),
                "negative_part": float(self.negative[i]),
                "g1": float(self.g1[i]),
            }
            for key in sorted(self.g2):
                row[f"g2_{key}"] = float(self.g2[key][i])
                row[f"envelope_{key}"] = float(self.envelope[key][i])
            rows.append(row)
        D0 = float(self.D[0])
        return {
            "op": "l1_contraction_experiment",
            "inputs": self.inputs,
            "terms": rows,
            "empirical_constants": {
                "lambda_fit": self.lambda_fit,
                "D0": D0,
                "DT": float(self.D[-1]),
                "ratio": float(self.D[-1] / D0) if D0 > 0 else None,
            },
            "flags": self.flags,
        }


def fit_rate(times, D) -> float | None:
    """Least-squares slope of log D against t over samples with D > 0."""
    t = np.asarray(times, dtype=float)
    D = np.asarray(D, dtype=float)
    keep = D > 0
    if np.count_nonzero(keep) < 2:
        return None
    slope, _ = np.polyfit(t[keep], np.log(D[keep]), 1)
    return float(slope)


def l1_contraction_experiment(
    params: ModelParams,
    grid: GridSpec,
    u0,
    u0_hat,
    T: float,
    sample_times,
    v0=None,
    v0_hat=None,
    cfl: CflConfig = CflConfig(),
    eps: float = 1.0,
    params_hat: ModelParams | None = None,
) -> ContractionResult:
    """Run two solutions in lockstep with the shared step min(cfl(u), cfl(u_hat)).

    Samples D(t) = ||u - u_hat||_1, its one-sided parts, the integrands g1 and
    g2 (both chi_{m,q} conventions) and their Gronwall envelopes with C = 1.
    Time 0 is always sampled.
    """
    if params_hat is not None and params_hat != params:
        raise ValueError("both runs must share the same model parameters")
    u = check_field(grid, u0).astype(float).copy()
    uh = check_field(grid, u0_hat).astype(float).copy()
    if np.any(u < 0) or np.any(uh < 0):
        raise ValueError("initial densities must be nonnegative")

    def start_v(uu, vv):
        if params.delta == 0:
            return solve_elliptic_spectral(uu, params.gamma, grid)
        return np.zeros(grid.shape) if vv is None else np.asarray(vv, dtype=float).copy()

    v, vh = start_v(u, v0), start_v(uh, v0_hat)
    v0_sup, vh0_sup = float(np.abs(v).max()), float(np.abs(vh).max())
    targets = sorted({0.0, *(float(s) for s in sample_times)})
    if targets[-1] > T or targets[0] < 0:
        raise ValueError("sample times must lie in [0, T]")
    if targets[-1] < T:
        targets.append(float(T))
    flags = [grid.label()] if grid.n == 1 else []
    guard = not (in_shell(grid, support_mask(u)) or in_shell(grid, support_mask(uh)))
    rows = []

    def sample(t):
        diff = u - uh
        g1, g2 = contraction_integrands(u, uh, v0_sup, vh0_sup, grid, params, eps)
        rows.append((t, integrate(np.abs(diff), grid), integrate(np.maximum(diff, 0), grid),
                     integrate(np.maximum(-diff, 0), grid), g1, g2))

    t, steps = 0.0, 0
    sample(0.0)
    for stop in targets[1:]:
        while t < stop:
            dt = min(cfl_dt(u, v, grid, params, cfl), cfl_dt(uh, vh, grid, params, cfl))
            landing = dt >= stop - t
            if landing:
                dt = stop - t
            while True:
                try:
                    nxt = advance(u, v, dt, grid, params), advance(uh, vh, dt, grid, params)
                    break
                except CflViolation:
                    # corrector with averaged v rejected the shared step; both runs retry with half
                    dt *= 0.5
                    landing = False
            (u, v), (uh, vh) = nxt
            t = stop if landing else t + dt
            steps += 1
        if guard and (in_shell(grid, support_mask(u)) or in_shell(grid, support_mask(uh))):
            flags.append(f"support reached the outer shell by t={t:.6g}; stopped")
            break
        sample(t)

    times = np.array([r[0] for r in rows])
    D = np.array([r[1] for r in rows])
    g1 = np.array([r[4] for r in rows])
    g2 = {key: np.array([r[5][key] for r in rows]) for key in ("chi_mq_0", "chi_mq_1")}
    envelope = {key: gronwall_envelope(times, g1, g2[key], eps) for key in g2} if len(times) > 1 else {
        key: np.zeros(1) for key in g2
    }
    if D[0] == 0:
        flags.append("identical initial data")
    return ContractionResult(
        times,
        D,
        np.array([r[2] for r in rows]),
        np.array([r[3] for r in rows]),
        g1,
        g2,
        envelope,
        fit_rate(times, D),
        steps,
        {"m": params.m, "q": params.q, "gamma": params.gamma, "delta": params.delta, "chi": params.chi,
         "n": grid.n, "L": grid.L, "N": grid.N, "T": T, "eps": eps},
        flags,
    )
