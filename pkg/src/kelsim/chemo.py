"""Chemical concentration v from the density u.

delta = 0:  -lap v + gamma v = u   (spectral solve, or convolution with the Bessel potential)
delta = 1:  v_t = lap v - gamma v + u   (exponential integrator, exact in the linear part)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from kelsim.grid import GridSpec, check_field, gradient, laplacian_symbol, lp_norm
from kelsim.kernels import BesselParams, bessel_radial, singular_weight


class SupportWarning(UserWarning):
    """Density support is too close to the periodic box edge for a faithful R^n solve."""


@dataclass(frozen=True)
class ChemoConfig:
    gamma: float
    delta: int = 0
    method: str = "spectral"
    tol: float = 1e-10

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.delta not in (0, 1):
            raise ValueError(f"delta must be 0 or 1, got {self.delta}")
        if self.method not in ("spectral", "convolution"):
            raise ValueError(f"unknown method {self.method!r}")


def solve_elliptic_spectral(u: np.ndarray, gamma: float, grid: GridSpec) -> np.ndarray:
    """Exact solution of the discrete periodic problem -lap_h v + gamma v = u."""
    u = check_field(grid, u)
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    uh = np.fft.rfftn(u)
    uh /= laplacian_symbol(grid) + gamma
    return np.fft.irfftn(uh, s=grid.shape, axes=range(grid.n))


@lru_cache(maxsize=8)
def _kernel_spectrum(gamma: float, n: int, L: float, N: int, center: str):
    grid = GridSpec(n, L, N)
    p = BesselParams(gamma, n)
    h = grid.h
    idx = np.fft.fftfreq(N, d=1.0 / N).astype(int)  # minimum-image offsets 0, 1, ..., -1
    k2 = sum(np.meshgrid(*([idx**2] * n), indexing="ij", sparse=True))
    k2 = np.broadcast_to(k2, grid.shape)
    table = np.empty(grid.shape)
    uniq, inverse = np.unique(k2, return_inverse=True)
    vals = np.empty(uniq.size)
    vals[uniq > 0] = bessel_radial(h * np.sqrt(uniq[uniq > 0]), p)
    vals[uniq == 0] = singular_weight(h, p, center)
    table = vals[inverse].reshape(grid.shape) * h**n
    return np.fft.rfftn(table)


def solve_elliptic_convolution(u: np.ndarray, p: BesselParams, grid: GridSpec, center: str = "calibrated"):
    """v = G * u as a lattice convolution with the tabulated Bessel potential.

    Off the singular cell the kernel is sampled at cell-centre offsets; the
    singular cell weight is chosen by ``center`` (see ``kernels.singular_weight``).
    The table is built once per (gamma, grid, center).
    """
    u = check_field(grid, u)
    if p.n != grid.n:
        raise ValueError("Bessel parameters and grid disagree on the dimension")
    if np.any(u < 0):
        raise ValueError("density must be nonnegative")
    support = grid.radius()[u > 0]
    if support.size and support.max() > 0.5 * grid.L:
        warnings.warn(
            f"support radius {support.max():.3g} exceeds L/2; periodic images of G are not negligible",
            SupportWarning,
            stacklevel=2,
        )
    spec = _kernel_spectrum(p.gamma, grid.n, grid.L, grid.N, center)
    v = np.fft.irfftn(np.fft.rfftn(u) * spec, s=grid.shape, axes=range(grid.n))
    # G > 0 and u >= 0, so any negative entry is FFT round-off
    return np.maximum(v, 0.0)


def _phi1(z: np.ndarray) -> np.ndarray:
    """(1 - e^{-z}) / z."""
    small = z < 1e-3
    zs = np.where(small, 1.0, z)
    series = 1.0 - z / 2 + z**2 / 6 - z**3 / 24 + z**4 / 120
    return np.where(small, series, -np.expm1(-zs) / zs)


def _phi_lin(z: np.ndarray) -> np.ndarray:
    """(1 - e^{-z}(1 + z)) / z^2, the weight of the old endpoint."""
    small = z < 1e-2
    zs = np.where(small, 1.0, z)
    series = sum((-1) ** k * (k + 1) * z**k / math.factorial(k + 2) for k in range(8))
    return np.where(small, series, (1.0 - np.exp(-zs) * (1.0 + zs)) / zs**2)


def step_v_parabolic(v, u_old, u_new, dt: float, gamma: float, grid: GridSpec) -> np.ndarray:
    """Advance v_t = lap_h v - gamma v + u by one step of length dt.

    Each Fourier mode with rate a = |k_h|^2 + gamma is propagated exactly,
    v' = e^{-a dt} v + int_0^dt e^{-a(dt-s)} u(s) ds, with u linear in time
    between ``u_old`` and ``u_new``.  Exact for time-constant sources.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    v = check_field(grid, v)
    u_old = check_field(grid, u_old)
    u_new = check_field(grid, u_new)
    a = laplacian_symbol(grid) + gamma
    z = a * dt
    w_old = dt * _phi_lin(z)
    w_new = dt * _phi1(z) - w_old
    vh = np.exp(-z) * np.fft.rfftn(v) + w_old * np.fft.rfftn(u_old) + w_new * np.fft.rfftn(u_new)
    return np.fft.irfftn(vh, s=grid.shape, axes=range(grid.n))


def _exponent_pair(p: float, p_prime: float, n: int) -> tuple[float, float]:
    if not (1 <= p_prime <= p):
        raise ValueError(f"need 1 <= p' <= p, got p'={p_prime}, p={p}")
    gap = 1.0 / p_prime - (0.0 if math.isinf(p) else 1.0 / p)
    if not gap < 1.0 / n:
        raise ValueError(f"exponent pair violates 1/p' - 1/p < 1/n (gap {gap:.4g}, n={n})")
    return 1.0 - gap * n / 2.0, 0.5 - gap * n / 2.0


def audit_semigroup_bounds(times, us, vs, grid: GridSpec, p: float, p_prime: float) -> dict:
    """Both sides of the L^p semigroup bounds for v and grad v along a trajectory.

    C_emp(t) = (||v(t)||_p - ||v_0||_p)_+ / (Gamma(a) sup_{s<=t} ||u(s)||_{p'}),
    with the gradient analogue using Gamma(a~).  Reports only.
    """
    a, a_tilde = _exponent_pair(p, p_prime, grid.n)
    gamma_a, gamma_at = math.gamma(a), math.gamma(a_tilde)
    v0_p = lp_norm(vs[0], grid, p)
    gv0_p = lp_norm(gradient(vs[0], grid).norm(), grid, p)
    sup_u = 0.0
    rows = []
    for t, u, v in zip(times, us, vs):
        sup_u = max(sup_u, lp_norm(u, grid, p_prime))
        v_p = lp_norm(v, grid, p)
        gv_p = lp_norm(gradient(v, grid).norm(), grid, p)
        denom = gamma_a * sup_u
        denom_g = gamma_at * sup_u
        rows.append(
            {
                "t": float(t),
                "v_p": v_p,
                "v0_p": v0_p,
                "grad_v_p": gv_p,
                "grad_v0_p": gv0_p,
                "sup_u_pprime": sup_u,
                "C_emp": max(v_p - v0_p, 0.0) / denom if denom > 0 else 0.0,
                "C_emp_grad": max(gv_p - gv0_p, 0.0) / denom_g if denom_g > 0 else 0.0,
            }
        )
    return {
        "op": "audit_semigroup_bounds",
        "inputs": {"p": p, "p_prime": p_prime, "n": grid.n},
        "terms": rows,
        "empirical_constants": {
            "C_emp": max(r["C_emp"] for r in rows),
            "C_emp_grad": max(r["C_emp_grad"] for r in rows),
            "Gamma_a": gamma_a,
            "Gamma_a_tilde": gamma_at,
        },
        "flags": [grid.label()] if grid.n == 1 else [],
    }
