"""Closed-form reference solutions used to check the solvers independently."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate


def sphere_area(n: int) -> float:
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


@dataclass(frozen=True)
class BarenblattSpec:
    """ZKB source solution of u_t = lap u^m with mass M, shifted in time by t0."""

    m: float
    n: int
    M: float = 1.0
    t0: float = 0.1

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError("Barenblatt profile needs m > 1")
        if not self.M > 0 or not self.t0 > 0:
            raise ValueError("mass and time offset must be positive")

    @property
    def alpha(self) -> float:
        return self.n / (self.n * (self.m - 1) + 2)

    @property
    def beta(self) -> float:
        return self.alpha / self.n

    @property
    def k(self) -> float:
        return self.alpha * (self.m - 1) / (2 * self.m * self.n)

    def _profile_mass(self, C: float) -> float:
        k, p = self.k, 1.0 / (self.m - 1)
        rmax = math.sqrt(C / k)
        val, _ = integrate.quad(
            lambda r: (C - k * r * r) ** p * r ** (self.n - 1), 0.0, rmax, epsabs=0, epsrel=1e-13, limit=200
        )
        return sphere_area(self.n) * val

    @cached_property
    def C(self) -> float:
        """Profile constant fixed by the mass, found by bisection (mass is increasing in C)."""
        lo, hi = 0.0, 1.0
        while self._profile_mass(hi) < self.M:
            hi *= 2.0
        while hi - lo > 1e-12 * hi:
            mid = 0.5 * (lo + hi)
            if self._profile_mass(mid) < self.M:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def support_radius(self, t) -> float:
        s = np.asarray(t, dtype=float) + self.t0
        return math.sqrt(self.C / self.k) * s**self.beta

    def peak(self, t) -> float:
        return (t + self.t0) ** (-self.alpha) * self.C ** (1.0 / (self.m - 1))


def barenblatt_radial(r, t, spec: BarenblattSpec):
    s = np.asarray(t, dtype=float) + spec.t0
    if np.any(s <= 0):
        raise ValueError("need t + t0 > 0")
    r = np.asarray(r, dtype=float)
    base = np.maximum(spec.C - spec.k * r**2 * s ** (-2 * spec.beta), 0.0)
    return s ** (-spec.alpha) * base ** (1.0 / (spec.m - 1))


def barenblatt(x, t, spec: BarenblattSpec):
    """U(x, t + t0) at points of shape (..., n)."""
    x = np.asarray(x, dtype=float)
    return barenblatt_radial(np.sqrt(np.sum(x**2, axis=-1)), t, spec)


def barenblatt_on_grid(grid, t, spec: BarenblattSpec, center=None) -> np.ndarray:
    if grid.n != spec.n:
        raise ValueError("grid and Barenblatt dimension differ")
    return barenblatt_radial(grid.radius(center), t, spec)


@dataclass(frozen=True)
class GaussianSpec:
    amplitude: float = 1.0
    sigma: float = 0.5
    gamma: float = 1.0


def heat_solution(x, t, spec: GaussianSpec):
    """Solution of v_t = lap v - gamma v from amplitude * exp(-|x|^2 / (2 sigma^2))."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("need t >= 0")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    var = spec.sigma**2 + 2.0 * np.asarray(t, dtype=float)
    r2 = np.sum(x**2, axis=-1)
    return spec.amplitude * (spec.sigma**2 / var) ** (n / 2) * np.exp(-r2 / (2 * var)) * np.exp(-spec.gamma * t)


def heat_solution_mass(t, spec: GaussianSpec, n: int) -> float:
    return spec.amplitude * (2 * math.pi * spec.sigma**2) ** (n / 2) * math.exp(-spec.gamma * t)


def bessel_closed_form_3d(x, gamma: float):
    """Yukawa kernel exp(-sqrt(gamma)|x|) / (4 pi |x|); ``x`` as points (..., 3) or radii."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x**2, axis=-1)) if x.ndim and x.shape[-1] == 3 else np.abs(x)
    if np.any(r == 0):
        raise ValueError("kernel is singular at x = 0")
    out = np.exp(-math.sqrt(gamma) * r) / (4 * math.pi * r)
    return out[()] if np.ndim(out) == 0 else out
