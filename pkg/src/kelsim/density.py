"""Explicit conservative finite-volume update for u_t = div(grad u^m - chi u^{q-1} grad v)."""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from kelsim.grid import GridSpec, VectorField, check_field, divergence

EPS = sys.float_info.epsilon


class CflViolation(ValueError):
    pass


class BlowupSignal(FloatingPointError):
    """Non-finite values appeared in the density update."""


@dataclass(frozen=True)
class ModelParams:
    m: float
    q: float
    gamma: float
    delta: int = 0
    chi: int = 1

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError(f"need m > 1 (degenerate diffusion), got m={self.m}")
        if not self.q >= 2:
            raise ValueError(f"need q >= 2, got q={self.q}")
        if not self.gamma > 0:
            raise ValueError(f"need gamma > 0, got {self.gamma}")
        if self.delta not in (0, 1):
            raise ValueError(f"delta must be 0 or 1, got {self.delta}")
        if self.chi not in (0, 1):
            raise ValueError(f"chi must be 0 or 1, got {self.chi}")

    def critical_q(self, n: int) -> float:
        """q above m + 2/n is the supercritical (possible blow-up) range."""
        return self.m + 2.0 / n

    def annotations(self, n: int) -> dict:
        return {
            "q_critical": self.critical_q(n),
            "supercritical": self.q > self.critical_q(n),
            "global_existence_any_data": self.m > self.q - 2.0 / n,
        }


@dataclass(frozen=True)
class CflConfig:
    safety: float = 0.4

    def __post_init__(self):
        if not 0 < self.safety <= 1:
            raise ValueError(f"CFL safety factor must lie in (0, 1], got {self.safety}")


def _check_density(grid: GridSpec, u) -> np.ndarray:
    u = check_field(grid, u)
    if np.any(u < 0):
        raise ValueError(f"density has negative entries (min {u.min():.3g})")
    return u


def diffusive_flux(u, grid: GridSpec, m: float) -> VectorField:
    """Face flux (u^m[i+1] - u^m[i]) / h; zero wherever both neighbours vanish."""
    u = _check_density(grid, u)
    w = u**m
    comps = [(np.roll(w, -1, axis=d) - w) / grid.h for d in range(grid.n)]
    return VectorField(np.stack(comps), staggered=True)


def chemo_flux(u, v, grid: GridSpec, q: float) -> VectorField:
    """Face flux (donor u)^{q-1} * dv/dx; the donor is the cell the drift leaves."""
    u = check_field(grid, u)
    v = check_field(grid, v)
    comps = []
    for d in range(grid.n):
        u_right = np.roll(u, -1, axis=d)
        dv = (np.roll(v, -1, axis=d) - v) / grid.h
        donor = np.where(dv >= 0, u, u_right)
        comps.append(donor ** (q - 1) * dv)
    return VectorField(np.stack(comps), staggered=True)


def max_face_slope(v, grid: GridSpec) -> float:
    v = check_field(grid, v)
    return max(float(np.max(np.abs(np.roll(v, -1, axis=d) - v))) for d in range(grid.n)) / grid.h


def cfl_dt(u, v, grid: GridSpec, params: ModelParams, cfl: CflConfig = CflConfig()) -> float:
    """Largest stable explicit step, times the safety factor.

    dt = C / (2n m umax^{m-1} / h^2 + chi 2n (q-1) |dv/dx|max umax^{q-2} / h).
    With chi = 0 this is C h^2 / (2n m umax^{m-1}); a vanishing state gives a
    huge but finite step.
    """
    u = check_field(grid, u)
    n, h = grid.n, grid.h
    umax = float(u.max()) if u.size else 0.0
    rate = (2 * n * params.m * umax ** (params.m - 1) + EPS) / h**2
    if params.chi and v is not None:
        rate += 2 * n * (params.q - 1) * max_face_slope(v, grid) * umax ** (params.q - 2) / h
    return cfl.safety / rate


def step_u(u, v, dt: float, grid: GridSpec, params: ModelParams, check_cfl: bool = True) -> np.ndarray:
    """u + dt * div(grad u^m - chi u^{q-1} grad v) with face fluxes."""
    u = _check_density(grid, u)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if check_cfl:
        limit = cfl_dt(u, v, grid, params, CflConfig(1.0))
        if dt > limit * (1 + 1e-12):
            raise CflViolation(f"dt={dt:.3g} exceeds the monotonicity limit {limit:.3g}")
    flux = diffusive_flux(u, grid, params.m).data
    if params.chi:
        flux = flux - chemo_flux(u, v, grid, params.q).data
    with np.errstate(over="ignore", invalid="ignore"):
        out = u + dt * divergence(VectorField(flux, staggered=True), grid)
    if not np.all(np.isfinite(out)):
        raise BlowupSignal("non-finite density after update")
    # under the CFL bound the update is a convex combination; clip round-off only
    return np.maximum(out, 0.0)
