"""Cutoff weight psi, the Bessel potential of -lap + gamma, and the heat kernel.

Constants for the cutoff bounds:

* ``C1 = 2*sqrt(2)``: on [1, 3/2) the ratio |psi'|/sqrt(psi) = 4(r-1)/sqrt(1-2(r-1)^2)
  increases to 2*sqrt(2) at r = 3/2, and on [3/2, 2) it is identically
  4(2-r)/(sqrt(2)(2-r)) = 2*sqrt(2).
* ``c2(n) = 4 + 4(n-1)``: lap psi_l = (psi'' + (n-1) psi'/rho) / l^2 with
  |psi''| <= 4 and |psi'(rho)/rho| <= 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

C1 = 2.0 * math.sqrt(2.0)


def c2(n: int) -> float:
    return 4.0 + 4.0 * (n - 1)


@dataclass(frozen=True)
class CutoffSpec:
    l: float
    center: tuple = (0.0,)

    def __post_init__(self):
        if not self.l > 0:
            raise ValueError(f"cutoff scale must be positive, got {self.l}")


@dataclass(frozen=True)
class BesselParams:
    gamma: float
    n: int
    nodes: int = 256
    max_nodes: int = 2**14
    rtol: float = 1e-10

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.n < 2:
            raise ValueError("the Bessel potential formula needs n >= 2")


def psi(r):
    """Piecewise-quadratic cutoff: 1 on [0,1), 0 on [2, inf)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("psi is defined for r >= 0")
    out = np.where(
        r < 1.0,
        1.0,
        np.where(r < 1.5, 1.0 - 2.0 * (r - 1.0) ** 2, np.where(r < 2.0, 2.0 * (2.0 - r) ** 2, 0.0)),
    )
    return out[()] if out.ndim == 0 else out


def dpsi(r):
    r = np.asarray(r, dtype=float)
    out = np.where(r < 1.0, 0.0, np.where(r < 1.5, -4.0 * (r - 1.0), np.where(r < 2.0, -4.0 * (2.0 - r), 0.0)))
    return out[()] if out.ndim == 0 else out


def d2psi(r):
    r = np.asarray(r, dtype=float)
    out = np.where(r < 1.0, 0.0, np.where(r < 1.5, -4.0, np.where(r < 2.0, 4.0, 0.0)))
    return out[()] if out.ndim == 0 else out


def psi_l(x, spec: CutoffSpec):
    """Value, gradient and Laplacian of psi(|x - center| / l).

    ``x`` has shape (..., n); returns arrays of shape (...), (..., n), (...).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.shape[-1]
    c = np.broadcast_to(np.asarray(spec.center, dtype=float), (n,))
    y = x - c
    r = np.sqrt(np.sum(y**2, axis=-1))
    rho = r / spec.l
    value = psi(rho)
    d1 = dpsi(rho)
    safe_r = np.where(r > 0, r, 1.0)
    grad = (d1 / spec.l / safe_r)[..., None] * y
    grad = np.where((r > 0)[..., None], grad, 0.0)
    # psi' vanishes on [0, 1), so the (n-1)/r term is harmless at r = 0
    radial = np.where(rho > 0, d1 / np.where(rho > 0, rho, 1.0), 0.0)
    lap = (d2psi(rho) + (n - 1) * radial) / spec.l**2
    return value, grad, lap


def bessel_prefactor(gamma: float, n: int) -> float:
    a_n = 1.0 / (2.0 * (2.0 * math.pi) ** ((n - 1) / 2) * math.gamma((n - 1) / 2))
    return gamma ** (n / 2 - 1) * a_n


def _s_integral(z: np.ndarray, n: int, nodes: int) -> np.ndarray:
    """int_0^inf exp(-z s) (s + s^2/2)^((n-3)/2) ds by Gauss-Legendre in a log variable.

    With s = w^2 / z the integrand becomes
    2 z^{-(n-1)/2} w^{n-2} (1 + w^2/(2z))^{(n-3)/2} exp(-w^2), and w = exp(tau)
    turns both the small-w edge and the Gaussian tail into exponentially decaying ends.
    """
    lo, hi = math.log(1e-16), math.log(7.0)
    tau, wts = _legendre(nodes)
    tau = 0.5 * (hi - lo) * tau + 0.5 * (hi + lo)
    wts = 0.5 * (hi - lo) * wts
    w = np.exp(tau)
    zz = z[..., None]
    integrand = w ** (n - 1) * (1.0 + w**2 / (2.0 * zz)) ** ((n - 3) / 2) * np.exp(-(w**2))
    return 2.0 * zz[..., 0] ** (-(n - 1) / 2) * (integrand @ wts)


@lru_cache(maxsize=None)
def _legendre(nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def bessel_radial(r, p: BesselParams):
    """G as a function of |x| > 0.

    The node count doubles from ``p.nodes`` until two estimates agree to
    ``p.rtol`` everywhere or ``p.max_nodes`` is reached.
    """
    r = np.abs(np.asarray(r, dtype=float))
    if np.any(r <= 0):
        raise ValueError("Bessel kernel is singular at x = 0; use a cell average")
    z = math.sqrt(p.gamma) * r
    flat = z.ravel()
    # radii repeat heavily on lattices; integrate each distinct value once
    uniq, inverse = np.unique(flat, return_inverse=True)
    vals = np.empty_like(uniq)
    for lo in range(0, uniq.size, _CHUNK):
        vals[lo : lo + _CHUNK] = _adaptive_s_integral(uniq[lo : lo + _CHUNK], p)
    out = bessel_prefactor(p.gamma, p.n) * np.exp(-z) * vals[inverse].reshape(z.shape)
    return out[()] if out.ndim == 0 else out


_CHUNK = 4096


def _adaptive_s_integral(z: np.ndarray, p: BesselParams) -> np.ndarray:
    nodes = p.nodes
    prev = _s_integral(z, p.n, nodes)
    while nodes < p.max_nodes:
        nodes *= 2
        cur = _s_integral(z, p.n, nodes)
        done = np.all(np.abs(cur - prev) <= p.rtol * np.abs(cur))
        prev = cur
        if done:
            break
    return prev


def bessel_kernel(x, p: BesselParams):
    """G(x) for -lap z + gamma z = f on R^n; ``x`` has shape (..., n)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (p.n,):
        raise ValueError(f"points must have trailing dimension {p.n}")
    return bessel_radial(np.sqrt(np.sum(x**2, axis=-1)), p)


def bessel_cell_average(h: float, p: BesselParams, offset=None, sub: int = 32) -> float:
    """Mean of G over the cube of side h centred at ``offset`` (default: the origin).

    Midpoint sub-quadrature on ``sub``^n points; with even ``sub`` no node hits 0.
    """
    offset = np.zeros(p.n) if offset is None else np.asarray(offset, dtype=float)
    s = (np.arange(sub) + 0.5) / sub * h - 0.5 * h
    pts = np.stack(np.meshgrid(*([s] * p.n), indexing="ij"), axis=-1).reshape(-1, p.n) + offset
    return float(np.mean(bessel_kernel(pts, p)))


def lattice_shell_counts(M: int, n: int) -> np.ndarray:
    """counts[k] = number of integer points j in [-M, M]^n with |j|^2 = k."""
    sq = np.zeros(M * M + 1)
    sq[np.arange(M + 1) ** 2] = 2.0
    sq[0] = 1.0
    counts = sq
    for _ in range(n - 1):
        counts = np.rint(fftconvolve(counts, sq))
    return counts


def lattice_moment(h: float, p: BesselParams, radius: float | None = None) -> float:
    """h^n * sum of G over the punctured lattice hZ^n within ``radius``.

    The default radius 40/sqrt(gamma) leaves a tail below e^-40.
    """
    radius = 40.0 / math.sqrt(p.gamma) if radius is None else radius
    M = int(radius / h) + 1
    counts = lattice_shell_counts(M, p.n)[: M * M + 1]
    k = np.nonzero(counts)[0]
    k = k[(k > 0) & (h * np.sqrt(k) <= radius)]
    return float(h**p.n * np.dot(counts[k], bessel_radial(h * np.sqrt(k), p)))


def singular_weight(h: float, p: BesselParams, mode: str = "calibrated", sub: int = 32) -> float:
    """Weight (per unit cell volume) given to the singular cell of a lattice convolution with G.

    ``average``: mean of G over the cell.  ``calibrated``: the value that makes the
    punctured lattice rule reproduce int G = 1/gamma exactly, which removes the
    O(h^2) singular-cell error of the midpoint rule.
    """
    if mode == "average":
        return bessel_cell_average(h, p, sub=sub)
    if mode == "calibrated":
        return (1.0 / p.gamma - lattice_moment(h, p)) / h**p.n
    raise ValueError(f"unknown singular-cell mode {mode!r}")


def heat_radial(r, t: float, n: int):
    if not t > 0:
        raise ValueError(f"heat kernel needs t > 0, got {t}")
    r = np.asarray(r, dtype=float)
    out = (4.0 * math.pi * t) ** (-n / 2) * np.exp(-(r**2) / (4.0 * t))
    return out[()] if out.ndim == 0 else out


def heat_kernel(x, t: float, n: int):
    """(4 pi t)^{-n/2} exp(-|x|^2 / 4t) at points of shape (..., n)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise ValueError(f"points must have trailing dimension {n}")
    return heat_radial(np.sqrt(np.sum(x**2, axis=-1)), t, n)
