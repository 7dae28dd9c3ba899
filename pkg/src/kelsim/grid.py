"""Periodic box grids and the discrete calculus used by every solver.

R^n is truncated to the box [-L, L)^n with N cells per axis.  Scalar fields are
plain ``numpy`` arrays of shape ``(N,) * n`` holding cell-centred values; a
vector field stacks ``n`` such arrays and records whether its components live
at cell centres or on faces.  Face component ``d`` at index ``i`` sits on the
face between cell ``i`` and cell ``i + e_d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FIELD_MAGIC = "kelsim-field"
FIELD_VERSION = "v1"


@dataclass(frozen=True)
class GridSpec:
    n: int
    L: float
    N: int

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.n}")
        if self.N < 8 or self.N % 2:
            raise ValueError(f"cells per axis must be even and >= 8, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"half-width must be positive, got {self.L}")
        # nudge L by at most an ulp so that h * N == 2L holds exactly in floating point
        L = float(self.L)
        for _ in range(4):
            snapped = (2.0 * L / self.N) * self.N / 2.0
            if snapped == L:
                break
            L = snapped
        object.__setattr__(self, "L", L)

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N**self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** self.n

    def centers(self) -> np.ndarray:
        """1D cell-centre coordinates along any axis."""
        return -self.L + (np.arange(self.N) + 0.5) * self.h

    def mesh(self) -> list[np.ndarray]:
        x = self.centers()
        return list(np.meshgrid(*([x] * self.n), indexing="ij", sparse=True))

    def face_mesh(self, axis: int) -> list[np.ndarray]:
        """Coordinates of the faces carrying component ``axis``."""
        x = self.centers()
        axes = [x + 0.5 * self.h if d == axis else x for d in range(self.n)]
        return list(np.meshgrid(*axes, indexing="ij", sparse=True))

    def radius(self, center=None) -> np.ndarray:
        """|x - center| at every cell centre (no periodic wrap)."""
        c = np.zeros(self.n) if center is None else np.broadcast_to(np.asarray(center, float), (self.n,))
        r2 = sum((xd - cd) ** 2 for xd, cd in zip(self.mesh(), c))
        return np.sqrt(np.broadcast_to(r2, self.shape))

    def wrap(self, index):
        return np.mod(index, self.N)

    def label(self) -> str:
        return "extrapolation regime (n=1)" if self.n == 1 else "analysed regime (n=2,3)"


def make_grid(n: int, L: float, N: int) -> GridSpec:
    return GridSpec(int(n), float(L), int(N))


@dataclass(frozen=True)
class VectorField:
    data: np.ndarray  # shape (n, N, ..., N)
    staggered: bool = False

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, axis):
        return self.data[axis]

    def norm(self) -> np.ndarray:
        """Pointwise Euclidean magnitude, face components averaged to centres first."""
        F = to_centers(self) if self.staggered else self
        return np.sqrt(np.sum(F.data**2, axis=0))


def check_field(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    return f


def check_vector(grid: GridSpec, F: VectorField) -> VectorField:
    if F.data.shape != (grid.n,) + grid.shape:
        raise ValueError(f"vector field shape {F.data.shape} does not match grid")
    return F


def gradient(f: np.ndarray, grid: GridSpec) -> VectorField:
    """Centred second-order periodic gradient at cell centres."""
    f = check_field(grid, f)
    h = grid.h
    comps = [(np.roll(f, -1, axis=d) - np.roll(f, 1, axis=d)) / (2 * h) for d in range(grid.n)]
    return VectorField(np.stack(comps), staggered=False)


def face_gradient(f: np.ndarray, grid: GridSpec) -> VectorField:
    """Compact difference (f[i+1] - f[i]) / h on faces."""
    f = check_field(grid, f)
    comps = [(np.roll(f, -1, axis=d) - f) / grid.h for d in range(grid.n)]
    return VectorField(np.stack(comps), staggered=True)


def to_faces(F: VectorField) -> VectorField:
    """Arithmetic average of centred components onto faces."""
    if F.staggered:
        return F
    comps = [0.5 * (F.data[d] + np.roll(F.data[d], -1, axis=d)) for d in range(F.n)]
    return VectorField(np.stack(comps), staggered=True)


def to_centers(F: VectorField) -> VectorField:
    if not F.staggered:
        return F
    comps = [0.5 * (F.data[d] + np.roll(F.data[d], 1, axis=d)) for d in range(F.n)]
    return VectorField(np.stack(comps), staggered=False)


def divergence(F: VectorField, grid: GridSpec) -> np.ndarray:
    """Conservative divergence of a face field; integrates to zero by telescoping."""
    check_vector(grid, F)
    if not F.staggered:
        raise ValueError("divergence expects a face-oriented field; use to_faces first")
    out = np.zeros(grid.shape)
    for d in range(grid.n):
        out += F.data[d] - np.roll(F.data[d], 1, axis=d)
    return out / grid.h


def laplacian(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Standard (2n+1)-point periodic Laplacian."""
    f = check_field(grid, f)
    out = -2.0 * grid.n * f
    for d in range(grid.n):
        out = out + np.roll(f, -1, axis=d) + np.roll(f, 1, axis=d)
    return out / grid.h**2


def integrate(f: np.ndarray, grid: GridSpec) -> float:
    f = check_field(grid, f)
    return float(grid.cell_volume * np.sum(f))


def laplacian_symbol(grid: GridSpec, real: bool = True) -> np.ndarray:
    """Eigenvalues of -laplacian on the Fourier modes, laid out for ``rfftn`` (or ``fftn``)."""
    N, h = grid.N, grid.h
    full = (4.0 / h**2) * np.sin(np.pi * np.fft.fftfreq(N)) ** 2
    half = (4.0 / h**2) * np.sin(np.pi * np.fft.rfftfreq(N)) ** 2
    axes = [full] * grid.n
    if real:
        axes[-1] = half
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    return sum(grids)


def write_field(path, grid: GridSpec, values: np.ndarray, t: float = 0.0) -> Path:
    """Header line then little-endian float64 values in row-major order."""
    values = check_field(grid, values)
    path = Path(path)
    header = f"{FIELD_MAGIC} {FIELD_VERSION} n={grid.n} N={grid.N} L={grid.L!r} t={float(t)!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes(order="C"))
    return path


def read_field(path) -> tuple[GridSpec, np.ndarray, float]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    if len(header) != 6 or header[0] != FIELD_MAGIC or header[1] != FIELD_VERSION:
        raise ValueError(f"{path}: not a {FIELD_MAGIC} {FIELD_VERSION} dump")
    kv = dict(item.split("=", 1) for item in header[2:])
    grid = make_grid(int(kv["n"]), float(kv["L"]), int(kv["N"]))
    values = np.frombuffer(payload, dtype="<f8")
    if values.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {values.size}")
    return grid, values.reshape(grid.shape).astype(float), float(kv["t"])


def lp_norm(f: np.ndarray, grid: GridSpec, p: float = 2.0) -> float:
    """h^n-weighted L^p norm; p = inf gives max |f|."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    a = np.abs(np.asarray(f, dtype=float))
    if not np.all(np.isfinite(a)):
        raise ValueError("field contains non-finite values")
    if math.isinf(p):
        return float(a.max()) if a.size else 0.0
    if p == 1:
        return float(grid.cell_volume * a.sum())
    peak = a.max()
    if peak == 0:
        return 0.0
    return float(peak * (grid.cell_volume * np.sum((a / peak) ** p)) ** (1.0 / p))
