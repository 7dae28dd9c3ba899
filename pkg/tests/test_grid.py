import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kelsim.grid import (
    GridSpec,
    VectorField,
    divergence,
    face_gradient,
    gradient,
    integrate,
    laplacian,
    lp_norm,
    make_grid,
    read_field,
    to_centers,
    to_faces,
    write_field,
)


def test_make_grid_spacing():
    assert make_grid(1, 1.0, 8).h == 0.25
    assert make_grid(2, 10.0, 200).h == pytest.approx(0.1, rel=1e-15)


@pytest.mark.parametrize("n,L,N", [(2, 1.0, 7), (2, 1.0, 6), (2, 0.0, 8), (2, -1.0, 8), (4, 1.0, 8)])
def test_make_grid_rejects(n, L, N):
    with pytest.raises(ValueError):
        make_grid(n, L, N)


@given(st.floats(1e-3, 1e3), st.integers(4, 2000))
def test_spacing_times_count_is_box_width(L, half_n):
    g = make_grid(1, L, 2 * half_n)
    assert g.h * g.N == 2 * g.L
    assert abs(g.L - L) <= 2 * math.ulp(L)


def test_wrap_is_periodic():
    g = make_grid(1, 1.0, 8)
    assert g.wrap(3) == g.wrap(3 + g.N) == g.wrap(3 - g.N)


def test_gradient_of_constant_vanishes(grid2):
    assert np.all(gradient(np.full(grid2.shape, 3.0), grid2).data == 0)


def _sine_errors(N, L=1.0):
    g = make_grid(1, L, N)
    x = g.centers()
    f = np.sin(np.pi * x / L)
    eg = np.max(np.abs(gradient(f, g)[0] - (np.pi / L) * np.cos(np.pi * x / L)))
    el = np.max(np.abs(laplacian(f, g) + (np.pi / L) ** 2 * f))
    return eg, el


def test_second_order_convergence():
    errs = np.array([_sine_errors(N) for N in (32, 64, 128)])
    orders = np.log2(errs[:-1] / errs[1:])
    assert np.all(np.abs(orders - 2.0) <= 0.2), orders


def test_sharp_bump_gradient_matches_fine_grid():
    # compactly supported bump, far from the box edge: no wrap artefacts
    fine = make_grid(1, 2.0, 2048)

    def f(x):
        s = np.abs(x) / 0.5
        return np.where(s < 1, np.exp(1 - 1 / (1 - np.minimum(s, 0.999999) ** 2)), 0.0)

    gf = gradient(f(fine.centers()), fine)[0]
    errs = []
    for N in (64, 128, 256):
        g = make_grid(1, 2.0, N)
        gc = gradient(f(g.centers()), g)[0]
        assert np.all(np.isfinite(gc))
        assert np.all(gc[np.abs(g.centers()) > 1.5] == 0)
        errs.append(np.max(np.abs(gc - np.interp(g.centers(), fine.centers(), gf))))
    assert errs[0] > errs[1] > errs[2], errs
    assert errs[2] < 0.05 * np.max(np.abs(gf)), errs


def test_divergence_of_face_gradient_is_laplacian(grid2):
    rng = np.random.default_rng(1)
    f = rng.standard_normal(grid2.shape)
    assert np.allclose(divergence(face_gradient(f, grid2), grid2), laplacian(f, grid2), atol=1e-10, rtol=0)


def test_divergence_needs_faces(grid2):
    with pytest.raises(ValueError):
        divergence(gradient(np.zeros(grid2.shape), grid2), grid2)


def test_divergence_of_constant(grid2):
    F = VectorField(np.full((2,) + grid2.shape, 1.7), staggered=True)
    assert np.all(divergence(F, grid2) == 0)


@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_divergence_integrates_to_zero(n, seed):
    g = make_grid(n, 1.5, 8 if n == 3 else 16)
    F = np.random.default_rng(seed).standard_normal((n,) + g.shape)
    div = divergence(VectorField(F, staggered=True), g)
    scale = np.sum(np.abs(F)) * g.cell_volume / g.h
    assert abs(integrate(div, g)) <= 1e-12 * scale


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_operators_are_linear(a, b, seed):
    g = make_grid(2, 1.0, 16)
    rng = np.random.default_rng(seed)
    f, h = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
    for op in (lambda x: gradient(x, g).data, lambda x: laplacian(x, g), lambda x: face_gradient(x, g).data):
        lhs = op(a * f + b * h)
        rhs = a * op(f) + b * op(h)
        assert np.allclose(lhs, rhs, atol=1e-9 * (1 + abs(a) + abs(b)) * np.max(np.abs(op(f)) + np.abs(op(h))))


def test_integrate_constant():
    g = make_grid(2, 1.0, 16)
    assert integrate(np.full(g.shape, 2.5), g) == pytest.approx(2.5 * 4)


def test_laplacian_of_constant(grid2):
    assert np.all(laplacian(np.full(grid2.shape, 4.0), grid2) == 0)


def test_face_center_round_trip_of_constants(grid2):
    F = VectorField(np.ones((2,) + grid2.shape))
    assert np.allclose(to_centers(to_faces(F)).data, 1.0)


def test_field_dump_round_trip(tmp_path):
    g = make_grid(2, 1.25, 8)
    f = np.arange(64.0).reshape(8, 8) / 7
    path = write_field(tmp_path / "f.kfd", g, f, t=0.3)
    first = path.read_bytes().split(b"\n", 1)[0].decode()
    assert first == "kelsim-field v1 n=2 N=8 L=1.25 t=0.3"
    g2, f2, t = read_field(path)
    assert g2 == g and t == 0.3 and np.array_equal(f2, f)
    assert path.stat().st_size == len(first) + 1 + 64 * 8


def test_lp_norms():
    g = make_grid(1, 1.0, 8)
    one = np.ones(g.shape)
    assert lp_norm(one, g, 1) == pytest.approx(2.0)
    assert lp_norm(one, g, math.inf) == 1.0
    with pytest.raises(ValueError):
        lp_norm(one, g, 0.5)


@given(st.floats(-10, 10), st.sampled_from([1.0, 2.0, 3.5, math.inf]), st.integers(0, 2**32 - 1))
def test_lp_norm_homogeneous_and_holder(alpha, p, seed):
    g = make_grid(1, 1.0, 16)
    f = np.random.default_rng(seed).standard_normal(g.shape)
    assert lp_norm(alpha * f, g, p) == pytest.approx(abs(alpha) * lp_norm(f, g, p), rel=1e-12, abs=1e-300)
    assert lp_norm(f, g, 1) <= lp_norm(f, g, math.inf) * g.volume * (1 + 1e-12)


def test_shape_mismatch_rejected(grid2):
    with pytest.raises(ValueError):
        gradient(np.zeros((8, 8)), grid2)


def test_gridspec_is_hashable():
    assert hash(GridSpec(2, 1.0, 8)) == hash(make_grid(2, 1.0, 8))
