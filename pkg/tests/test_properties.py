import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_trig
from parahom.cell import ProblemCoefficients, normalize_pair, principal_eigenpair
from parahom.harness import fit_rate
from parahom.smoothing import SmoothingKernel, smooth_array
from parahom.torus import PeriodicField, TorusGrid, laplacian, solve_cell_poisson, spectral_derivative

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(-3, 3), st.floats(-3, 3))
def test_derivative_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    g = TorusGrid(2, 16)
    f, h = PeriodicField(g, random_trig(rng, g)), PeriodicField(g, random_trig(rng, g))
    lhs = spectral_derivative(PeriodicField(g, a * f.values + b * h.values), 1).values
    rhs = a * spectral_derivative(f, 1).values + b * spectral_derivative(h, 1).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_poisson_inverts_laplacian(seed):
    rng = np.random.default_rng(seed)
    g = TorusGrid(2, 16)
    r = random_trig(rng, g, degree=3)
    rhs = PeriodicField(g, r - r.mean())
    assert np.max(np.abs(laplacian(solve_cell_poisson(rhs)).values - rhs.values)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(1e-3, 1e3))
def test_fit_recovers_power_law(rate, const):
    eps = 2.0 ** -np.arange(3, 7)
    slope, half = fit_rate(zip(eps, const * eps**rate))
    assert abs(slope - rate) <= 1e-9
    # stderr goes through 1 - r^2, so exact data leaves a sqrt(machine eps) sized half-width
    assert half <= 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-2, 2))
def test_smoothing_reproduces_affine_in_time(a, b):
    k = SmoothingKernel(1)
    t = np.arange(48) / 512
    vals = (a + b * t)[:, None] * np.ones((1, 41))
    out = smooth_array(vals, 1 / 8, 1 / 64, 1 / 512, k)
    assert np.max(np.abs(out[10:-10, 8:-8] - vals[10:-10, 8:-8])) <= 1e-12 * (1 + abs(a) + abs(b))


@settings(max_examples=15, deadline=None)
@given(seeds, st.floats(-2, 2))
def test_potential_shift_moves_eigenvalue(seed, shift):
    rng = np.random.default_rng(seed)
    g = TorusGrid(1, 32)
    A = (1.2 + 0.3 * random_trig(rng, g, degree=2) / 3)[None, None]
    b = (0.5 * random_trig(rng, g, degree=2))[None]
    c = random_trig(rng, g, degree=2)
    co = ProblemCoefficients(PeriodicField(g, A), PeriodicField(g, b), PeriodicField(g, c))
    co2 = ProblemCoefficients(PeriodicField(g, A), PeriodicField(g, b), PeriodicField(g, c + shift))
    lam, p = principal_eigenpair(co, [0.02])
    lam2, p2 = principal_eigenpair(co2, [0.02])
    assert abs(lam2 - lam - shift) <= 1e-8 * (1 + abs(lam))


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0.1, 10), st.floats(0.1, 10))
def test_normalize_pair_scale_invariant(seed, s1, s2):
    rng = np.random.default_rng(seed)
    g = TorusGrid(1, 16)
    p = PeriodicField(g, 2 + random_trig(rng, g, degree=2) / 4)
    q = PeriodicField(g, 2 + random_trig(rng, g, degree=2) / 4)
    a, b = normalize_pair(p, q)
    c, d = normalize_pair(PeriodicField(g, s1 * p.values), PeriodicField(g, -s2 * q.values))
    assert np.allclose(a.values, c.values, rtol=1e-12) and np.allclose(b.values, d.values, rtol=1e-12)
    assert abs(np.mean(a.values * b.values) - 1) <= 1e-12
