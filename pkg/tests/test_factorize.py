import numpy as np
import pytest

from oracles import random_problem
from parahom.cell import ProblemCoefficients, find_bloch_parameter
from parahom.errors import NonZeroMean, NotDivergenceFree, NotSymmetric
from parahom.factorize import (
    NondivergenceCoefficients,
    build_factorized_model,
    build_skew_potential,
    factorize,
    nondivergence_frontend,
)
from parahom.torus import PeriodicField, TorusGrid, derivative_array, divergence


def eye_field(g, scalar=1.0):
    d = g.dim
    out = np.zeros((d, d) + g.shape)
    for i in range(d):
        out[i, i] = scalar
    return PeriodicField(g, out)


def zeros(g, *comp):
    return PeriodicField(g, np.zeros(comp + g.shape))


def test_identity_reduction():
    g = TorusGrid(2, 16)
    fm = factorize(ProblemCoefficients(eye_field(g), zeros(g, 2), zeros(g)))
    assert np.max(np.abs(fm.sigma.values - 1)) <= 1e-12
    assert np.max(np.abs(fm.M.values - eye_field(g).values)) <= 1e-12
    assert np.max(np.abs(fm.B.values)) == 0.0
    assert np.max(np.abs(fm.beta.values)) <= 1e-12


def test_constant_drift_1d_model():
    g = TorusGrid(1, 64)
    fm = factorize(ProblemCoefficients(eye_field(g), PeriodicField.constant(g, [1.0]), zeros(g)))
    assert np.max(np.abs(fm.sigma.values - 1)) <= 1e-8
    assert np.max(np.abs(fm.M.values - 1)) <= 1e-8
    assert np.max(np.abs(fm.B.values)) <= 1e-8


def test_skew_potential_single_mode():
    g = TorusGrid(2, 32)
    _, y2 = g.coords()
    beta = PeriodicField(g, np.array([np.sin(2 * np.pi * y2), np.zeros(g.shape)]))
    B = build_skew_potential(beta).values
    # with the first-index divergence, -div B = beta forces B_12 = -cos(2 pi y2)/(2 pi)
    assert np.max(np.abs(B[0, 1] + np.cos(2 * np.pi * y2) / (2 * np.pi))) <= 1e-10
    assert np.max(np.abs(B[1, 0] - np.cos(2 * np.pi * y2) / (2 * np.pi))) <= 1e-10
    assert np.max(np.abs(divergence(PeriodicField(g, B)).values + beta.values)) <= 1e-10
    assert np.max(np.abs(build_skew_potential(zeros(g, 2)).values)) == 0.0


def test_skew_potential_random_divergence_free():
    rng = np.random.default_rng(4)
    g = TorusGrid(2, 32)
    y1, y2 = g.coords()
    # beta = curl of a random stream function is divergence free and zero mean
    psi = sum(rng.normal() * np.sin(2 * np.pi * (k1 * y1 + k2 * y2) + rng.uniform(0, 6))
              for k1 in range(-2, 3) for k2 in range(-2, 3))
    beta = PeriodicField(g, np.array([derivative_array(psi, g, 1), -derivative_array(psi, g, 0)]))
    B = build_skew_potential(beta).values
    assert np.max(np.abs(B + np.swapaxes(B, 0, 1))) <= 1e-8
    assert np.max(np.abs(divergence(PeriodicField(g, B)).values + beta.values)) <= 1e-8


def test_skew_potential_errors():
    g = TorusGrid(2, 16)
    y1, _ = g.coords()
    with pytest.raises(NonZeroMean):
        build_skew_potential(PeriodicField(g, np.ones((2,) + g.shape)))
    with pytest.raises(NotDivergenceFree):
        build_skew_potential(PeriodicField(g, np.array([np.sin(2 * np.pi * y1), np.zeros(g.shape)])))


def test_random_2d_structure_and_ellipticity():
    # structure residuals are at roundoff only once the cell grid resolves psi (n=32 leaves ~1e-6)
    rng = np.random.default_rng(9)
    g = TorusGrid(2, 64)
    A, b, c = random_problem(rng, g)
    pc = ProblemCoefficients(PeriodicField(g, A), PeriodicField(g, b), PeriodicField(g, c))
    eig = find_bloch_parameter(pc)
    fm = build_factorized_model(pc, eig)
    d = fm.diagnostics()
    assert d["skew_B"] <= 1e-10
    assert d["beta_plus_div_B"] <= 1e-8
    assert d["mean_beta"] <= 1e-8
    assert d["div_beta"] <= 1e-8
    assert abs(d["mean_sigma"] - 1) <= 1e-8
    assert fm.sigma.values.min() >= eig.lower_bound_a**2 - 1e-14
    assert fm.ellipticity_b >= pc.mu * fm.sigma.values.min() - 1e-14
    M = np.moveaxis(fm.M.values.reshape(2, 2, -1), -1, 0)
    for _ in range(20):
        xi = rng.normal(size=2)
        xi /= np.linalg.norm(xi)
        assert np.all(np.einsum("nij,i,j->n", M, xi, xi) >= fm.ellipticity_b - 1e-12)


def test_nondivergence_frontend():
    g = TorusGrid(2, 32)
    y1, _ = g.coords()
    K = eye_field(g, 1 + 0.5 * np.sin(2 * np.pi * y1))
    pc = nondivergence_frontend(NondivergenceCoefficients(K, zeros(g, 2), zeros(g)))
    assert np.max(np.abs(pc.b.values[0] - np.pi * np.cos(2 * np.pi * y1))) <= 1e-10
    assert np.max(np.abs(pc.b.values[1])) <= 1e-12
    q0 = PeriodicField.constant(g, [0.3, -0.2])
    pc = nondivergence_frontend(NondivergenceCoefficients(eye_field(g), q0, zeros(g)))
    assert np.allclose(pc.b.values, q0.values, atol=1e-14)
    eig = find_bloch_parameter(nondivergence_frontend(NondivergenceCoefficients(eye_field(g), zeros(g, 2), zeros(g))))
    assert abs(eig.lam) <= 1e-12 and np.allclose(eig.psi.values, 1.0, atol=1e-12)
    Kbad = eye_field(g).values.copy()
    Kbad[0, 1] = 0.1
    with pytest.raises(NotSymmetric):
        nondivergence_frontend(NondivergenceCoefficients(PeriodicField(g, Kbad), zeros(g, 2), zeros(g)))
