import warnings

import numpy as np
import pytest

from oracles import fourier_diff_matrices, random_trig
from parahom.errors import GridMismatch, NonFiniteField, NonZeroMean
from parahom.torus import (
    AliasingWarning,
    PeriodicField,
    TorusGrid,
    cell_average,
    divergence,
    gradient,
    laplacian,
    read_field_csv,
    second_derivative,
    solve_cell_poisson,
    spectral_derivative,
    write_field_csv,
)


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(1, 12)
    with pytest.raises(ValueError):
        TorusGrid(4, 8)
    with pytest.raises(ValueError):
        TorusGrid(3, 256)  # exceeds the point budget
    g = TorusGrid(2, 16)
    assert g.shape == (16, 16) and g.size == 256
    assert g.spacing == pytest.approx(1 / 16)


def test_field_rejects_nonfinite_and_is_readonly():
    g = TorusGrid(1, 8)
    with pytest.raises(NonFiniteField):
        PeriodicField(g, np.full(8, np.nan))
    f = PeriodicField(g, np.zeros(8))
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    with pytest.raises(GridMismatch):
        PeriodicField(g, np.zeros(9))


def test_derivative_of_sine():
    g = TorusGrid(2, 64)
    y1, _ = g.coords()
    f = PeriodicField(g, np.sin(2 * np.pi * y1))
    df = spectral_derivative(f, 0)
    assert np.max(np.abs(df.values - 2 * np.pi * np.cos(2 * np.pi * y1))) <= 1e-10
    assert np.max(np.abs(spectral_derivative(f, 1).values)) <= 1e-12
    assert np.max(np.abs(spectral_derivative(PeriodicField.constant(g, 1.0), 0).values)) == 0.0


def test_derivative_random_trig_symbolic():
    rng = np.random.default_rng(3)
    g = TorusGrid(1, 32)
    (y,) = g.coords()
    coef = rng.normal(size=(8, 2))
    f = sum(a * np.cos(2 * np.pi * k * y) + b * np.sin(2 * np.pi * k * y) for k, (a, b) in enumerate(coef, 1))
    df = sum(2 * np.pi * k * (-a * np.sin(2 * np.pi * k * y) + b * np.cos(2 * np.pi * k * y))
             for k, (a, b) in enumerate(coef, 1))
    assert np.max(np.abs(spectral_derivative(PeriodicField(g, f), 0).values - df)) <= 1e-10


def test_matches_cotangent_matrices():
    n = 16
    g = TorusGrid(1, n)
    d1, d2 = fourier_diff_matrices(n)
    rng = np.random.default_rng(0)
    v = rng.normal(size=n)
    f = PeriodicField(g, v)
    assert np.max(np.abs(spectral_derivative(f, 0).values - d1 @ v)) <= 1e-10
    assert np.max(np.abs(second_derivative(f, 0, 0).values - d2 @ v)) <= 1e-9


def test_cell_average_examples():
    g = TorusGrid(1, 256)
    (y,) = g.coords()
    assert abs(cell_average(PeriodicField(g, np.sin(2 * np.pi * y)))) <= 1e-15
    assert cell_average(PeriodicField.constant(g, 1.0)) == 1.0
    f = PeriodicField(g, 1 / (1 + 0.5 * np.sin(2 * np.pi * y)))
    assert abs(cell_average(f) - 1 / np.sqrt(0.75)) <= 1e-10


def test_poisson_examples():
    g = TorusGrid(2, 32)
    y1, _ = g.coords()
    u = solve_cell_poisson(PeriodicField(g, np.sin(2 * np.pi * y1)))
    assert np.max(np.abs(u.values + np.sin(2 * np.pi * y1) / (4 * np.pi**2))) <= 1e-14
    assert np.max(np.abs(solve_cell_poisson(PeriodicField.constant(g, 0.0)).values)) == 0.0
    rng = np.random.default_rng(1)
    rhs = PeriodicField(g, random_trig(rng, g, degree=5))
    rhs = PeriodicField(g, rhs.values - rhs.values.mean())
    assert np.max(np.abs(laplacian(solve_cell_poisson(rhs)).values - rhs.values)) <= 1e-10
    with pytest.raises(NonZeroMean):
        solve_cell_poisson(PeriodicField.constant(g, 1.0))


def test_gradient_and_divergence_conventions():
    g = TorusGrid(2, 16)
    y1, y2 = g.coords()
    M = np.zeros((2, 2) + g.shape)
    M[0, 1] = np.sin(2 * np.pi * y1)  # (div M)_1 = d_1 M_01
    dM = divergence(PeriodicField(g, M)).values
    assert np.allclose(dM[1], 2 * np.pi * np.cos(2 * np.pi * y1), atol=1e-12)
    assert np.allclose(dM[0], 0.0, atol=1e-12)
    v = PeriodicField(g, np.array([np.sin(2 * np.pi * y2), np.cos(2 * np.pi * y1)]))
    gv = gradient(v).values  # gv[i, k] = d_k v_i
    assert np.allclose(gv[0, 1], 2 * np.pi * np.cos(2 * np.pi * y2), atol=1e-12)
    assert np.allclose(gv[1, 0], -2 * np.pi * np.sin(2 * np.pi * y1), atol=1e-12)


def test_evaluate_interpolates_exactly():
    g = TorusGrid(2, 16)
    y1, y2 = g.coords()
    f = PeriodicField(g, np.cos(2 * np.pi * (y1 + 2 * y2)) + np.sin(2 * np.pi * 3 * y2))
    p1 = np.linspace(0, 3, 17)
    p2 = np.linspace(-0.3, 0.9, 11)
    vals = f.evaluate([p1, p2])
    Y1, Y2 = np.meshgrid(p1, p2, indexing="ij")
    assert np.max(np.abs(vals - (np.cos(2 * np.pi * (Y1 + 2 * Y2)) + np.sin(6 * np.pi * Y2)))) <= 1e-12
    # nodes are reproduced, including the Nyquist mode
    h = PeriodicField(g, (-1.0) ** np.arange(16)[:, None] * np.ones((16, 16)))
    assert np.allclose(h.evaluate([np.arange(16) / 16, np.arange(16) / 16]), h.values, atol=1e-12)


def test_csv_round_trip(tmp_path):
    g = TorusGrid(2, 8)
    rng = np.random.default_rng(2)
    f = PeriodicField(g, random_trig(rng, g, degree=2)[None, None] * np.ones((2, 2, 1, 1)))
    path = tmp_path / "A.csv"
    write_field_csv(path, f, name="A")
    assert path.read_text().splitlines()[0] == "A_11,A_12,A_21,A_22"
    back = read_field_csv(path, 2, (2, 2))
    assert np.array_equal(back.values, f.values)


def test_csv_aliasing_warning(tmp_path):
    g = TorusGrid(1, 16)
    rng = np.random.default_rng(0)
    write_field_csv(tmp_path / "noise.csv", PeriodicField(g, rng.normal(size=16)))
    with pytest.warns(AliasingWarning):
        read_field_csv(tmp_path / "noise.csv", 1)
    (y,) = g.coords()
    write_field_csv(tmp_path / "smooth.csv", PeriodicField(g, np.sin(2 * np.pi * y)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        read_field_csv(tmp_path / "smooth.csv", 1)
