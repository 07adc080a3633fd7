import json

import numpy as np
import pytest
from scipy.integrate import quad

from parahom.cell import CellEigenSolution, ProblemCoefficients
from parahom.errors import GridMismatch, StiffnessCap
from parahom.factorize import factorize
from parahom.homogenize import GeneralCoefficients
from parahom.parabolic import (
    DomainSpec,
    InitialDatum,
    ParabolicProblem,
    SpaceTimeField,
    assemble_stiffness,
    bump_datum,
    difference,
    export_snapshots,
    is_monotone,
    psi_on_nodes,
    reconstruct_u,
    snapshot_stride,
    solve_divform,
    solve_full_oscillatory,
    spacetime_norm,
)
from parahom.presets import get_preset
from parahom.torus import PeriodicField, TorusGrid


def heat_error(N, T=0.1):
    h = 1.0 / N
    dom = DomainSpec(1, T, h, h * h, 0.5, strict=False)
    datum = InitialDatum.from_function(dom, lambda x: np.sin(np.pi * x))
    f = solve_divform(ParabolicProblem(dom, "homogenized", np.eye(1), datum))
    exact = np.exp(-np.pi**2 * f.times)[:, None] * np.sin(np.pi * dom.nodes())[None]
    return spacetime_norm(difference(f, f.with_values(exact)))


def test_domain_invariants():
    with pytest.raises(ValueError):
        DomainSpec(1, 0.1, 1 / 10, 1e-3, 1 / 3)  # 1/eps not an integer
    with pytest.raises(ValueError):
        DomainSpec(1, 0.1, 1 / 16, 1e-3, 1 / 4)  # h > eps/8
    with pytest.raises(ValueError):
        DomainSpec(1, 0.1, 1 / 64, 0.1, 1 / 4)  # tau > h
    with pytest.raises(ValueError):
        DomainSpec(3, 0.1, 1 / 64, 1e-4, 1 / 4)
    dom = DomainSpec(1, 0.1, 1 / 64, 1 / 64**2, 1 / 4)
    assert dom.n_steps * dom.dt == pytest.approx(0.1, rel=1e-14)


def test_datum_must_vanish_on_boundary():
    with pytest.raises(ValueError):
        InitialDatum("plain", np.ones(9))
    with pytest.raises(ValueError):
        InitialDatum("rough", np.zeros(9))


def test_heat_equation_second_order():
    errs = [heat_error(N) for N in (16, 32, 64)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9), rates
    assert errs[-1] < 1e-4


def test_energy_and_positivity_scalar():
    gc = get_preset("weighted-1d").coefficients(64)
    dom = DomainSpec(1, 0.05, 1 / 128, 1 / 128**2, 1 / 16)
    f = solve_divform(ParabolicProblem(dom, "oscillatory-divform", gc, bump_datum(dom)))
    assert np.all(np.diff(f.energy) <= 0)
    assert f.meta["monotone"]
    assert f.values.min() >= 0.0


def test_constant_coefficients_bitwise_equal_homogenized():
    g = TorusGrid(2, 16)
    T = np.array([[1.2, 0.1], [0.1, 0.8]])
    gc = GeneralCoefficients(PeriodicField.constant(g, 1.0), PeriodicField.constant(g, T))
    dom = DomainSpec(2, 0.02, 1 / 32, 1 / 32**2, 1 / 4)
    datum = bump_datum(dom)
    a = solve_divform(ParabolicProblem(dom, "oscillatory-divform", gc, datum))
    b = solve_divform(ParabolicProblem(dom, "homogenized", T, datum))
    assert np.array_equal(a.values, b.values)


def test_full_oscillatory_identity_agrees():
    g = TorusGrid(1, 16)
    pc = ProblemCoefficients(PeriodicField.constant(g, [[1.0]]), PeriodicField.constant(g, [0.0]),
                             PeriodicField.constant(g, 0.0))
    gc = GeneralCoefficients(PeriodicField.constant(g, 1.0), PeriodicField.constant(g, [[1.0]]))
    dom = DomainSpec(1, 0.05, 1 / 64, 1 / 64**2, 1 / 4)
    d = bump_datum(dom)
    u = solve_full_oscillatory(ParabolicProblem(dom, "full-oscillatory", pc, d))
    v = solve_divform(ParabolicProblem(dom, "oscillatory-divform", gc, d))
    assert np.max(np.abs(u.values - v.values)) <= 1e-10


def test_full_oscillatory_constant_potential():
    g = TorusGrid(1, 16)
    c0 = 0.5
    pc = ProblemCoefficients(PeriodicField.constant(g, [[1.0]]), PeriodicField.constant(g, [0.0]),
                             PeriodicField.constant(g, c0))
    errs = []
    for N in (64, 128):
        h = 1 / N
        dom = DomainSpec(1, 0.05, h, h * h, 1 / 4)
        d = InitialDatum.from_function(dom, lambda x: np.sin(np.pi * x))
        u = solve_full_oscillatory(ParabolicProblem(dom, "full-oscillatory", pc, d))
        exact = (np.exp(-(c0 / dom.epsilon**2 + np.pi**2) * u.times)[:, None] * np.sin(np.pi * dom.nodes()))
        errs.append(spacetime_norm(difference(u, u.with_values(exact))) / spacetime_norm(u))
    assert errs[0] <= 10 * (1 / 64) ** 2 + 1e-3
    assert errs[1] < errs[0] / 2


def test_stiffness_cap():
    g = TorusGrid(1, 16)
    pc = get_preset("drift-potential-1d").coefficients(16)
    dom = DomainSpec(1, 0.01, 1 / 256, 1 / 256**2, 1 / 16)
    with pytest.raises(StiffnessCap):
        solve_full_oscillatory(ParabolicProblem(dom, "full-oscillatory", pc, bump_datum(dom)))
    dom = DomainSpec(1, 0.01, 1 / 64, 1 / 64**2, 1 / 8)  # h = eps/8 > eps/16
    with pytest.raises(StiffnessCap):
        solve_full_oscillatory(ParabolicProblem(dom, "full-oscillatory", pc, bump_datum(dom)))
    assert g.n == 16


def test_problem_kind_checks():
    dom = DomainSpec(1, 0.01, 1 / 64, 1 / 64**2, 1 / 4)
    gc = get_preset("harmonic-1d").coefficients(16)
    with pytest.raises(TypeError):
        ParabolicProblem(dom, "full-oscillatory", gc, bump_datum(dom))
    with pytest.raises(GridMismatch):
        ParabolicProblem(dom, "homogenized", np.eye(2), bump_datum(dom))
    with pytest.raises(ValueError):
        solve_full_oscillatory(ParabolicProblem(dom, "homogenized", np.eye(1), bump_datum(dom)))


def factorization_discrepancy(N, eps=0.25):
    pc = get_preset("drift-potential-1d").coefficients(64)
    fm = factorize(pc)
    h = 1 / N
    dom = DomainSpec(1, 0.1, h, h * h, eps)
    base = bump_datum(dom, "well-prepared")
    v = solve_divform(ParabolicProblem(dom, "oscillatory-divform", GeneralCoefficients.from_factorized(fm), base))
    u0 = InitialDatum("well-prepared", base.base * psi_on_nodes(fm.eig, dom))
    u = solve_full_oscillatory(ParabolicProblem(dom, "full-oscillatory", pc, u0))
    return spacetime_norm(difference(u, reconstruct_u(v, fm.eig, dom))) / spacetime_norm(u)


def test_factorization_cross_check():
    d64, d128 = factorization_discrepancy(64), factorization_discrepancy(128)
    assert d64 <= 10 / 64
    assert d128 < d64


def test_reconstruct_trivial():
    g = TorusGrid(1, 8)
    one = PeriodicField.constant(g, 1.0)
    eig = CellEigenSolution(np.zeros(1), 0.0, one, one, 1.0)
    dom = DomainSpec(1, 0.01, 1 / 64, 1 / 64**2, 1 / 4)
    v = solve_divform(ParabolicProblem(dom, "homogenized", np.eye(1), bump_datum(dom)))
    assert np.array_equal(reconstruct_u(v, eig, dom).values, v.values)
    eig1 = CellEigenSolution(np.zeros(1), 1.0, PeriodicField(g, 1 + 0.1 * np.cos(2 * np.pi * g.coords()[0])), one, 0.9)
    ones = SpaceTimeField(dom, np.array([0.0, dom.epsilon**2]), np.ones((2, 65)))
    u = reconstruct_u(ones, eig1, dom)
    assert np.allclose(u.values[1], np.exp(-1) * psi_on_nodes(eig1, dom), atol=1e-14)
    other = DomainSpec(1, 0.01, 1 / 32, 1 / 32**2, 1 / 4)
    with pytest.raises(GridMismatch):
        reconstruct_u(v, eig, other)


def test_norm_examples():
    dom = DomainSpec(2, 1.0, 1 / 16, 1 / 16, 0.5, strict=False)
    one = SpaceTimeField(dom, np.linspace(0, 1, 17), np.ones((17, 17, 17)))
    assert spacetime_norm(one) == pytest.approx(1.0, abs=1e-14)
    # separable integrand with a quadrature reference; the trapezoid error is O(h^2)
    space = quad(lambda x: (x * (1 - x) * np.exp(x)) ** 2, 0, 1, epsabs=1e-14)[0]
    exact = np.sqrt((np.e**2 - 1) / 2 * space)
    errs = []
    for N in (16, 32, 64):
        dom = DomainSpec(1, 1.0, 1 / N, 1 / N, 0.5, strict=False)
        x = dom.nodes()
        t = np.linspace(0, 1, N + 1)
        f = SpaceTimeField(dom, t, np.tile(np.sin(np.pi * x), (N + 1, 1)))
        assert spacetime_norm(f) == pytest.approx(np.sqrt(0.5), abs=1e-12)
        g = f.with_values(np.exp(t)[:, None] * (x * (1 - x) * np.exp(x))[None])
        errs.append(abs(spacetime_norm(g) - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_norm_kinds_and_subset():
    dom = DomainSpec(1, 0.1, 1 / 64, 1 / 64**2, 1 / 8)
    f = solve_divform(ParabolicProblem(dom, "homogenized", np.eye(1), bump_datum(dom)))
    l2, h1 = spacetime_norm(f), spacetime_norm(f, "H1")
    assert h1 > l2
    sub = spacetime_norm(f, "L2-subset", delta=0.1)
    assert 0 < sub < l2
    assert spacetime_norm(f, "L2-subset", delta=1.0) == pytest.approx(l2)
    with pytest.raises(ValueError):
        spacetime_norm(f, "L2-subset")


def test_monotone_detection():
    dom = DomainSpec(2, 0.01, 1 / 16, 1 / 256, 1 / 2, strict=False)
    assert is_monotone(assemble_stiffness(dom, np.eye(2)))
    assert not is_monotone(assemble_stiffness(dom, np.array([[1.0, 0.9], [0.9, 1.0]])))


def test_snapshot_stride_and_export(tmp_path):
    dom = DomainSpec(1, 0.125, 1 / 64, 1 / 64**2, 1 / 8)
    s = snapshot_stride(dom, dom.epsilon**2 / 8)
    assert dom.n_steps % s == 0 and s * dom.dt <= dom.epsilon**2 / 8
    f = solve_divform(ParabolicProblem(dom, "homogenized", np.eye(1), bump_datum(dom)), store_every=s)
    assert len(f.times) == dom.n_steps // s + 1
    files = export_snapshots(f, tmp_path, "heat")
    man = json.loads((tmp_path / "heat.json").read_text())
    raw = np.fromfile(tmp_path / man["file"], dtype="<f8").reshape(man["shape"])
    assert np.array_equal(raw, f.values)
    assert man["problem_hash"] == f.meta["problem_hash"]
    lines = (tmp_path / "heat_slice.csv").read_text().splitlines()
    assert lines[0] == "t,x,value" and len(lines) == 1 + f.values.size
    assert len(files) == 3
