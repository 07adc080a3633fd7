"""Factorized coefficients sigma, alpha, beta, the skew potential B and M = alpha + B.

Matrix divergence contracts the first index, ``(div B)_j = sum_i d_i B_ij``,
which is the convention under which ``-div(B grad v) = -(div B).grad v`` and
hence ``sigma v_t - div(M grad v) = 0`` reproduces the drift term
``beta.grad v`` when ``beta = -div B``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import CellEigenSolution, ProblemCoefficients, assemble_beta, find_bloch_parameter
from .errors import GridMismatch, NonZeroMean, NotDivergenceFree, NotSymmetric
from .torus import (
    PeriodicField,
    cell_average,
    derivative_array,
    divergence,
    solve_cell_poisson,
)

STRUCTURE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class FactorizedModel:
    sigma: PeriodicField
    alpha: PeriodicField
    beta: PeriodicField
    B: PeriodicField
    M: PeriodicField
    ellipticity_b: float
    eig: CellEigenSolution | None = None

    @property
    def grid(self):
        return self.sigma.grid

    def diagnostics(self) -> dict:
        Bv = self.B.values
        div_B = divergence(self.B).values
        out = {
            "skew_B": float(np.max(np.abs(Bv + np.swapaxes(Bv, 0, 1)))),
            "beta_plus_div_B": float(np.max(np.abs(self.beta.values + div_B))),
            "mean_beta": float(np.max(np.abs(cell_average(self.beta)))),
            "div_beta": float(np.max(np.abs(divergence(self.beta).values))),
            "mean_sigma": float(cell_average(self.sigma)),
            "min_sigma": float(self.sigma.values.min()),
            "ellipticity_b": float(self.ellipticity_b),
        }
        return out


@dataclass(frozen=True, eq=False)
class NondivergenceCoefficients:
    """Coefficients of rho_t - K : D^2 rho + q.grad rho / eps + r rho / eps^2 = 0."""

    K: PeriodicField
    q: PeriodicField
    r: PeriodicField


def build_beta(coeffs: ProblemCoefficients, eig: CellEigenSolution) -> PeriodicField:
    if eig.grid != coeffs.grid:
        raise GridMismatch("eigen solution and coefficients live on different grids")
    return assemble_beta(coeffs, eig.theta, eig.psi, eig.psi_star)


def skew_potential(v: PeriodicField, tol: float = STRUCTURE_TOL) -> PeriodicField:
    """Skew matrix S with ``div S = v`` for a zero-mean, divergence-free vector field.

    Solves ``Laplace(u_i) = v_i`` and sets ``S_ki = d_k u_i - d_i u_k``, so
    ``sum_k d_k S_ki = Laplace(u_i) - d_i div(u) = v_i``.
    """
    g = v.grid
    d = g.dim
    if v.component_shape != (d,):
        raise GridMismatch("expected a vector field")
    mean = np.atleast_1d(cell_average(v))
    if np.max(np.abs(mean)) > tol:
        raise NonZeroMean(f"vector field has mean {mean}")
    div_v = np.max(np.abs(divergence(v).values))
    if div_v > tol:
        raise NotDivergenceFree(f"|div| = {div_v:.3e} exceeds {tol:g}")
    u = []
    for i in range(d):
        comp = v.values[i] - mean[i]
        u.append(solve_cell_poisson(PeriodicField(g, comp)).values)
    u = np.array(u)
    du = np.array([[derivative_array(u[i], g, k) for i in range(d)] for k in range(d)])  # du[k, i] = d_k u_i
    S = du - np.swapaxes(du, 0, 1)
    return PeriodicField(g, S)


def build_skew_potential(beta: PeriodicField) -> PeriodicField:
    """Skew-symmetric B with ``beta = -div B``."""
    S = skew_potential(beta)
    return PeriodicField(beta.grid, -S.values)


def build_factorized_model(coeffs: ProblemCoefficients, eig: CellEigenSolution) -> FactorizedModel:
    sigma = PeriodicField(coeffs.grid, eig.psi.values * eig.psi_star.values)
    alpha = PeriodicField(coeffs.grid, sigma.values * coeffs.A.values)
    beta = build_beta(coeffs, eig)
    B = build_skew_potential(beta)
    M = PeriodicField(coeffs.grid, alpha.values + B.values)
    ell = coeffs.mu * float(sigma.values.min())
    return FactorizedModel(sigma=sigma, alpha=alpha, beta=beta, B=B, M=M, ellipticity_b=ell, eig=eig)


def factorize(coeffs: ProblemCoefficients) -> FactorizedModel:
    """Convenience: Bloch parameter search followed by model assembly."""
    return build_factorized_model(coeffs, find_bloch_parameter(coeffs))


def nondivergence_frontend(ndc: NondivergenceCoefficients, sym_tol: float = 1e-12) -> ProblemCoefficients:
    """Rewrite the nondivergence problem as A = K, b = div K + q, c = r."""
    K = ndc.K.values
    asym = np.max(np.abs(K - np.swapaxes(K, 0, 1)))
    if asym > sym_tol:
        raise NotSymmetric(f"K is not symmetric (max |K - K^T| = {asym:.3e})")
    div_K = divergence(ndc.K).values
    b = PeriodicField(ndc.K.grid, div_K + ndc.q.values)
    return ProblemCoefficients(A=ndc.K, b=b, c=ndc.r)
