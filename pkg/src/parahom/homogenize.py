"""Corrector cell problems, the homogenized tensor and the flux corrector."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .cell import ellipticity_constant
from .errors import GridMismatch, NoConvergence, NonZeroMean, SingularSystem
from .factorize import FactorizedModel, skew_potential
from .torus import PeriodicField, TorusGrid, cell_average, derivative_array, write_field_csv

CORRECTOR_TOL = 1e-10
PRECONDITIONED_TOL = 1e-14
CORRECTOR_MAXITER = 20_000
ZETA_MEAN_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class GeneralCoefficients:
    """Weight zeta (mean one) and elliptic tensor Theta of the divergence-form problem."""

    zeta: PeriodicField
    Theta: PeriodicField
    kappa: float | None = None

    def __post_init__(self):
        g = self.Theta.grid
        if self.zeta.grid != g:
            raise GridMismatch("zeta and Theta must share one grid")
        if self.Theta.component_shape != (g.dim, g.dim):
            raise GridMismatch("Theta must be a matrix field")
        mean = cell_average(self.zeta)
        if abs(mean - 1.0) > ZETA_MEAN_TOL:
            raise NonZeroMean(f"zeta must average to 1, got {mean:.12g}")
        k = ellipticity_constant(self.Theta)
        if k <= 0:
            raise SingularSystem(f"Theta lost ellipticity (min eigenvalue {k:.3e})")
        if self.kappa is None:
            object.__setattr__(self, "kappa", k)

    @property
    def grid(self) -> TorusGrid:
        return self.Theta.grid

    @classmethod
    def from_factorized(cls, fm: FactorizedModel) -> "GeneralCoefficients":
        return cls(zeta=fm.sigma, Theta=fm.M, kappa=fm.ellipticity_b)


def _flux_operator(Theta: np.ndarray, g: TorusGrid):
    d = g.dim
    sym = [g.first_symbol(i) for i in range(d)]

    def apply(w):
        w = w.reshape(g.shape)
        hat = np.fft.fftn(w)
        grad = [np.fft.ifftn(hat * s).real for s in sym]
        acc = np.zeros(g.shape, dtype=complex)
        for i in range(d):
            flux_i = sum(Theta[i, k] * grad[k] for k in range(d))
            acc -= sym[i] * np.fft.fftn(flux_i)
        return np.fft.ifftn(acc).real.ravel()

    Tbar = Theta.reshape(d, d, -1).mean(axis=-1)
    psym = np.zeros(g.shape)
    for i in range(d):
        for k in range(d):
            psym = psym - 0.5 * (Tbar[i, k] + Tbar[k, i]) * (sym[i] * sym[k]).real
    inv = np.zeros_like(psym)
    nz = np.abs(psym) > 1e-12
    inv[nz] = 1.0 / psym[nz]

    def precondition(r):
        return np.fft.ifftn(np.fft.fftn(r.reshape(g.shape)) * inv).real.ravel()

    return apply, precondition


def solve_corrector(gc: GeneralCoefficients, j: int, weight: str = "zeta") -> PeriodicField:
    """omega_j with div(Theta grad(omega_j + y_j)) = 0, normalized against the weight.

    ``weight='zeta'`` imposes mean(zeta * omega_j) = 0; ``weight='uniform'``
    imposes mean(omega_j) = 0.  The two differ by a constant only.
    """
    g = gc.grid
    d = g.dim
    if not 0 <= j < d:
        raise IndexError(f"corrector index {j} out of range")
    Theta = gc.Theta.values
    rhs = sum(derivative_array(Theta[i, j], g, i) for i in range(d)).ravel()
    apply, prec = _flux_operator(Theta, g)
    n = g.size
    lin = LinearOperator((n, n), matvec=lambda w: prec(apply(w)), dtype=float)
    prhs = prec(rhs)
    if np.max(np.abs(prhs)) == 0.0:
        w = np.zeros(n)
    else:
        # the preconditioned residual damps high modes by ~1/k^2, so iterate
        # it well below the target and accept on the true residual
        w, info = gmres(lin, prhs, rtol=PRECONDITIONED_TOL, atol=0.0, restart=50,
                        maxiter=CORRECTOR_MAXITER // 50)
        true_res = np.max(np.abs(apply(w) - rhs))
        if true_res > CORRECTOR_TOL * max(1.0, np.max(np.abs(rhs))):
            raise NoConvergence(
                f"corrector {j} Krylov solve stalled (info={info}, residual {true_res:.3e})"
            )
    w = w.reshape(g.shape)
    if weight == "zeta":
        wt = gc.zeta.values
    elif weight == "uniform":
        wt = np.ones(g.shape)
    else:
        raise ValueError(f"unknown normalization weight {weight!r}")
    w = w - np.mean(wt * w) / np.mean(wt)
    return PeriodicField(g, w)


def corrected_flux(gc: GeneralCoefficients, correctors) -> np.ndarray:
    """Entries ``Theta_ij + sum_k Theta_ik d_k omega_j`` as a (d, d, grid) array."""
    g = gc.grid
    d = g.dim
    Theta = gc.Theta.values
    grad = np.array([[derivative_array(correctors[j].values, g, k) for j in range(d)] for k in range(d)])
    return Theta + np.einsum("ik...,kj...->ij...", Theta, grad)


def homogenized_tensor(gc: GeneralCoefficients, correctors) -> np.ndarray:
    flux = corrected_flux(gc, correctors)
    d = gc.grid.dim
    return flux.reshape(d, d, -1).mean(axis=-1)


def flux_corrector(gc: GeneralCoefficients, correctors, tensor_h) -> PeriodicField:
    """Rank-3 phi with phi_kij = -phi_ikj and sum_k d_k phi_kij = flux_ij - tensor_h_ij."""
    g = gc.grid
    d = g.dim
    r = corrected_flux(gc, correctors) - np.asarray(tensor_h)[(...,) + (None,) * d]
    phi = np.zeros((d, d, d) + g.shape)
    for j in range(d):
        S = skew_potential(PeriodicField(g, r[:, j]))
        phi[:, :, j] = S.values
    return PeriodicField(g, phi)


def harmonic_lower_bound(gc: GeneralCoefficients) -> float:
    """Harmonic mean of the pointwise ellipticity of sym(Theta)."""
    d = gc.grid.dim
    vals = np.moveaxis(gc.Theta.values.reshape(d, d, -1), -1, 0)
    lam = np.linalg.eigvalsh(0.5 * (vals + np.swapaxes(vals, 1, 2)))[:, 0]
    return float(1.0 / np.mean(1.0 / lam))


@dataclass(frozen=True, eq=False)
class EffectiveModel:
    correctors: tuple
    tensor_h: np.ndarray
    flux_corrector: PeriodicField
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> TorusGrid:
        return self.flux_corrector.grid

    def to_json_dict(self) -> dict:
        return {
            "tensor_h": [[float(v) for v in row] for row in self.tensor_h],
            "diagnostics": {k: float(v) for k, v in sorted(self.diagnostics.items())},
            "grid": self.grid.metadata(),
        }

    def export(self, out_dir, with_correctors: bool = False) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "effective_model.json"
        path.write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")
        written = [path]
        if with_correctors:
            for j, w in enumerate(self.correctors):
                p = out_dir / f"corrector_{j + 1}.csv"
                write_field_csv(p, w, name=f"omega{j + 1}")
                written.append(p)
        return written


def effective_model(gc: GeneralCoefficients, weight: str = "zeta") -> EffectiveModel:
    g = gc.grid
    d = g.dim
    correctors = tuple(solve_corrector(gc, j, weight) for j in range(d))
    Th = homogenized_tensor(gc, correctors)
    phi = flux_corrector(gc, correctors, Th)

    flux = corrected_flux(gc, correctors)
    div_flux = sum(derivative_array(flux[i], g, i) for i in range(d))
    div_phi = sum(derivative_array(phi.values[k], g, k) for k in range(d))
    r = flux - Th[(...,) + (None,) * d]
    pv = phi.values
    sym_h = 0.5 * (Th + Th.T)
    diagnostics = {
        "corrector_residual": float(np.max(np.abs(div_flux))),
        "zeta_mean_omega": float(max(abs(np.mean(gc.zeta.values * w.values)) for w in correctors)),
        "flux_identity_residual": float(np.max(np.abs(div_phi - r))),
        "flux_antisymmetry": float(np.max(np.abs(pv + np.swapaxes(pv, 0, 1)))),
        "min_eig_sym_tensor_h": float(np.linalg.eigvalsh(sym_h)[0]),
        "harmonic_lower_bound": harmonic_lower_bound(gc),
        "kappa": float(gc.kappa),
    }
    return EffectiveModel(correctors=correctors, tensor_h=Th, flux_corrector=phi, diagnostics=diagnostics)
