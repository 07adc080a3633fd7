"""Exponential cell eigenvalue problems and the drift-killing Bloch parameter.

Writing the direct eigenfunction as ``psi(y) = exp(2*pi*theta.y) p(y)`` turns

    -div(A grad psi) + b.grad psi + c psi = lambda psi

into a periodic problem ``L_theta p = lambda p`` with (``eta = 2*pi*theta``)

    L_theta p = -div(A (grad p + eta p)) - eta.A(grad p + eta p)
                + b.(grad p + eta p) + c p.

The adjoint eigenfunction ``psi* = exp(-2*pi*theta.y) p*`` has a periodic part
solving the transposed problem, so both sides share one discrete operator.
The operator is applied in nondivergence form,

    L_theta p = -A_ij d_i d_j p + g_j d_j p + a0 p,

which keeps the Nyquist modes out of the kernel of the principal part.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import (
    GridMismatch,
    NoConvergence,
    NonPositiveEigenfunction,
    NotElliptic,
    SignChange,
)
from .torus import PeriodicField, TorusGrid, cell_average, derivative_array

log = logging.getLogger(__name__)

EIG_RTOL = 1e-10
VEC_TOL = 1e-11
KRYLOV_TOL = 1e-12
POSITIVITY_TOL = 1e-8
NEWTON_TOL = 1e-8
NEWTON_FD_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class ProblemCoefficients:
    """Cell coefficients A (diffusion), b (drift), c (potential) on one torus grid."""

    A: PeriodicField
    b: PeriodicField
    c: PeriodicField
    mu: float | None = None

    def __post_init__(self):
        g = self.A.grid
        d = g.dim
        if self.b.grid != g or self.c.grid != g:
            raise GridMismatch("A, b and c must share one TorusGrid")
        if self.A.component_shape != (d, d):
            raise GridMismatch(f"A must be a {d}x{d} matrix field")
        if self.b.component_shape != (d,):
            raise GridMismatch(f"b must be a {d}-vector field")
        if self.c.rank != 0:
            raise GridMismatch("c must be a scalar field")
        mu_nodes = ellipticity_constant(self.A)
        if mu_nodes <= 0:
            raise NotElliptic(f"symmetric part of A has eigenvalue {mu_nodes:.3e} <= 0")
        if self.mu is None:
            object.__setattr__(self, "mu", mu_nodes)
        elif mu_nodes < self.mu - 1e-12:
            raise NotElliptic(f"ellipticity {mu_nodes:.6g} below declared mu={self.mu}")

    @property
    def grid(self) -> TorusGrid:
        return self.A.grid


def ellipticity_constant(A: PeriodicField) -> float:
    """Smallest eigenvalue of the symmetric part of A over all nodes."""
    vals = np.moveaxis(A.values.reshape(A.component_shape + (-1,)), -1, 0)
    sym = 0.5 * (vals + np.swapaxes(vals, 1, 2))
    return float(np.linalg.eigvalsh(sym)[:, 0].min())


class TwistedOperator:
    """Spectral discretization of the theta-twisted cell operator."""

    def __init__(self, coeffs: ProblemCoefficients, theta):
        g = coeffs.grid
        d = g.dim
        self.grid = g
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.theta.shape != (d,):
            raise GridMismatch(f"theta must have {d} entries")
        eta = 2 * np.pi * self.theta
        A = coeffs.A.values
        b = coeffs.b.values
        c = coeffs.c.values
        Aeta = np.einsum("ij...,j->i...", A, eta)
        ATeta = np.einsum("ij...,i->j...", A, eta)
        coldiv_A = sum(derivative_array(A[i], g, i) for i in range(d))
        div_Aeta = sum(derivative_array(Aeta[i], g, i) for i in range(d))
        self.A = A
        self.g1 = -coldiv_A - Aeta - ATeta + b
        self.a0 = c + np.einsum("i...,i->...", b, eta) - np.einsum("i...,i->...", Aeta, eta) - div_Aeta
        self._axes = tuple(range(d))
        self._sym2 = {}
        for i in range(d):
            for j in range(d):
                self._sym2[i, j] = g.second_symbol(i) if i == j else g.first_symbol(i) * g.first_symbol(j)
        self._sym1 = [g.first_symbol(i) for i in range(d)]
        Abar = A.reshape(d, d, -1).mean(axis=-1)
        prec = np.zeros(g.shape)
        for i in range(d):
            for j in range(d):
                prec = prec - 0.5 * (Abar[i, j] + Abar[j, i]) * self._sym2[i, j].real
        self._prec_base = prec

    @property
    def size(self) -> int:
        return self.grid.size

    def lower_bound(self) -> float:
        """``min a0`` = inf (L 1)/1, a lower bound for the principal eigenvalue."""
        return float(self.a0.min())

    def apply(self, p: np.ndarray) -> np.ndarray:
        g = self.grid
        p = np.asarray(p, dtype=float).reshape(g.shape)
        hat = np.fft.fftn(p)
        out = self.a0 * p
        for (i, j), sym in self._sym2.items():
            out = out - self.A[i, j] * np.fft.ifftn(hat * sym).real
        for j, sym in enumerate(self._sym1):
            out = out + self.g1[j] * np.fft.ifftn(hat * sym).real
        return out.ravel()

    def apply_transpose(self, x: np.ndarray) -> np.ndarray:
        g = self.grid
        x = np.asarray(x, dtype=float).reshape(g.shape)
        acc = np.zeros(g.shape, dtype=complex)
        for (i, j), sym in self._sym2.items():
            acc -= sym * np.fft.fftn(self.A[i, j] * x)
        for j, sym in enumerate(self._sym1):
            acc -= sym * np.fft.fftn(self.g1[j] * x)
        return (np.fft.ifftn(acc).real + self.a0 * x).ravel()

    def dense(self, side: str = "direct") -> np.ndarray:
        """Assembled matrix (column by column); only sensible on small grids."""
        n = self.size
        cols = [self.apply(e) for e in np.eye(n)]
        mat = np.array(cols).T
        return mat if side == "direct" else mat.T

    def preconditioner(self, shift: float) -> LinearOperator:
        g = self.grid
        offset = max(float(self.a0.mean()) - shift, 1.0)
        sym = self._prec_base + offset

        def solve(r):
            return np.fft.ifftn(np.fft.fftn(np.asarray(r).reshape(g.shape)) / sym).real.ravel()

        return LinearOperator((self.size, self.size), matvec=solve, dtype=float)


def _shifted_solver(op: TwistedOperator, side: str, shift: float):
    n = op.size
    mv = op.apply if side == "direct" else op.apply_transpose
    prec = op.preconditioner(shift)
    # left preconditioning: the tolerance then bounds the preconditioned
    # residual, which is not capped by the roundoff floor of the raw operator
    lin = LinearOperator((n, n), matvec=lambda x: prec.matvec(mv(x) - shift * x), dtype=float)

    def solve(rhs, x0=None):
        x, info = gmres(lin, prec.matvec(rhs), x0=x0, rtol=KRYLOV_TOL, atol=0.0, restart=60, maxiter=400)
        if info != 0:
            raise NoConvergence(f"shifted Krylov solve failed (info={info})")
        return x

    return solve


def principal_eigenpair(
    coeffs: ProblemCoefficients,
    theta,
    side: str = "direct",
    lambda_estimate: float | None = None,
    max_iter: int = 10_000,
) -> tuple[float, PeriodicField]:
    """Principal eigenvalue and positive periodic eigenfunction part (sup = 1).

    Shifted inverse power iteration; the shift sits one unit below
    ``min(lambda_estimate, min a0)`` which keeps it left of the spectrum, so
    the iteration locks onto the eigenvalue of smallest real part.
    """
    if side not in ("direct", "adjoint"):
        raise ValueError(f"side must be 'direct' or 'adjoint', got {side!r}")
    op = TwistedOperator(coeffs, theta)
    base = op.lower_bound()
    if lambda_estimate is not None:
        base = min(base, lambda_estimate)
    shift = base - 1.0
    solve = _shifted_solver(op, side, shift)
    mv = op.apply if side == "direct" else op.apply_transpose

    x = np.ones(op.size)
    lam_old = np.inf
    for it in range(1, max_iter + 1):
        y = solve(x, x0=x / (lam_old - shift) if np.isfinite(lam_old) else None)
        lam = shift + float(y @ x) / float(y @ y)
        k = int(np.argmax(np.abs(y)))
        x_new = y / y[k]
        dx = float(np.max(np.abs(x_new - x)))
        x = x_new
        if abs(lam - lam_old) <= EIG_RTOL * max(1.0, abs(lam)) and dx <= VEC_TOL:
            break
        lam_old = lam
    else:
        raise NoConvergence(f"inverse power iteration did not converge in {max_iter} steps")

    Lx = mv(x)
    lam = float(Lx @ x) / float(x @ x)
    if x.min() < -POSITIVITY_TOL:
        raise NonPositiveEigenfunction(
            f"principal eigenfunction changes sign (min {x.min():.3e}); refine the cell grid"
        )
    log.debug("eigenpair side=%s theta=%s lambda=%.12g iters=%d", side, op.theta, lam, it)
    return lam, PeriodicField(coeffs.grid, x.reshape(coeffs.grid.shape))


def eigen_residual(coeffs: ProblemCoefficients, theta, lam: float, p: PeriodicField, side: str) -> float:
    op = TwistedOperator(coeffs, theta)
    mv = op.apply if side == "direct" else op.apply_transpose
    x = p.values.ravel()
    return float(np.max(np.abs(mv(x) - lam * x)) / np.max(np.abs(x)))


def normalize_pair(psi: PeriodicField, psi_star: PeriodicField) -> tuple[PeriodicField, PeriodicField]:
    """Fix signs and scale so that mean(psi*psi_star) = 1 with equal L2 norms."""
    out = []
    for f in (psi, psi_star):
        v = f.values
        k = np.unravel_index(np.argmax(np.abs(v)), v.shape)
        if v[k] == 0:
            raise SignChange("eigenfunction vanishes identically")
        v = v * np.sign(v[k])
        if v.min() < -POSITIVITY_TOL * v.max():
            raise SignChange(f"eigenfunction changes sign (min {v.min():.3e})")
        out.append(v)
    p, q = out
    pairing = float(np.mean(p * q))
    ratio = np.sqrt(np.mean(q * q) / np.mean(p * p))
    s = np.sqrt(ratio / pairing)
    t = np.sqrt(1.0 / (ratio * pairing))
    return PeriodicField(psi.grid, s * p), PeriodicField(psi.grid, t * q)


def assemble_beta(coeffs: ProblemCoefficients, theta, psi: PeriodicField, psi_star: PeriodicField) -> PeriodicField:
    """beta = psi psi* b + psi A^T grad psi* - psi* A grad psi from periodic parts.

    The exponential factors cancel in every product; with eta = 2 pi theta,
    grad psi -> grad p + eta p and grad psi* -> grad p* - eta p*.
    """
    g = coeffs.grid
    d = g.dim
    eta = 2 * np.pi * np.atleast_1d(np.asarray(theta, dtype=float))
    p, q = psi.values, psi_star.values
    A, b = coeffs.A.values, coeffs.b.values
    gp = np.stack([derivative_array(p, g, i) + eta[i] * p for i in range(d)])
    gq = np.stack([derivative_array(q, g, i) - eta[i] * q for i in range(d)])
    beta = (
        p * q * b
        + p * np.einsum("ji...,j...->i...", A, gq)
        - q * np.einsum("ij...,j...->i...", A, gp)
    )
    return PeriodicField(g, beta)


@dataclass(frozen=True, eq=False)
class CellEigenSolution:
    theta: np.ndarray
    lam: float
    psi: PeriodicField
    psi_star: PeriodicField
    lower_bound_a: float
    residuals: dict = field(default_factory=dict)

    @property
    def grid(self) -> TorusGrid:
        return self.psi.grid

    def psi_full(self, points) -> np.ndarray:
        """Direct eigenfunction exp(2 pi theta.y) p(y) on a tensor grid of cell coordinates."""
        vals = self.psi.evaluate([np.asarray(p) % 1.0 for p in points])
        return vals * _exp_factor(self.theta, points)

    def psi_star_full(self, points) -> np.ndarray:
        vals = self.psi_star.evaluate([np.asarray(p) % 1.0 for p in points])
        return vals * _exp_factor(-self.theta, points)

    def summary(self) -> dict:
        return {
            "theta": [float(t) for t in self.theta],
            "lambda": float(self.lam),
            "lower_bound_a": float(self.lower_bound_a),
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "grid": self.grid.metadata(),
        }


def _exp_factor(theta, points) -> np.ndarray:
    out = np.ones(())
    for i, p in enumerate(points):
        shape = [1] * len(points)
        shape[i] = len(p)
        out = out * np.exp(2 * np.pi * theta[i] * np.asarray(p, dtype=float)).reshape(shape)
    return out


class _DriftMap:
    """theta -> mean effective drift, caching the last eigenvalue as shift hint."""

    def __init__(self, coeffs: ProblemCoefficients):
        self.coeffs = coeffs
        self.lam_hint: float | None = None
        self.max_gap = 0.0
        self.evaluations = 0

    def __call__(self, theta):
        lam, p = principal_eigenpair(self.coeffs, theta, "direct", self.lam_hint)
        lam_s, q = principal_eigenpair(self.coeffs, theta, "adjoint", lam)
        self.lam_hint = lam
        self.evaluations += 1
        self.max_gap = max(self.max_gap, abs(lam - lam_s))
        p, q = normalize_pair(p, q)
        beta = assemble_beta(self.coeffs, theta, p, q)
        return np.atleast_1d(cell_average(beta)), (lam, lam_s, p, q, beta)


def find_bloch_parameter(
    coeffs: ProblemCoefficients,
    tol: float = NEWTON_TOL,
    max_steps: int = 50,
    fd_step: float = NEWTON_FD_STEP,
    max_halvings: int = 20,
) -> CellEigenSolution:
    """Damped Newton on F(theta) = mean(beta_theta), starting from theta = 0."""
    d = coeffs.grid.dim
    drift = _DriftMap(coeffs)
    theta = np.zeros(d)
    F, state = drift(theta)
    steps = 0
    while np.max(np.abs(F)) > tol:
        if steps >= max_steps:
            raise NoConvergence(f"Newton iteration for theta stalled at |F|={np.max(np.abs(F)):.3e}")
        steps += 1
        J = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = fd_step
            Fp, _ = drift(theta + e)
            Fm, _ = drift(theta - e)
            J[:, k] = (Fp - Fm) / (2 * fd_step)
        step = np.linalg.solve(J, -F)
        norm0 = np.linalg.norm(F)
        t = 1.0
        for _ in range(max_halvings + 1):
            trial = theta + t * step
            F_try, state_try = drift(trial)
            if np.linalg.norm(F_try) < norm0:
                theta, F, state = trial, F_try, state_try
                break
            t *= 0.5
        else:
            raise NoConvergence("damped Newton step failed to decrease |F| after halvings")
        log.info("newton step %d: theta=%s |F|=%.3e", steps, theta, np.max(np.abs(F)))

    lam, lam_s, p, q, beta = state
    residuals = {
        "direct_residual": eigen_residual(coeffs, theta, lam, p, "direct"),
        "adjoint_residual": eigen_residual(coeffs, theta, lam_s, q, "adjoint"),
        "lambda_gap": abs(lam - lam_s),
        "max_lambda_gap_path": drift.max_gap,
        "mean_beta": float(np.max(np.abs(F))),
        "newton_steps": float(steps),
    }
    a = float(min(p.values.min(), q.values.min()))
    if a <= 0:
        raise NonPositiveEigenfunction(f"eigenfunction lower bound {a:.3e} is not positive")
    return CellEigenSolution(theta=theta, lam=lam, psi=p, psi_star=q, lower_bound_a=a, residuals=residuals)
