"""Finite-volume time stepping on the unit box with homogeneous Dirichlet data.

Nodes sit at ``x_i = i*h``; the unknowns are the interior nodes.  Face fluxes
use the coefficient sampled at face midpoints; in 2D the tangential part of
the gradient on a face is the average of the two adjacent centered
differences.  All three problem kinds go through the same assembly, so a
constant-coefficient "oscillatory" solve and the homogenized solve coincide.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .cell import CellEigenSolution, ProblemCoefficients
from .errors import GridMismatch, NonFiniteState, StiffnessCap
from .homogenize import GeneralCoefficients

log = logging.getLogger(__name__)

FULL_OSCILLATORY_MIN_EPS = 1.0 / 8


def _is_integer(x: float, tol: float = 1e-9) -> bool:
    return abs(x - round(x)) <= tol * max(1.0, abs(x))


@dataclass(frozen=True)
class DomainSpec:
    """Box (0,1)^d, final time T, steps h and tau, scale epsilon."""

    dim: int
    T: float
    h: float
    tau: float
    epsilon: float
    strict: bool = True

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("parabolic solves support d = 1 or 2")
        if not _is_integer(1.0 / self.h):
            raise ValueError(f"1/h must be an integer, got {1.0 / self.h}")
        if not 0 < self.epsilon < 1 or not _is_integer(1.0 / self.epsilon):
            raise ValueError(f"1/epsilon must be an integer > 1, got {1.0 / self.epsilon}")
        if self.T <= 0 or self.tau <= 0:
            raise ValueError("T and tau must be positive")
        if self.strict:
            if self.h > self.epsilon / 8 * (1 + 1e-12):
                raise ValueError(f"h={self.h} does not resolve epsilon={self.epsilon} (need h <= eps/8)")
            if self.tau > self.h * (1 + 1e-12):
                raise ValueError("tau must not exceed h")

    @property
    def N(self) -> int:
        return int(round(1.0 / self.h))

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.T / self.tau - 1e-9))

    @property
    def dt(self) -> float:
        """Actual step, adjusted so that n_steps * dt == T."""
        return self.T / self.n_steps

    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h

    def faces(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N + 1,) * self.dim

    def distance_to_boundary(self) -> np.ndarray:
        x = self.nodes()
        d1 = np.minimum(x, 1.0 - x)
        if self.dim == 1:
            return d1
        return np.minimum.outer(d1, d1)

    def boundary_layer_mask(self, s: float) -> np.ndarray:
        """Nodes of Omega_s = {dist(x, boundary) < s}."""
        return self.distance_to_boundary() < s

    def spacetime_layer_mask(self, delta: float, times: np.ndarray) -> np.ndarray:
        """Index mask of Omega_{T,delta} on (times x nodes)."""
        space = self.boundary_layer_mask(delta)
        t = np.asarray(times)
        early_late = (t < delta**2) | (t > self.T - delta**2)
        return space[None] | early_late.reshape((-1,) + (1,) * self.dim)

    def metadata(self) -> dict:
        return {"dim": self.dim, "T": self.T, "h": self.h, "tau": self.dt, "epsilon": self.epsilon,
                "N": self.N, "n_steps": self.n_steps}


@dataclass(frozen=True, eq=False)
class InitialDatum:
    """Base profile on the nodes (zero on the boundary) plus its preparation mode."""

    mode: str
    base: np.ndarray

    def __post_init__(self):
        if self.mode not in ("plain", "well-prepared", "ill-prepared"):
            raise ValueError(f"unknown datum mode {self.mode!r}")
        b = np.asarray(self.base, dtype=float)
        if b.ndim == 1:
            edge = np.abs(b[[0, -1]]).max()
        else:
            edge = max(np.abs(b[[0, -1]]).max(), np.abs(b[:, [0, -1]]).max())
        if edge > 1e-12:
            raise ValueError("initial datum must vanish on the boundary")
        object.__setattr__(self, "base", b)

    @classmethod
    def from_function(cls, domain: DomainSpec, func: Callable, mode: str = "plain") -> "InitialDatum":
        x = domain.nodes()
        grids = np.meshgrid(*([x] * domain.dim), indexing="ij")
        vals = np.asarray(func(*grids), dtype=float) * np.ones(domain.shape)
        vals[_boundary(domain)] = 0.0
        return cls(mode, vals)


def bump(x, center=0.5, radius=0.4):
    """C-infinity bump with compact support in (center - radius, center + radius)."""
    r2 = ((np.asarray(x) - center) / radius) ** 2
    out = np.zeros_like(r2, dtype=float)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def bump_datum(domain: DomainSpec, mode: str = "plain") -> InitialDatum:
    def f(*xs):
        out = np.ones(domain.shape)
        for x in xs:
            out = out * bump(x)
        return out

    return InitialDatum.from_function(domain, f, mode)


@dataclass(frozen=True, eq=False)
class ParabolicProblem:
    domain: DomainSpec
    kind: str
    coefficients: object
    initial: InitialDatum

    def __post_init__(self):
        kinds = {
            "oscillatory-divform": GeneralCoefficients,
            "homogenized": np.ndarray,
            "full-oscillatory": ProblemCoefficients,
        }
        if self.kind not in kinds:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        coef = self.coefficients
        if self.kind == "homogenized":
            coef = np.atleast_2d(np.asarray(coef, dtype=float))
            if coef.shape != (self.domain.dim, self.domain.dim):
                raise GridMismatch("homogenized tensor has the wrong shape")
            object.__setattr__(self, "coefficients", coef)
        elif not isinstance(coef, kinds[self.kind]):
            raise TypeError(f"{self.kind} problems need {kinds[self.kind].__name__} coefficients")
        if self.kind != "homogenized" and coef.grid.dim != self.domain.dim:
            raise GridMismatch("coefficient and domain dimensions differ")
        if self.initial.base.shape != self.domain.shape:
            raise GridMismatch("initial datum does not match the domain grid")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"kind": self.kind, "domain": self.domain.metadata(),
                             "mode": self.initial.mode}, sort_keys=True).encode())
        c = self.coefficients
        if isinstance(c, np.ndarray):
            h.update(np.ascontiguousarray(c).tobytes())
        elif isinstance(c, GeneralCoefficients):
            h.update(c.zeta.values.tobytes())
            h.update(c.Theta.values.tobytes())
        else:
            for f in (c.A, c.b, c.c):
                h.update(f.values.tobytes())
        h.update(np.ascontiguousarray(self.initial.base).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Stored time levels (including t=0 and t=T) of a grid function with boundary nodes."""

    domain: DomainSpec
    times: np.ndarray
    values: np.ndarray
    energy: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (len(self.times),) + self.domain.shape:
            raise GridMismatch("snapshot array does not match times x domain grid")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteState("space-time field contains non-finite values")

    def with_values(self, values: np.ndarray, **meta) -> "SpaceTimeField":
        return SpaceTimeField(self.domain, self.times, values, None, dict(meta))


def _boundary(domain: DomainSpec) -> np.ndarray:
    mask = np.zeros(domain.shape, dtype=bool)
    if domain.dim == 1:
        mask[[0, -1]] = True
    else:
        mask[[0, -1], :] = True
        mask[:, [0, -1]] = True
    return mask


def _diff_1d(N: int, h: float) -> sp.csr_matrix:
    """Node -> face forward difference, (N) x (N+1)."""
    return sp.diags([-np.ones(N), np.ones(N)], [0, 1], shape=(N, N + 1)) / h


def _avg_1d(N: int) -> sp.csr_matrix:
    return sp.diags([0.5 * np.ones(N), 0.5 * np.ones(N)], [0, 1], shape=(N, N + 1))


def _central_1d(N: int, h: float) -> sp.csr_matrix:
    """Node -> node centered difference; boundary rows left empty."""
    main = np.zeros(N + 1)
    up = np.full(N, 1.0 / (2 * h))
    lo = np.full(N, -1.0 / (2 * h))
    up[0] = 0.0
    lo[-1] = 0.0
    return sp.diags([lo, main, up], [-1, 0, 1], shape=(N + 1, N + 1))


def _tensor_at(domain: DomainSpec, tensor, points) -> np.ndarray:
    """Matrix coefficient (d, d, *grid) at the tensor grid ``points`` (physical coordinates)."""
    eps = domain.epsilon
    shape = tuple(len(p) for p in points)
    if isinstance(tensor, np.ndarray):
        return np.broadcast_to(tensor[(...,) + (None,) * domain.dim], tensor.shape + shape)
    return tensor.evaluate([np.asarray(p) / eps for p in points])


def _scalar_at(domain: DomainSpec, f, points) -> np.ndarray:
    shape = tuple(len(p) for p in points)
    if f is None:
        return np.ones(shape)
    return f.evaluate([np.asarray(p) / domain.epsilon for p in points])


def assemble_stiffness(domain: DomainSpec, tensor) -> sp.csr_matrix:
    """Full-grid operator approximating ``-div(tensor(x/eps) grad f)``.

    ``tensor`` is a matrix PeriodicField or a constant (d, d) array.
    """
    N, h = domain.N, domain.h
    x, xf = domain.nodes(), domain.faces()
    D, Av, C = _diff_1d(N, h), _avg_1d(N), _central_1d(N, h)
    if domain.dim == 1:
        a = _tensor_at(domain, tensor, [xf])[0, 0]
        return (D.T @ sp.diags(a) @ D).tocsr()
    I = sp.identity(N + 1, format="csr")
    Tx = _tensor_at(domain, tensor, [xf, x])  # x-faces: (i+1/2, j)
    Ty = _tensor_at(domain, tensor, [x, xf])  # y-faces: (i, j+1/2)
    Dx, Dy = sp.kron(D, I), sp.kron(I, D)
    # tangential derivative on a face: average of the centered differences at its two nodes
    Gx_t = sp.kron(Av, I) @ sp.kron(I, C)
    Gy_t = sp.kron(I, Av) @ sp.kron(C, I)
    Fx = sp.diags(Tx[0, 0].ravel()) @ Dx + sp.diags(Tx[0, 1].ravel()) @ Gx_t
    Fy = sp.diags(Ty[1, 1].ravel()) @ Dy + sp.diags(Ty[1, 0].ravel()) @ Gy_t
    return (Dx.T @ Fx + Dy.T @ Fy).tocsr()


def assemble_full_oscillatory(domain: DomainSpec, coeffs: ProblemCoefficients) -> sp.csr_matrix:
    """-div(A grad u) + b.grad u / eps + c u / eps^2 with centered drift and lumped reaction."""
    N, h, eps = domain.N, domain.h, domain.epsilon
    x = domain.nodes()
    K = assemble_stiffness(domain, coeffs.A)
    pts = [x] * domain.dim
    b = coeffs.b.evaluate([p / eps for p in pts])
    c = coeffs.c.evaluate([p / eps for p in pts])
    C = _central_1d(N, h)
    if domain.dim == 1:
        grads = [C]
    else:
        I = sp.identity(N + 1, format="csr")
        grads = [sp.kron(C, I), sp.kron(I, C)]
    for k, G in enumerate(grads):
        K = K + sp.diags(b[k].ravel() / eps) @ G
    K = K + sp.diags(c.ravel() / eps**2)
    return K.tocsr()


def _interior(domain: DomainSpec) -> np.ndarray:
    return np.flatnonzero(~_boundary(domain).ravel())


def is_monotone(matrix: sp.spmatrix) -> bool:
    """Z-matrix with nonnegative diagonal dominance (implies a nonnegative inverse)."""
    m = matrix.tocsr()
    diag = m.diagonal()
    off = m - sp.diags(diag)
    if off.nnz and off.data.max() > 0:
        return False
    row_off = np.asarray(abs(off).sum(axis=1)).ravel()
    return bool(np.all(diag >= row_off - 1e-14 * np.abs(diag)))


def _time_march(domain, mass, K_full, f0, scheme, store_every, energy_weight):
    idx = _interior(domain)
    K = K_full[idx][:, idx].tocsc()
    tau = domain.dt
    Z = sp.diags(mass.ravel()[idx] / tau)
    if scheme == "implicit-euler":
        lhs, rhs_op = (Z + K).tocsc(), Z.tocsr()
    elif scheme == "crank-nicolson":
        lhs, rhs_op = (Z + 0.5 * K).tocsc(), (Z - 0.5 * K).tocsr()
    else:
        raise ValueError(f"unknown time scheme {scheme!r}")
    monotone = scheme == "implicit-euler" and is_monotone(lhs)
    if not monotone:
        log.info("step matrix is not an M-matrix; discrete maximum principle not asserted")
    lu = splu(lhs)
    hd = domain.h**domain.dim
    w = energy_weight.ravel()[idx] * hd

    u = f0.ravel()[idx].copy()
    n = domain.n_steps
    stored_t = [0.0]
    stored = [u.copy()]
    energy = np.empty(n + 1)
    energy[0] = float(np.dot(w * u, u))
    for m in range(1, n + 1):
        u = lu.solve(rhs_op @ u)
        energy[m] = float(np.dot(w * u, u))
        if not np.isfinite(energy[m]):
            raise NonFiniteState(f"state blew up at step {m}")
        if m % store_every == 0 or m == n:
            stored_t.append(m * tau)
            stored.append(u.copy())
    full = np.zeros((len(stored), np.prod(domain.shape)))
    full[:, idx] = np.array(stored)
    values = full.reshape((len(stored),) + domain.shape)
    return np.array(stored_t), values, energy, monotone


def solve_divform(problem: ParabolicProblem, scheme: str = "implicit-euler", store_every: int = 1) -> SpaceTimeField:
    """``zeta(x/eps) f_t = div(Theta(x/eps) grad f)``; the homogenized kind uses zeta = 1."""
    if problem.kind not in ("oscillatory-divform", "homogenized"):
        raise ValueError("solve_divform handles oscillatory-divform and homogenized problems")
    dom = problem.domain
    pts = [dom.nodes()] * dom.dim
    if problem.kind == "homogenized":
        tensor, zeta = problem.coefficients, None
    else:
        tensor, zeta = problem.coefficients.Theta, problem.coefficients.zeta
    mass = _scalar_at(dom, zeta, pts)
    K = assemble_stiffness(dom, tensor)
    times, values, energy, monotone = _time_march(dom, mass, K, problem.initial.base, scheme, store_every, mass)
    return SpaceTimeField(dom, times, values, energy,
                          {"kind": problem.kind, "scheme": scheme, "monotone": monotone,
                           "problem_hash": problem.digest()})


def solve_full_oscillatory(problem: ParabolicProblem, scheme: str = "implicit-euler",
                           store_every: int = 1) -> SpaceTimeField:
    """Direct solve of the original problem with the eps^-1 drift and eps^-2 potential."""
    if problem.kind != "full-oscillatory":
        raise ValueError("solve_full_oscillatory needs a full-oscillatory problem")
    dom = problem.domain
    if dom.epsilon < FULL_OSCILLATORY_MIN_EPS - 1e-12:
        raise StiffnessCap(f"epsilon={dom.epsilon} below the validation threshold 1/8")
    if dom.h > dom.epsilon / 16 * (1 + 1e-12):
        raise StiffnessCap(f"full-oscillatory solves need h <= eps/16, got h={dom.h}")
    K = assemble_full_oscillatory(dom, problem.coefficients)
    ones = np.ones(dom.shape)
    times, values, energy, monotone = _time_march(dom, ones, K, problem.initial.base, scheme, store_every, ones)
    return SpaceTimeField(dom, times, values, energy,
                          {"kind": problem.kind, "scheme": scheme, "monotone": monotone,
                           "problem_hash": problem.digest()})


def psi_on_nodes(eig: CellEigenSolution, domain: DomainSpec) -> np.ndarray:
    """psi(x/eps) including its exponential factor, on the domain nodes."""
    pts = [domain.nodes() / domain.epsilon] * domain.dim
    return eig.psi_full(pts)


def reconstruct_u(v: SpaceTimeField, eig: CellEigenSolution, domain: DomainSpec) -> SpaceTimeField:
    """u = exp(-lambda t / eps^2) psi(x/eps) v."""
    if v.domain != domain:
        raise GridMismatch("v was computed on a different domain")
    if eig.grid.dim != domain.dim:
        raise GridMismatch("eigen solution dimension differs from the domain")
    psi = psi_on_nodes(eig, domain)
    decay = np.exp(-eig.lam * v.times / domain.epsilon**2)
    vals = decay.reshape((-1,) + (1,) * domain.dim) * psi[None] * v.values
    return SpaceTimeField(domain, v.times, vals, None, {"kind": "reconstructed"})


def _trapezoid_weights(n_points: int, spacing: float) -> np.ndarray:
    w = np.full(n_points, spacing)
    w[[0, -1]] *= 0.5
    return w


def _quadrature(domain: DomainSpec, times: np.ndarray) -> np.ndarray:
    wx = _trapezoid_weights(domain.N + 1, domain.h)
    space = wx if domain.dim == 1 else np.multiply.outer(wx, wx)
    t = np.asarray(times, dtype=float)
    wt = np.zeros(len(t))
    dt = np.diff(t)
    wt[:-1] += 0.5 * dt
    wt[1:] += 0.5 * dt
    return np.multiply.outer(wt, space)


def gradient_nodes(values: np.ndarray, domain: DomainSpec) -> list[np.ndarray]:
    """Centered differences on the spatial axes of a (times, *grid) array."""
    return [np.gradient(values, domain.h, axis=1 + k) for k in range(domain.dim)]


def spacetime_norm(f: SpaceTimeField, kind: str = "L2", delta: float | None = None) -> float:
    """L2(Omega_T), L2(0,T;H1) or L2 restricted to Omega_{T,delta}."""
    w = _quadrature(f.domain, f.times)
    sq = f.values**2
    if kind == "L2":
        pass
    elif kind == "H1":
        sq = sq + sum(g**2 for g in gradient_nodes(f.values, f.domain))
    elif kind == "H1-seminorm":
        sq = sum(g**2 for g in gradient_nodes(f.values, f.domain))
    elif kind == "L2-subset":
        if delta is None:
            raise ValueError("L2-subset norm needs delta")
        sq = sq * f.domain.spacetime_layer_mask(delta, f.times)
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    return float(np.sqrt(np.sum(w * sq)))


def difference(a: SpaceTimeField, b: SpaceTimeField) -> SpaceTimeField:
    if a.domain != b.domain or a.values.shape != b.values.shape or not np.array_equal(a.times, b.times):
        raise GridMismatch("fields live on different space-time grids")
    return a.with_values(a.values - b.values)


def export_snapshots(field_: SpaceTimeField, out_dir, name: str = "solution") -> list[Path]:
    """Raw little-endian float64 row-major dump, JSON manifest and a 1D-slice CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw = out / f"{name}.f64"
    np.ascontiguousarray(field_.values, dtype="<f8").tofile(raw)
    manifest = {
        "file": raw.name,
        "dtype": "float64-le",
        "order": "row-major",
        "shape": list(field_.values.shape),
        "axes": ["t"] + ["x", "y"][: field_.domain.dim],
        "domain": field_.domain.metadata(),
        "times": [float(t) for t in field_.times],
        "problem_hash": field_.meta.get("problem_hash", ""),
    }
    man = out / f"{name}.json"
    man.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    x = field_.domain.nodes()
    sl = field_.values if field_.domain.dim == 1 else field_.values[:, :, field_.domain.N // 2]
    csv_path = out / f"{name}_slice.csv"
    with open(csv_path, "w") as fh:
        fh.write("t,x,value\n")
        for t, row in zip(field_.times, sl):
            for xi, v in zip(x, row):
                fh.write(f"{t!r},{xi!r},{v!r}\n")
    return [raw, man, csv_path]


def snapshot_stride(domain: DomainSpec, max_dt: float) -> int:
    """Largest divisor s of n_steps with s * dt <= max_dt (uniform stored levels)."""
    n = domain.n_steps
    best = 1
    for s in range(1, n + 1):
        if s * domain.dt > max_dt * (1 + 1e-12):
            break
        if n % s == 0:
            best = s
    return best
