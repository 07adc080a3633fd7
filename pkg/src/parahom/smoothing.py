"""Parabolic mollification, boundary-layer cut-offs, the corrected difference w_eps
and empirical constants for the mollifier estimates.

The kernel is a product of a time bump and a radial space bump,
``k(s, y) = c * b(2 s) * b(sqrt(2) |y|)``, supported in ``|s| <= 1/2, |y|^2 <= 1/2``
and therefore inside ``{|s| + |y|^2 <= 1}``.  Scaled by eps^2 in time and eps in
space it is applied as a time convolution followed by a space convolution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np
from scipy import integrate
from scipy.ndimage import convolve1d, gaussian_filter
from scipy.signal import fftconvolve

from .errors import EpsilonTooLarge, GridMismatch, KernelUnderresolved
from .homogenize import EffectiveModel
from .parabolic import DomainSpec, SpaceTimeField, gradient_nodes, spacetime_norm

MIN_CELLS_PER_KERNEL = 4
MASS_TOL = 1e-10


def _bump(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inside = np.abs(z) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - z[inside] ** 2))
    return out


@dataclass(frozen=True)
class SmoothingKernel:
    """Even, nonnegative, unit-mass mollifier on R x R^dim."""

    dim: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("kernel dimension must be 1 or 2")

    @property
    def _time_mass(self) -> float:
        return integrate.quad(lambda s: float(_bump(2 * s)), -0.5, 0.5, epsabs=1e-14, epsrel=1e-13)[0]

    @property
    def _space_mass(self) -> float:
        # radial integral of b(sqrt(2) r) over R^dim
        surface = 2 * pi ** (self.dim / 2) / gamma(self.dim / 2)
        f = lambda r: float(_bump(np.sqrt(2.0) * r)) * r ** (self.dim - 1)
        return surface * integrate.quad(f, 0.0, np.sqrt(0.5), epsabs=1e-14, epsrel=1e-13)[0]

    def time_profile(self, s):
        return _bump(2 * np.asarray(s)) / self._time_mass

    def space_profile(self, *ys):
        r2 = sum(np.asarray(y, dtype=float) ** 2 for y in ys)
        return _bump(np.sqrt(2.0 * r2)) / self._space_mass

    def profile(self, s, *ys):
        return self.time_profile(s) * self.space_profile(*ys)

    def mass(self) -> float:
        """Continuous integral of the normalized profile (should be 1)."""
        t = integrate.quad(lambda s: float(self.time_profile(s)), -0.5, 0.5, epsabs=1e-14)[0]
        surface = 2 * pi ** (self.dim / 2) / gamma(self.dim / 2)
        r = integrate.quad(lambda r: float(self.space_profile(r)) * r ** (self.dim - 1), 0.0, np.sqrt(0.5),
                           epsabs=1e-14)[0]
        return t * surface * r

    def discrete_weights(self, eps: float, h: float, tau: float) -> tuple[np.ndarray, np.ndarray]:
        """Time weights and space stencil of the eps-scaled kernel, each summing to 1."""
        if eps**2 / tau < MIN_CELLS_PER_KERNEL or eps / h < MIN_CELLS_PER_KERNEL:
            raise KernelUnderresolved(
                f"kernel spans eps^2/tau={eps**2 / tau:.3g}, eps/h={eps / h:.3g} cells (need >= {MIN_CELLS_PER_KERNEL})"
            )
        kt = int(np.floor(0.5 * eps**2 / tau))
        wt = self.time_profile(np.arange(-kt, kt + 1) * tau / eps**2)
        kx = int(np.floor(np.sqrt(0.5) * eps / h))
        y = np.arange(-kx, kx + 1) * h / eps
        grids = np.meshgrid(*([y] * self.dim), indexing="ij")
        wx = self.space_profile(*grids)
        return wt / wt.sum(), wx / wx.sum()


def uniform_step(times: np.ndarray) -> float:
    dt = np.diff(np.asarray(times, dtype=float))
    if len(dt) == 0 or np.max(np.abs(dt - dt[0])) > 1e-9 * dt[0]:
        raise GridMismatch("smoothing needs uniformly spaced time levels")
    return float(dt[0])


def smooth_array(values: np.ndarray, eps: float, h: float, tau: float, kernel: SmoothingKernel) -> np.ndarray:
    """Convolve a (times, *space) array, zero-extended outside the box, with the scaled kernel."""
    wt, wx = kernel.discrete_weights(eps, h, tau)
    # direct sum in time keeps exact zeros where every contributing level is zero
    out = convolve1d(values, wt, axis=0, mode="constant", cval=0.0)
    axes = tuple(range(1, values.ndim))
    stencil = wx.reshape((1,) + wx.shape)
    nonzero = np.any(out != 0.0, axis=axes)
    if np.any(nonzero):
        out[nonzero] = fftconvolve(out[nonzero], stencil, mode="same", axes=axes)
    return out


def smooth(g: SpaceTimeField, eps: float, kernel: SmoothingKernel) -> SpaceTimeField:
    if kernel.dim != g.domain.dim:
        raise GridMismatch("kernel and field dimensions differ")
    tau = uniform_step(g.times)
    vals = smooth_array(g.values, eps, g.domain.h, tau, kernel)
    return SpaceTimeField(g.domain, g.times, vals, None, {"kind": "smoothed"})


def _smoothstep(z):
    z = np.clip(z, 0.0, 1.0)
    return z * z * (3.0 - 2.0 * z)


@dataclass(frozen=True, eq=False)
class CutoffPair:
    """Space cut-off on the nodes and time cut-off as a function of t.

    ``ell`` is the space length (sqrt(eps) times a scale factor) and ``s`` the
    time length (eps times a scale factor); eta1 ramps over [3 ell, 4 ell] and
    eta2 over [4 s, 8 s] at both ends of (0, T).
    """

    eta1: np.ndarray
    epsilon: float
    T: float
    ell: float
    s: float

    def eta2(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        up = _smoothstep((t - 4 * self.s) / (4 * self.s))
        down = _smoothstep((self.T - t - 4 * self.s) / (4 * self.s))
        return up * down

    def check(self, domain: DomainSpec, times: np.ndarray) -> dict:
        """Nodewise verification of the cut-off bounds; returns the measured extremes."""
        dist = domain.distance_to_boundary()
        e1, e2 = self.eta1, self.eta2(times)
        grad = np.sqrt(sum(g**2 for g in np.gradient(e1, domain.h))) if domain.dim > 1 else np.abs(
            np.gradient(e1, domain.h))
        fine_t = np.linspace(0.0, self.T, 20001)
        dt2 = np.max(np.abs(np.diff(self.eta2(fine_t)))) / (fine_t[1] - fine_t[0])
        out = {
            "eta1_range_ok": bool(e1.min() >= 0 and e1.max() <= 1),
            "eta1_inner_ok": bool(np.all(e1[dist >= 4 * self.ell] == 1.0)),
            "eta1_outer_ok": bool(np.all(e1[dist <= 3 * self.ell] == 0.0)),
            "max_grad_eta1_times_ell": float(grad.max() * self.ell),
            "eta2_range_ok": bool(e2.min() >= 0 and e2.max() <= 1),
            "eta2_plateau_ok": bool(np.all(e2[(times >= 8 * self.s) & (times <= self.T - 8 * self.s)] == 1.0)),
            "eta2_zero_ok": bool(np.all(e2[(times <= 4 * self.s) | (times >= self.T - 4 * self.s)] == 0.0)),
            "max_dt_eta2_times_s": float(dt2 * self.s),
        }
        return out


def build_cutoffs(domain: DomainSpec, space_scale: float = 1.0, time_scale: float = 1.0) -> CutoffPair:
    """Cut-offs with lengths ``space_scale*sqrt(eps)`` and ``time_scale*eps``.

    The space profile is the linear ramp of the distance to the boundary, the
    only profile going from 0 to 1 over one length with slope at most 1/ell;
    the time profile is a cubic smoothstep (slope at most 3/8 per s).
    """
    eps = domain.epsilon
    ell = space_scale * np.sqrt(eps)
    s = time_scale * eps
    if not 4 * ell < 0.5:
        raise EpsilonTooLarge(f"space cut-off needs 4*ell < 1/2, got ell={ell:.4g}")
    if not 8 * s < domain.T / 2:
        raise EpsilonTooLarge(f"time cut-off needs 8*s < T/2, got s={s:.4g}, T={domain.T}")
    dist = domain.distance_to_boundary()
    eta1 = np.clip((dist - 3 * ell) / ell, 0.0, 1.0)
    eta1[dist >= 4 * ell] = 1.0
    eta1[dist <= 3 * ell] = 0.0
    return CutoffPair(eta1=eta1, epsilon=eps, T=domain.T, ell=ell, s=s)


@dataclass(frozen=True, eq=False)
class CorrectedDifference:
    w: SpaceTimeField
    h1_norm: float
    l2_norm: float
    initial_max: float
    meta: dict = field(default_factory=dict)


def build_w_eps(f_eps: SpaceTimeField, f0: SpaceTimeField, em: EffectiveModel, domain: DomainSpec,
                kernel: SmoothingKernel, cutoffs: CutoffPair) -> CorrectedDifference:
    """w = f_eps - f0 - eps * sum_j omega_j(x/eps) S_eps(eta1 eta2 d_j f0)."""
    if f_eps.domain != domain or f0.domain != domain or not np.array_equal(f_eps.times, f0.times):
        raise GridMismatch("f_eps and f0 must share the domain and time levels")
    eps = domain.epsilon
    cut = cutoffs.eta2(f0.times).reshape((-1,) + (1,) * domain.dim) * cutoffs.eta1[None]
    tau = uniform_step(f0.times)
    pts = [domain.nodes() / eps] * domain.dim
    corr = np.zeros_like(f0.values)
    for j, g in enumerate(gradient_nodes(f0.values, domain)):
        sm = smooth_array(cut * g, eps, domain.h, tau, kernel)
        corr += em.correctors[j].evaluate(pts)[None] * sm
    w_vals = f_eps.values - f0.values - eps * corr
    w = SpaceTimeField(domain, f0.times, w_vals, None, {"kind": "w_eps"})
    return CorrectedDifference(
        w=w,
        h1_norm=spacetime_norm(w, "H1"),
        l2_norm=spacetime_norm(w, "L2"),
        initial_max=float(np.max(np.abs(w_vals[0]))),
    )


# ---------------------------------------------------------------- mollifier constants


ESTIMATE_NAMES = ("smooth_L2", "smooth_grad", "smooth_hess", "grad_defect", "periodic_L2", "periodic_grad")
Y1_NOTE = "periodic factor normed over one unit cell"


def _random_field(rng, shape, sigma_cells, window):
    noise = rng.standard_normal(shape)
    return gaussian_filter(noise, sigma=sigma_cells, mode="constant") * window


def _window(shape, dim):
    nt = shape[0]
    wt = _bump(((np.arange(nt) + 0.5) / nt - 0.5) / 0.4)
    wx = _bump((np.linspace(0.0, 1.0, shape[1]) - 0.5) / 0.4)
    if dim == 1:
        return wt[:, None] * wx[None, :]
    return wt[:, None, None] * wx[None, :, None] * wx[None, None, :]


def _hessian_sq(v, h, dim):
    g = [np.gradient(v, h, axis=1 + k) for k in range(dim)]
    return sum(np.gradient(gk, h, axis=1 + l) ** 2 for gk in g for l in range(dim))


def appendix_constants(sample_count: int = 30, eps_list=(1 / 8, 1 / 16, 1 / 32), dim: int = 1,
                       kernel: SmoothingKernel | None = None, seed: int = 0,
                       cells_per_eps: int = 8, levels_per_eps2: int = 8, horizon: float = 48.0) -> dict:
    """Measure the ratios of the mollifier estimates over random samples.

    Each eps uses h = eps/cells_per_eps, tau = eps^2/levels_per_eps2 on (0,1)^dim
    and the time interval (0, horizon*eps^2); samples are smoothed white noise
    at a fixed number of grid cells times a smooth window, so every ratio is
    measured on statistically identical fields in kernel units.
    """
    if sample_count < 30:
        raise ValueError("use at least 30 samples per eps")
    kernel = kernel or SmoothingKernel(dim)
    rng = np.random.default_rng(seed)
    rows = []
    for eps in eps_list:
        h = eps / cells_per_eps
        tau = eps**2 / levels_per_eps2
        N = int(round(1.0 / h))
        nt = int(round(horizon * eps**2 / tau))
        shape = (nt,) + (N + 1,) * dim
        vol = h**dim * tau
        win = _window(shape, dim)
        # sub-box omega and its dilation by one kernel radius
        x = np.linspace(0.0, 1.0, N + 1)
        t = (np.arange(nt) + 0.5) * tau
        Tend = nt * tau
        dil_x = np.ceil(eps / h) * h
        dil_t = np.ceil(eps**2 / tau) * tau
        in_x = (x > 0.25) & (x < 0.75)
        in_xd = (x > 0.25 - dil_x) & (x < 0.75 + dil_x)
        in_t = (t > Tend / 4) & (t < 3 * Tend / 4)
        in_td = (t > Tend / 4 - dil_t) & (t < 3 * Tend / 4 + dil_t)

        def mask(mt, mx):
            m = mt.reshape((-1,) + (1,) * dim)
            for ax in range(dim):
                sh = [1] * (dim + 1)
                sh[1 + ax] = -1
                m = m & mx.reshape(sh)
            return m

        omega, omega_d = mask(in_t, in_x), mask(in_td, in_xd)
        ycell = np.arange(64) / 64
        ratios = {k: [] for k in ESTIMATE_NAMES}
        for _ in range(sample_count):
            phi = _random_field(rng, shape, 2.0, win)
            Sphi = smooth_array(phi, eps, h, tau, kernel)
            nphi = np.sqrt(np.sum(phi**2) * vol)
            grad = [np.gradient(Sphi, h, axis=1 + k) for k in range(dim)]
            ratios["smooth_L2"].append(np.sqrt(np.sum(Sphi**2) * vol) / nphi)
            ratios["smooth_grad"].append(eps * np.sqrt(np.sum(sum(g**2 for g in grad)) * vol) / nphi)
            ratios["smooth_hess"].append(eps**2 * np.sqrt(np.sum(_hessian_sq(Sphi, h, dim)) * vol) / nphi)

            f = _random_field(rng, shape, 4.0, win)
            Sf = smooth_array(f, eps, h, tau, kernel)
            gdiff = sum((np.gradient(Sf, h, axis=1 + k) - np.gradient(f, h, axis=1 + k)) ** 2 for k in range(dim))
            hess = np.sqrt(np.sum(_hessian_sq(f, h, dim)) * vol)
            ft = np.sqrt(np.sum(np.gradient(f, tau, axis=0) ** 2) * vol)
            ratios["grad_defect"].append(np.sqrt(np.sum(gdiff) * vol) / (eps * (hess + ft)))

            # random periodic factor: a few low Fourier modes
            modes = rng.standard_normal((3, 2))
            const = rng.standard_normal()

            def gper(y):
                return const + sum(a * np.cos(2 * pi * (k + 1) * y) + b * np.sin(2 * pi * (k + 1) * y)
                                   for k, (a, b) in enumerate(modes))

            gx = gper(x / eps)
            g_full = gx
            for _ax in range(1, dim):
                g_full = np.multiply.outer(g_full, gx)
            g_cell = gper(ycell)
            g_norm = np.sqrt(np.mean(g_cell**2)) ** dim
            f_norm = np.sqrt(np.sum((phi * omega_d) ** 2) * vol)
            num = np.sqrt(np.sum((g_full[None] * Sphi * omega) ** 2) * vol)
            ratios["periodic_L2"].append(num / (g_norm * f_norm))
            num_g = eps * np.sqrt(np.sum(sum((g_full[None] * gk * omega) ** 2 for gk in grad)) * vol)
            ratios["periodic_grad"].append(num_g / (g_norm * f_norm))
        for k in ESTIMATE_NAMES:
            r = np.array(ratios[k])
            rows.append({"epsilon": float(eps), "estimate": k, "ratio_max": float(r.max()),
                         "ratio_median": float(np.median(r)), "samples": int(len(r))})
    stability = {}
    for k in ESTIMATE_NAMES:
        maxes = [r["ratio_max"] for r in rows if r["estimate"] == k]
        stability[k] = float(max(maxes) / min(maxes))
    return {"rows": rows, "stability": stability, "seed": int(seed), "dim": int(dim), "note": Y1_NOTE}


def write_appendix_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "estimate", "ratio_max", "ratio_median", "samples"])
        for r in report["rows"]:
            w.writerow([repr(r["epsilon"]), r["estimate"], repr(r["ratio_max"]), repr(r["ratio_median"]), r["samples"]])
