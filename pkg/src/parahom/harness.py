"""Epsilon sweeps: oscillatory vs homogenized solves, rate fits and report files."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import sympy
from scipy import stats

from .cell import CellEigenSolution, ProblemCoefficients, find_bloch_parameter
from .errors import ConfigError, DegenerateErrors, EpsilonTooLarge, KernelUnderresolved, ParahomError
from .factorize import NondivergenceCoefficients, build_factorized_model, nondivergence_frontend
from .homogenize import EffectiveModel, GeneralCoefficients, effective_model
from .parabolic import (
    DomainSpec,
    InitialDatum,
    ParabolicProblem,
    bump,
    difference,
    psi_on_nodes,
    snapshot_stride,
    solve_divform,
    spacetime_norm,
)
from .presets import PIPELINES, get_preset, load_import
from .smoothing import SmoothingKernel, build_cutoffs, build_w_eps
from .torus import PeriodicField, TorusGrid

log = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-14
THETA_ZERO_TOL = 1e-8
PROVEN_FLOOR = 0.25
ANTICIPATED = 0.5
CSV_COLUMNS = ("epsilon", "l2_error", "w_eps_h1", "slope_partial", "wall_ms")


# ---------------------------------------------------------------- config


@dataclass
class SweepConfig:
    pipeline: str
    epsilons: list
    preset: str | None = None
    import_path: str | None = None
    n_cell: int = 64
    h_policy: str = "eps/8"
    tau_policy: str = "h^2"
    datum_mode: str | None = None
    datum_expr: str | None = None
    T: float = 0.125
    seed: int = 0
    workers: int = 1
    space_scale: float = 0.25
    time_scale: float = 1 / 32
    timings: bool = False
    cache_dir: str | None = None

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        if (self.preset is None) == (self.import_path is None):
            raise ConfigError("give exactly one of preset or import")
        eps = [float(e) for e in self.epsilons]
        if len(eps) < 3:
            raise ConfigError("the epsilon ladder needs at least 3 levels")
        for e in eps:
            k = np.log2(1.0 / e)
            if abs(k - round(k)) > 1e-12 or round(k) < 1:
                raise ConfigError(f"epsilon {e} is not 1/2^k")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilon ladder must be strictly descending")
        self.epsilons = eps
        if self.preset is not None and get_preset(self.preset).pipeline != self.pipeline:
            raise ConfigError(f"preset {self.preset!r} belongs to pipeline {get_preset(self.preset).pipeline!r}")
        if self.datum_mode is None:
            self.datum_mode = "well-prepared" if self.pipeline != "section-2" else "plain"
        if self.datum_mode not in ("plain", "well-prepared", "ill-prepared"):
            raise ConfigError(f"unknown datum mode {self.datum_mode!r}")
        if self.pipeline == "section-2" and self.datum_mode != "plain":
            raise ConfigError("section-2 pipelines take a plain datum")
        for e in eps:  # grid policy must satisfy the domain invariants everywhere
            h = self.h_of(e)
            DomainSpec(self.dim, self.T, h, self.tau_of(h), e)

    @property
    def dim(self) -> int:
        if self.preset is not None:
            return get_preset(self.preset).dim
        return int(json.loads(Path(self.import_path).read_text())["dim"])

    def h_of(self, eps: float) -> float:
        pol = str(self.h_policy).replace(" ", "")
        if pol.startswith("eps/"):
            return eps / float(pol[4:])
        raise ConfigError(f"unsupported h_policy {self.h_policy!r} (use 'eps/k')")

    def tau_of(self, h: float) -> float:
        pol = str(self.tau_policy).replace(" ", "")
        if pol in ("h^2", "h**2"):
            return h * h
        if pol == "h":
            return h
        raise ConfigError(f"unsupported tau_policy {self.tau_policy!r} (use 'h^2' or 'h')")

    @classmethod
    def from_json_dict(cls, d: dict, **overrides) -> "SweepConfig":
        known = {"pipeline", "preset", "import", "epsilons", "grid", "datum", "T", "seed", "cutoffs", "workers"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        grid = d.get("grid", {})
        datum = d.get("datum", {})
        cut = d.get("cutoffs", {})
        kw = dict(
            pipeline=d.get("pipeline"),
            epsilons=d.get("epsilons", []),
            preset=d.get("preset"),
            import_path=d.get("import"),
            n_cell=int(grid.get("n_cell", 64)),
            h_policy=grid.get("h_policy", "eps/8"),
            tau_policy=grid.get("tau_policy", "h^2"),
            datum_mode=datum.get("mode"),
            datum_expr=datum.get("expr"),
            T=float(d.get("T", 0.125)),
            seed=int(d.get("seed", 0)),
            workers=int(d.get("workers", 1)),
            space_scale=float(cut.get("space_scale", 0.25)),
            time_scale=float(cut.get("time_scale", 1 / 32)),
        )
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    @classmethod
    def load(cls, path, **overrides) -> "SweepConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_json_dict(d, **overrides)

    def canonical(self) -> dict:
        """Everything that affects the numbers (workers, timings and cache location excluded)."""
        d = asdict(self)
        for k in ("workers", "timings", "cache_dir"):
            d.pop(k)
        if self.import_path is not None:
            d["import_digest"] = _file_tree_digest(Path(self.import_path))
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()


def _file_tree_digest(manifest: Path) -> str:
    h = hashlib.sha256(manifest.read_bytes())
    for name in sorted(json.loads(manifest.read_text()).get("fields", {}).values()):
        h.update((manifest.parent / name).read_bytes())
    return h.hexdigest()


def datum_function(expr: str | None, dim: int):
    """Vectorized u0(x[, y]) from a sympy expression; ``bump`` is available by name."""
    names = sympy.symbols("x y")[:dim]
    if expr is None:
        expr = "bump(x)" if dim == 1 else "bump(x)*bump(y)"
    try:
        parsed = sympy.sympify(expr, locals={"bump": sympy.Function("bump"), "x": names[0],
                                             **({"y": names[1]} if dim > 1 else {})})
    except (sympy.SympifyError, TypeError) as exc:
        raise ConfigError(f"cannot parse datum expression {expr!r}: {exc}") from exc
    free = {s.name for s in parsed.free_symbols} - {s.name for s in names}
    if free:
        raise ConfigError(f"datum expression has unknown symbols {sorted(free)}")
    return sympy.lambdify(names, parsed, modules=[{"bump": bump}, "numpy"])


# ---------------------------------------------------------------- effective model


@dataclass(frozen=True, eq=False)
class EffectiveBundle:
    """Everything eps-independent: the divergence-form coefficients, their effective model, and
    (for factorized pipelines) the cell eigen solution."""

    gc: GeneralCoefficients
    em: EffectiveModel
    eig: CellEigenSolution | None
    structure: dict


def build_coefficients(cfg: SweepConfig):
    if cfg.preset is not None:
        return get_preset(cfg.preset).coefficients(cfg.n_cell)
    return load_import(cfg.import_path, cfg.pipeline)


def coefficient_digest(coeffs, pipeline: str) -> str:
    h = hashlib.sha256(pipeline.encode())
    if isinstance(coeffs, ProblemCoefficients):
        fields = (coeffs.A, coeffs.b, coeffs.c)
    elif isinstance(coeffs, NondivergenceCoefficients):
        fields = (coeffs.K, coeffs.q, coeffs.r)
    else:
        fields = (coeffs.zeta, coeffs.Theta)
    for f in fields:
        h.update(json.dumps(f.grid.metadata(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(f.values).tobytes())
    return h.hexdigest()


def compute_bundle(coeffs, pipeline: str) -> EffectiveBundle:
    if pipeline == "section-2":
        gc = coeffs
        eig, structure = None, {}
    else:
        pc = nondivergence_frontend(coeffs) if pipeline == "nondivergence" else coeffs
        eig = find_bloch_parameter(pc)
        fm = build_factorized_model(pc, eig)
        gc = GeneralCoefficients.from_factorized(fm)
        structure = fm.diagnostics()
    return EffectiveBundle(gc, effective_model(gc), eig, structure)


def _save_bundle(b: EffectiveBundle, path: Path) -> None:
    arrays = {
        "zeta": b.gc.zeta.values,
        "Theta": b.gc.Theta.values,
        "kappa": np.array(b.gc.kappa),
        "correctors": np.array([w.values for w in b.em.correctors]),
        "tensor_h": b.em.tensor_h,
        "phi": b.em.flux_corrector.values,
        "meta": np.array(json.dumps({"diagnostics": b.em.diagnostics, "structure": b.structure,
                                     "eig": None if b.eig is None else {
                                         "lam": b.eig.lam, "lower_bound_a": b.eig.lower_bound_a,
                                         "residuals": b.eig.residuals}}, sort_keys=True)),
    }
    if b.eig is not None:
        arrays.update(theta=np.asarray(b.eig.theta), psi=b.eig.psi.values, psi_star=b.eig.psi_star.values)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def _load_bundle(path: Path, grid: TorusGrid) -> EffectiveBundle:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        gc = GeneralCoefficients(PeriodicField(grid, z["zeta"]), PeriodicField(grid, z["Theta"]),
                                 kappa=float(z["kappa"]))
        em = EffectiveModel(
            correctors=tuple(PeriodicField(grid, w) for w in z["correctors"]),
            tensor_h=np.array(z["tensor_h"]),
            flux_corrector=PeriodicField(grid, z["phi"]),
            diagnostics=meta["diagnostics"],
        )
        eig = None
        if meta["eig"] is not None:
            e = meta["eig"]
            eig = CellEigenSolution(np.array(z["theta"]), e["lam"], PeriodicField(grid, z["psi"]),
                                    PeriodicField(grid, z["psi_star"]), e["lower_bound_a"], e["residuals"])
    return EffectiveBundle(gc, em, eig, meta["structure"])


def effective_bundle(cfg: SweepConfig) -> EffectiveBundle:
    coeffs = build_coefficients(cfg)
    if cfg.cache_dir is None:
        return compute_bundle(coeffs, cfg.pipeline)
    key = coefficient_digest(coeffs, cfg.pipeline)
    path = Path(cfg.cache_dir) / f"effective_{key[:24]}.npz"
    grid = (coeffs.A if isinstance(coeffs, ProblemCoefficients) else
            coeffs.K if isinstance(coeffs, NondivergenceCoefficients) else coeffs.Theta).grid
    if path.exists():
        log.info("effective model cache hit %s", path)
        return _load_bundle(path, grid)
    bundle = compute_bundle(coeffs, cfg.pipeline)
    path.parent.mkdir(parents=True, exist_ok=True)
    _save_bundle(bundle, path)
    return bundle


# ---------------------------------------------------------------- sweep


def ill_prepared_factor(eig: CellEigenSolution) -> float:
    """Cell average of 1/psi, the factor multiplying u0 in the weak limit."""
    return float(np.mean(1.0 / eig.psi.values))


def initial_data(cfg: SweepConfig, bundle: EffectiveBundle, dom: DomainSpec):
    """Initial values for the oscillatory and the homogenized problem."""
    base = InitialDatum.from_function(dom, datum_function(cfg.datum_expr, dom.dim), cfg.datum_mode)
    if cfg.datum_mode != "ill-prepared":
        return base, base
    if bundle.eig is None or np.max(np.abs(bundle.eig.theta)) > THETA_ZERO_TOL:
        raise ConfigError("ill-prepared comparison is implemented only for a vanishing Bloch parameter")
    v0 = base.base / psi_on_nodes(bundle.eig, dom)
    f00 = ill_prepared_factor(bundle.eig) * base.base
    return InitialDatum("ill-prepared", v0), InitialDatum("ill-prepared", f00)


def run_level(cfg: SweepConfig, bundle: EffectiveBundle, eps: float) -> dict:
    start = time.perf_counter()
    try:
        h = cfg.h_of(eps)
        dom = DomainSpec(cfg.dim, cfg.T, h, cfg.tau_of(h), eps)
        stride = snapshot_stride(dom, eps**2 / 8)
        d_eps, d_0 = initial_data(cfg, bundle, dom)
        f_eps = solve_divform(ParabolicProblem(dom, "oscillatory-divform", bundle.gc, d_eps), store_every=stride)
        f_0 = solve_divform(ParabolicProblem(dom, "homogenized", bundle.em.tensor_h, d_0), store_every=stride)
        err = spacetime_norm(difference(f_eps, f_0))
        rec = {
            "epsilon": eps,
            "l2_error": err,
            "h": dom.h,
            "tau": dom.dt,
            "n_steps": dom.n_steps,
            "stride": stride,
            "energy_nonincreasing": bool(np.all(np.diff(f_eps.energy) <= 0) and np.all(np.diff(f_0.energy) <= 0)),
            "m_matrix": bool(f_eps.meta["monotone"]),
            "w_eps_h1": None,
            "w_eps_initial_max": None,
            "w_ratio": None,
            "w_reason": "",
        }
        if cfg.datum_mode == "ill-prepared":
            rec["w_reason"] = "not defined for ill-prepared data"
        else:
            try:
                cut = build_cutoffs(dom, cfg.space_scale, cfg.time_scale)
                cd = build_w_eps(f_eps, f_0, bundle.em, dom, SmoothingKernel(dom.dim), cut)
                rec.update(w_eps_h1=cd.h1_norm, w_eps_initial_max=cd.initial_max, w_ratio=cd.h1_norm / eps**0.25)
            except (EpsilonTooLarge, KernelUnderresolved) as exc:
                rec["w_reason"] = str(exc)
    except ParahomError as exc:
        exc.args = (f"[epsilon={eps}] {exc}",)
        exc.epsilon = eps
        raise
    ms = (time.perf_counter() - start) * 1e3
    rec["wall_ms"] = int(round(ms)) if cfg.timings else 0
    return rec


def _level_task(args):
    return run_level(*args)


def fit_loglog(eps, errors) -> dict:
    eps = np.asarray(eps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(eps) < 3:
        raise ValueError("need at least 3 points")
    if np.any(eps <= 0):
        raise ValueError("epsilons must be positive")
    if np.any(errors <= DEGENERATE_TOL) or np.ptp(errors) <= DEGENERATE_TOL:
        raise DegenerateErrors("degenerate errors")
    res = stats.linregress(np.log(eps), np.log(errors))
    dof = len(eps) - 2
    half = float(stats.t.ppf(0.975, dof) * res.stderr) if dof > 0 else float("inf")
    return {"slope": float(res.slope), "half_width": half, "intercept": float(res.intercept)}


def fit_rate(points) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(eps) with a 95% half-width."""
    eps, err = zip(*points)
    fit = fit_loglog(eps, err)
    return fit["slope"], fit["half_width"]


@dataclass
class SweepReport:
    config: dict
    config_hash: str
    records: list
    fit: dict
    tensor_h: list
    effective_diagnostics: dict
    structure: dict
    cell: dict | None
    soft_checks: dict
    ill_prepared_factor: float | None = None
    reference_slopes: dict = field(default_factory=lambda: {"proven_floor": PROVEN_FLOOR, "anticipated": ANTICIPATED})
    note: str = "all constants are measured by this artifact"

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "SweepReport":
        return cls(**d)


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _json_ready(obj.tolist())
    return obj


def run_sweep(cfg: SweepConfig) -> SweepReport:
    bundle = effective_bundle(cfg)
    tasks = [(cfg, bundle, eps) for eps in cfg.epsilons]
    workers = max(1, min(cfg.workers, len(tasks)))
    if workers == 1:
        records = [run_level(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_level_task, tasks))

    prev = None
    for r in records:
        r["slope_partial"] = None
        if prev is not None and prev["l2_error"] > 0 and r["l2_error"] > 0:
            r["slope_partial"] = float(np.log(r["l2_error"] / prev["l2_error"]) / np.log(r["epsilon"] / prev["epsilon"]))
        prev = r

    eps = [r["epsilon"] for r in records]
    errs = [r["l2_error"] for r in records]
    fit = {"slope": None, "half_width": None, "intercept": None, "reason": ""}
    if cfg.datum_mode == "ill-prepared":
        fit["reason"] = "ill-prepared data: weak convergence only, no rate fitted"
    else:
        try:
            fit.update(fit_loglog(eps, errs))
        except DegenerateErrors as exc:
            fit["reason"] = str(exc)
    decreasing = bool(all(b < a for a, b in zip(errs, errs[1:])))
    if not decreasing:
        log.warning("errors do not decrease monotonically down the ladder: %s", errs)
    w = [r["w_ratio"] for r in records]
    soft = {
        "errors_decreasing": decreasing,
        "energy_nonincreasing": bool(all(r["energy_nonincreasing"] for r in records)),
        "w_initial_zero": bool(all(r["w_eps_initial_max"] in (None, 0.0) for r in records)),
        "w_ratio_spread": None if any(v is None for v in w) else float(max(w) / min(w)),
    }
    report = SweepReport(
        config=cfg.canonical(),
        config_hash=cfg.digest(),
        records=records,
        fit=fit,
        tensor_h=bundle.em.tensor_h.tolist(),
        effective_diagnostics=dict(bundle.em.diagnostics),
        structure=dict(bundle.structure),
        cell=None if bundle.eig is None else bundle.eig.summary(),
        soft_checks=soft,
        ill_prepared_factor=None if cfg.datum_mode != "ill-prepared" else ill_prepared_factor(bundle.eig),
    )
    return SweepReport.from_json_dict(_json_ready(report.to_json_dict()))


def _fmt(v) -> str:
    return "" if v is None else repr(v)


def report_json(report: SweepReport) -> str:
    return json.dumps(_json_ready(report.to_json_dict()), indent=2, sort_keys=True) + "\n"


def emit_report(report: SweepReport, out_dir, stem: str = "sweep", plot: bool = True) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in report.records:
                w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        json_path = out / f"{stem}.json"
        json_path.write_text(report_json(report))
        written = [csv_path, json_path]
        if plot:
            from .plotting import plot_sweep

            svg = out / f"{stem}.svg"
            plot_sweep(report.to_json_dict(), svg)
            written.append(svg)
    except OSError as exc:
        raise OSError(f"cannot write report under {out}: {exc}") from exc
    return written
