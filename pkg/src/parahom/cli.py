"""Command line entry point: ``parahom <subcommand> [--config c.json] [--out dir] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cell import ProblemCoefficients, find_bloch_parameter
from .errors import ConfigError, ParahomError
from .factorize import NondivergenceCoefficients, build_factorized_model, nondivergence_frontend
from .harness import (
    SweepConfig,
    compute_bundle,
    emit_report,
    initial_data,
    run_sweep,
)
from .homogenize import GeneralCoefficients, effective_model
from .parabolic import (
    DomainSpec,
    ParabolicProblem,
    difference,
    export_snapshots,
    reconstruct_u,
    snapshot_stride,
    solve_divform,
    spacetime_norm,
)
from .presets import PRESETS, get_preset, load_import
from .smoothing import appendix_constants, write_appendix_csv
from .torus import write_field_csv

log = logging.getLogger("parahom")


def _read_config(args) -> dict:
    if args.config is None:
        cfg = {}
    else:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    if getattr(args, "preset", None):
        cfg["preset"] = args.preset
        cfg.pop("import", None)
        cfg.setdefault("pipeline", get_preset(args.preset).pipeline)
    return cfg


def _coefficients(cfg: dict, n_cell: int | None = None):
    pipeline = cfg.get("pipeline")
    n = n_cell or int(cfg.get("grid", {}).get("n_cell", 64))
    if "preset" in cfg:
        p = get_preset(cfg["preset"])
        if pipeline not in (None, p.pipeline):
            raise ConfigError(f"preset {p.name!r} belongs to pipeline {p.pipeline!r}")
        return p.pipeline, p.coefficients(n)
    if "import" in cfg:
        if pipeline is None:
            raise ConfigError("an import needs an explicit pipeline")
        return pipeline, load_import(cfg["import"], pipeline)
    raise ConfigError("no coefficients: give --preset or a config with 'preset' or 'import'")


def _problem_coefficients(pipeline, coeffs) -> ProblemCoefficients:
    if isinstance(coeffs, NondivergenceCoefficients):
        return nondivergence_frontend(coeffs)
    if isinstance(coeffs, ProblemCoefficients):
        return coeffs
    raise ConfigError(f"pipeline {pipeline!r} has no cell eigenvalue problem")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj, path: Path | None = None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        path.write_text(text)
    return text


def cmd_cell_eig(args):
    pipeline, coeffs = _coefficients(_read_config(args), args.n_cell)
    eig = find_bloch_parameter(_problem_coefficients(pipeline, coeffs))
    text = _dump(eig.summary(), _out(args) / "cell_eig.json" if args.out else None)
    print(text, end="")


def cmd_factorize(args):
    pipeline, coeffs = _coefficients(_read_config(args), args.n_cell)
    pc = _problem_coefficients(pipeline, coeffs)
    fm = build_factorized_model(pc, find_bloch_parameter(pc))
    out = _out(args)
    for name in ("sigma", "alpha", "beta", "B", "M"):
        write_field_csv(out / f"{name}.csv", getattr(fm, name), name=name)
    summary = {"cell": fm.eig.summary(), "diagnostics": fm.diagnostics()}
    _dump(summary, out / "factorized_model.json")
    print(_dump(summary), end="")


def cmd_homogenize(args):
    pipeline, coeffs = _coefficients(_read_config(args), args.n_cell)
    if isinstance(coeffs, GeneralCoefficients):
        gc = coeffs
    else:
        gc = compute_bundle(coeffs, pipeline).gc
    em = effective_model(gc, weight=args.weight)
    em.export(_out(args), with_correctors=args.correctors)
    print(_dump(em.to_json_dict()), end="")


def _sweep_config(args, **extra) -> SweepConfig:
    if args.config is None:
        raise ConfigError("this subcommand needs --config")
    overrides = {"workers": args.workers, "seed": args.seed, **extra}
    return SweepConfig.load(args.config, **overrides)


def cmd_solve(args):
    cfg = _sweep_config(args)
    eps = args.epsilon if args.epsilon is not None else cfg.epsilons[0]
    bundle = compute_bundle(_coefficients(_read_config(args))[1], cfg.pipeline)
    h = cfg.h_of(eps)
    dom = DomainSpec(cfg.dim, cfg.T, h, cfg.tau_of(h), eps)
    stride = snapshot_stride(dom, eps**2 / 8)
    d_eps, d_0 = initial_data(cfg, bundle, dom)
    f_eps = solve_divform(ParabolicProblem(dom, "oscillatory-divform", bundle.gc, d_eps), store_every=stride)
    f_0 = solve_divform(ParabolicProblem(dom, "homogenized", bundle.em.tensor_h, d_0), store_every=stride)
    out = _out(args)
    files = export_snapshots(f_eps, out, "oscillatory") + export_snapshots(f_0, out, "homogenized")
    summary = {"epsilon": eps, "domain": dom.metadata(), "stride": stride,
               "l2_error": spacetime_norm(difference(f_eps, f_0)),
               "energy_nonincreasing": bool(np.all(np.diff(f_eps.energy) <= 0))}
    if bundle.eig is not None:
        u = reconstruct_u(f_eps, bundle.eig, dom)
        u.meta["problem_hash"] = f_eps.meta["problem_hash"]
        files += export_snapshots(u, out, "reconstructed_u")
    summary["files"] = sorted(p.name for p in files)
    print(_dump(summary, out / "solve.json"), end="")


def cmd_sweep(args):
    out = _out(args)
    cfg = _sweep_config(args, timings=args.timings or None,
                        cache_dir=None if args.no_cache else str(out / "cache"))
    report = run_sweep(cfg)
    emit_report(report, out, plot=not args.no_plot)
    fit = report.fit
    if fit["slope"] is not None:
        print(f"slope {fit['slope']:.4f} +- {fit['half_width']:.4f} "
              f"(floor {report.reference_slopes['proven_floor']}, anticipated {report.reference_slopes['anticipated']})")
    else:
        print(f"slope not fitted: {fit['reason']}")


def cmd_verify_appendix(args):
    cfg = _read_config(args) if args.config else {}
    eps = cfg.get("epsilons") or [1 / 8, 1 / 16, 1 / 32]
    report = appendix_constants(args.samples, [float(e) for e in eps], dim=args.dim,
                                seed=args.seed if args.seed is not None else int(cfg.get("seed", 0)))
    out = _out(args)
    write_appendix_csv(report, out / "appendix.csv")
    _dump(report, out / "appendix.json")
    if not args.no_plot:
        from .plotting import plot_appendix

        plot_appendix(report, out / "appendix.svg")
    for k, v in sorted(report["stability"].items()):
        print(f"{k:12s} max/min across eps = {v:.3f}")


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="experiment config JSON")
    p.add_argument("--out", default=d if suppress else "out", help="output directory")
    p.add_argument("--workers", type=int, default=d, help="parallel epsilon levels")
    p.add_argument("--seed", type=int, default=d, help="random seed (unsigned 64-bit)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parahom", description="Periodic homogenization of oscillatory parabolic problems")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    for name, func, help_ in [
        ("cell-eig", cmd_cell_eig, "Bloch parameter, principal eigenvalue and residuals"),
        ("factorize", cmd_factorize, "export sigma, alpha, beta, B, M"),
        ("homogenize", cmd_homogenize, "export the effective tensor and correctors"),
    ]:
        p = add(name, func, help_)
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--n-cell", type=int, default=None)
        if name == "homogenize":
            p.add_argument("--correctors", action="store_true", help="also write corrector CSVs")
            p.add_argument("--weight", choices=["zeta", "uniform"], default="zeta")

    p = add("solve", cmd_solve, "single epsilon solve with snapshot export")
    p.add_argument("--epsilon", type=float, default=None)
    p = add("sweep", cmd_sweep, "epsilon sweep with CSV/JSON/SVG report")
    p.add_argument("--timings", action="store_true", help="record wall times (breaks byte determinism)")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--no-plot", action="store_true")
    p = add("verify-appendix", cmd_verify_appendix, "measure the mollifier constants")
    p.add_argument("--samples", type=int, default=30)
    p.add_argument("--dim", type=int, default=1, choices=[1, 2])
    p.add_argument("--no-plot", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except ParahomError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
