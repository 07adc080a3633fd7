"""Shipped coefficient presets and the import path for user-supplied fields."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .cell import ProblemCoefficients
from .errors import ConfigError
from .factorize import NondivergenceCoefficients
from .homogenize import GeneralCoefficients
from .torus import PeriodicField, TorusGrid, read_field_csv

PIPELINES = ("section-1", "section-2", "nondivergence")
TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class Preset:
    name: str
    pipeline: str
    dim: int
    build: Callable[[TorusGrid], object]
    description: str = ""

    def coefficients(self, n_cell: int = 64):
        return self.build(TorusGrid(self.dim, n_cell))


def _f(g, vals):
    return PeriodicField(g, np.asarray(vals, dtype=float))


def _eye(g, scalar):
    d = g.dim
    out = np.zeros((d, d) + g.shape)
    for i in range(d):
        out[i, i] = scalar
    return out


def _identity(g):
    return ProblemCoefficients(_f(g, _eye(g, 1.0)), _f(g, np.zeros((g.dim,) + g.shape)), _f(g, np.zeros(g.shape)))


def _constant_drift_1d(g):
    return ProblemCoefficients(_f(g, np.ones((1, 1) + g.shape)), _f(g, np.ones((1,) + g.shape)),
                               _f(g, np.zeros(g.shape)))


def _drift_potential_1d(g):
    (y,) = g.coords()
    A = (1 + 0.25 * np.sin(TWO_PI * y))[None, None]
    b = (1 + 0.5 * np.cos(TWO_PI * y))[None]
    c = 0.5 * np.sin(TWO_PI * y)
    return ProblemCoefficients(_f(g, A), _f(g, b), _f(g, c))


def _drift_potential_2d(g):
    y1, y2 = g.coords()
    A = _eye(g, 1 + 0.25 * np.sin(TWO_PI * y1) * np.cos(TWO_PI * y2))
    A[0, 1] = 0.1 * np.cos(TWO_PI * y2)
    A[1, 0] = 0.1 * np.cos(TWO_PI * y2)
    b = np.array([1 + 0.5 * np.cos(TWO_PI * y2), 0.5 * np.sin(TWO_PI * y1)])
    c = 0.5 * np.cos(TWO_PI * (y1 + y2))
    return ProblemCoefficients(_f(g, A), _f(g, b), _f(g, c))


def _potential_1d(g):
    (y,) = g.coords()
    A = (1 + 0.25 * np.sin(TWO_PI * y))[None, None]
    c = 0.5 * np.sin(TWO_PI * y)
    return ProblemCoefficients(_f(g, A), _f(g, np.zeros((1,) + g.shape)), _f(g, c))


def _harmonic_1d(g):
    (y,) = g.coords()
    return GeneralCoefficients(_f(g, np.ones(g.shape)), _f(g, (1 / (1 + 0.5 * np.sin(TWO_PI * y)))[None, None]))


def _weighted_1d(g):
    (y,) = g.coords()
    return GeneralCoefficients(_f(g, 1 + 0.5 * np.cos(TWO_PI * y)),
                               _f(g, (1 / (1 + 0.5 * np.sin(TWO_PI * y)))[None, None]))


def _constant(g):
    return GeneralCoefficients(_f(g, np.ones(g.shape)), _f(g, _eye(g, 1.0)))


def _layered_2d(g):
    y1, _ = g.coords()
    return GeneralCoefficients(_f(g, np.ones(g.shape)), _f(g, _eye(g, 1 / (1 + 0.5 * np.sin(TWO_PI * y1)))))


def _nondiv_1d(g):
    (y,) = g.coords()
    K = (1 + 0.25 * np.sin(TWO_PI * y))[None, None]
    q = np.full((1,) + g.shape, 0.5)
    r = 0.25 * np.cos(TWO_PI * y)
    return NondivergenceCoefficients(_f(g, K), _f(g, q), _f(g, r))


def _nondiv_2d(g):
    y1, y2 = g.coords()
    K = _eye(g, 0.0)
    K[0, 0] = 1 + 0.25 * np.sin(TWO_PI * y1)
    K[1, 1] = 1 + 0.25 * np.cos(TWO_PI * y2)
    K[0, 1] = K[1, 0] = 0.1 * np.sin(TWO_PI * (y1 + y2))
    q = np.array([np.full(g.shape, 0.5), 0.25 * np.sin(TWO_PI * y1)])
    r = 0.25 * np.cos(TWO_PI * y2)
    return NondivergenceCoefficients(_f(g, K), _f(g, q), _f(g, r))


PRESETS = {
    p.name: p
    for p in [
        Preset("identity-1d", "section-1", 1, _identity, "A=1, b=0, c=0"),
        Preset("identity-2d", "section-1", 2, _identity, "A=I, b=0, c=0"),
        Preset("constant-drift-1d", "section-1", 1, _constant_drift_1d, "A=1, b=1, c=0"),
        Preset("drift-potential-1d", "section-1", 1, _drift_potential_1d, "oscillating A, b, c"),
        Preset("drift-potential-2d", "section-1", 2, _drift_potential_2d, "oscillating A, b, c"),
        Preset("potential-1d", "section-1", 1, _potential_1d, "b=0 so the Bloch parameter vanishes"),
        Preset("harmonic-1d", "section-2", 1, _harmonic_1d, "zeta=1, Theta=1/(1+sin/2)"),
        Preset("weighted-1d", "section-2", 1, _weighted_1d, "zeta=1+cos/2, Theta=1/(1+sin/2)"),
        Preset("constant-1d", "section-2", 1, _constant, "zeta=1, Theta=1"),
        Preset("constant-2d", "section-2", 2, _constant, "zeta=1, Theta=I"),
        Preset("layered-2d", "section-2", 2, _layered_2d, "Theta=I/(1+sin(2 pi y1)/2)"),
        Preset("nondiv-1d", "nondivergence", 1, _nondiv_1d, "K, q, r in nondivergence form"),
        Preset("nondiv-2d", "nondivergence", 2, _nondiv_2d, "K, q, r in nondivergence form"),
    ]
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None


_IMPORT_FIELDS = {
    "section-1": {"A": 2, "b": 1, "c": 0},
    "section-2": {"zeta": 0, "Theta": 2},
    "nondivergence": {"K": 2, "q": 1, "r": 0},
}


def load_import(path, pipeline: str):
    """Read coefficient CSVs listed in a JSON manifest ``{"dim": d, "fields": {name: file}}``."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot read import manifest ({exc})") from exc
    if pipeline not in _IMPORT_FIELDS:
        raise ConfigError(f"unknown pipeline {pipeline!r}")
    dim = int(manifest.get("dim", 0))
    files = manifest.get("fields", {})
    loaded = {}
    for name, rank in _IMPORT_FIELDS[pipeline].items():
        if name not in files:
            raise ConfigError(f"{path}: import manifest lacks field {name!r}")
        loaded[name] = read_field_csv(path.parent / files[name], dim, (dim,) * rank)
    if pipeline == "section-1":
        return ProblemCoefficients(loaded["A"], loaded["b"], loaded["c"])
    if pipeline == "section-2":
        return GeneralCoefficients(loaded["zeta"], loaded["Theta"])
    return NondivergenceCoefficients(loaded["K"], loaded["q"], loaded["r"])
