"""Flat dotted-key configuration files, plus builders for models and grids.

Format: one ``section.key = value`` per line, ``#`` comments, values
coerced to bool/int/float/string, comma-separated values to lists.  Every
CLI flag overrides its config key.  Schema (see README for the full
table): ``model.*``, ``grid.*``, ``noise.*``, ``experiment.*``, plus the
command-specific ``control.*``, ``event.*``, ``minimize.*``, ``metrics.*``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import BC_DIRICHLET_PINNED, BC_NEUMANN, Grid
from .models import CUSTOM, FVP, SBM, InitialCondition, ModelSpec


def _coerce(token: str):
    t = token.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    return t


def parse_value(raw: str):
    raw = raw.strip()
    # function-style values like uniform-cdf(0,1) stay whole strings
    if "," in raw and "(" not in raw:
        return [_coerce(t) for t in raw.split(",")]
    return _coerce(raw)


def parse_config(text: str) -> dict:
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        out[key.strip()] = parse_value(raw)
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def merge(base: dict, *overrides: dict) -> dict:
    out = dict(base)
    for o in overrides:
        out.update({k: v for k, v in o.items() if v is not None})
    return out


def as_list(value) -> list:
    if isinstance(value, list):
        return value
    return [value]


def build_model(cfg: dict) -> ModelSpec:
    kind = cfg.get("model.kind", FVP)
    if kind == CUSTOM:
        raise ValueError("custom models are constructed in code, not from config")
    initial = InitialCondition.parse(
        cfg.get("model.f", "uniform-cdf(0,1)" if kind == FVP else "lebesgue(-1,1)"))
    eps = float(cfg.get("model.epsilon", 0.01))
    window = None
    if "model.a_min" in cfg or "model.a_max" in cfg:
        window = (float(cfg["model.a_min"]), float(cfg["model.a_max"]))
    if kind == SBM:
        return ModelSpec.sbm(initial, eps, window)
    return ModelSpec.fvp(initial, eps)


def build_grid(cfg: dict, model: ModelSpec) -> Grid:
    L = float(cfg.get("grid.L", 4.0))
    ny = int(cfg.get("grid.ny", 161))
    bc_default = BC_DIRICHLET_PINNED if model.kind == FVP else BC_NEUMANN
    window = model.a_window
    if window is None:
        # sbm default window from the initial-datum range on this domain
        samples = model.initial(np.linspace(-L, L, ny))
        samples = samples - float(model.initial(np.array([0.0]))[0])
        window = (min(0.0, float(samples.min())) - 1.0,
                  max(0.0, float(samples.max())) + 1.0)
    return Grid(
        L=L, ny=ny,
        T=float(cfg.get("grid.T", 1.0)),
        nt=int(cfg.get("grid.nt", 200)),
        a_min=float(cfg.get("noise.a_min", window[0])),
        a_max=float(cfg.get("noise.a_max", window[1])),
        na=int(cfg.get("noise.na", 32)),
        bc=cfg.get("grid.bc", bc_default),
    )


def root_seed(cfg: dict) -> int:
    return int(cfg.get("noise.seed", 20260810))
