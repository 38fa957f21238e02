"""Experiment harness: manufactured problem, error metrics, comparison grids.

The benchmark problem is  -Lap(u) = f  on the unit square with
u(x1, x2) = sin(2 pi x1) sin(2 pi x2)  and  f = 8 pi^2 u; its Dirichlet
energy is exactly -pi^2, which anchors several oracles.
"""

from __future__ import annotations

import json
import math
import platform
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import network
from .mesh import build_uniform_unit_square
from .network import ResNet
from .quadrature import triangle_rule
from .training import EnergyReport, TrainConfig, train_ladder

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ManufacturedProblem:
    u_exact: Callable[[np.ndarray], np.ndarray]
    grad_u_exact: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]
    g0: Callable[[np.ndarray], np.ndarray] | None
    f_sup: float


def sine_problem() -> ManufacturedProblem:
    def u_exact(x: np.ndarray) -> np.ndarray:
        return np.sin(TWO_PI * x[..., 0]) * np.sin(TWO_PI * x[..., 1])

    def grad_u_exact(x: np.ndarray) -> np.ndarray:
        gx = TWO_PI * np.cos(TWO_PI * x[..., 0]) * np.sin(TWO_PI * x[..., 1])
        gy = TWO_PI * np.sin(TWO_PI * x[..., 0]) * np.cos(TWO_PI * x[..., 1])
        return np.stack([gx, gy], axis=-1)

    def f(x: np.ndarray) -> np.ndarray:
        return 8.0 * math.pi**2 * u_exact(x)

    return ManufacturedProblem(
        u_exact=u_exact, grad_u_exact=grad_u_exact, f=f, g0=None, f_sup=8.0 * math.pi**2
    )


def l2_h1_between(
    u_fn: Callable[[np.ndarray], np.ndarray],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    u_exact: Callable[[np.ndarray], np.ndarray],
    grad_u_exact: Callable[[np.ndarray], np.ndarray],
    m_ref: int,
    degree: int = 5,
) -> tuple[float, float]:
    """L2 and H1-seminorm distances by quadrature over a fine reference mesh."""
    mesh = build_uniform_unit_square(m_ref)
    rule = triangle_rule(degree)
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    d1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    d2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    area = 1.0 / (2.0 * m_ref * m_ref)
    l2_sq = 0.0
    h1_sq = 0.0
    for (px, py), w in zip(rule.points, rule.weights):
        x = v0 + px * d1 + py * d2
        dv = u_fn(x) - u_exact(x)
        dg = grad_fn(x) - grad_u_exact(x)
        l2_sq += area * w * float(np.sum(dv * dv))
        h1_sq += area * w * float(np.sum(dg * dg))
    return math.sqrt(l2_sq), math.sqrt(h1_sq)


def l2_h1_error(
    net: ResNet, problem: ManufacturedProblem, m_ref: int, degree: int = 5
) -> tuple[float, float]:
    """Network-vs-exact errors; the gradient side uses forward-mode input gradients."""
    return l2_h1_between(
        lambda x: network.forward_batch(net, x),
        lambda x: network.input_gradient_batch(net, x),
        problem.u_exact,
        problem.grad_u_exact,
        m_ref,
        degree,
    )


def run_single(
    config: TrainConfig, problem: ManufacturedProblem | None = None, m_ref: int | None = None
) -> tuple[ResNet, EnergyReport]:
    """Train one ladder on the manufactured problem with stage-end error metrics."""
    problem = problem or sine_problem()
    ref = m_ref if m_ref is not None else 2 * max(m for m, _ in config.ladder)
    return train_ladder(
        config,
        f=problem.f,
        g0=problem.g0,
        error_fn=lambda net: l2_h1_error(net, problem, ref),
        f_sup=problem.f_sup,
    )


# ---------------------------------------------------------------------------
# experiment configuration files

_TOP_KEYS = {"out_dir", "seeds", "m_ref", "grid"}
_CELL_KEYS = {
    "name",
    "method",
    "blocks",
    "width",
    "ladder",
    "fe_degree",
    "quad_degree",
    "alpha",
    "c_pen",
    "lr_low",
    "lr_high",
    "clr_halfcycle",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "precision",
    "init_scheme",
    "log_every",
}


class ConfigError(ValueError):
    pass


def load_experiment_config(path: str | Path) -> dict:
    path = Path(path)
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")
    raw.setdefault("seeds", [0])
    raw.setdefault("out_dir", "runs")
    raw.setdefault("grid", [])
    if not isinstance(raw["grid"], list):
        raise ConfigError(f"{path}: 'grid' must be a list")
    for i, cell in enumerate(raw["grid"]):
        if not isinstance(cell, dict):
            raise ConfigError(f"{path}: grid[{i}] must be an object")
        unknown = set(cell) - _CELL_KEYS
        if unknown:
            raise ConfigError(f"{path}: grid[{i}]: unknown keys {sorted(unknown)}")
        for key in ("method", "ladder"):
            if key not in cell:
                raise ConfigError(f"{path}: grid[{i}]: missing required key '{key}'")
    return raw


def cell_config(cell: dict, seed: int) -> TrainConfig:
    kwargs = {k: v for k, v in cell.items() if k != "name"}
    kwargs["ladder"] = [tuple(stage) for stage in kwargs["ladder"]]
    cfg = TrainConfig(seed=seed, **kwargs)
    cfg.validate()
    return cfg


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            check=False,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return f"unversioned-{platform.node()}"


def run_experiment(config_path: str | Path, out_dir: str | Path | None = None) -> Path:
    """Run every (cell, seed) of the grid; write per-cell CSV/JSON and a table.

    The comparison table mirrors the method/blocks/M sweep layout of the
    benchmark figures: one row per cell and seed with the final loss, errors
    and wall time, plus a seed-averaged summary per cell.
    """
    raw = load_experiment_config(config_path)
    out = Path(out_dir) if out_dir is not None else Path(raw["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    bid = build_id()
    table_rows: list[dict] = []

    for i, cell in enumerate(raw["grid"]):
        name = cell.get("name", f"cell{i:02d}")
        for seed in raw["seeds"]:
            cfg = cell_config(cell, seed)
            t0 = time.perf_counter()
            net, report = run_single(cfg, m_ref=raw.get("m_ref"))
            elapsed = time.perf_counter() - t0
            stem = out / f"{name}_seed{seed}"
            report.write_csv(f"{stem}.csv")
            report.write_json(f"{stem}.json", extra={"build_id": bid, "wall_seconds": elapsed})
            network.save_checkpoint(net, f"{stem}.ckpt")
            table_rows.append(
                {
                    "cell": name,
                    "method": cfg.method,
                    "blocks": cfg.blocks,
                    "width": cfg.width,
                    "max_m": max(m for m, _ in cfg.ladder),
                    "seed": seed,
                    "final_loss": report.stages[-1].final_loss,
                    "l2_error": report.final_l2,
                    "h1_error": report.final_h1,
                    "galerkin_gap": report.stages[-1].galerkin_gap,
                    "seconds": elapsed,
                }
            )

    with open(out / "comparison.json", "w") as fh:
        json.dump({"build_id": bid, "rows": table_rows}, fh, indent=2)
    _write_table_csv(out / "comparison.csv", table_rows)
    return out


def _write_table_csv(path: Path, rows: list[dict]) -> None:
    import csv

    columns = [
        "cell",
        "method",
        "blocks",
        "width",
        "max_m",
        "seed",
        "final_loss",
        "l2_error",
        "h1_error",
        "galerkin_gap",
        "seconds",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
