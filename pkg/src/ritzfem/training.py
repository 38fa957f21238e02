"""Training loops: Monte-Carlo, quadrature and finite-element backends.

All three minimise a discretisation of the Dirichlet energy over the same
residual network with Adam under a triangular cyclic learning rate.  The
mesh ladder trains on the coarsest level first and warm-starts every finer
level from the previous parameters.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import network
from .fem import AssembledOperators, assemble_mass, assemble_operators, build_space, fem_energy, galerkin_solve
from .mesh import Mesh, build_uniform_unit_square
from .network import ParamGradient, ResNet
from .quadrature import QuadRule, edge_rule, triangle_rule


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or gradient is encountered."""


@dataclass
class TrainConfig:
    method: str = "fem"  # "mc" | "quad" | "fem"
    ladder: list[tuple[int, int]] = field(default_factory=lambda: [(20, 3000), (40, 2000)])
    width: int = 32
    blocks: int = 1
    fe_degree: int = 1
    quad_degree: int = 1
    alpha: float = 40.0
    c_pen: float = 40.0
    lr_low: float = 1e-5
    lr_high: float = 1e-3
    clr_halfcycle: int | None = None  # None: one triangular cycle per stage
    adam_beta1: float = 0.99
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    precision: str = "f64"
    init_scheme: str = "ridge"
    log_every: int = 100

    def validate(self) -> None:
        if self.method not in ("mc", "quad", "fem"):
            raise ValueError(f"unknown training method {self.method!r}")
        if not self.ladder:
            raise ValueError("ladder must contain at least one stage")
        ms = [m for m, _ in self.ladder]
        if any(m < 1 for m in ms) or any(b < a for a, b in zip(ms, ms[1:])):
            raise ValueError("ladder must be nondecreasing in M with M >= 1")
        if any(e < 0 for _, e in self.ladder):
            raise ValueError("stage epoch counts must be nonnegative")
        if not self.lr_low < self.lr_high:
            raise ValueError("lr_low must be smaller than lr_high")
        if self.fe_degree not in (1, 2):
            raise ValueError("fe_degree must be 1 or 2")
        if not 1 <= self.quad_degree <= 5:
            raise ValueError("quad_degree must be in 1..5")
        if self.precision not in ("f64", "f32"):
            raise ValueError("precision must be 'f64' or 'f32'")

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


@dataclass
class LogRow:
    epoch: int
    loss: float
    lr: float
    seconds: float
    stage: int


@dataclass
class StageSummary:
    m: int
    epochs: int
    final_loss: float
    l2_error: float
    h1_error: float
    galerkin_energy: float | None
    galerkin_gap: float | None
    seconds: float
    loop_seconds: float


@dataclass
class StabilityRow:
    epoch: int
    h1_interpolant: float
    bound: float


@dataclass
class EnergyReport:
    config: TrainConfig
    rows: list[LogRow]
    stages: list[StageSummary]
    stability: list[StabilityRow]

    @property
    def final_l2(self) -> float:
        return self.stages[-1].l2_error

    @property
    def final_h1(self) -> float:
        return self.stages[-1].h1_error

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "lr", "seconds"])
            for row in self.rows:
                writer.writerow([row.epoch, f"{row.loss:.17g}", f"{row.lr:.17g}", f"{row.seconds:.6f}"])

    def summary_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["ladder"] = [list(stage) for stage in self.config.ladder]
        return {
            "config": cfg,
            "final_l2_error": self.final_l2,
            "final_h1_error": self.final_h1,
            "stages": [asdict(s) for s in self.stages],
            "stability_violations": sum(1 for s in self.stability if s.h1_interpolant > s.bound),
        }

    def write_json(self, path: str, extra: dict | None = None) -> None:
        payload = self.summary_dict()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def clr_learning_rate(step: int, lr_low: float, lr_high: float, halfcycle: int) -> float:
    """Triangular schedule: lr_low at step 0, lr_high at the half-cycle."""
    x = (step % (2 * halfcycle)) / halfcycle
    tri = x if x <= 1.0 else 2.0 - x
    return lr_low + (lr_high - lr_low) * tri


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: ResNet) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in net.arrays()],
            v=[np.zeros_like(a) for a in net.arrays()],
        )


def adam_clr_step(
    net: ResNet,
    grad: ParamGradient,
    state: AdamState,
    step_index: int,
    config: TrainConfig,
    halfcycle: int,
) -> float:
    """One Adam update with the triangular learning rate; returns the lr used."""
    flat_ok = all(np.all(np.isfinite(g)) for g in grad.arrays)
    if not flat_ok:
        raise TrainingDiverged(f"non-finite gradient at optimiser step {step_index}")
    lr = clr_learning_rate(step_index, config.lr_low, config.lr_high, halfcycle)
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    t = step_index + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(net.arrays(), grad.arrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return lr


# ---------------------------------------------------------------------------
# per-method losses


def sample_boundary(rng: np.random.Generator, n: int) -> np.ndarray:
    """n points uniform on the perimeter of the unit square."""
    s = rng.random(n) * 4.0
    side = np.minimum(s.astype(np.int64), 3)
    r = s - side
    points = np.empty((n, 2))
    for k, (px, py) in enumerate(((r, 0.0), (1.0, r), (1.0 - r, 1.0), (0.0, 1.0 - r))):
        mask = side == k
        points[mask, 0] = px[mask] if isinstance(px, np.ndarray) else px
        points[mask, 1] = py[mask] if isinstance(py, np.ndarray) else py
    return points


def mc_draw(rng: np.random.Generator, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Fresh i.i.d. draw: 2M^2 interior points and 4M boundary points."""
    interior = rng.random((2 * m * m, 2))
    boundary = sample_boundary(rng, 4 * m)
    return interior, boundary


def mc_loss(
    net: ResNet,
    rng: np.random.Generator,
    m: int,
    f: Callable[[np.ndarray], np.ndarray],
    c_pen: float,
) -> tuple[float, ParamGradient]:
    """Monte-Carlo energy estimate over |Omega| = 1 plus the boundary penalty."""
    interior, boundary = mc_draw(rng, m)
    n_in = interior.shape[0]
    n_b = boundary.shape[0]
    weights = np.full(n_in, 1.0 / n_in)
    bweights = np.full(n_b, c_pen / n_b)
    return network.collocation_loss_grad(
        net, interior, weights, np.asarray(f(interior)), boundary, bweights
    )


@dataclass
class QuadPoints:
    """Fixed collocation data for deterministic quadrature training."""

    interior: np.ndarray
    weights: np.ndarray
    f_values: np.ndarray
    boundary: np.ndarray
    boundary_weights: np.ndarray


def quad_training_points(
    mesh: Mesh, rule: QuadRule, f: Callable[[np.ndarray], np.ndarray], alpha: float
) -> QuadPoints:
    """Mapped rule points with weights |K| w_i; edge points carry alpha * w_i.

    The alpha/h_e prefactor of the boundary sum cancels the edge measure, so
    each edge-rule point contributes alpha * w_i * u(x)^2 regardless of h_e.
    """
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    d1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    d2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    areas = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    xs = []
    ws = []
    for (px, py), w in zip(rule.points, rule.weights):
        xs.append(v0 + px * d1 + py * d2)
        ws.append(w * areas)
    interior = np.concatenate(xs, axis=0)
    weights = np.concatenate(ws)

    erule = edge_rule(rule.degree)
    pa = mesh.vertices[mesh.boundary_edges[:, 0]]
    pb = mesh.vertices[mesh.boundary_edges[:, 1]]
    bxs = []
    bws = []
    for s, w in zip(erule.points, erule.weights):
        bxs.append(pa + s * (pb - pa))
        bws.append(np.full(pa.shape[0], alpha * w))
    boundary = np.concatenate(bxs, axis=0)
    bweights = np.concatenate(bws)
    return QuadPoints(interior, weights, np.empty(0), boundary, bweights)


def quad_loss(
    net: ResNet,
    mesh: Mesh,
    rule: QuadRule,
    f: Callable[[np.ndarray], np.ndarray],
    alpha: float,
    points: QuadPoints | None = None,
) -> tuple[float, ParamGradient]:
    """Deterministic quadrature energy plus the edge-rule boundary penalty."""
    if points is None:
        points = quad_training_points(mesh, rule, f, alpha)
    f_values = points.f_values if points.f_values.size else np.asarray(f(points.interior))
    return network.collocation_loss_grad(
        net, points.interior, points.weights, f_values, points.boundary, points.boundary_weights
    )


def fem_loss(
    net: ResNet,
    ops: AssembledOperators,
    f_at_dofs: np.ndarray,
) -> tuple[float, ParamGradient]:
    """Finite-element-interpolated energy; no spatial network derivative anywhere.

    One forward pass supplies the nodal values, the quadratic form supplies
    the energy and its nodal gradient, and one reverse pass pulls that
    gradient back to the parameters.
    """
    nodal = network.forward_batch(net, ops.space.dof_coords)
    energy, d_energy = fem_energy(ops, f_at_dofs, nodal.astype(np.float64))
    return energy, network.param_vjp(net, ops.space.dof_coords, d_energy)


def stability_bound(loss_bound: float, f_sup: float) -> float:
    """H1 bound sqrt(2) (F + sqrt(F^2 + 2C)) from the energy coercivity argument.

    Uses |Omega| = 1 and Poincare constant 1: an energy value C caps the
    Dirichlet seminorm via 1/2 |Ig|_1^2 <= F |Ig|_0 + C.
    """
    disc = f_sup * f_sup + 2.0 * max(loss_bound, -0.5 * f_sup * f_sup)
    x_max = f_sup + math.sqrt(max(disc, 0.0))
    return math.sqrt(2.0) * x_max


# ---------------------------------------------------------------------------
# ladder


def train_ladder(
    config: TrainConfig,
    f: Callable[[np.ndarray], np.ndarray],
    g0: Callable[[np.ndarray], np.ndarray] | None = None,
    error_fn: Callable[[ResNet], tuple[float, float]] | None = None,
    f_sup: float | None = None,
) -> tuple[ResNet, EnergyReport]:
    """Warm-start mesh ladder; returns the trained network and its report.

    Stage one trains from a fresh initialisation on the smallest level; every
    later stage reuses the parameters.  The optimiser state is rebuilt per
    stage (each stage is a new objective).  FEM stages record the Galerkin
    minimum as the lower-bound reference and monitor the H1 stability bound
    at every logged epoch.
    """
    config.validate()
    net = network.init(
        config.width, config.blocks, config.seed, scheme=config.init_scheme, dtype=config.dtype
    )
    rng = np.random.default_rng(config.seed)
    rows: list[LogRow] = []
    stages: list[StageSummary] = []
    stability: list[StabilityRow] = []
    global_epoch = 0
    t_start = time.perf_counter()

    for stage_idx, (m, epochs) in enumerate(config.ladder):
        stage_t0 = time.perf_counter()
        mesh = build_uniform_unit_square(m)
        galerkin_energy: float | None = None
        monitor: Callable[[float, int], None] | None = None

        if config.method == "fem":
            space = build_space(mesh, config.fe_degree)
            ops = assemble_operators(space, config.alpha, g0)
            f_at_dofs = np.asarray(f(space.dof_coords), dtype=np.float64)
            g_star = galerkin_solve(space, f, config.alpha, g0, ops=ops)
            galerkin_energy, _ = fem_energy(ops, f_at_dofs, g_star)
            gram_k = ops.stiffness
            gram_m = assemble_mass(space)
            sup_f = f_sup if f_sup is not None else float(np.max(np.abs(f_at_dofs)))

            def loss_grad(current: ResNet) -> tuple[float, ParamGradient]:
                return fem_loss(current, ops, f_at_dofs)

            def monitor(loss: float, epoch: int, _net=None) -> None:
                nodal = network.forward_batch(net, space.dof_coords).astype(np.float64)
                h1 = math.sqrt(float(nodal @ (gram_k @ nodal)) + float(nodal @ (gram_m @ nodal)))
                stability.append(StabilityRow(epoch=epoch, h1_interpolant=h1, bound=stability_bound(loss, sup_f)))

        elif config.method == "quad":
            rule = triangle_rule(config.quad_degree)
            points = quad_training_points(mesh, rule, f, config.alpha)
            points.f_values = np.asarray(f(points.interior))

            def loss_grad(current: ResNet) -> tuple[float, ParamGradient]:
                return network.collocation_loss_grad(
                    current,
                    points.interior,
                    points.weights,
                    points.f_values,
                    points.boundary,
                    points.boundary_weights,
                )

        else:  # mc

            def loss_grad(current: ResNet) -> tuple[float, ParamGradient]:
                return mc_loss(current, rng, m, f, config.c_pen)

        halfcycle = config.clr_halfcycle if config.clr_halfcycle else max(1, epochs // 2)
        state = AdamState.zeros_like(net)
        loss = None

        def log(epoch: int, loss_value: float, lr: float) -> None:
            if rows and rows[-1].epoch == epoch:
                return
            rows.append(
                LogRow(
                    epoch=epoch,
                    loss=loss_value,
                    lr=lr,
                    seconds=time.perf_counter() - t_start,
                    stage=stage_idx,
                )
            )
            if monitor is not None:
                monitor(loss_value, epoch)

        if epochs == 0:
            loss, _ = loss_grad(net)
            log(global_epoch, loss, config.lr_low)
        loop_t0 = time.perf_counter()
        for local_epoch in range(epochs):
            loss, grad = loss_grad(net)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {global_epoch}")
            lr = adam_clr_step(net, grad, state, local_epoch, config, halfcycle)
            if local_epoch % config.log_every == 0 or local_epoch == epochs - 1:
                log(global_epoch, loss, lr)
            global_epoch += 1
        loop_seconds = time.perf_counter() - loop_t0

        l2_err = h1_err = math.nan
        if error_fn is not None:
            l2_err, h1_err = error_fn(net)
        final_loss = loss if loss is not None else math.nan
        stages.append(
            StageSummary(
                m=m,
                epochs=epochs,
                final_loss=final_loss,
                l2_error=l2_err,
                h1_error=h1_err,
                galerkin_energy=galerkin_energy,
                galerkin_gap=None if galerkin_energy is None else final_loss - galerkin_energy,
                seconds=time.perf_counter() - stage_t0,
                loop_seconds=loop_seconds,
            )
        )

    return net, EnergyReport(config=config, rows=rows, stages=stages, stability=stability)
