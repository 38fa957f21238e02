"""Release gate: every numbered behaviour check behind `ritzfem check`.

Each check returns a :class:`CheckResult`; the test suite asserts them and
the CLI prints one line per check.  Two checks are marked
``expected_failure``: they encode target rates that the penalty-only weak
boundary treatment provably cannot deliver (see the check docstrings); they
are kept as stated so the gap stays visible instead of being tuned away.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import network
from .fem import (
    assemble_operators,
    build_space,
    fem_energy,
    galerkin_solve,
    interpolate,
)
from .harness import ManufacturedProblem, l2_h1_between, run_single, sine_problem
from .mesh import build_uniform_unit_square
from .network import ResNet
from .quadrature import monomial_integral, triangle_rule
from .training import TrainConfig, mc_draw, quad_training_points, stability_bound

PI_SQ = math.pi**2


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    expected_failure: bool = False
    seconds: float = 0.0

    @property
    def verdict(self) -> str:
        if self.passed:
            return "PASS"
        return "FAIL (expected)" if self.expected_failure else "FAIL"


def _fit_rate(ms: list[int], errors: list[float]) -> float:
    """Least-squares slope of log(error) against log(1/M)."""
    x = np.log(1.0 / np.asarray(ms, dtype=float))
    y = np.log(np.asarray(errors))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def check_quadrature_exactness() -> CheckResult:
    """Every triangle rule integrates its monomials to 1e-12 absolute."""
    t0 = time.perf_counter()
    worst = 0.0
    for degree in range(1, 6):
        rule = triangle_rule(degree)
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                approx = 0.5 * float(
                    np.dot(rule.weights, rule.points[:, 0] ** a * rule.points[:, 1] ** b)
                )
                worst = max(worst, abs(approx - monomial_integral(a, b)))
    elapsed = time.perf_counter() - t0
    return CheckResult(
        name="quadrature exactness (deg 1..5)",
        passed=worst <= 1e-12 and elapsed < 1.0,
        detail=f"max monomial error {worst:.2e}, {elapsed:.2f}s",
        seconds=elapsed,
    )


def _directional_fd(loss_fn, net: ResNet, grad_flat: np.ndarray, rng, eps: float = 1e-6) -> float:
    base = np.concatenate([a.ravel() for a in net.arrays()])
    worst = 0.0
    for _ in range(10):
        d = rng.standard_normal(base.size)
        d /= np.linalg.norm(d)
        probe = net.copy()
        network.set_from_flat(probe, base + eps * d)
        f_plus = loss_fn(probe)
        network.set_from_flat(probe, base - eps * d)
        f_minus = loss_fn(probe)
        fd = (f_plus - f_minus) / (2.0 * eps)
        an = float(grad_flat @ d)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
    return worst


def check_autodiff() -> CheckResult:
    """All four derivative paths match central finite differences to 1e-5."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    worst = {"param_vjp": 0.0, "input_gradient": 0.0, "collocation": 0.0, "fem_loss": 0.0}

    for seed, (width, blocks) in enumerate([(8, 1), (16, 2)]):
        net = network.init(width, blocks, seed=seed, scheme="glorot")
        pts = rng.random((13, 2))
        cot = rng.standard_normal(13)

        grad = network.param_vjp(net, pts, cot)
        worst["param_vjp"] = max(
            worst["param_vjp"],
            _directional_fd(
                lambda n: float(cot @ network.forward_batch(n, pts)), net, grad.flat(), rng
            ),
        )

        g_an = network.input_gradient_batch(net, pts)
        eps = 1e-5
        for d in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
            fd = (network.forward_batch(net, pts + eps * d) - network.forward_batch(net, pts - eps * d)) / (2 * eps)
            rel = np.max(np.abs(fd - g_an @ d) / np.maximum(np.abs(g_an @ d), 1e-10))
            worst["input_gradient"] = max(worst["input_gradient"], float(rel))

        w = rng.random(13)
        fv = rng.standard_normal(13)
        yb = rng.random((7, 2))
        bw = rng.random(7)
        loss, grad = network.collocation_loss_grad(net, pts, w, fv, yb, bw)

        def colloc_loss(n: ResNet) -> float:
            u = network.forward_batch(n, pts)
            g = network.input_gradient_batch(n, pts)
            ub = network.forward_batch(n, yb)
            return float(
                np.sum(w * (0.5 * np.sum(g * g, axis=1) - fv * u)) + np.sum(bw * ub * ub)
            )

        worst["collocation"] = max(
            worst["collocation"], _directional_fd(colloc_loss, net, grad.flat(), rng)
        )

    problem = sine_problem()
    mesh = build_uniform_unit_square(10)
    space = build_space(mesh, 1)
    ops = assemble_operators(space, 40.0, problem.g0)
    f_at = problem.f(space.dof_coords)
    net = network.init(8, 1, seed=3, scheme="glorot")
    from .training import fem_loss

    loss, grad = fem_loss(net, ops, f_at)
    worst["fem_loss"] = _directional_fd(
        lambda n: fem_loss(n, ops, f_at)[0], net, grad.flat(), rng
    )

    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if v > 1e-5}
    return CheckResult(
        name="autodiff vs finite differences",
        passed=not bad and elapsed < 30.0,
        detail=", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s",
        seconds=elapsed,
    )


def check_galerkin_rate_q1() -> CheckResult:
    """P1 oracle converges at the classical second-order rate."""
    t0 = time.perf_counter()
    problem = sine_problem()
    ms = [20, 40, 80]
    errs = [_galerkin_l2_fast(problem, m, 1, 40.0) for m in ms]
    rate = _fit_rate(ms, errs)
    elapsed = time.perf_counter() - t0
    return CheckResult(
        name="galerkin L2 rate, q=1",
        passed=abs(rate - 2.0) <= 0.2 and elapsed < 120.0,
        detail=f"errors {['%.2e' % e for e in errs]}, rate {rate:.2f} (target 2.0+-0.2), {elapsed:.0f}s",
        seconds=elapsed,
    )


def check_galerkin_rate_q2() -> CheckResult:
    """P2 oracle at the classical third-order rate: unattainable as stated.

    The boundary term is a pure penalty (no consistency terms), so the
    solution inherits an O(h_e/alpha) boundary-flux error; with alpha fixed
    at 40 the L2 error is floor-limited at ~h/alpha and the observed rate
    settles near 1, not 3.  Raising alpha or imposing the boundary values
    strongly restores the classical rate (covered by the unit tests).
    """
    t0 = time.perf_counter()
    problem = sine_problem()
    ms = [10, 20, 40]
    errs = [_galerkin_l2_fast(problem, m, 2, 40.0) for m in ms]
    rate = _fit_rate(ms, errs)
    elapsed = time.perf_counter() - t0
    return CheckResult(
        name="galerkin L2 rate, q=2",
        passed=abs(rate - 3.0) <= 0.3 and elapsed < 120.0,
        detail=f"errors {['%.2e' % e for e in errs]}, rate {rate:.2f} (target 3.0+-0.3), {elapsed:.0f}s",
        expected_failure=True,
        seconds=elapsed,
    )


def _galerkin_l2_fast(problem: ManufacturedProblem, m: int, degree: int, alpha: float) -> float:
    """L2 error of the Galerkin solution via elementwise quadrature (vectorised)."""
    from .fem import reference_basis

    mesh = build_uniform_unit_square(m)
    space = build_space(mesh, degree)
    g = galerkin_solve(space, problem.f, alpha, problem.g0)
    rule = triangle_rule(5)
    vals, _ = reference_basis(degree, rule.points)
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    d1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    d2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    area = 1.0 / (2.0 * m * m)
    coeffs = g[space.element_dofs]  # (nt, nd)
    err_sq = 0.0
    for p, w in enumerate(rule.weights):
        x = v0 + rule.points[p, 0] * d1 + rule.points[p, 1] * d2
        uh = coeffs @ vals[p]
        diff = uh - problem.u_exact(x)
        err_sq += area * w * float(np.sum(diff * diff))
    return math.sqrt(err_sq)


def _energy_gap(problem: ManufacturedProblem, m: int) -> float:
    mesh = build_uniform_unit_square(m)
    space = build_space(mesh, 1)
    ops = assemble_operators(space, 40.0, problem.g0)
    nodal = interpolate(space, problem.u_exact)
    energy, _ = fem_energy(ops, problem.f(space.dof_coords), nodal)
    return energy + PI_SQ


def check_energy_identity() -> CheckResult:
    """Assembled energy of the interpolated exact solution approximates -pi^2."""
    t0 = time.perf_counter()
    problem = sine_problem()
    gap80 = _energy_gap(problem, 80)
    elapsed = time.perf_counter() - t0
    return CheckResult(
        name="energy identity at M=80",
        passed=abs(gap80) <= 0.05,
        detail=f"E(I u_e) + pi^2 = {gap80:.3e} (tolerance 0.05), {elapsed:.1f}s",
        seconds=elapsed,
    )


def check_energy_gap_halving() -> CheckResult:
    """Gap halving from M=40 to M=80: unattainable as stated.

    The energy gap of the interpolated exact solution is quadratic in the
    mesh size (each of its three terms is an O(h^2) interpolation error), so
    doubling M divides the gap by four, not two; the measured ratio sits at
    4.0 and the 2.0 +- 30% window cannot contain it.
    """
    t0 = time.perf_counter()
    problem = sine_problem()
    ratio = _energy_gap(problem, 40) / _energy_gap(problem, 80)
    elapsed = time.perf_counter() - t0
    return CheckResult(
        name="energy gap halving M=40 -> 80",
        passed=1.4 <= ratio <= 2.6,
        detail=f"gap ratio {ratio:.3f} (target 2.0+-30%; quadratic decay gives 4)",
        expected_failure=True,
        seconds=elapsed,
    )


# ---------------------------------------------------------------------------
# desk-scale comparison runs (shared by several checks)


@dataclass
class DeskScaleRuns:
    reports: dict[str, list]  # method -> list of EnergyReport
    l2_means: dict[str, float]
    wall_seconds: float
    per_epoch: dict[str, float] = field(default_factory=dict)  # finest-stage seconds/epoch


_DESK_CACHE: DeskScaleRuns | None = None

DESK_LADDER = [(20, 3000), (40, 2000)]
DESK_SEEDS = (0, 1, 2)


def desk_scale_runs(force: bool = False) -> DeskScaleRuns:
    """1-block width-32 ladder runs for all three methods over three seeds."""
    global _DESK_CACHE
    if _DESK_CACHE is not None and not force:
        return _DESK_CACHE
    t0 = time.perf_counter()
    reports: dict[str, list] = {}
    l2_means: dict[str, float] = {}
    per_epoch: dict[str, float] = {}
    for method in ("fem", "quad", "mc"):
        reports[method] = []
        for seed in DESK_SEEDS:
            cfg = TrainConfig(method=method, ladder=list(DESK_LADDER), width=32, blocks=1, seed=seed)
            _, report = run_single(cfg)
            reports[method].append(report)
        l2_means[method] = float(np.mean([r.final_l2 for r in reports[method]]))
        finest = [r.stages[-1] for r in reports[method]]
        per_epoch[method] = float(np.mean([s.loop_seconds / max(s.epochs, 1) for s in finest]))
    _DESK_CACHE = DeskScaleRuns(
        reports=reports,
        l2_means=l2_means,
        wall_seconds=time.perf_counter() - t0,
        per_epoch=per_epoch,
    )
    return _DESK_CACHE


def check_method_ordering(runs: DeskScaleRuns | None = None) -> CheckResult:
    """Desk-scale accuracy ordering: FEM <= 5e-3, quad <= 2e-2, MC >= FEM."""
    runs = runs or desk_scale_runs()
    fem, quad, mc = runs.l2_means["fem"], runs.l2_means["quad"], runs.l2_means["mc"]
    ok = fem <= 5e-3 and quad <= 2e-2 and mc >= fem and runs.wall_seconds < 1200.0
    return CheckResult(
        name="desk-scale method ordering",
        passed=ok,
        detail=(
            f"L2 means: fem {fem:.2e} (<=5e-3), quad {quad:.2e} (<=2e-2), "
            f"mc {mc:.2e} (>= fem), total {runs.wall_seconds:.0f}s (<1200)"
        ),
        seconds=runs.wall_seconds,
    )


def check_lower_bound(runs: DeskScaleRuns | None = None) -> CheckResult:
    """Every logged FEM loss sits above the Galerkin minimum (machine slack)."""
    runs = runs or desk_scale_runs()
    worst = math.inf
    for report in runs.reports["fem"]:
        galerkin = {i: s.galerkin_energy for i, s in enumerate(report.stages)}
        for row in report.rows:
            e_min = galerkin[row.stage]
            margin = row.loss - (e_min - 1e-9 * abs(e_min))
            worst = min(worst, margin)
    return CheckResult(
        name="loss >= galerkin minimum",
        passed=worst >= 0.0,
        detail=f"worst margin above bound {worst:.3e}",
    )


def check_cost_ordering(runs: DeskScaleRuns | None = None) -> CheckResult:
    """FEM per-epoch cost no larger than quadrature collocation at equal size."""
    runs = runs or desk_scale_runs()
    fem_t, quad_t = runs.per_epoch["fem"], runs.per_epoch["quad"]
    return CheckResult(
        name="per-epoch cost: fem <= quad",
        passed=fem_t <= quad_t,
        detail=f"finest-stage per-epoch: fem {fem_t * 1e3:.2f}ms, quad {quad_t * 1e3:.2f}ms",
    )


def check_stability_monitor(runs: DeskScaleRuns | None = None) -> CheckResult:
    """H1 norm of the interpolated network stays below the coercivity bound."""
    runs = runs or desk_scale_runs()
    worst = -math.inf
    count = 0
    for report in runs.reports["fem"]:
        for row in report.stability:
            worst = max(worst, row.h1_interpolant - row.bound)
            count += 1
    return CheckResult(
        name="H1 stability monitor",
        passed=count > 0 and worst <= 0.0,
        detail=f"{count} logged epochs, worst (norm - bound) = {worst:.3e}",
    )


def check_mc_unbiasedness() -> CheckResult:
    """Mean of 200 Monte-Carlo interior losses matches the quadrature energy."""
    t0 = time.perf_counter()
    problem = sine_problem()
    net = network.init(16, 1, seed=5, scheme="glorot")
    mesh = build_uniform_unit_square(40)
    points = quad_training_points(mesh, triangle_rule(5), problem.f, 1.0)
    ref_loss, _ = network.collocation_loss_grad(
        net, points.interior, points.weights, problem.f(points.interior)
    )
    rng = np.random.default_rng(123)
    m = 20
    draws = np.empty(200)
    for i in range(200):
        interior, _ = mc_draw(rng, m)
        u = network.forward_batch(net, interior)
        g = network.input_gradient_batch(net, interior)
        vals = 0.5 * np.sum(g * g, axis=1) - problem.f(interior) * u
        draws[i] = float(np.mean(vals))
    mean = float(np.mean(draws))
    stderr = float(np.std(draws, ddof=1) / math.sqrt(len(draws)))
    elapsed = time.perf_counter() - t0
    return CheckResult(
        name="MC estimator unbiased",
        passed=abs(mean - ref_loss) <= 3.0 * stderr and elapsed < 60.0,
        detail=(
            f"mean {mean:.6f} vs quadrature {ref_loss:.6f}, "
            f"|diff| {abs(mean - ref_loss):.2e} <= 3*stderr {3 * stderr:.2e}, {elapsed:.1f}s"
        ),
        seconds=elapsed,
    )


FAST_CHECKS = [
    check_quadrature_exactness,
    check_autodiff,
    check_galerkin_rate_q1,
    check_galerkin_rate_q2,
    check_energy_identity,
    check_energy_gap_halving,
    check_mc_unbiasedness,
]


def run_all_checks(include_desk_scale: bool = True) -> list[CheckResult]:
    results = [fn() for fn in FAST_CHECKS]
    if include_desk_scale:
        runs = desk_scale_runs()
        results.append(check_method_ordering(runs))
        results.append(check_lower_bound(runs))
        results.append(check_cost_ordering(runs))
        results.append(check_stability_monitor(runs))
    return results
