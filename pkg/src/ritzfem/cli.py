"""Command line interface: mesh-info, galerkin, train, compare, check."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checks, network
from .fem import assemble_operators, build_space, fem_energy, galerkin_solve
from .harness import build_id, l2_h1_between, run_experiment, run_single, sine_problem
from .mesh import build_uniform_unit_square, dump_mesh, mesh_quality
from .training import TrainConfig


def _parse_ladder(text: str) -> list[tuple[int, int]]:
    """Parse '20:3000,40:2000' into [(20, 3000), (40, 2000)]."""
    stages = []
    for part in text.split(","):
        m, _, epochs = part.partition(":")
        stages.append((int(m), int(epochs)))
    return stages


def cmd_mesh_info(args: argparse.Namespace) -> int:
    mesh = build_uniform_unit_square(args.m)
    h_max, h_min, ratio = mesh_quality(mesh)
    n_edges = 3 * mesh.num_triangles // 2 + len(mesh.boundary_edges) // 2
    print(f"vertices        {mesh.num_vertices}")
    print(f"triangles       {mesh.num_triangles}")
    print(f"boundary edges  {len(mesh.boundary_edges)}")
    print(f"h_max           {h_max:.6g}")
    print(f"h_min           {h_min:.6g}")
    print(f"shape ratio     {ratio:.6g}")
    print(f"euler V-E+F     {mesh.num_vertices - n_edges + mesh.num_triangles}")
    if args.dump:
        Path(args.dump).write_text(dump_mesh(mesh))
        print(f"wrote {args.dump}")
    return 0


def cmd_galerkin(args: argparse.Namespace) -> int:
    problem = sine_problem()
    mesh = build_uniform_unit_square(args.m)
    space = build_space(mesh, args.degree)
    ops = assemble_operators(space, args.alpha, problem.g0)
    g = galerkin_solve(space, problem.f, args.alpha, problem.g0, ops=ops)
    energy, _ = fem_energy(ops, problem.f(space.dof_coords), g)
    from .checks import _galerkin_l2_fast

    l2 = _galerkin_l2_fast(problem, args.m, args.degree, args.alpha)
    print(f"dofs            {space.num_dofs}")
    print(f"minimum energy  {energy:.10f}")
    print(f"L2 error        {l2:.6e}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = TrainConfig(
        method=args.method,
        ladder=_parse_ladder(args.ladder),
        width=args.width,
        blocks=args.blocks,
        fe_degree=args.fe_degree,
        quad_degree=args.quad_degree,
        alpha=args.alpha,
        c_pen=args.c_pen,
        lr_low=args.lr_low,
        lr_high=args.lr_high,
        clr_halfcycle=args.clr_halfcycle,
        adam_beta1=args.adam_beta1,
        adam_beta2=args.adam_beta2,
        seed=args.seed,
        precision=args.precision,
        init_scheme=args.init_scheme,
        log_every=args.log_every,
    )
    cfg.validate()
    net, report = run_single(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{cfg.method}_seed{cfg.seed}"
    report.write_csv(f"{stem}.csv")
    report.write_json(f"{stem}.json", extra={"build_id": build_id()})
    network.save_checkpoint(net, f"{stem}.ckpt")
    last = report.stages[-1]
    print(f"final loss      {last.final_loss:.8f}")
    if last.galerkin_gap is not None:
        print(f"galerkin gap    {last.galerkin_gap:.3e}")
    print(f"L2 error        {report.final_l2:.6e}")
    print(f"H1 error        {report.final_h1:.6e}")
    print(f"artifacts in    {out}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    out = run_experiment(args.config, out_dir=args.out)
    with open(out / "comparison.json") as fh:
        table = json.load(fh)
    rows = table["rows"]
    if rows:
        print(f"{'cell':<18} {'method':<6} {'seed':>4} {'L2 error':>12} {'loss':>14} {'seconds':>9}")
        for row in rows:
            print(
                f"{row['cell']:<18} {row['method']:<6} {row['seed']:>4} "
                f"{row['l2_error']:>12.4e} {row['final_loss']:>14.6f} {row['seconds']:>9.1f}"
            )
    print(f"artifacts in    {out}")
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    results = checks.run_all_checks(include_desk_scale=not args.fast)
    width = max(len(r.name) for r in results)
    hard_fail = False
    for r in results:
        print(f"[{r.verdict:>15}] {r.name:<{width}}  {r.detail}")
        if not r.passed and not r.expected_failure:
            hard_fail = True
    return 1 if hard_fail else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ritzfem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh-info", help="counts and quality of the uniform mesh")
    p.add_argument("m", type=int)
    p.add_argument("--dump", help="write a plain-text mesh dump to this path")
    p.set_defaults(fn=cmd_mesh_info)

    p = sub.add_parser("galerkin", help="direct minimiser of the nodal energy")
    p.add_argument("--m", type=int, default=40)
    p.add_argument("--degree", type=int, default=1, choices=(1, 2))
    p.add_argument("--alpha", type=float, default=40.0)
    p.set_defaults(fn=cmd_galerkin)

    p = sub.add_parser("train", help="train one ladder on the benchmark problem")
    p.add_argument("--method", default="fem", choices=("mc", "quad", "fem"))
    p.add_argument("--ladder", default="20:3000,40:2000", help="comma list of M:epochs")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--fe-degree", type=int, default=1, choices=(1, 2))
    p.add_argument("--quad-degree", type=int, default=1)
    p.add_argument("--alpha", type=float, default=40.0)
    p.add_argument("--c-pen", type=float, default=40.0)
    p.add_argument("--lr-low", type=float, default=1e-5)
    p.add_argument("--lr-high", type=float, default=1e-3)
    p.add_argument("--clr-halfcycle", type=int, default=None)
    p.add_argument("--adam-beta1", type=float, default=0.99)
    p.add_argument("--adam-beta2", type=float, default=0.999)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", default="f64", choices=("f64", "f32"))
    p.add_argument("--init-scheme", default="ridge", choices=("glorot", "ridge"))
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--out", default="runs")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compare", help="run an experiment grid from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("check", help="run the release checks")
    p.add_argument("--fast", action="store_true", help="skip the desk-scale training runs")
    p.set_defaults(fn=cmd_check)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
