"""Command line entry point: ``generate``, ``solve``, ``report`` and ``batch``."""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from dataclasses import asdict
from pathlib import Path

from .. import admm
from ..bnb import BnBParams, BnBResult, run
from ..switchset import MaxSwitchings, MinDwell
from . import report
from .config import SolverSettings, load_config
from .instance import Instance, generate

log = logging.getLogger("switchbnb")


def make_constraint(kind: str, value, horizon: float = 1.0):
    if kind == "sigma":
        return MaxSwitchings(int(value))
    if kind == "dwell":
        return MinDwell(float(value), horizon)
    raise ValueError(f"unknown constraint kind {kind!r}")


def bnb_params(st: SolverSettings) -> BnBParams:
    return BnBParams(
        tol=st.tol,
        red=st.red,
        gamma=st.gamma,
        root_cells=st.grid_init,
        max_refine=st.max_refine,
        max_nodes=st.max_nodes,
        max_cuts_per_node=st.max_cuts_per_node,
        threads=st.threads,
        admm=admm.AdmmParams(alpha=st.alpha, beta=st.beta),
    )


def solve_instance(inst: Instance, kind: str, value, st: SolverSettings) -> tuple:
    """Run branch-and-bound on ``inst`` and return ``(result row, BnBResult)``."""
    problem = inst.problem(st.alpha)
    res = run(problem, make_constraint(kind, value, inst.horizon), bnb_params(st))
    row = {"theta": inst.theta, "constraint": f"{kind}={value}", "seed": inst.seed, "status": "ok"}
    row.update(res.stats.row())
    row["Gap"] = res.gap
    row["Certified"] = res.certified
    row["error"] = ""
    return row, res


def write_outputs(out: Path, tag: str, res: BnBResult) -> None:
    if res.incumbent is not None:
        report.write_control(out / f"control{tag}.txt", res.incumbent.control)
    report.write_events(out / f"events{tag}.jsonl", res.events)


def _add_settings(p: argparse.ArgumentParser) -> None:
    d = SolverSettings()
    p.add_argument("--tol", type=float, default=d.tol, help="relative optimality tolerance")
    p.add_argument("--red", type=float, default=d.red, help="minimum relative bound improvement per cut round")
    p.add_argument("--alpha", type=float, default=d.alpha, help="Tikhonov weight")
    p.add_argument("--beta", type=float, default=d.beta, help="ADMM box penalty")
    p.add_argument("--gamma", type=float, default=d.gamma, help="refinement bulk fraction in (0, 1)")
    p.add_argument("--grid-init", type=int, default=d.grid_init, help="cells of the root time grid")
    p.add_argument("--max-refine", type=int, default=d.max_refine, help="maximum bisections of a root cell")
    p.add_argument("--threads", type=int, default=d.threads)
    p.add_argument("--max-nodes", type=int, default=d.max_nodes)


def _settings(args) -> SolverSettings:
    return SolverSettings(
        tol=args.tol, red=args.red, alpha=args.alpha, beta=args.beta, gamma=args.gamma,
        grid_init=args.grid_init, max_refine=args.max_refine, threads=args.threads,
        max_nodes=args.max_nodes,
    )


def cmd_generate(args) -> int:
    inst = generate(args.theta, args.seed, allow_zero=args.theta == 0)
    inst.save(args.out)
    print(f"wrote {args.out}: theta={inst.theta} seed={inst.seed} jumps={list(inst.jump_nodes)}")
    return 0


def cmd_solve(args) -> int:
    inst = Instance.load(args.instance)
    kind, value = ("sigma", args.sigma) if args.sigma is not None else ("dwell", args.dwell)
    row, res = solve_instance(inst, kind, value, _settings(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_rows(out / "results.csv", [row])
    write_outputs(out, "", res)
    print(report.markdown([row], report.RESULT_COLUMNS), end="")
    return 0


def cmd_report(args) -> int:
    path = Path(args.input)
    if path.is_dir():
        path = path / "results.csv"
    print(report.render(report.read_rows(path), args.format), end="")
    return 0


def cmd_batch(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    instances = {}
    for theta, kind, value, seed in cfg.runs():
        tag = f"_t{theta}_{kind}{value}_s{seed}"
        try:
            key = (theta, seed)
            if key not in instances:
                instances[key] = generate(theta, seed, allow_zero=theta == 0)
                instances[key].save(out / f"instance_t{theta}_s{seed}.json")
            row, res = solve_instance(instances[key], kind, value, cfg.settings)
            write_outputs(out, tag, res)
        except Exception as exc:  # keep the batch going
            log.error("run %s failed: %s", tag, exc)
            row = {"theta": theta, "constraint": f"{kind}={value}", "seed": seed, "status": "error",
                   "error": f"{type(exc).__name__}: {exc}"}
            (out / f"error{tag}.txt").write_text(traceback.format_exc())
        rows.append(row)
        report.write_rows(out / "results.csv", rows)
    report.write_rows(out / "results.csv", rows)
    (out / "summary.md").write_text(report.render(rows, "summary"))
    print(f"{len(rows)} runs written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="switchbnb", description="Branch-and-bound for switching control of the heat equation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="create a random instance file")
    g.add_argument("--theta", type=int, required=True, help="number of jumps of the generating control")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("--instance", required=True)
    c = s.add_mutually_exclusive_group(required=True)
    c.add_argument("--sigma", type=int, help="maximum number of switchings")
    c.add_argument("--dwell", type=float, help="minimum dwell time")
    _add_settings(s)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("report", help="render a results table")
    r.add_argument("--in", dest="input", required=True, help="results.csv or an output directory")
    r.add_argument("--format", choices=["csv", "markdown", "summary"], default="markdown")
    r.set_defaults(func=cmd_report)

    b = sub.add_parser("batch", help="run a configured matrix of instances")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_batch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
