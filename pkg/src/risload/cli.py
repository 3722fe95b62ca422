"""Command-line front end.

Subcommands
-----------
generate
    Draw one scenario from a config (or the defaults) and save it.
run
    Run an experiment config, write the result CSV, and optionally a
    plot-data file.
oracle
    Exhaustive discrete optimum versus the iterative solver on a small
    instance.
plot-data
    Extract per-figure series from a result CSV.

Exit codes: 0 on success, 2 on configuration or usage errors, 3 when a
numerical failure occurred (any failed row under ``run --strict``, or an
oracle that did not finish).
"""

from __future__ import annotations

import argparse
import sys

from .baselines import BudgetExceeded, global_opt_discrete
from .coupling import DemandUnservable, NonConvergence
from .cvxsub import SolverError
from .harness import (
    ConfigError,
    ExperimentConfig,
    MissingSeries,
    emit_csv,
    emit_plot_data,
    parse_csv,
    read_config,
    run_experiment,
)
from .ica import ica
from .scenario import Domain, Layout, PathLossParams, generate_scenario, save_scenario

_NUMERICAL = (SolverError, NonConvergence, DemandUnservable, BudgetExceeded)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risload",
        description="Load-coupled multi-cell RIS experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="draw a scenario and save it")
    gen.add_argument("--config", help="experiment config supplying layout "
                                      "and propagation constants")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output scenario file")

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True, help="result CSV path")
    run.add_argument("--plot-out", help="also emit plot data here")
    run.add_argument("--figure", default="fig1",
                     choices=("fig1", "fig2", "fig3", "fig5"),
                     help="figure for --plot-out")
    run.add_argument("--strict", action="store_true",
                     help="exit 3 when any row failed")

    orc = sub.add_parser("oracle", help="exhaustive discrete optimum on a "
                                        "small instance")
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--eps", type=float, default=1e-4)
    orc.add_argument("--phases", type=int, default=4,
                     help="discrete phase count N")
    orc.add_argument("--cells", type=int, default=3)
    orc.add_argument("--ues", type=int, default=2)
    orc.add_argument("--ris", type=int, default=1)
    orc.add_argument("--elements", type=int, default=4)
    orc.add_argument("--demand", type=float, default=0.02)

    plot = sub.add_parser("plot-data", help="extract figure series from a "
                                            "result CSV")
    plot.add_argument("--results", required=True, help="result CSV path")
    plot.add_argument("--figure", required=True,
                      choices=("fig1", "fig2", "fig3", "fig5"))
    plot.add_argument("--out", required=True)
    return parser


def _cmd_generate(args) -> int:
    cfg = read_config(args.config) if args.config else ExperimentConfig()
    s = generate_scenario(cfg.layout, cfg.pathloss, cfg.demand, args.seed,
                          min_bs_ue_distance=cfg.min_bs_ue_distance)
    save_scenario(s, args.out)
    print(f"wrote scenario seed={args.seed} to {args.out}")
    return 0


def _cmd_run(args) -> int:
    cfg = read_config(args.config)
    table = run_experiment(cfg)
    emit_csv(table, args.out)
    failed = [r for r in table.rows if r.error]
    print(f"wrote {len(table.rows)} rows to {args.out}"
          + (f" ({len(failed)} failed)" if failed else ""))
    if args.plot_out:
        emit_plot_data(table, args.figure, args.plot_out)
        print(f"wrote {args.figure} series to {args.plot_out}")
    if failed and args.strict:
        for r in failed:
            print(f"failed: {r.scheme} value={r.value:g} seed={r.seed}: "
                  f"{r.error}", file=sys.stderr)
        return 3
    return 0


def _cmd_oracle(args) -> int:
    layout = Layout(num_cells=args.cells, ues_per_cell=args.ues,
                    ris_per_cell=args.ris, elements_per_ris=args.elements,
                    wraparound=False)
    s = generate_scenario(layout, PathLossParams(), args.demand, args.seed)
    opt = global_opt_discrete(s, args.phases, eps=args.eps)
    heur = ica(s, Domain.discrete(args.phases), eps=args.eps)
    gap = 100.0 * (heur.total_load - opt.total_load) / opt.total_load
    print(f"global optimum  {opt.total_load:.9g}")
    print(f"iterative       {heur.total_load:.9g}")
    print(f"gap             {gap:.3f}%")
    return 0


def _cmd_plot_data(args) -> int:
    table = parse_csv(args.results)
    emit_plot_data(table, args.figure, args.out)
    print(f"wrote {args.figure} series to {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"generate": _cmd_generate, "run": _cmd_run,
               "oracle": _cmd_oracle, "plot-data": _cmd_plot_data}
    try:
        return handler[args.command](args)
    except (ConfigError, MissingSeries, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
