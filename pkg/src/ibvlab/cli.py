"""Command line front end.

Subcommands: run, sweep, jumpcost, audit, plot. Exit codes: 0 on success,
2 when a recorded check fails (ledger slack, admissibility, reconciliation,
audit), 3 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .harness import (
    AuditReport,
    ConfigError,
    SweepPlan,
    audit_artifacts,
    parse_config_file,
    run_single,
    run_sweep,
    write_run_artifacts,
)
from .stepper import TrajectoryError
from .svgplot import line_plot


def _cmd_run(args) -> int:
    config = parse_config_file(args.config)
    if args.out:
        config = config.with_overrides({"io.out_dir": args.out})
    result = run_single(config)
    out_dir = config.get("io.out_dir")
    write_run_artifacts(result, out_dir)
    for line in result.summary_lines():
        print(line)
    print(f"artifacts written to {out_dir}")
    failed = (
        (result.ledger is not None and not result.ledger.passed)
        or (result.node_ineq is not None and not result.node_ineq.passed)
        or any(not v.passed for v in result.verdicts)
    )
    return 2 if failed else 0


def _cmd_sweep(args) -> int:
    config = parse_config_file(args.config)
    if args.out:
        config = config.with_overrides({"io.out_dir": args.out})
    plan = SweepPlan.from_config(config)
    result = run_sweep(plan, progress=lambda i, e: print(
        f"[{i + 1}/{len(plan.pairs)}] eps={e.eps:g} tau={e.tau:g} steps={e.n_steps} wall={e.wall_time:.2f}s"))
    out = Path(config.get("io.out_dir"))
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "sweep.csv", "w", newline="") as fh:
        wtr = csv.writer(fh)
        from .diagnostics import BoundsReport
        wtr.writerow(["eps", "tau", "n_steps", "min_slack", *BoundsReport.LABELS, "wall_time"])
        for e in result.entries:
            wtr.writerow([
                repr(e.eps), repr(e.tau), e.n_steps, repr(e.min_slack),
                *[repr(v) for v in e.bounds.as_tuple()], repr(e.wall_time),
            ])
    with open(out / "distances.csv", "w", newline="") as fh:
        wtr = csv.writer(fh)
        wtr.writerow(["eps", "tau", "eps_next", "tau_next", "supW", "L1Z"])
        for d in result.distances:
            wtr.writerow([repr(d["eps"]), repr(d["tau"]), repr(d["eps_next"]),
                          repr(d["tau_next"]), repr(d["supW"]), repr(d["L1Z"])])
    from .diagnostics import write_mismatch_csv
    write_mismatch_csv([e.mismatch for e in result.entries], out / "mismatch.csv")

    for d in result.distances:
        print(f"distance ({d['eps']:g},{d['tau']:g})->({d['eps_next']:g},{d['tau_next']:g}): "
              f"supW={d['supW']:.4g} L1Z={d['L1Z']:.4g}")
    print(f"contraction: {'PASS' if result.contraction_ok else 'FAIL'}")
    print(f"artifacts written to {out}")
    bad_slack = any(
        np.isfinite(e.min_slack) and e.min_slack < -1e-9 * max(e.ledger_scale, 1.0)
        for e in result.entries
    )
    return 2 if bad_slack else 0


def _cmd_jumpcost(args) -> int:
    config = parse_config_file(args.config)
    if args.out:
        config = config.with_overrides({"io.out_dir": args.out})
    result = run_single(config)
    if not result.jumps:
        print("no jumps detected")
        return 0
    order = range(len(result.jumps))
    if args.t is not None:
        order = sorted(order, key=lambda i: abs(result.jumps[i].t_star - args.t))[:1]
    code = 0
    for i in order:
        jump, cost, verdict, adm = (
            result.jumps[i], result.costs[i], result.verdicts[i], result.admissibility[i],
        )
        print(f"jump at t*={jump.t_star:.6g} window={jump.window[0]:.6g}:{jump.window[1]:.6g}")
        print(f"  drop={verdict.drop:.8g} cost={cost.value:.8g} rel_err={verdict.rel_err:.3g}")
        print(f"  admissibility: {'PASS' if adm.passed else 'FAIL'}"
              f" (adm1 {adm.adm1_margin:.3g}, adm3 endpoint {adm.adm3_endpoint_U:.3g},"
              f" adm4 {adm.adm4_margin:.3g})")
        print(f"  verdict: {'PASS' if verdict.passed else 'FAIL'}")
        if not verdict.passed:
            code = 2
    out_dir = config.get("io.out_dir")
    write_run_artifacts(result, out_dir)
    print(f"artifacts written to {out_dir}")
    return code


def _cmd_audit(args) -> int:
    report: AuditReport = audit_artifacts(args.run_dir)
    for msg in report.messages:
        print(msg)
    print(f"audit: {'PASS' if report.passed else 'FAIL'}")
    return 0 if report.passed else 2


def _read_csv_columns(path: Path) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {name: [row[i] for row in data] for i, name in enumerate(header)}
    return header, cols


def _cmd_plot(args) -> int:
    run_dir = Path(args.run_dir)
    samples = run_dir / "samples.csv"
    if not samples.exists():
        print(f"no samples.csv under {run_dir}", file=sys.stderr)
        return 2
    header, cols = _read_csv_columns(samples)
    t = [float(x) for x in cols["t"]]
    comp_names = [h for h in header if h != "t"]
    shown = comp_names[: min(len(comp_names), 8)]
    series = [(name, t, [float(x) for x in cols[name]]) for name in shown]
    state_svg = run_dir / "state.svg"
    line_plot(series, state_svg, title="state samples", xlabel="t", ylabel="u")
    written = [state_svg]

    ledger = run_dir / "ledger.csv"
    if ledger.exists():
        _, lcols = _read_csv_columns(ledger)
        ns = [float(x) for x in lcols["n"]]
        series = [
            ("lhs", ns, [float(x) for x in lcols["lhs"]]),
            ("rhs", ns, [float(x) for x in lcols["rhs"]]),
        ]
        ledger_svg = run_dir / "ledger.svg"
        line_plot(series, ledger_svg, title="energy ledger by window end", xlabel="n", ylabel="value")
        written.append(ledger_svg)

    for tpath in sorted(run_dir.glob("transition_*.csv")):
        theader, tcols = _read_csv_columns(tpath)
        s = [float(x) for x in tcols["s"]]
        names = [h for h in theader if h != "s"][:8]
        series = [(name, s, [float(x) for x in tcols[name]]) for name in names]
        tsvg = tpath.with_suffix(".svg")
        line_plot(series, tsvg, title=tpath.stem, xlabel="s", ylabel="u")
        written.append(tsvg)

    for p in written:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ibv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configuration and write artifacts")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="override io.out_dir")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the (eps, tau) pairs in the config")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--out", help="override io.out_dir")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_jump = sub.add_parser("jumpcost", help="measure transition costs for detected jumps")
    p_jump.add_argument("config")
    p_jump.add_argument("--t", type=float, default=None, help="report only the jump nearest this time")
    p_jump.add_argument("--out", help="override io.out_dir")
    p_jump.set_defaults(func=_cmd_jumpcost)

    p_audit = sub.add_parser("audit", help="re-check the artifacts of a run directory")
    p_audit.add_argument("run_dir")
    p_audit.set_defaults(func=_cmd_audit)

    p_plot = sub.add_parser("plot", help="render SVG plots from a run directory")
    p_plot.add_argument("run_dir")
    p_plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except TrajectoryError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
