"""Command-line interface: ``doe``, ``run``, ``report`` and ``propagate``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import campaign as cp
from . import plotting, uqprop
from .errors import FieldInfillError
from .sampling import unit_sequence

logger = logging.getLogger("fieldinfill")


def _config(args) -> cp.CampaignConfig:
    cfg = cp.load_config(args.config) if args.config else cp.CampaignConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_doe(args) -> int:
    cfg = _config(args)
    problem = cfg.make_problem()
    space = cfg.input_space(problem)
    pts = space.transform(unit_sequence(cfg.doe_kind, space.dimension, cfg.doe_size, skip=1))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "doe.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", *space.names])
        for i, x in enumerate(pts):
            w.writerow([i, *map(repr, x.tolist())])
    logger.info("wrote %s", path)
    return 0


def _write_tables(state: cp.CampaignState, out: Path) -> dict:
    cp.write_metrics_csv(state, out / "metrics.csv")
    cp.write_trace_csv(state, out / "trace.csv")
    summ = cp.summary(state)
    (out / "summary.json").write_text(json.dumps(summ, indent=2, sort_keys=True))
    return summ


def cmd_run(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state_path = out / "state.json"
    state = None
    if args.resume:
        state = cp.load_state(state_path)
        cfg = state.config
        logger.info("resuming after %d infills", state.completed_infills)
    else:
        cfg = _config(args)
    fields_dir = out / "fields"
    fields_dir.mkdir(exist_ok=True)

    def on_iteration(st, surr, campaign):
        k = st.records[-1].iteration
        if surr.field_model is not None and campaign.field_is_current(k):
            cp.write_field_errors(fields_dir / f"iter_{k:03d}.csv", st, surr, campaign)
        cp.save_state(st, state_path)
        rec = st.records[-1]
        q = cfg.criterion.scalar_qoi
        logger.info("iteration %d  n=%d  r2(%s)=%.6f  <sigma_gp>=%.3e", k, rec.n_train, q, rec.metrics[q]["r2"], rec.mean_sigma_gp[q])

    state = cp.run_campaign(cfg, state=state, until=args.until, on_iteration=on_iteration)
    cp.save_state(state, state_path)
    _write_tables(state, out)
    return 0


def cmd_report(args) -> int:
    state_path = Path(args.state) if args.state else Path(args.out_dir) / "state.json"
    state = cp.load_state(state_path)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summ = _write_tables(state, out)
    figs = out / "figures"
    cfg = state.config
    plotting.convergence(state.records, figs / "convergence.png", cfg.target_r2, cfg.target_nrmse)
    plotting.epistemic_trace(state.records, figs / "epistemic.png", cfg.criterion.scalar_qoi)
    plotting.criterion_breakdown(state.records, figs / "criterion.png")
    campaign, surr = cp.restore_surrogates(state)
    if surr.field_model is not None and campaign.field_is_current(state.records[-1].iteration):
        plotting.field_error_map(campaign.problem.mesh.nodes, cp.field_errors(state, surr, campaign), figs / "field_error.png")
    # delimited output on stdout
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(["iteration", "qoi", "r2", "nrmse", "mean_sigma_gp", "mean_sigma_field"])
    w.writerows(cp.metrics_rows(state))
    print(json.dumps({"n_train_reaching_targets": summ["n_train_reaching_targets"]}, sort_keys=True))
    return 0


def cmd_propagate(args) -> int:
    state = cp.load_state(args.state)
    seed = args.seed if args.seed is not None else state.config.seed
    report, mesh = uqprop.propagate_state(state, args.n, seed, args.include_epistemic)
    out = Path(args.out_dir)
    uqprop.export_report(report, out, mesh.nodes)
    if report.field_mean is not None:
        plotting.uq_band(mesh.nodes, report.field_mean, report.field_std, out / "figures" / "uq_band.png")
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(["qoi", "mean", "std", "p2.5", "p50", "p97.5", "n"])
    for q, s in report.scalars.items():
        w.writerow([q, repr(s.mean), repr(s.std), repr(s.p2_5), repr(s.p50), repr(s.p97_5), s.n])
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the base seed")
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    parser = argparse.ArgumentParser(prog="fieldinfill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("doe", parents=[common], help="write DoE points as CSV")
    p.add_argument("--config", help="campaign config (JSON)")
    p.set_defaults(func=cmd_doe)

    p = sub.add_parser("run", parents=[common], help="run a campaign")
    p.add_argument("--config", help="campaign config (JSON)")
    p.add_argument("--resume", action="store_true", help="continue from OUT_DIR/state.json")
    p.add_argument("--until", type=int, default=None, help="stop after this many infills")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=[common], help="write tables, summary and figures")
    p.add_argument("--state", help="state file (default OUT_DIR/state.json)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("propagate", parents=[common], help="QMC propagation through a campaign's surrogates")
    p.add_argument("--state", required=True)
    p.add_argument("--n", type=int, default=10000, help="number of QMC samples")
    p.add_argument("--include-epistemic", action="store_true")
    p.set_defaults(func=cmd_propagate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (FieldInfillError, OSError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
