"""Command-line front end.

One subcommand per verification stage plus ``pipeline`` for the whole chain.
Exit codes: 0 when no check failed, 1 when any check reports FAIL, 2 for a
configuration problem (unreadable file, schema violation, failed gate, or a
stage precondition such as too few replicates).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, canonical_config, load_config, parse_config
from . import harness
from .harness import ConfigGateError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nonconv",
        description="Simulation and verification toolkit for nonconventional-"
                    "sum approximations at desk scale.")
    p.add_argument("command",
                   choices=["validate", "mixing", "variance", "blocks",
                            "embed", "clt", "lil", "pipeline"],
                   help="verification stage to run")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON experiment config; omitted = built-in canonical "
                        "two-state-chain configuration")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's base seed")
    p.add_argument("--out", type=Path, default=None,
                   help="output directory for report and CSV artifacts "
                        "(default for pipeline: nonconv_out)")
    p.add_argument("--replicates", type=int, default=None,
                   help="override the config's replicate count")
    p.add_argument("--horizon", type=int, default=None,
                   help="override the config's time horizon")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads; results are identical for any value")
    return p


def _resolve_config(args) -> ExperimentConfig:
    overrides = {k: v for k, v in (("seed", args.seed),
                                   ("replicates", args.replicates),
                                   ("horizon", args.horizon)) if v is not None}
    if args.config is None:
        return canonical_config(run=overrides) if overrides else canonical_config()
    doc = json.loads(Path(args.config).read_text())
    if overrides:
        doc.setdefault("run", {}).update(overrides)
    return parse_config(doc)


def _cmd_validate(cfg: ExperimentConfig, args) -> dict:
    return harness.run_validate(cfg)


def _cmd_mixing(cfg: ExperimentConfig, args) -> dict:
    return harness.mixing_section(cfg)


def _cmd_variance(cfg: ExperimentConfig, args) -> dict:
    doc = harness.variance_section(cfg)
    if args.out is not None:
        harness.write_csv(args.out / "variance.csv",
                          ["component", "value", "route", "tail_bound"],
                          [[c["component"], c["value"], c["route"],
                            c["tail_bound"]] for c in doc["components"]])
    return doc


def _cmd_blocks(cfg: ExperimentConfig, args) -> dict:
    doc = harness.run_strong_approx(
        cfg, component=_first_live_component(cfg), t_max=cfg.horizon,
        replicates=cfg.replicates, step_factor=cfg.step_factor,
        couple=False, threads=args.threads, lln_tol=None)
    rows = doc.pop("channel_rows")
    if args.out is not None:
        harness.write_csv(
            args.out / "blocks_errors.csv",
            ["replicate", "t", "nu", "xi", "martingale_sum", "total_error",
             "recentering", "small_blocks", "boundary", "window_gap",
             "identity_residual"],
            [[r["replicate"], r["t"], r["nu"], r["xi"], r["martingale_sum"],
              r["total_error"], r["recentering"], r["small_blocks"],
              r["boundary"], r["window_gap"], r["identity_residual"]]
             for r in rows])
    return doc


def _cmd_embed(cfg: ExperimentConfig, args) -> dict:
    comp = 2 if (cfg.model.kind == "iid" and cfg.qf.ell == 2) else 1
    fid = harness.forward_vs_direct(cfg, comp, m_checkpoints=(100, 1000),
                                    replicates=max(cfg.replicates, 100),
                                    threads=args.threads)
    trace = fid.pop("trace")
    if args.out is not None:
        harness.write_csv(args.out / "embedding_trace.csv",
                          ["j", "T", "clock", "embedded", "martingale"],
                          zip(trace["j"], trace["T"], trace["clock"],
                              trace["embedded"], trace["martingale"]))
    oracle = harness.mean_time_oracle(seed=cfg.seed)
    verdict = ("PASS" if fid["verdict"] == "PASS"
               and oracle["verdict"] == "PASS" else "FAIL")
    return {"forward_vs_direct": fid, "mean_time_oracle": oracle,
            "verdict": verdict}


def _cmd_clt(cfg: ExperimentConfig, args) -> dict:
    return harness.run_clt(cfg, threads=args.threads)


def _cmd_lil(cfg: ExperimentConfig, args) -> dict:
    return harness.run_lil(cfg, threads=args.threads)


def _first_live_component(cfg: ExperimentConfig) -> int:
    from .variance import limiting_variance
    from .sums import center_and_decompose, marginal_of
    decomp = center_and_decompose(cfg.observable, marginal_of(cfg.model))
    for i in range(1, decomp.ell + 1):
        if limiting_variance(cfg.model, decomp, i, cfg.qf).value > 1e-12:
            return i
    raise ValueError("all components degenerate; nothing to diagnose")


_COMMANDS = {
    "validate": _cmd_validate,
    "mixing": _cmd_mixing,
    "variance": _cmd_variance,
    "blocks": _cmd_blocks,
    "embed": _cmd_embed,
    "clt": _cmd_clt,
    "lil": _cmd_lil,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    try:
        if args.command == "pipeline":
            out = args.out if args.out is not None else Path("nonconv_out")
            report = harness.run_pipeline(cfg, out, threads=args.threads)
            print((out / "summary.txt").read_text(), end="")
            return 1 if report["overall"] == "FAIL" else 0
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
        doc = _COMMANDS[args.command](cfg, args)
    except ConfigGateError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    text = json.dumps(doc, sort_keys=True, indent=1,
                      default=harness._to_jsonable)
    print(text)
    if args.out is not None:
        (args.out / f"{args.command}_report.json").write_text(text + "\n")
    return 1 if _any_fail(doc) else 0


def _any_fail(doc) -> bool:
    if isinstance(doc, dict):
        if doc.get("verdict") == "FAIL":
            return True
        return any(_any_fail(v) for v in doc.values())
    if isinstance(doc, list):
        return any(_any_fail(v) for v in doc)
    return False


if __name__ == "__main__":
    sys.exit(main())
