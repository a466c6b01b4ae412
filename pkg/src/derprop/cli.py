"""Command-line surface tying the library together.

Subcommands: rectify (batch logit rectification), verify (theorem
checks), gradcheck (finite-difference suite), train (toy trainer),
compare-ops (derivative-operation variants), demo (identical-cosine
analysis).  Exit codes: 0 success, 1 verification failure, 2 usage or
I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import load_run_config
from .core import l1_normalize_columns, softmax_columns
from .derivative import VARIANTS
from .dpt import DptFormatError, atomic_write_text, read_tensor, write_tensor
from .gradcheck import run_gradcheck_suite
from .propagation import BlendSchedule, blend_pseudo_labels, derivative_propagate
from .theory import (
    counterexample_demo,
    joint_pair_experiment,
    verify_boundedness,
    verify_lemma_norms,
    verify_uniqueness,
    well_posedness_sweep,
)
from .trainer import build_dataset, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="derprop",
        description="Derivative label propagation: rectification, verification, and training tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rectify", help="rectify a logit map through S + dS")
    p.add_argument("--logits", required=True, help="input logits, (C, M) DPT file")
    p.add_argument("--features", required=True, help="input features, (D, M) DPT file")
    p.add_argument("--out", required=True, help="output DPT file")
    p.add_argument("--blend", nargs=2, type=int, metavar=("EP", "TOTAL"),
                   help="also blend: output probabilities (1-ep/total)*plain + (ep/total)*rectified")
    p.add_argument("--prev", help="optional plain probability map DPT (default: softmax of --logits)")
    p.add_argument("--variant", default="forward", choices=VARIANTS)

    p = sub.add_parser("verify", help="run the theorem verification reports")
    p.add_argument("--all", action="store_true", help="run every report (default)")
    p.add_argument("--lemma1", action="store_true", help="operator 1-norm facts")
    p.add_argument("--thm1", action="store_true", help="rank facts and uniqueness oracle")
    p.add_argument("--thm2", action="store_true", help="boundedness trials")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--uniqueness-anchors", type=int, default=3)
    p.add_argument("--plot-dir", help="write report.json and a slack histogram here")

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run the desk-scale semi-supervised trainer")
    p.add_argument("--config", required=True, help="JSON run config with train/data sections")
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("compare-ops", help="train all four derivative variants, shared seed")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="optional directory for compare_ops.csv and compare_ops.png")

    p = sub.add_parser("demo", help="worked demonstrations")
    p.add_argument("topic", choices=["counterexample"])

    return parser


def _cmd_rectify(args) -> int:
    logits = read_tensor(args.logits)
    features = read_tensor(args.features)
    if logits.ndim != 2 or features.ndim != 2:
        raise ValueError("logits and features must be 2-D maps")
    features = l1_normalize_columns(features, zero_policy="uniform_fallback")
    rectified = derivative_propagate(logits, features, args.variant)
    if args.blend is not None:
        ep, total = args.blend
        plain = read_tensor(args.prev) if args.prev else softmax_columns(logits)
        if plain.shape != logits.shape:
            raise ValueError(
                f"previous probability map shape {plain.shape} does not match logits {logits.shape}"
            )
        out = blend_pseudo_labels(plain, softmax_columns(rectified), BlendSchedule(ep, total))
        kind = "blended probability map"
    else:
        out = rectified
        kind = "rectified logit map"
    write_tensor(args.out, out)
    print(f"wrote {kind} {out.shape[0]}x{out.shape[1]} to {args.out}")
    return 0


def _cmd_verify(args) -> int:
    run_all = args.all or not (args.lemma1 or args.thm1 or args.thm2)
    reports = []
    thm2 = None
    if run_all or args.lemma1:
        reports.append(verify_lemma_norms(max_q=6, max_d=12, trials=args.trials, seed=args.seed))
    if run_all or args.thm1:
        reports.append(well_posedness_sweep(max(args.dim, 2), args.tol))
        reports.append(verify_uniqueness(n_anchors=args.uniqueness_anchors, seed=args.seed))
    if run_all or args.thm2:
        thm2 = verify_boundedness(args.trials, d=max(args.dim, 4), m=16, seed=args.seed,
                                  keep_slacks=args.plot_dir is not None)
        reports.append(thm2)
    for rep in reports:
        print(rep.summary())
    if run_all or args.thm1:
        joint = joint_pair_experiment(seed=args.seed)
        print(
            "[INFO] joint two-pixel experiment (M=2, D=3, reported, not asserted): "
            f"survivor_pairs={joint['survivor_pairs']} "
            f"solution_set_diameter={joint['solution_set_diameter']:.3f}"
        )
    payload = {"reports": [r.to_dict() for r in reports]}
    slacks = None
    for rep_dict in payload["reports"]:
        slacks = rep_dict["details"].pop("slacks", None) or slacks
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.plot_dir:
        os.makedirs(args.plot_dir, exist_ok=True)
        atomic_write_text(os.path.join(args.plot_dir, "report.json"),
                          json.dumps(payload, indent=2, sort_keys=True) + "\n")
        if slacks:
            from .plots import save_slack_histogram

            save_slack_histogram(slacks, os.path.join(args.plot_dir, "bound_slack.png"))
    return 0 if all(r.passed for r in reports) else 1


def _cmd_gradcheck(args) -> int:
    results = run_gradcheck_suite(trials=args.trials, seed=args.seed)
    for name, res in results.items():
        status = "PASS" if res["passed"] else "FAIL"
        print(
            f"[{status}] {name}: trials={res['trials']} "
            f"max_rel_err={res['max_rel_err']:.3e} threshold={res['threshold']:.0e}"
        )
    print(json.dumps(results, indent=2, sort_keys=True))
    return 0 if all(r["passed"] for r in results.values()) else 1


def _cmd_train(args) -> int:
    train_cfg, data_cfg = load_run_config(args.config)
    data, val = build_dataset(data_cfg)
    result = train(train_cfg, data, val, out_dir=args.out, data_cfg=data_cfg)
    final = result.metrics[-1]
    print(
        f"finished {train_cfg.epochs} epochs: "
        f"miou_train={final.miou_train:.4f} miou_val={final.miou_val:.4f} "
        f"(run dir: {args.out})"
    )
    return 0


def _cmd_compare_ops(args) -> int:
    train_cfg, data_cfg = load_run_config(args.config)
    data, val = build_dataset(data_cfg)
    results = {}
    for variant in VARIANTS:
        cfg = replace(train_cfg, der_spec=replace(train_cfg.der_spec, variant=variant))
        res = train(cfg, data, val)
        results[variant] = res.metrics[-1].miou_val
    print("variant,miou_val")
    for variant in VARIANTS:
        print(f"{variant},{results[variant]!r}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        lines = ["variant,miou_val"] + [f"{v},{results[v]!r}" for v in VARIANTS]
        atomic_write_text(os.path.join(args.out, "compare_ops.csv"), "\n".join(lines) + "\n")
        from .plots import save_variant_bars

        save_variant_bars(results, os.path.join(args.out, "compare_ops.png"))
    return 0


def _cmd_demo(args) -> int:
    report = counterexample_demo()
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


_HANDLERS = {
    "rectify": _cmd_rectify,
    "verify": _cmd_verify,
    "gradcheck": _cmd_gradcheck,
    "train": _cmd_train,
    "compare-ops": _cmd_compare_ops,
    "demo": _cmd_demo,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (DptFormatError, ValueError, RuntimeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
