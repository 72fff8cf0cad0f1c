"""Command-line surface.

Subcommands: gen-cohort, gen-cells, pretrain-smooth, train, eval, ablate,
gradcheck. Every command is deterministic given its configuration (the
seed is part of it); reports echo the full effective config, and the only
non-reproducible output field is the top-level "timestamp" key. Outputs
are written atomically via a .partial temp file; existing outputs are
refused unless --force is given. Exit code 0 means all requested work
completed.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

from .cohort import generate_cohort, load_cohort, save_cohort
from .config import (RunConfig, config_echo, load_cells_spec, load_cohort_spec,
                     load_run_config)
from .errors import SurvfuseError, ValidationError
from .experiment import (Stage1Bundle, ablation_csv_lines, run_ablation,
                         run_cross_validation, run_final_fit, run_stage1,
                         tool_version)
from .fusion import evaluate, load_model, save_model
from .gradcheck import run_all
from .smoothing import (Stage1Result, generate_cells, load_cells, load_stage1,
                        save_cells, save_stage1)


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _refuse_existing(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise ValidationError(f"{path} already exists (pass --force to overwrite)")


def _write_text(path: str, text: str, force: bool) -> None:
    _refuse_existing(path, force)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = path + ".partial"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: str, obj: dict, force: bool) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n", force)


def _write_jsonl(path: str, rows: list[dict], force: bool) -> None:
    lines = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    _write_text(path, lines, force)


def _out_path(args, default_name: str, configured: str | None = None) -> str:
    if args.out:
        return os.path.join(args.out, default_name)
    if configured:
        return configured
    return default_name


# ---------------------------------------------------------------------------
# commands


def cmd_gen_cohort(args) -> int:
    spec = load_cohort_spec(args.config, seed=args.seed, n_patients=args.n_patients,
                            noise_g=args.noise_g, noise_p=args.noise_p,
                            censor_fraction_target=args.censor_target)
    cfg = load_run_config(args.config)
    path = _out_path(args, "cohort.csv", cfg.paths.cohort)
    _refuse_existing(path, args.force)
    records = generate_cohort(spec)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_cohort(path, records)
    n_events = sum(r.event for r in records)
    print(f"wrote {len(records)} records ({n_events} events, "
          f"{len(records) - n_events} censored) to {path}")
    return 0


def cmd_gen_cells(args) -> int:
    spec = load_cells_spec(args.config, seed=args.seed, n_cells=args.n_cells)
    cfg = load_run_config(args.config)
    path = _out_path(args, "cells.csv", cfg.paths.cells)
    _refuse_existing(path, args.force)
    cells = generate_cells(spec)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_cells(path, cells)
    print(f"wrote {len(cells)} cells ({spec.num_types} types, "
          f"{spec.gene_dim} genes) to {path}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, cells=args.cells,
                          smoothing_enabled=True)
    cells = load_cells(cfg.paths.cells, num_types=cfg.num_cell_types)
    ckpt_path = _out_path(args, "stage1.ckpt", cfg.paths.stage1)
    report_path = _out_path(args, "stage1_report.json",
                            os.path.splitext(cfg.paths.stage1)[0] + "_report.json")
    _refuse_existing(ckpt_path, args.force)
    _refuse_existing(report_path, args.force)
    bundle = run_stage1(cells, cfg)
    parent = os.path.dirname(ckpt_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_stage1(ckpt_path, bundle.result, bundle.encoder)
    report = dict(bundle.report)
    report.update({"kind": "stage1_report", "tool_version": tool_version(),
                   "config": config_echo(cfg), "checkpoint": ckpt_path,
                   "timestamp": _timestamp()})
    _write_json(report_path, report, args.force)
    print(f"stage-1 done: final loss {report['final_loss']:.6f}, "
          f"gap {report['gap_before']:.4f} -> {report['gap_after']:.4f}; "
          f"checkpoint: {ckpt_path}")
    return 0


def _load_bundle_for_train(cfg: RunConfig, records) -> Stage1Bundle:
    if cfg.smoothing.enabled:
        mlp_a, classifier, encoder = load_stage1(cfg.paths.stage1)
        return Stage1Bundle(encoder=encoder,
                            result=Stage1Result(mlp_a=mlp_a, classifier=classifier),
                            report=None)
    from .smoothing import default_encoder
    encoder = default_encoder(records[0].rna.size, cfg.smoothing.embed_dim,
                              seed=cfg.smoothing.encoder_seed,
                              scale=cfg.smoothing.encoder_scale)
    return Stage1Bundle(encoder=encoder, result=None, report=None)


def _train_overrides(args) -> dict:
    tristate = {"on": True, "off": False, None: None}
    return dict(seed=args.seed, cohort=args.cohort, stage1=args.stage1,
                epochs=args.epochs, eta=args.eta, k_folds=args.k_folds,
                fusion_mode=args.fusion_mode,
                modulation_enabled=tristate[args.modulation],
                smoothing_enabled=tristate[args.smoothing],
                track_rho=True if args.track_rho else None,
                image_probe=True if args.image_probe else None)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, out_dir=args.out, **_train_overrides(args))
    out_dir = cfg.paths.out_dir
    report_path = os.path.join(out_dir, "report.json")
    _refuse_existing(report_path, args.force)
    records = load_cohort(cfg.paths.cohort)
    bundle = _load_bundle_for_train(cfg, records)
    outputs = run_cross_validation(records, cfg, bundle, jobs=args.jobs)
    report = dict(outputs.report)
    report["timestamp"] = _timestamp()
    _write_json(report_path, report, args.force)
    _write_jsonl(os.path.join(out_dir, "metrics.jsonl"), outputs.epoch_stream,
                 True)
    _write_jsonl(os.path.join(out_dir, "contributions.jsonl"),
                 outputs.contribution_stream, True)
    model = run_final_fit(records, cfg, bundle)   # full-cohort fit for `eval`
    save_model(os.path.join(out_dir, "model.ckpt"), model)
    print(f"C-index {report['c_index_mean']:.4f} +/- {report['c_index_std']:.4f} "
          f"over {cfg.k_folds} folds; report: {report_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, cohort=args.cohort)
    model = load_model(args.model)
    records = load_cohort(cfg.paths.cohort)
    metrics = evaluate(model, records)
    result = {"kind": "eval_report", "tool_version": tool_version(),
              "model": args.model, "cohort": cfg.paths.cohort,
              "c_index": metrics["c_index"], "mean_loss": metrics["mean_loss"],
              "n_records": len(records), "timestamp": _timestamp()}
    if args.out:
        _write_json(os.path.join(args.out, "eval.json"), result, args.force)
    print(f"c_index {metrics['c_index']:.4f}  mean_loss {metrics['mean_loss']:.4f} "
          f"({len(records)} records)")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, cohort=args.cohort,
                          cells=args.cells, out_dir=args.out)
    out_dir = cfg.paths.out_dir
    json_path = os.path.join(out_dir, "ablation.json")
    csv_path = os.path.join(out_dir, "ablation.csv")
    _refuse_existing(json_path, args.force)
    _refuse_existing(csv_path, args.force)
    records = load_cohort(cfg.paths.cohort)
    cells = load_cells(cfg.paths.cells, num_types=cfg.num_cell_types)
    table = run_ablation(records, cells, cfg, jobs=args.jobs)
    table["timestamp"] = _timestamp()
    _write_json(json_path, table, args.force)
    _write_text(csv_path, "\n".join(ablation_csv_lines(table)) + "\n", args.force)
    for row in table["rows"]:
        smooth = "smooth" if row["smoothing"] else "no-smooth"
        print(f"row {row['row']}: {smooth:10s} {row['fusion']:10s} "
              f"C-index {row['c_index_mean']:.4f} +/- {row['c_index_std']:.4f}")
    print(f"ablation table: {csv_path}")
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = run_all(seed)
    failed = False
    for res in results:
        print(res.line())
        failed = failed or not res.passed
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser


def _add_common(sp) -> None:
    sp.add_argument("--config", default=None, help="INI config file")
    sp.add_argument("--seed", type=int, default=None, help="override the seed")
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--jobs", type=int, default=1,
                    help="parallel fold workers (default 1)")
    sp.add_argument("--force", action="store_true",
                    help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survfuse",
        description="Two-branch survival fusion: synthetic cohorts, latent "
                    "smoothing, Cox training with gradient modulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-cohort", help="generate a synthetic cohort CSV")
    _add_common(p)
    p.add_argument("--n-patients", type=int, default=None)
    p.add_argument("--noise-g", type=float, default=None)
    p.add_argument("--noise-p", type=float, default=None)
    p.add_argument("--censor-target", type=float, default=None)
    p.set_defaults(handler=cmd_gen_cohort)

    p = sub.add_parser("gen-cells", help="generate a synthetic cell corpus CSV")
    _add_common(p)
    p.add_argument("--n-cells", type=int, default=None)
    p.set_defaults(handler=cmd_gen_cells)

    p = sub.add_parser("pretrain-smooth",
                       help="stage 1: mixup-train MLP-A on the cell corpus")
    _add_common(p)
    p.add_argument("--cells", default=None, help="cell corpus CSV")
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("train", help="k-fold cross-validated survival training")
    _add_common(p)
    p.add_argument("--cohort", default=None, help="cohort CSV")
    p.add_argument("--stage1", default=None, help="stage-1 checkpoint")
    p.add_argument("--modulation", choices=("on", "off"), default=None)
    p.add_argument("--smoothing", choices=("on", "off"), default=None)
    p.add_argument("--fusion-mode", choices=("concat", "kronecker"), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--k-folds", type=int, default=None)
    p.add_argument("--track-rho", action="store_true",
                   help="log contribution ratios even without modulation")
    p.add_argument("--image-probe", action="store_true",
                   help="also fit a linear Cox probe on the image features")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on a cohort")
    _add_common(p)
    p.add_argument("--model", required=True, help="fusion-model checkpoint")
    p.add_argument("--cohort", default=None, help="cohort CSV")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", help="run the 6-row ablation grid")
    _add_common(p)
    p.add_argument("--cohort", default=None)
    p.add_argument("--cells", default=None)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient verification suite")
    _add_common(p)
    p.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except SurvfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:  # missing/unreadable inputs and the like
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
