"""Cross-validated training runs and the ablation grid.

A run = split the cohort into k folds, train one independent model per
held-out fold, evaluate on the held-out fold, aggregate C-index as
mean +/- sample standard deviation. Folds share nothing mutable, so they
can execute in worker processes. All randomness derives from (seed, fold),
making reports reproducible byte-for-byte regardless of --jobs.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cohort import fold_split, split_folds
from .config import RunConfig, config_echo
from .fusion import (FusionSpec, TrainConfig, build_model, evaluate,
                     image_branch_features, train_survival)
from .nnet import DenseLayer
from .smoothing import (CellProfile, FrozenEncoder, Stage1Config, Stage1Result,
                        default_encoder, gap_probe_pairs, interpolation_gap,
                        pretrain_mlp_a)
from .survival import SurvivalRecord, probe_c_index


def tool_version() -> str:
    import importlib.metadata
    try:
        own = importlib.metadata.version("survfuse")
    except importlib.metadata.PackageNotFoundError:
        own = "0+unknown"
    return f"survfuse {own} / numpy {np.__version__}"


def derive_seed(seed: int, tag: int, index: int = 0) -> int:
    """Stable independent integer seed for a (run, purpose, index) triple."""
    return int(np.random.SeedSequence([int(seed), int(tag), int(index)])
               .generate_state(1)[0])


# ---------------------------------------------------------------------------
# stage 1


@dataclass
class Stage1Bundle:
    encoder: FrozenEncoder
    result: Stage1Result | None
    report: dict | None

    @property
    def mlp_a(self) -> list[DenseLayer] | None:
        return self.result.mlp_a if self.result is not None else None


def run_stage1(cells: list[CellProfile], cfg: RunConfig) -> Stage1Bundle:
    """Build the fixed encoder and, if smoothing is on, pretrain MLP-A.

    The interpolation gap is measured on a held-out probe set before
    training (freshly initialized MLP-A) and after.
    """
    sm = cfg.smoothing
    gene_dim = cells[0].expression.size
    encoder = default_encoder(gene_dim, sm.embed_dim, seed=sm.encoder_seed,
                              scale=sm.encoder_scale)
    if not sm.enabled:
        return Stage1Bundle(encoder=encoder, result=None, report=None)
    s1cfg = Stage1Config(epochs=sm.stage1_epochs, steps_per_epoch=sm.steps_per_epoch,
                         batch_pairs=sm.batch_pairs, eta=sm.stage1_eta,
                         weight_decay=sm.weight_decay,
                         hidden_dim=cfg.hidden_dim, feature_dim=sm.feature_dim,
                         seed=cfg.seed)
    pairs, lams = gap_probe_pairs(cells, n_pairs=200, seed=cfg.seed)
    zero = dataclasses.replace(s1cfg, epochs=0)
    untrained = pretrain_mlp_a(cells, encoder, zero)
    gap_before = interpolation_gap(encoder, untrained.mlp_a, pairs, lams)
    result = pretrain_mlp_a(cells, encoder, s1cfg)
    gap_after = interpolation_gap(encoder, result.mlp_a, pairs, lams)
    report = {
        "final_loss": result.loss_history[-1] if result.loss_history else None,
        "steps": len(result.loss_history),
        "gap_before": gap_before,
        "gap_after": gap_after,
    }
    return Stage1Bundle(encoder=encoder, result=result, report=report)


# ---------------------------------------------------------------------------
# one fold


def run_single_fold(records: list[SurvivalRecord], plan, fold: int,
                    cfg: RunConfig, bundle: Stage1Bundle) -> dict:
    train_recs, test_recs = fold_split(records, plan, fold)
    fold_seed = derive_seed(cfg.seed, 0xFD, fold)
    fspec = FusionSpec(
        dim_cnv_mut=records[0].cnv_mut.size, dim_rna=records[0].rna.size,
        dim_image=records[0].image.size, snn_dim=cfg.snn_dim,
        gen_dim=cfg.gen_dim, img_dim=cfg.img_dim, hidden_dim=cfg.hidden_dim,
        fusion_mode=cfg.fusion_mode)
    model = build_model(fspec, bundle.encoder, bundle.mlp_a, seed=fold_seed)
    tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, eta=cfg.eta,
                       seed=fold_seed, modulation=cfg.modulation,
                       track_rho=cfg.track_rho)
    tres = train_survival(model, train_recs, tcfg)
    test_metrics = evaluate(model, test_recs)
    row = {
        "fold": fold,
        "c_index": test_metrics["c_index"],
        "mean_loss": test_metrics["mean_loss"],
        "train_c_index": tres.epochs[-1].c_index,
        "skipped_batches": tres.skipped_batches,
        "epoch_stream": [dict(m.as_dict(), fold=fold) for m in tres.epochs],
        "contribution_stream": [dict(r, fold=fold) for r in tres.step_reports],
    }
    if cfg.image_probe:
        p_train = image_branch_features(model, train_recs)
        p_test = image_branch_features(model, test_recs)
        t_train = np.array([r.time for r in train_recs])
        e_train = np.array([r.event for r in train_recs])
        t_test = np.array([r.time for r in test_recs])
        e_test = np.array([r.event for r in test_recs])
        row["image_probe_c"] = probe_c_index(p_train, t_train, e_train,
                                             p_test, t_test, e_test)
    return row


# ---------------------------------------------------------------------------
# full run


def run_final_fit(records: list[SurvivalRecord], cfg: RunConfig,
                  bundle: Stage1Bundle):
    """One model trained on the whole cohort (what `eval` consumes later)."""
    fspec = FusionSpec(
        dim_cnv_mut=records[0].cnv_mut.size, dim_rna=records[0].rna.size,
        dim_image=records[0].image.size, snn_dim=cfg.snn_dim,
        gen_dim=cfg.gen_dim, img_dim=cfg.img_dim, hidden_dim=cfg.hidden_dim,
        fusion_mode=cfg.fusion_mode)
    model = build_model(fspec, bundle.encoder, bundle.mlp_a, seed=cfg.seed)
    tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, eta=cfg.eta,
                       seed=cfg.seed, modulation=cfg.modulation)
    train_survival(model, records, tcfg)
    return model


@dataclass
class RunOutputs:
    report: dict                     # JSON-ready, without the timestamp key
    epoch_stream: list[dict]         # one object per (fold, epoch)
    contribution_stream: list[dict]  # one object per (fold, step) report


def run_cross_validation(records: list[SurvivalRecord], cfg: RunConfig,
                         bundle: Stage1Bundle, jobs: int = 1) -> RunOutputs:
    plan = split_folds(records, cfg.k_folds, cfg.seed)
    folds = list(range(cfg.k_folds))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_single_fold, records, plan, f, cfg, bundle)
                       for f in folds]
            rows = [fut.result() for fut in futures]
    else:
        rows = [run_single_fold(records, plan, f, cfg, bundle) for f in folds]
    rows.sort(key=lambda r: r["fold"])

    epoch_stream, contribution_stream = [], []
    for row in rows:
        epoch_stream.extend(row.pop("epoch_stream"))
        contribution_stream.extend(row.pop("contribution_stream"))

    c_values = np.array([row["c_index"] for row in rows])
    rho_values = [r["rho_g"] for r in contribution_stream]
    report = {
        "kind": "cv_report",
        "tool_version": tool_version(),
        "config": config_echo(cfg),
        "k_folds": cfg.k_folds,
        "per_fold": rows,
        "c_index_mean": float(c_values.mean()),
        "c_index_std": float(c_values.std(ddof=1)) if len(rows) > 1 else 0.0,
        "skipped_batches": int(sum(row["skipped_batches"] for row in rows)),
        "rho_g_median": float(np.median(rho_values)) if rho_values else None,
    }
    if cfg.image_probe:
        probe = np.array([row["image_probe_c"] for row in rows])
        report["image_probe_mean"] = float(probe.mean())
    if bundle.report is not None:
        report["stage1"] = bundle.report
    return RunOutputs(report=report, epoch_stream=epoch_stream,
                      contribution_stream=contribution_stream)


# ---------------------------------------------------------------------------
# ablation grid


ABLATION_GRID = (
    # (row, smoothing, fusion label); "modulation" = concat head + modulation
    (1, False, "concat"),
    (2, False, "kronecker"),
    (3, False, "modulation"),
    (4, True, "concat"),
    (5, True, "kronecker"),
    (6, True, "modulation"),
)


def _grid_config(cfg: RunConfig, smoothing_on: bool, fusion_label: str) -> RunConfig:
    modulation = dataclasses.replace(cfg.modulation,
                                     enabled=fusion_label == "modulation")
    smoothing = dataclasses.replace(cfg.smoothing, enabled=smoothing_on)
    mode = "kronecker" if fusion_label == "kronecker" else "concat"
    return dataclasses.replace(cfg, fusion_mode=mode, modulation=modulation,
                               smoothing=smoothing)


def run_ablation(records: list[SurvivalRecord], cells: list[CellProfile],
                 cfg: RunConfig, jobs: int = 1) -> dict:
    """All six grid cells, sharing one stage-1 pretraining across the
    smoothing rows. Row order is fixed: rows 1-3 without smoothing, 4-6
    with, each block ordered concat, kronecker, modulation."""
    bundles = {}
    rows = []
    for row_id, smoothing_on, fusion_label in ABLATION_GRID:
        row_cfg = _grid_config(cfg, smoothing_on, fusion_label)
        if smoothing_on not in bundles:
            bundles[smoothing_on] = run_stage1(cells, row_cfg)
        outputs = run_cross_validation(records, row_cfg, bundles[smoothing_on],
                                       jobs=jobs)
        rows.append({
            "row": row_id,
            "smoothing": smoothing_on,
            "fusion": fusion_label,
            "c_index_mean": outputs.report["c_index_mean"],
            "c_index_std": outputs.report["c_index_std"],
            "report": outputs.report,
        })
    return {
        "kind": "ablation_report",
        "tool_version": tool_version(),
        "config": config_echo(cfg),
        "rows": rows,
    }


def ablation_csv_lines(table: dict) -> list[str]:
    lines = ["row,smoothing,fusion,c_index_mean,c_index_std"]
    for row in table["rows"]:
        lines.append(f"{row['row']},{int(row['smoothing'])},{row['fusion']},"
                     f"{row['c_index_mean']!r},{row['c_index_std']!r}")
    return lines
