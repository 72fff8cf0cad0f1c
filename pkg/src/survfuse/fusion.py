"""Two-branch survival fusion model.

Genomic branch: cnv/mutation features pass through an SNN (selu stack) to
G1; bulk rna passes through the frozen encoder and, when stage-1 smoothing
was run, the frozen MLP-A to G2; MLP-B maps [G1 || G2] to the genomic
feature G. Image branch: a trainable dense stack maps image features to P.
The fusion head scores theta per patient:

    concat:     theta = W . [G || P] + b   (W splits into blocks W^G, W^P)
    kronecker:  theta = W . flat([G || 1] outer [P || 1]) + b

Training minimizes the negative Cox partial log-likelihood over mini
batches; with modulation on, the per-batch contribution report rescales the
two branch groups' effective learning rates before each update (the head is
never rescaled). Frozen parameters (encoder, MLP-A) are precomputed into
features once per run and never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigError, NumericalError, ShapeError, StateError,
                     ValidationError)
from .modulation import (ModulationConfig, apply_modulation, branch_scores,
                         contribution_ratio)
from .nnet import (DenseLayer, ParamGroup, layer_group, load_checkpoint,
                   make_mlp, mlp_backward, mlp_forward, save_checkpoint,
                   sgd_step, step_decay_eta)
from .smoothing import FrozenEncoder
from .survival import (CoxBatch, SurvivalRecord, build_risk_sets,
                       concordance_index, cox_gradient, cox_loss)

FUSION_MODES = ("concat", "kronecker")


@dataclass
class GenomicInput:
    cnv_mut: np.ndarray
    rna: np.ndarray

    def __post_init__(self):
        self.cnv_mut = np.asarray(self.cnv_mut, dtype=np.float64).reshape(-1)
        self.rna = np.asarray(self.rna, dtype=np.float64).reshape(-1)


@dataclass
class FusionSpec:
    """Architecture hyperparameters; dims must match the cohort."""

    dim_cnv_mut: int
    dim_rna: int
    dim_image: int
    snn_dim: int = 32      # G1 width
    gen_dim: int = 32      # G width (MLP-B output)
    img_dim: int = 32      # P width
    hidden_dim: int = 128
    # Depth asymmetry mirrors the real pipeline: shallow, quick-to-train
    # genomic stacks (SNN on engineered features) against a deeper image
    # network (stand-in for a heavy vision backbone that trains slowly).
    snn_hidden: int = 1
    mlp_b_hidden: int = 1
    image_hidden: int = 3
    fusion_mode: str = "concat"

    def __post_init__(self):
        dims = (self.dim_cnv_mut, self.dim_rna, self.dim_image,
                self.snn_dim, self.gen_dim, self.img_dim, self.hidden_dim)
        if any(d <= 0 for d in dims):
            raise ValidationError("all architecture dims must be positive")
        if min(self.snn_hidden, self.mlp_b_hidden, self.image_hidden) < 0:
            raise ValidationError("hidden layer counts must be non-negative")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}, "
                              f"got '{self.fusion_mode}'")


class FusionModel:
    """Holds the trainable stacks, the frozen rna path, and the fusion head."""

    def __init__(self, snn: list[DenseLayer], encoder: FrozenEncoder,
                 mlp_a: list[DenseLayer] | None, mlp_b: list[DenseLayer],
                 image_encoder: list[DenseLayer], head: DenseLayer,
                 fusion_mode: str):
        if fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")
        self.snn = snn
        self.encoder = encoder
        self.mlp_a = mlp_a
        self.mlp_b = mlp_b
        self.image_encoder = image_encoder
        self.head = head
        self.fusion_mode = fusion_mode
        self.gen_dim = mlp_b[-1].out_dim
        self.img_dim = image_encoder[-1].out_dim
        expected = (self.gen_dim + self.img_dim if fusion_mode == "concat"
                    else (self.gen_dim + 1) * (self.img_dim + 1))
        if head.in_dim != expected:
            raise ShapeError(f"head expects {head.in_dim} inputs, "
                             f"{fusion_mode} fusion produces {expected}")
        if head.out_dim != 1:
            raise ShapeError("fusion head must have a single output")
        # caches for the kronecker backward pass
        self._last_G: np.ndarray | None = None
        self._last_P: np.ndarray | None = None
        # per-feature standardization of the frozen rna path, fitted on the
        # training split (stage-1 features come out ~10x smaller than raw
        # encoder latents; without this MLP-B under-uses whichever variant
        # is smaller)
        self.g2_mean: np.ndarray | None = None
        self.g2_std: np.ndarray | None = None

    # --- head block views (concat mode) ---

    def _require_concat(self):
        if self.fusion_mode != "concat":
            raise StateError("block decomposition of the head requires concat mode")

    @property
    def head_Wg(self) -> np.ndarray:
        self._require_concat()
        return self.head.weight[0, :self.gen_dim]

    @property
    def head_Wp(self) -> np.ndarray:
        self._require_concat()
        return self.head.weight[0, self.gen_dim:]

    @property
    def head_b(self) -> float:
        return float(self.head.bias[0])

    def param_groups(self) -> dict[str, ParamGroup]:
        """genomic = SNN + MLP-B; image = image encoder; head = fusion head.

        Only genomic/image are modulation targets; the frozen encoder and
        MLP-A contribute no parameters at all.
        """
        return {
            "genomic": layer_group("genomic", self.snn + self.mlp_b),
            "image": layer_group("image", self.image_encoder),
            "head": layer_group("head", [self.head]),
        }

    def frozen_rna_features(self, rna_matrix) -> np.ndarray:
        """Frozen path: encoder, then MLP-A when present (raw latent otherwise),
        then the fitted standardization if one has been fitted."""
        z = self.encoder.apply(np.asarray(rna_matrix, dtype=np.float64))
        if z.ndim == 1:
            z = z[None, :]
        feats = mlp_forward(self.mlp_a, z) if self.mlp_a else z
        if self.g2_mean is not None:
            feats = (feats - self.g2_mean) / self.g2_std
        return feats

    def fit_g2_normalization(self, rna_matrix) -> None:
        """Fit the frozen-path standardization on training rows only."""
        self.g2_mean = None
        self.g2_std = None
        feats = self.frozen_rna_features(rna_matrix)
        self.g2_mean = feats.mean(axis=0)
        self.g2_std = np.maximum(feats.std(axis=0), 1e-8)

    # --- batch forward/backward ---

    def forward_batch(self, x_cnv, g2_feat, x_img):
        """Score a batch; returns (theta, G, P). g2_feat is the precomputed
        frozen-path output for these rows."""
        g1 = mlp_forward(self.snn, x_cnv)
        G = mlp_forward(self.mlp_b, np.concatenate([g1, g2_feat], axis=1))
        P = mlp_forward(self.image_encoder, x_img)
        if self.fusion_mode == "concat":
            fused = np.concatenate([G, P], axis=1)
        else:
            fused = kronecker_features(G, P)
        self._last_G, self._last_P = G, P
        theta = self.head.forward(fused)[:, 0]
        return theta, G, P

    def backward_batch(self, dtheta) -> None:
        """Backpropagate d(loss)/d(theta) into every trainable gradient buffer."""
        dtheta = np.asarray(dtheta, dtype=np.float64).reshape(-1)
        up = self.head.backward(dtheta[:, None])
        if self.fusion_mode == "concat":
            dG = up[:, :self.gen_dim]
            dP = up[:, self.gen_dim:]
        else:
            if self._last_G is None or self._last_P is None:
                raise StateError("backward_batch called before forward_batch")
            dG, dP = _kronecker_backward(up, self._last_G, self._last_P)
        d_gin = mlp_backward(self.mlp_b, dG)
        mlp_backward(self.snn, d_gin[:, :self.snn[-1].out_dim])
        mlp_backward(self.image_encoder, dP)


def build_model(spec: FusionSpec, encoder: FrozenEncoder,
                mlp_a: list[DenseLayer] | None = None, seed: int = 0) -> FusionModel:
    if encoder.gene_dim != spec.dim_rna:
        raise ShapeError(f"encoder expects {encoder.gene_dim} genes, "
                         f"cohort rna dim is {spec.dim_rna}")
    if mlp_a:
        if mlp_a[0].in_dim != encoder.embed_dim:
            raise ShapeError("MLP-A input dim does not match encoder embed dim")
        g2_dim = mlp_a[-1].out_dim
    else:
        g2_dim = encoder.embed_dim
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF5]))
    snn = make_mlp(spec.dim_cnv_mut, spec.snn_dim, hidden_dim=spec.hidden_dim,
                   n_hidden=spec.snn_hidden,
                   activation="selu", out_activation="selu", rng=rng)
    mlp_b = make_mlp(spec.snn_dim + g2_dim, spec.gen_dim,
                     hidden_dim=spec.hidden_dim, n_hidden=spec.mlp_b_hidden, rng=rng)
    image_encoder = make_mlp(spec.dim_image, spec.img_dim,
                             hidden_dim=spec.hidden_dim, n_hidden=spec.image_hidden,
                             rng=rng)
    head_in = (spec.gen_dim + spec.img_dim if spec.fusion_mode == "concat"
               else (spec.gen_dim + 1) * (spec.img_dim + 1))
    head = DenseLayer(head_in, 1, "identity", rng=rng)
    return FusionModel(snn, encoder, mlp_a, mlp_b, image_encoder, head,
                       spec.fusion_mode)


# ---------------------------------------------------------------------------
# single-sample operations


def genomic_branch(model: FusionModel, ginput: GenomicInput) -> np.ndarray:
    """G = MLP_B([SNN(cnv_mut) || frozen-path(rna)]) for one patient."""
    g1 = mlp_forward(model.snn, ginput.cnv_mut[None, :])
    g2 = model.frozen_rna_features(ginput.rna[None, :])
    return mlp_forward(model.mlp_b, np.concatenate([g1, g2], axis=1))[0]


def fused_hazard(model: FusionModel, G, P) -> float:
    """theta = W^G.G + W^P.P + b, evaluated as one dot over [G || P] so the
    block and concatenated forms are the same floating-point computation."""
    if model.fusion_mode != "concat":
        raise StateError("fused_hazard is defined for the concat head only")
    G = np.asarray(G, dtype=np.float64).reshape(-1)
    P = np.asarray(P, dtype=np.float64).reshape(-1)
    if G.size != model.gen_dim or P.size != model.img_dim:
        raise ShapeError(f"expected |G|={model.gen_dim}, |P|={model.img_dim}, "
                         f"got {G.size}, {P.size}")
    return float(np.dot(model.head.weight[0], np.concatenate([G, P])) + model.head.bias[0])


def kronecker_fusion(G, P) -> np.ndarray:
    """flat row-major outer product of [G || 1] and [P || 1]."""
    G = np.asarray(G, dtype=np.float64).reshape(-1)
    P = np.asarray(P, dtype=np.float64).reshape(-1)
    return np.outer(np.append(G, 1.0), np.append(P, 1.0)).reshape(-1)


def kronecker_features(G, P) -> np.ndarray:
    """Batch kronecker_fusion: rows of G and P paired row-by-row."""
    G = np.asarray(G, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    ones = np.ones((G.shape[0], 1))
    g_ext = np.concatenate([G, ones], axis=1)
    p_ext = np.concatenate([P, ones], axis=1)
    return (g_ext[:, :, None] * p_ext[:, None, :]).reshape(G.shape[0], -1)


def _kronecker_backward(up, G, P):
    n, g = G.shape
    p = P.shape[1]
    u = up.reshape(n, g + 1, p + 1)
    ones = np.ones((n, 1))
    g_ext = np.concatenate([G, ones], axis=1)
    p_ext = np.concatenate([P, ones], axis=1)
    dG = (u * p_ext[:, None, :]).sum(axis=2)[:, :g]
    dP = (u * g_ext[:, :, None]).sum(axis=1)[:, :p]
    return dG, dP


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 12
    batch_size: int = 32
    eta: float = 0.01
    seed: int = 0
    modulation: ModulationConfig = field(
        default_factory=lambda: ModulationConfig(enabled=False))
    track_rho: bool = False  # log contribution reports without applying them

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")
        if self.eta <= 0:
            raise ValidationError("eta must be positive")


@dataclass
class EpochMetrics:
    epoch: int
    loss: float           # per-event mean over the epoch's non-skipped steps
    c_index: float        # training-set C-index at epoch end
    rho_g: float | None = None
    factor_g: float | None = None
    factor_p: float | None = None

    def as_dict(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "c_index": self.c_index,
                "rho_g": self.rho_g, "factor_g": self.factor_g,
                "factor_p": self.factor_p}


@dataclass
class TrainResult:
    model: FusionModel
    epochs: list[EpochMetrics]
    step_reports: list[dict]
    skipped_batches: int


def _feature_matrices(records: list[SurvivalRecord]):
    x_cnv = np.stack([r.cnv_mut for r in records])
    x_rna = np.stack([r.rna for r in records])
    x_img = np.stack([r.image for r in records])
    return x_cnv, x_rna, x_img


def predict_theta(model: FusionModel, records: list[SurvivalRecord]) -> np.ndarray:
    x_cnv, x_rna, x_img = _feature_matrices(records)
    theta, _, _ = model.forward_batch(x_cnv, model.frozen_rna_features(x_rna), x_img)
    return theta


def image_branch_features(model: FusionModel, records: list[SurvivalRecord]) -> np.ndarray:
    """Post-training P features, e.g. for a standalone linear Cox probe."""
    _, _, x_img = _feature_matrices(records)
    return mlp_forward(model.image_encoder, x_img)


def train_survival(model: FusionModel, records: list[SurvivalRecord],
                   cfg: TrainConfig) -> TrainResult:
    """Mini-batch SGD on the negative Cox partial log-likelihood.

    Per step: forward the batch, backpropagate the Cox gradient, optionally
    rescale the two branch groups from the contribution report, update. An
    all-censored batch contributes nothing and is skipped (counted). The
    eta schedule is a function of the step position, skipped or not.
    """
    if cfg.modulation.enabled and model.fusion_mode != "concat":
        raise ConfigError("gradient modulation requires the concat fusion head")
    full = build_risk_sets(records)
    n = len(records)
    x_cnv, x_rna, x_img = _feature_matrices(records)
    model.fit_g2_normalization(x_rna)          # training rows only — no fold leakage
    g2_all = model.frozen_rna_features(x_rna)  # frozen path never changes mid-run

    groups = model.param_groups()
    group_list = list(groups.values())
    want_reports = (cfg.modulation.enabled or cfg.track_rho) and model.fusion_mode == "concat"

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x57E9]))
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch

    epoch_rows: list[EpochMetrics] = []
    step_reports: list[dict] = []
    skipped = 0
    step_counter = 0
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_loss_sum = 0.0
        epoch_event_count = 0
        epoch_rho, epoch_fg, epoch_fp = [], [], []
        for start in range(0, n, cfg.batch_size):
            step_index = step_counter
            step_counter += 1
            idx = perm[start:start + cfg.batch_size]
            sub = CoxBatch(full.times[idx], full.events[idx])
            if sub.degenerate:
                skipped += 1
                continue
            theta, G, P = model.forward_batch(x_cnv[idx], g2_all[idx], x_img[idx])
            loss = cox_loss(theta, sub)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, step {step_index}")
            model.backward_batch(cox_gradient(theta, sub))
            if want_reports:
                s_g, s_p = branch_scores(model.head_Wg, G, model.head_Wp, P,
                                         model.head_b)
                report = contribution_ratio(s_g, s_p, sub, cfg.modulation)
                epoch_rho.append(report.rho_g)
                epoch_fg.append(report.factor_g)
                epoch_fp.append(report.factor_p)
                step_reports.append({"epoch": epoch, "step": step_index,
                                     "rho_g": report.rho_g, "rho_p": report.rho_p,
                                     "rho_g_clamped": report.rho_g_clamped,
                                     "factor_g": report.factor_g,
                                     "factor_p": report.factor_p})
                if cfg.modulation.enabled and step_index >= cfg.modulation.warmup_steps:
                    apply_modulation(report, groups["genomic"], groups["image"],
                                     cfg.modulation)
            sgd_step(group_list, step_decay_eta(cfg.eta, step_index, total_steps))
            epoch_loss_sum += loss
            epoch_event_count += sub.n_events
        theta_all = predict_theta(model, records)
        c_index = concordance_index(theta_all, full.times, full.events)
        mean_loss = epoch_loss_sum / epoch_event_count if epoch_event_count else 0.0
        epoch_rows.append(EpochMetrics(
            epoch=epoch, loss=mean_loss, c_index=c_index,
            rho_g=float(np.median(epoch_rho)) if epoch_rho else None,
            factor_g=float(np.median(epoch_fg)) if epoch_fg else None,
            factor_p=float(np.median(epoch_fp)) if epoch_fp else None))
    return TrainResult(model=model, epochs=epoch_rows, step_reports=step_reports,
                       skipped_batches=skipped)


def evaluate(model: FusionModel, records: list[SurvivalRecord]) -> dict:
    """C-index and per-event mean Cox loss over one risk-set structure.

    Raises ConcordanceUndefinedError when the set has no comparable pair.
    """
    batch = build_risk_sets(records)
    theta = predict_theta(model, records)
    c = concordance_index(theta, batch.times, batch.events)
    loss = cox_loss(theta, batch)
    mean_loss = loss / batch.n_events if batch.n_events else 0.0
    return {"c_index": c, "mean_loss": mean_loss}


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path: str, model: FusionModel) -> None:
    tensors: dict[str, np.ndarray] = {}
    manifest: dict[str, list[str]] = {}
    stacks = {"snn": model.snn, "mlp_b": model.mlp_b,
              "image_encoder": model.image_encoder}
    activations: dict[str, list[str]] = {}
    for gname, layers in stacks.items():
        manifest[gname] = []
        activations[gname] = []
        for i, layer in enumerate(layers):
            tensors[f"{gname}.{i}.weight"] = layer.weight
            tensors[f"{gname}.{i}.bias"] = layer.bias
            manifest[gname].append(f"{gname}.{i}")
            activations[gname].append(layer.activation)
    tensors["head.weight"] = model.head.weight
    tensors["head.bias"] = model.head.bias
    manifest["head"] = ["head"]
    tensors["encoder.weight"] = model.encoder.weight
    tensors["encoder.bias"] = model.encoder.bias
    mlp_a_acts = None
    if model.mlp_a:
        mlp_a_acts = [layer.activation for layer in model.mlp_a]
        for i, layer in enumerate(model.mlp_a):
            tensors[f"mlp_a.{i}.weight"] = layer.weight
            tensors[f"mlp_a.{i}.bias"] = layer.bias
    if model.g2_mean is not None:
        tensors["g2_norm.mean"] = model.g2_mean
        tensors["g2_norm.std"] = model.g2_std
    meta = {"kind": "fusion_model", "fusion_mode": model.fusion_mode,
            "groups": manifest, "activations": activations,
            "encoder_activation": model.encoder.activation,
            "mlp_a_activations": mlp_a_acts,
            "g2_normalized": model.g2_mean is not None}
    save_checkpoint(path, tensors, meta)


def load_model(path: str) -> FusionModel:
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "fusion_model":
        raise ValidationError(f"{path}: not a fusion-model checkpoint")

    def stack(gname: str) -> list[DenseLayer]:
        acts = meta["activations"][gname]
        return [DenseLayer.from_params(tensors[f"{gname}.{i}.weight"],
                                       tensors[f"{gname}.{i}.bias"], act)
                for i, act in enumerate(acts)]

    encoder = FrozenEncoder(tensors["encoder.weight"], tensors["encoder.bias"],
                            meta.get("encoder_activation", "tanh"))
    mlp_a = None
    if meta.get("mlp_a_activations"):
        mlp_a = [DenseLayer.from_params(tensors[f"mlp_a.{i}.weight"],
                                        tensors[f"mlp_a.{i}.bias"], act)
                 for i, act in enumerate(meta["mlp_a_activations"])]
    head = DenseLayer.from_params(tensors["head.weight"], tensors["head.bias"],
                                  "identity")
    model = FusionModel(stack("snn"), encoder, mlp_a, stack("mlp_b"),
                        stack("image_encoder"), head, meta["fusion_mode"])
    if meta.get("g2_normalized"):
        model.g2_mean = tensors["g2_norm.mean"]
        model.g2_std = tensors["g2_norm.std"]
    return model
