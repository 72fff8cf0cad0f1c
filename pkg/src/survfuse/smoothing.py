"""Latent-space smoothing via mixup on single-cell expression profiles.

Stage 1 of the pipeline: a frozen nonlinear encoder maps expression vectors
into a latent space whose geometry between samples is unconstrained. We
simulate bulk expression by convex interpolation of two cell profiles
(lambda drawn fresh per pair per step), push the mixture through the frozen
encoder and a trainable head (MLP-A + linear classifier), and regress the
interpolated one-hot targets with mse. MLP-A learns to straighten the
encoder's latent space; afterwards MLP-A is frozen too and reused by the
survival model as the bulk-RNA feature path.

The smoothness of the composed map E = mlp_a . encoder is quantified by
interpolation_gap: mean L2 distance between E(mix) and the matching convex
combination of E at the endpoints.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .nnet import (DenseLayer, layer_group, load_checkpoint, make_mlp,
                   mlp_backward, mlp_forward, mse_loss, save_checkpoint,
                   sgd_step, step_decay_eta)

DEFAULT_NUM_TYPES = 17  # cell-type categories
DEFAULT_GENE_DIM = 64


# ---------------------------------------------------------------------------
# profiles and mixing


@dataclass(eq=False)
class CellProfile:
    """One cell: non-negative expression vector plus its type label."""

    expression: np.ndarray
    cell_type: int
    one_hot: np.ndarray

    def __post_init__(self):
        self.expression = np.asarray(self.expression, dtype=np.float64).reshape(-1)
        if (self.expression < 0).any():
            raise ValidationError("expression entries must be non-negative")
        self.cell_type = int(self.cell_type)
        self.one_hot = np.asarray(self.one_hot, dtype=np.float64).reshape(-1)
        if not (0 <= self.cell_type < self.one_hot.size):
            raise ValidationError(
                f"cell_type {self.cell_type} outside [0, {self.one_hot.size})")
        expected = np.zeros(self.one_hot.size)
        expected[self.cell_type] = 1.0
        if not np.array_equal(self.one_hot, expected):
            raise ValidationError("one_hot must have a single 1 at cell_type")

    @classmethod
    def make(cls, expression, cell_type: int, num_types: int = DEFAULT_NUM_TYPES):
        cell_type = int(cell_type)
        if not 0 <= cell_type < num_types:
            raise ValidationError(
                f"cell_type {cell_type} outside [0, {num_types})")
        one_hot = np.zeros(num_types)
        one_hot[cell_type] = 1.0
        return cls(expression=expression, cell_type=cell_type, one_hot=one_hot)


@dataclass
class MixupSample:
    mixed_expression: np.ndarray
    lam: float
    target: np.ndarray


def mix_samples(a: CellProfile, b: CellProfile, lam: float) -> MixupSample:
    """Convex combination of two profiles and of their one-hot targets."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")
    if a.expression.size != b.expression.size:
        raise ShapeError(
            f"expression dims differ: {a.expression.size} vs {b.expression.size}")
    if a.one_hot.size != b.one_hot.size:
        raise ShapeError("profiles disagree on the number of cell types")
    return MixupSample(
        mixed_expression=lam * a.expression + (1.0 - lam) * b.expression,
        lam=lam,
        target=lam * a.one_hot + (1.0 - lam) * b.one_hot)


# ---------------------------------------------------------------------------
# frozen encoder


class FrozenEncoder:
    """Deterministic expression → embedding map; parameters are write-locked.

    Stands in for a large pretrained encoder. Any (weight, bias, activation)
    triple can be supplied from a checkpoint file, so externally computed
    projections drop in behind the same interface.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray, activation: str = "tanh"):
        weight = np.array(weight, dtype=np.float64)
        bias = np.array(bias, dtype=np.float64).reshape(-1)
        if weight.ndim != 2:
            raise ShapeError("encoder weight must be 2-D (embed_dim x gene_dim)")
        if bias.size != weight.shape[0]:
            raise ShapeError("encoder bias length must equal embed_dim")
        if activation not in ("tanh", "identity"):
            raise ValidationError(f"unsupported encoder activation '{activation}'")
        weight.setflags(write=False)
        bias.setflags(write=False)
        self.weight = weight
        self.bias = bias
        self.activation = activation
        self.frozen = True

    @property
    def gene_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.weight.shape[0]

    def apply(self, x) -> np.ndarray:
        """Encode a (n, gene_dim) matrix or a single vector."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.gene_dim:
            raise ShapeError(f"input has {x.shape[1]} genes, encoder expects {self.gene_dim}")
        z = x @ self.weight.T + self.bias
        out = np.tanh(z) if self.activation == "tanh" else z
        return out[0] if single else out

    def save(self, path: str) -> None:
        save_checkpoint(path, {"weight": self.weight, "bias": self.bias},
                        meta={"kind": "frozen_encoder", "activation": self.activation})

    @classmethod
    def load(cls, path: str) -> "FrozenEncoder":
        meta, tensors = load_checkpoint(path)
        if meta.get("kind") != "frozen_encoder":
            raise ValidationError(f"{path}: not a frozen-encoder checkpoint")
        return cls(tensors["weight"], tensors["bias"], meta.get("activation", "tanh"))


def default_encoder(gene_dim: int = DEFAULT_GENE_DIM, embed_dim: int = 32,
                    seed: int = 0, scale: float = 2.0) -> FrozenEncoder:
    """Seeded random projection + tanh.

    `scale` controls how far preactivations reach into tanh's saturating
    regime — larger scale, more curvature, a less interpolation-friendly
    latent space.
    """
    if gene_dim <= 0 or embed_dim <= 0:
        raise ValidationError("encoder dims must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE0C]))
    weight = rng.normal(0.0, scale / np.sqrt(gene_dim), size=(embed_dim, gene_dim))
    bias = rng.normal(0.0, 0.1, size=embed_dim)
    return FrozenEncoder(weight, bias, activation="tanh")


# ---------------------------------------------------------------------------
# synthetic cell corpus


@dataclass
class CellCorpusSpec:
    n_cells: int = 850
    gene_dim: int = DEFAULT_GENE_DIM
    num_types: int = DEFAULT_NUM_TYPES
    cluster_scale: float = 1.0   # spread of per-type mean expression
    noise_scale: float = 0.25    # within-type spread
    seed: int = 0

    def __post_init__(self):
        if self.n_cells < 2 or self.gene_dim <= 0 or self.num_types < 2:
            raise ValidationError("corpus needs >= 2 cells, positive gene_dim, >= 2 types")
        if self.cluster_scale < 0 or self.noise_scale < 0:
            raise ValidationError("scales must be non-negative")


def generate_cells(spec: CellCorpusSpec) -> list[CellProfile]:
    """Gaussian-cluster expression profiles, one cluster per cell type.

    Types are assigned round-robin so every type is populated; expression
    is clamped at 0. Per-cell randomness comes from an independent stream
    keyed by (seed, cell index), so generation order never matters.
    """
    mean_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xCE11]))
    means = mean_rng.normal(0.0, spec.cluster_scale, size=(spec.num_types, spec.gene_dim))
    cells = []
    for i in range(spec.n_cells):
        t = i % spec.num_types
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xCE12, i]))
        expr = np.maximum(means[t] + rng.normal(0.0, spec.noise_scale, spec.gene_dim), 0.0)
        cells.append(CellProfile.make(expr, t, spec.num_types))
    return cells


def save_cells(path: str, cells: list[CellProfile]) -> None:
    if not cells:
        raise ValidationError("refusing to write an empty cell corpus")
    gene_dim = cells[0].expression.size
    tmp = path + ".partial"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"gene_{i}" for i in range(gene_dim)] + ["cell_type"])
        for c in cells:
            writer.writerow([repr(float(v)) for v in c.expression] + [c.cell_type])
    os.replace(tmp, path)


def load_cells(path: str, num_types: int = DEFAULT_NUM_TYPES) -> list[CellProfile]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty file")
        if header[-1] != "cell_type" or not all(
                h == f"gene_{i}" for i, h in enumerate(header[:-1])):
            raise ValidationError(f"{path}: unexpected header")
        gene_dim = len(header) - 1
        cells = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != gene_dim + 1:
                raise ValidationError(f"{path}: row {row_no}: expected {gene_dim + 1} fields")
            try:
                expr = np.array([float(v) for v in row[:-1]])
                ctype = int(row[-1])
            except ValueError as exc:
                raise ValidationError(f"{path}: row {row_no}: {exc}") from exc
            if not 0 <= ctype < num_types:
                raise ValidationError(
                    f"{path}: row {row_no}: cell_type {ctype} outside [0, {num_types})")
            cells.append(CellProfile.make(expr, ctype, num_types))
    if not cells:
        raise ValidationError(f"{path}: no data rows")
    return cells


# ---------------------------------------------------------------------------
# stage-1 training


@dataclass
class Stage1Config:
    epochs: int = 8
    steps_per_epoch: int = 60
    batch_pairs: int = 32
    eta: float = 0.5
    # L2 penalty on MLP-A weights only.  Without it the fitted features grow
    # several-fold in norm and the absolute interpolation gap grows with them
    # even as the path straightens; decay pins the feature scale so the
    # straightening shows up in the gap itself.  Above ~0.01 the features
    # collapse toward zero instead, which zeroes the gap but destroys the
    # class signal — keep this small.
    weight_decay: float = 0.003
    hidden_dim: int = 128
    feature_dim: int = 32  # MLP-A output width, consumed by the survival model
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.steps_per_epoch <= 0 or self.batch_pairs <= 0:
            raise ValidationError("epochs must be >= 0, steps and batch_pairs positive")
        if self.eta <= 0:
            raise ValidationError("eta must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")


@dataclass
class Stage1Result:
    mlp_a: list[DenseLayer]
    classifier: DenseLayer
    loss_history: list[float] = field(default_factory=list)


def _stack_mixes(cells, idx_a, idx_b, lams):
    expr = np.stack([c.expression for c in cells])
    hot = np.stack([c.one_hot for c in cells])
    lam = lams[:, None]
    mixed = lam * expr[idx_a] + (1.0 - lam) * expr[idx_b]
    target = lam * hot[idx_a] + (1.0 - lam) * hot[idx_b]
    return mixed, target


def pretrain_mlp_a(cells: list[CellProfile], encoder: FrozenEncoder,
                   cfg: Stage1Config) -> Stage1Result:
    """Train MLP-A + linear classifier on mixed pairs; the encoder is untouched.

    Each step: draw batch_pairs index pairs and fresh lambdas, mix, encode,
    regress the mixed one-hot targets with mse. Loss per step is recorded.
    """
    if len(cells) < 2:
        raise ValidationError("need at least 2 cells to form pairs")
    if len({c.cell_type for c in cells}) < 2:
        raise ValidationError("need at least 2 distinct cell types (mix targets degenerate)")
    num_types = cells[0].one_hot.size  # classifier width follows the corpus

    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA1]))
    mlp_a = make_mlp(encoder.embed_dim, cfg.feature_dim,
                     hidden_dim=cfg.hidden_dim, n_hidden=2, activation="relu", rng=init_rng)
    classifier = DenseLayer(cfg.feature_dim, num_types, activation="identity", rng=init_rng)
    groups = [layer_group("mlp_a", mlp_a), layer_group("classifier", [classifier])]

    step_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA2]))
    total_steps = cfg.epochs * cfg.steps_per_epoch
    history = []
    for step in range(total_steps):
        idx_a = step_rng.integers(0, len(cells), size=cfg.batch_pairs)
        idx_b = step_rng.integers(0, len(cells), size=cfg.batch_pairs)
        lams = step_rng.uniform(0.0, 1.0, size=cfg.batch_pairs)
        mixed, target = _stack_mixes(cells, idx_a, idx_b, lams)
        feat = mlp_forward(mlp_a, encoder.apply(mixed))
        pred = classifier.forward(feat)
        loss, grad = mse_loss(pred, target)
        mlp_backward(mlp_a, classifier.backward(grad))
        if cfg.weight_decay > 0.0:
            for layer in mlp_a:  # decay weights only; biases and classifier float free
                layer.grad_weight += cfg.weight_decay * layer.weight
        sgd_step(groups, step_decay_eta(cfg.eta, step, total_steps))
        history.append(loss)
    return Stage1Result(mlp_a=mlp_a, classifier=classifier, loss_history=history)


def interpolation_gap(encoder: FrozenEncoder, mlp_a: list[DenseLayer],
                      pairs: list[tuple[CellProfile, CellProfile]], lambdas) -> float:
    """Mean L2 distance between E(mix) and the convex combination of E at
    the endpoints, with E = mlp_a composed on the encoder. 0 = perfectly
    linear latent path."""
    if not pairs:
        raise ValidationError("interpolation_gap needs at least one pair")
    lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1)
    if lambdas.size != len(pairs):
        raise ShapeError(f"{len(pairs)} pairs but {lambdas.size} lambdas")
    if ((lambdas < 0) | (lambdas > 1)).any():
        raise ValidationError("lambdas must lie in [0, 1]")

    def embed(x):
        return mlp_forward(mlp_a, encoder.apply(x))

    a = np.stack([p[0].expression for p in pairs])
    b = np.stack([p[1].expression for p in pairs])
    lam = lambdas[:, None]
    e_mix = embed(lam * a + (1.0 - lam) * b)
    e_interp = lam * embed(a) + (1.0 - lam) * embed(b)
    return float(np.linalg.norm(e_mix - e_interp, axis=1).mean())


def gap_probe_pairs(cells: list[CellProfile], n_pairs: int, seed: int):
    """Deterministic held-out probe set for before/after gap comparisons."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA3]))
    idx_a = rng.integers(0, len(cells), size=n_pairs)
    idx_b = rng.integers(0, len(cells), size=n_pairs)
    lams = rng.uniform(0.0, 1.0, size=n_pairs)
    pairs = [(cells[i], cells[j]) for i, j in zip(idx_a, idx_b)]
    return pairs, lams


def save_stage1(path: str, result: Stage1Result, encoder: FrozenEncoder) -> None:
    """Persist MLP-A (+ classifier and the encoder it was trained against)."""
    tensors = {}
    for i, layer in enumerate(result.mlp_a):
        tensors[f"mlp_a.{i}.weight"] = layer.weight
        tensors[f"mlp_a.{i}.bias"] = layer.bias
    tensors["classifier.weight"] = result.classifier.weight
    tensors["classifier.bias"] = result.classifier.bias
    tensors["encoder.weight"] = encoder.weight
    tensors["encoder.bias"] = encoder.bias
    meta = {
        "kind": "stage1",
        "mlp_a_activations": [layer.activation for layer in result.mlp_a],
        "classifier_activation": result.classifier.activation,
        "encoder_activation": encoder.activation,
        "final_loss": result.loss_history[-1] if result.loss_history else None,
    }
    save_checkpoint(path, tensors, meta)


def load_stage1(path: str) -> tuple[list[DenseLayer], DenseLayer, FrozenEncoder]:
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "stage1":
        raise ValidationError(f"{path}: not a stage-1 checkpoint")
    acts = meta["mlp_a_activations"]
    mlp_a = []
    for i, act in enumerate(acts):
        try:
            w = tensors[f"mlp_a.{i}.weight"]
            bvec = tensors[f"mlp_a.{i}.bias"]
        except KeyError as exc:
            raise ValidationError(f"{path}: missing tensor for mlp_a layer {i}") from exc
        mlp_a.append(DenseLayer.from_params(w, bvec, act))
    classifier = DenseLayer.from_params(tensors["classifier.weight"],
                                        tensors["classifier.bias"],
                                        meta["classifier_activation"])
    encoder = FrozenEncoder(tensors["encoder.weight"], tensors["encoder.bias"],
                            meta.get("encoder_activation", "tanh"))
    return mlp_a, classifier, encoder
