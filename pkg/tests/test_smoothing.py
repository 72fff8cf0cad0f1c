"""Mixup construction, the frozen encoder, and stage-1 pretraining."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survfuse.errors import ShapeError, ValidationError
from survfuse.nnet import DenseLayer, mlp_forward
from survfuse.smoothing import (CellCorpusSpec, CellProfile, FrozenEncoder,
                                Stage1Config, default_encoder, gap_probe_pairs,
                                generate_cells, interpolation_gap, load_cells,
                                load_stage1, mix_samples, pretrain_mlp_a,
                                save_cells, save_stage1)


def _profile(expr, ctype, num_types=4):
    return CellProfile.make(np.asarray(expr, dtype=np.float64), ctype, num_types)


# ---------------------------------------------------------------------------
# mixup


def test_mix_endpoints_recover_inputs():
    a = _profile([1.0, 2.0], 0)
    b = _profile([5.0, 7.0], 2)
    at_one = mix_samples(a, b, 1.0)
    at_zero = mix_samples(a, b, 0.0)
    assert np.array_equal(at_one.mixed_expression, a.expression)
    assert np.array_equal(at_one.target, a.one_hot)
    assert np.array_equal(at_zero.mixed_expression, b.expression)
    assert np.array_equal(at_zero.target, b.one_hot)


def test_mix_arithmetic_oracle():
    a = _profile([4.0, 0.0], 1)
    b = _profile([0.0, 8.0], 3)
    m = mix_samples(a, b, 0.25)
    assert m.mixed_expression.tolist() == [1.0, 6.0]
    assert m.target.tolist() == [0.0, 0.25, 0.0, 0.75]


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 2 ** 31 - 1))
def test_mix_symmetry_and_simplex(lam, seed):
    rng = np.random.default_rng(seed)
    a = _profile(rng.uniform(0, 3, size=5), int(rng.integers(0, 4)))
    b = _profile(rng.uniform(0, 3, size=5), int(rng.integers(0, 4)))
    fwd = mix_samples(a, b, lam)
    rev = mix_samples(b, a, 1.0 - lam)
    assert np.allclose(fwd.mixed_expression, rev.mixed_expression, atol=1e-12)
    assert np.allclose(fwd.target, rev.target, atol=1e-12)
    assert fwd.target.sum() == pytest.approx(1.0, abs=1e-12)
    assert (fwd.target >= 0).all()


def test_mix_rejects_bad_lambda_and_shapes():
    a = _profile([1.0], 0)
    b = _profile([2.0], 1)
    with pytest.raises(ValidationError):
        mix_samples(a, b, 1.5)
    with pytest.raises(ValidationError):
        mix_samples(a, b, -0.1)
    with pytest.raises(ShapeError):
        mix_samples(a, _profile([1.0, 2.0], 0), 0.5)


def test_profile_validation():
    with pytest.raises(ValidationError):
        _profile([-1.0], 0)
    with pytest.raises(ValidationError):
        _profile([1.0], 7, num_types=4)
    with pytest.raises(ValidationError):
        CellProfile(expression=np.ones(2), cell_type=0, one_hot=np.array([0.0, 1.0]))


# ---------------------------------------------------------------------------
# frozen encoder


def test_default_encoder_is_seed_deterministic():
    e1 = default_encoder(gene_dim=8, embed_dim=4, seed=3)
    e2 = default_encoder(gene_dim=8, embed_dim=4, seed=3)
    e3 = default_encoder(gene_dim=8, embed_dim=4, seed=4)
    assert np.array_equal(e1.weight, e2.weight)
    assert np.array_equal(e1.bias, e2.bias)
    assert not np.array_equal(e1.weight, e3.weight)


def test_encoder_zero_input_yields_tanh_bias():
    enc = default_encoder(gene_dim=6, embed_dim=3, seed=0)
    out = enc.apply(np.zeros(6))
    assert np.allclose(out, np.tanh(enc.bias), atol=1e-15)


def test_encoder_parameters_are_write_locked():
    enc = default_encoder(gene_dim=4, embed_dim=2, seed=0)
    with pytest.raises(ValueError):
        enc.weight[0, 0] = 99.0
    with pytest.raises(ValueError):
        enc.bias[0] = 99.0


def test_encoder_vector_and_matrix_agree():
    enc = default_encoder(gene_dim=5, embed_dim=3, seed=1)
    x = np.random.default_rng(0).normal(size=5)
    assert np.array_equal(enc.apply(x), enc.apply(x[None, :])[0])


def test_encoder_shape_and_activation_errors():
    with pytest.raises(ShapeError):
        FrozenEncoder(np.zeros(3), np.zeros(3))
    with pytest.raises(ShapeError):
        FrozenEncoder(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ValidationError):
        FrozenEncoder(np.zeros((2, 3)), np.zeros(2), activation="relu")
    enc = default_encoder(gene_dim=4, embed_dim=2, seed=0)
    with pytest.raises(ShapeError):
        enc.apply(np.zeros(5))


def test_encoder_checkpoint_round_trip(tmp_path):
    enc = default_encoder(gene_dim=7, embed_dim=4, seed=9)
    path = str(tmp_path / "enc.ckpt")
    enc.save(path)
    back = FrozenEncoder.load(path)
    assert np.array_equal(back.weight, enc.weight)
    assert np.array_equal(back.bias, enc.bias)
    assert back.activation == enc.activation


# ---------------------------------------------------------------------------
# synthetic corpus


def test_generate_cells_smoke():
    spec = CellCorpusSpec(n_cells=40, gene_dim=6, num_types=5, seed=2)
    cells = generate_cells(spec)
    assert len(cells) == 40
    assert {c.cell_type for c in cells} == set(range(5))
    assert all((c.expression >= 0).all() for c in cells)
    again = generate_cells(spec)
    assert all(np.array_equal(a.expression, b.expression)
               for a, b in zip(cells, again))


def test_corpus_spec_validation():
    with pytest.raises(ValidationError):
        CellCorpusSpec(n_cells=1)
    with pytest.raises(ValidationError):
        CellCorpusSpec(num_types=1)
    with pytest.raises(ValidationError):
        CellCorpusSpec(noise_scale=-0.5)


def test_cells_csv_round_trip(tmp_path):
    spec = CellCorpusSpec(n_cells=12, gene_dim=4, num_types=3, seed=5)
    cells = generate_cells(spec)
    path = str(tmp_path / "cells.csv")
    save_cells(path, cells)
    back = load_cells(path, num_types=3)
    assert len(back) == len(cells)
    for a, b in zip(cells, back):
        assert np.array_equal(a.expression, b.expression)  # repr round-trip is exact
        assert a.cell_type == b.cell_type
    save_cells(str(tmp_path / "cells2.csv"), back)
    assert (tmp_path / "cells.csv").read_bytes() == (tmp_path / "cells2.csv").read_bytes()


def test_load_cells_reports_offending_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("gene_0,gene_1,cell_type\n1.0,2.0,0\n1.0,oops,1\n")
    with pytest.raises(ValidationError, match="row 3"):
        load_cells(str(path), num_types=3)
    path.write_text("gene_0,gene_1,cell_type\n1.0,2.0,9\n")
    with pytest.raises(ValidationError, match="row 2"):
        load_cells(str(path), num_types=3)
    path.write_text("gene_0,gene_1,cell_type\n1.0,0\n")
    with pytest.raises(ValidationError, match="row 2"):
        load_cells(str(path), num_types=3)
    path.write_text("wrong,header\n")
    with pytest.raises(ValidationError, match="header"):
        load_cells(str(path))


# ---------------------------------------------------------------------------
# stage-1 pretraining


@pytest.fixture(scope="module")
def trained_stage1():
    # default geometry: the gap comparison is calibrated for this regime
    cells = generate_cells(CellCorpusSpec(seed=0))
    encoder = default_encoder(seed=0)
    cfg = Stage1Config(seed=0)
    result = pretrain_mlp_a(cells, encoder, cfg)
    return cells, encoder, cfg, result


def test_zero_epochs_returns_untouched_init():
    cells = generate_cells(CellCorpusSpec(n_cells=10, gene_dim=4, num_types=3, seed=1))
    encoder = default_encoder(gene_dim=4, embed_dim=3, seed=1)
    cfg = Stage1Config(epochs=0, hidden_dim=8, feature_dim=3, seed=7)
    r1 = pretrain_mlp_a(cells, encoder, cfg)
    r2 = pretrain_mlp_a(cells, encoder, cfg)
    assert r1.loss_history == []
    for la, lb in zip(r1.mlp_a, r2.mlp_a):
        assert np.array_equal(la.weight, lb.weight)
        assert np.array_equal(la.bias, lb.bias)


def test_pretrain_is_deterministic(trained_stage1):
    cells, encoder, cfg, result = trained_stage1
    rerun = pretrain_mlp_a(cells, encoder, cfg)
    assert rerun.loss_history == result.loss_history
    for la, lb in zip(rerun.mlp_a, result.mlp_a):
        assert np.array_equal(la.weight, lb.weight)


def test_pretrain_leaves_encoder_untouched(trained_stage1):
    cells, encoder, cfg, _ = trained_stage1
    w_before = encoder.weight.copy()
    b_before = encoder.bias.copy()
    pretrain_mlp_a(cells, encoder, cfg)
    assert np.array_equal(encoder.weight, w_before)
    assert np.array_equal(encoder.bias, b_before)


def test_pretrain_input_validation():
    encoder = default_encoder(gene_dim=4, embed_dim=3, seed=0)
    cfg = Stage1Config(epochs=1, hidden_dim=8, feature_dim=3)
    with pytest.raises(ValidationError):
        pretrain_mlp_a([_profile([1.0] * 4, 0)], encoder, cfg)
    same_type = [_profile([1.0] * 4, 2), _profile([2.0] * 4, 2)]
    with pytest.raises(ValidationError):
        pretrain_mlp_a(same_type, encoder, cfg)
    with pytest.raises(ValidationError):
        Stage1Config(eta=0.0)
    with pytest.raises(ValidationError):
        Stage1Config(weight_decay=-0.1)


def test_epoch_mean_loss_decreases(trained_stage1):
    _, _, cfg, result = trained_stage1
    per_step = np.array(result.loss_history)
    epoch_means = per_step.reshape(cfg.epochs, cfg.steps_per_epoch).mean(axis=1)
    assert all(b < a for a, b in zip(epoch_means, epoch_means[1:]))


def test_pure_cell_classification_accuracy(trained_stage1):
    # unmixed cells are the lambda = 1 corner of the mixup region
    cells, encoder, _, result = trained_stage1
    expr = np.stack([c.expression for c in cells])
    labels = np.array([c.cell_type for c in cells])
    feats = mlp_forward(result.mlp_a, encoder.apply(expr))
    pred = result.classifier.forward(feats).argmax(axis=1)
    assert (pred == labels).mean() >= 0.9


def test_training_shrinks_interpolation_gap(trained_stage1):
    cells, encoder, cfg, result = trained_stage1
    pairs, lams = gap_probe_pairs(cells, n_pairs=128, seed=100)
    fresh = pretrain_mlp_a(cells, encoder, Stage1Config(epochs=0, seed=cfg.seed))
    before = interpolation_gap(encoder, fresh.mlp_a, pairs, lams)
    after = interpolation_gap(encoder, result.mlp_a, pairs, lams)
    assert after < before


def test_stage1_checkpoint_round_trip(tmp_path, trained_stage1):
    cells, encoder, _, result = trained_stage1
    path = str(tmp_path / "stage1.ckpt")
    save_stage1(path, result, encoder)
    mlp_a, classifier, enc = load_stage1(path)
    x = np.stack([c.expression for c in cells[:5]])
    want = mlp_forward(result.mlp_a, encoder.apply(x))
    got = mlp_forward(mlp_a, enc.apply(x))
    assert np.array_equal(want, got)
    assert np.array_equal(classifier.weight, result.classifier.weight)


def test_load_stage1_rejects_other_kinds(tmp_path):
    enc = default_encoder(gene_dim=4, embed_dim=2, seed=0)
    path = str(tmp_path / "enc.ckpt")
    enc.save(path)
    with pytest.raises(ValidationError):
        load_stage1(path)


# ---------------------------------------------------------------------------
# interpolation gap


def test_gap_zero_at_lambda_corners():
    cells = generate_cells(CellCorpusSpec(n_cells=6, gene_dim=4, num_types=3, seed=3))
    encoder = default_encoder(gene_dim=4, embed_dim=3, seed=3)
    mlp = pretrain_mlp_a(cells, encoder,
                         Stage1Config(epochs=0, hidden_dim=8, feature_dim=3)).mlp_a
    pairs = [(cells[0], cells[1]), (cells[2], cells[3])]
    assert interpolation_gap(encoder, mlp, pairs, [0.0, 1.0]) == 0.0


def test_gap_zero_for_linear_embedding():
    # identity encoder composed with identity layers is affine, so the
    # latent path through any mix is exactly the chord
    d = 4
    enc = FrozenEncoder(np.eye(d), np.zeros(d), activation="identity")
    mlp = [DenseLayer.from_params(np.eye(d), np.zeros(d), "identity")]
    a = _profile([1.0, 0.0, 2.0, 0.5], 0)
    b = _profile([0.0, 3.0, 1.0, 2.5], 1)
    gap = interpolation_gap(enc, mlp, [(a, b)], [0.37])
    assert gap == pytest.approx(0.0, abs=1e-12)


def test_gap_validation():
    enc = default_encoder(gene_dim=4, embed_dim=2, seed=0)
    mlp = [DenseLayer.from_params(np.zeros((2, 2)), np.zeros(2), "identity")]
    a = _profile([1.0] * 4, 0)
    b = _profile([2.0] * 4, 1)
    with pytest.raises(ValidationError):
        interpolation_gap(enc, mlp, [], [])
    with pytest.raises(ShapeError):
        interpolation_gap(enc, mlp, [(a, b)], [0.5, 0.6])
    with pytest.raises(ValidationError):
        interpolation_gap(enc, mlp, [(a, b)], [1.5])


def test_gap_probe_pairs_deterministic():
    cells = generate_cells(CellCorpusSpec(n_cells=20, gene_dim=4, num_types=3, seed=0))
    p1, l1 = gap_probe_pairs(cells, n_pairs=10, seed=42)
    p2, l2 = gap_probe_pairs(cells, n_pairs=10, seed=42)
    assert np.array_equal(l1, l2)
    assert all(x is y for (x, _), (y, _) in zip(p1, p2))
