"""Model contracts: dimension rule, encoders, propagation, fusion, objective,
exact ablation code paths, checkpoint format."""

import math

import numpy as np
import pytest

from alignrec.errors import ConfigError, DataFormatError
from alignrec.gradcheck import grad_check
from alignrec.model import (
    HyperParams,
    ModelParams,
    Recommender,
    TripletBatch,
    bpr_loss,
    build_propagation_operator,
    encode_items,
    fuse,
    load_checkpoint,
    projection_param_count,
    propagate,
    reduce_modalities,
    save_checkpoint,
    score,
    target_dim,
)
from alignrec.tensor import ParameterError, Tensor, UsageError


def tiny_model(seed=0, variant="full", **hp_kwargs):
    defaults = dict(reduction=2, id_dim=8, branch_channels=4, graph_layers=2)
    defaults.update(hp_kwargs)
    hp = HyperParams(**defaults)
    rng = np.random.default_rng(seed)
    params = ModelParams.create(5, 8, 32, 32, hp, rng,
                                modalities=Recommender.modalities_for(variant))
    pairs = []
    for u in range(5):
        items = rng.choice(8, size=3, replace=False)
        pairs.extend((u, int(i)) for i in items)
    pairs = np.array(pairs, dtype=np.int64)
    operator = build_propagation_operator(pairs, 5, 8)
    x_visual = Tensor(rng.standard_normal((8, 32)) * 0.3)
    x_text = Tensor(rng.standard_normal((8, 32)) * 0.3)
    if variant == "text-only":
        x_visual = None
    if variant == "visual-only":
        x_text = None
    model = Recommender(params, hp, x_visual, x_text, operator, variant)
    negs = []
    rng2 = np.random.default_rng(seed + 99)
    pos_sets = {}
    for u, i in pairs:
        pos_sets.setdefault(int(u), set()).add(int(i))
    for u, _ in pairs:
        while True:
            j = int(rng2.integers(0, 8))
            if j not in pos_sets[int(u)]:
                negs.append(j)
                break
    batch = TripletBatch(users=pairs[:, 0].copy(), pos_items=pairs[:, 1].copy(),
                         neg_items=np.array(negs, dtype=np.int64))
    return model, batch, pairs


# ---------------------------------------------------------------------------
# dimension rule and projections
# ---------------------------------------------------------------------------

def test_target_dim_pretrained_extractor_widths():
    # VGG16-style visual features against sentence-embedding text features
    assert target_dim(4096, 384, 8) == 48


def test_target_dim_identity_and_errors():
    assert target_dim(100, 60, 1) == 60
    with pytest.raises(ConfigError, match="32.*16.*16|16.*16.*32"):
        target_dim(16, 16, 32)
    with pytest.raises(ParameterError):
        target_dim(16, 16, 0)


def test_projection_param_count_scales_with_reduction():
    full = projection_param_count(512, 384, 1)
    reduced = projection_param_count(512, 384, 8)
    assert full == 384 * (512 + 384)
    assert reduced == 48 * (512 + 384)
    assert reduced * 8 == full


def test_reduce_modalities_zero_and_identity():
    hp = HyperParams(reduction=1, id_dim=4, branch_channels=4)
    params = ModelParams.create(3, 4, 6, 6, hp, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).standard_normal((4, 6)))
    params.visual_reduce.data = np.eye(6)
    v, t = reduce_modalities(x, x, params)
    assert np.array_equal(v.data, x.data)
    params.text_reduce.data[:] = 0.0
    _, t = reduce_modalities(x, x, params)
    assert np.array_equal(t.data, np.zeros((4, 6)))


# ---------------------------------------------------------------------------
# item encoding and ablation bypass
# ---------------------------------------------------------------------------

def test_encode_items_bypass_is_bit_identical_to_reduction():
    model, _, _ = tiny_model()
    reduced_v, reduced_t = reduce_modalities(model.x_visual, model.x_text,
                                             model.params)
    h_v, h_t = encode_items(model.x_visual, model.x_text, model.params,
                            refine=False)
    assert np.array_equal(h_v.data, reduced_v.data)
    assert np.array_equal(h_t.data, reduced_t.data)


def test_encode_items_shapes_and_gradients_flow():
    from alignrec.tensor import Tape, backward, sum_all
    model, _, _ = tiny_model()
    with Tape() as tape:
        h_v, h_t = encode_items(model.x_visual, model.x_text, model.params)
        loss = sum_all(h_v) if h_t is None else sum_all(h_v)
    assert h_v.shape == (8, 16) and h_t.shape == (8, 16)
    backward(loss, tape)
    assert np.any(model.params.visual_reduce.grad != 0.0)
    assert np.any(model.params.dream_visual.point_kernel.grad != 0.0)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------

def test_propagate_zero_layers_is_identity():
    model, _, pairs = tiny_model()
    p, q = model.params.user_emb, model.params.item_emb
    out_p, out_q = propagate(p, q, model.operator, 0)
    assert out_p is p and out_q is q


def test_propagate_two_node_oracle():
    pairs = np.array([[0, 0]], dtype=np.int64)
    operator = build_propagation_operator(pairs, 1, 1)
    p = Tensor(np.array([[2.0, 4.0]]))
    q = Tensor(np.array([[-1.0, 3.0]]))
    out_p, out_q = propagate(p, q, operator, 1)
    assert np.allclose(out_p.data, 0.5 * (p.data + q.data))
    assert np.allclose(out_q.data, 0.5 * (p.data + q.data))


def test_propagation_operator_row_sums_at_most_one():
    rng = np.random.default_rng(0)
    pairs = np.array([(u, int(i)) for u in range(10)
                      for i in rng.choice(15, size=4, replace=False)],
                     dtype=np.int64)
    operator = build_propagation_operator(pairs, 10, 15)
    row_sums = operator @ np.ones(25)
    assert np.all(row_sums <= 1.0 + 1e-12)


def test_propagation_degree_zero_guard():
    pairs = np.array([[0, 0]], dtype=np.int64)
    operator = build_propagation_operator(pairs, 2, 1)  # user 1 isolated
    p = Tensor(np.array([[1.0, 1.0], [5.0, -3.0]]))
    q = Tensor(np.array([[2.0, 2.0]]))
    out_p, _ = propagate(p, q, operator, 3)
    assert np.allclose(out_p.data[1], p.data[1])


# ---------------------------------------------------------------------------
# fusion and scoring
# ---------------------------------------------------------------------------

def test_fuse_zero_projections_gives_collaborative_items():
    model, _, _ = tiny_model()
    model.params.visual_fuse.data[:] = 0.0
    model.params.text_fuse.data[:] = 0.0
    _, item_repr, _, _ = model.representations()
    p_star, q_star = propagate(model.params.user_emb, model.params.item_emb,
                               model.operator, model.hp.graph_layers)
    assert np.allclose(item_repr.data, q_star.data)


def test_fuse_full_is_average_of_single_contributions():
    model, _, _ = tiny_model()
    h_v, h_t = encode_items(model.x_visual, model.x_text, model.params)
    p_star, q_star = propagate(model.params.user_emb, model.params.item_emb,
                               model.operator, 2)
    _, both = fuse(p_star, q_star, h_v, h_t, model.params)
    _, only_v = fuse(p_star, q_star, h_v, None, model.params)
    _, only_t = fuse(p_star, q_star, None, h_t, model.params)
    lhs = both.data - q_star.data
    rhs = 0.5 * ((only_v.data - q_star.data) + (only_t.data - q_star.data))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_fuse_text_only_term():
    model, _, _ = tiny_model(variant="text-only")
    h_v, h_t = encode_items(None, model.x_text, model.params)
    p_star, q_star = propagate(model.params.user_emb, model.params.item_emb,
                               model.operator, 2)
    _, item_repr = fuse(p_star, q_star, None, h_t, model.params)
    expected = q_star.data + h_t.data @ model.params.text_fuse.data
    assert np.max(np.abs(item_repr.data - expected)) <= 1e-12


def test_score_cases():
    e = np.array([[0.6, 0.8], [1.0, 0.0]])
    assert score(e, e, 0, 0) == pytest.approx(1.0)
    assert score(e, np.array([[0.0, 1.0]]), 1, 0) == 0.0
    rng = np.random.default_rng(0)
    users, items = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
    expected = sum(users[2, k] * items[4, k] for k in range(4))
    assert abs(score(users, items, 2, 4) - expected) <= 1e-12
    with pytest.raises(IndexError):
        score(users, items, 3, 0)
    with pytest.raises(IndexError):
        score(users, items, 0, 5)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def test_bpr_zero_margin_is_log_two_per_triple():
    users = Tensor(np.ones((1, 3)))
    items = Tensor(np.ones((2, 3)))  # identical scores for pos and neg
    batch = TripletBatch(users=np.array([0]), pos_items=np.array([0]),
                         neg_items=np.array([1]))
    assert abs(bpr_loss(batch, users, items).item() - math.log(2.0)) <= 1e-12


def test_bpr_unit_margin_closed_form():
    users = Tensor(np.array([[1.0]]))
    items = Tensor(np.array([[1.0], [0.0]]))
    batch = TripletBatch(users=np.array([0]), pos_items=np.array([0]),
                         neg_items=np.array([1]))
    expected = -math.log(1.0 / (1.0 + math.exp(-1.0)))
    assert abs(bpr_loss(batch, users, items).item() - expected) <= 1e-12
    assert abs(expected - 0.313262) <= 1e-6


def test_bpr_decreases_with_margin():
    batch = TripletBatch(users=np.array([0]), pos_items=np.array([0]),
                         neg_items=np.array([1]))
    losses = []
    for margin in (0.0, 0.5, 1.0, 2.0):
        items = Tensor(np.array([[margin], [0.0]]))
        losses.append(bpr_loss(batch, Tensor(np.array([[1.0]])), items).item())
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_bpr_empty_batch_errors():
    empty = TripletBatch(users=np.array([], dtype=np.int64),
                         pos_items=np.array([], dtype=np.int64),
                         neg_items=np.array([], dtype=np.int64))
    with pytest.raises(UsageError):
        bpr_loss(empty, Tensor(np.ones((1, 2))), Tensor(np.ones((1, 2))))


def test_total_loss_all_zero_weights_equals_bpr():
    model, batch, _ = tiny_model(lambda_cl=0.0, lambda_mmd=0.0, lambda_reg=0.0)
    loss, parts = model.total_loss(batch)
    user_repr, item_repr, _, _ = model.representations()
    expected = bpr_loss(batch, user_repr, item_repr).item() / len(batch)
    assert loss.item() == expected
    assert parts["mmd"] == 0.0 and parts["infonce"] == 0.0 and parts["reg"] == 0.0


def test_total_loss_zero_params_zero_regularizer():
    model, batch, _ = tiny_model(lambda_cl=0.0, lambda_mmd=0.0, lambda_reg=0.5)
    for p in model.params.regularized():
        p.data[:] = 0.0
    _, parts = model.total_loss(batch)
    assert parts["reg"] == 0.0


def test_total_loss_is_weighted_sum_of_independent_terms():
    from alignrec.align import AlignConfig, infonce, mmd_squared
    model, batch, _ = tiny_model()
    hp = model.hp
    loss, _ = model.total_loss(batch)

    user_repr, item_repr, h_v, h_t = model.representations()
    expected = bpr_loss(batch, user_repr, item_repr).item() / len(batch)
    unique_pos = np.unique(batch.pos_items)
    hv = Tensor(h_v.data[unique_pos])
    ht = Tensor(h_t.data[unique_pos])
    expected += hp.lambda_mmd * mmd_squared(hv, ht, hp.align_config()).item()
    expected += hp.lambda_cl * infonce(hv, ht, hp.temperature).item()
    expected += hp.lambda_reg * sum(float((p.data ** 2).sum())
                                    for p in model.params.regularized())
    assert abs(loss.item() - expected) <= 1e-12


def test_no_ga_variant_is_bit_identical_to_bpr_plus_reg():
    from alignrec.tensor import add, scale, square, sum_all
    model, batch, _ = tiny_model(variant="no-ga")
    loss, _ = model.total_loss(batch)

    user_repr, item_repr, _, _ = model.representations()
    expected = scale(bpr_loss(batch, user_repr, item_repr), 1.0 / len(batch))
    reg = None
    for p in model.params.regularized():
        term = sum_all(square(p))
        reg = term if reg is None else add(reg, term)
    expected = add(expected, scale(reg, model.hp.lambda_reg))
    assert loss.item() == expected.item()


def test_total_loss_gradient_matches_finite_differences():
    model, batch, _ = tiny_model(seed=1)
    report = grad_check(lambda: model.total_loss(batch)[0],
                        model.params.named(), tol=1e-4, max_coords_per_param=6)
    assert report.passed, report.max_rel_error


def test_item_scaling_preserves_rankings():
    model, _, _ = tiny_model()
    user_repr, item_repr, _, _ = model.representations()
    scores = user_repr.data @ item_repr.data.T
    scaled = user_repr.data @ (4.2 * item_repr.data).T
    for u in range(scores.shape[0]):
        assert np.array_equal(np.argsort(-scores[u], kind="stable"),
                              np.argsort(-scaled[u], kind="stable"))


def test_reduces_to_matrix_factorization_bpr():
    from alignrec.tensor import scale
    model, batch, _ = tiny_model(lambda_cl=0.0, lambda_mmd=0.0, lambda_reg=0.0,
                                 graph_layers=0)
    model.params.visual_fuse.data[:] = 0.0
    model.params.text_fuse.data[:] = 0.0
    loss, _ = model.total_loss(batch)
    plain = bpr_loss(batch, model.params.user_emb, model.params.item_emb)
    assert loss.item() == scale(plain, 1.0 / len(batch)).item()


def test_unknown_variant_rejected():
    model, _, _ = tiny_model()
    with pytest.raises(ConfigError, match="no-la"):
        Recommender(model.params, model.hp, model.x_visual, model.x_text,
                    model.operator, "bogus")


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model, _, _ = tiny_model(seed=2)
    path = tmp_path / "model.mrec"
    save_checkpoint(path, model.params.named())
    arrays = load_checkpoint(path)
    for name, tensor in model.params.named().items():
        assert np.array_equal(arrays[name], tensor.data)

    clone, _, _ = tiny_model(seed=3)
    clone.params.load_state(arrays)
    for name, tensor in clone.params.named().items():
        assert np.array_equal(tensor.data, model.params.named()[name].data)


def test_checkpoint_bytes_are_deterministic(tmp_path):
    model, _, _ = tiny_model(seed=4)
    a, b = tmp_path / "a.mrec", tmp_path / "b.mrec"
    save_checkpoint(a, model.params.named())
    save_checkpoint(b, model.params.named())
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    model, _, _ = tiny_model(seed=5)
    path = tmp_path / "model.mrec"
    save_checkpoint(path, model.params.named())
    blob = path.read_bytes()

    bad = tmp_path / "bad.mrec"
    bad.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(DataFormatError, match="magic"):
        load_checkpoint(bad)

    short = tmp_path / "short.mrec"
    short.write_bytes(blob[:len(blob) - 9])
    with pytest.raises(DataFormatError, match="truncated"):
        load_checkpoint(short)


def test_load_state_shape_mismatch(tmp_path):
    model, _, _ = tiny_model(seed=6)
    path = tmp_path / "model.mrec"
    save_checkpoint(path, model.params.named())
    arrays = load_checkpoint(path)
    arrays["user_emb"] = arrays["user_emb"][:, :4]
    with pytest.raises(DataFormatError, match="user_emb"):
        model.params.load_state(arrays)
