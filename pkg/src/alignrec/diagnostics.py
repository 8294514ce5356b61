"""Seeded gradient-check suite and alignment diagnostics for the CLI."""

from __future__ import annotations

import numpy as np

from .align import AlignConfig, infonce, mmd_squared
from .data import save_fmat
from .dream import DreamConfig, DreamParams, dream_forward
from .errors import ConfigError
from .gradcheck import GradCheckReport, grad_check
from .model import (
    HyperParams,
    ModelParams,
    Recommender,
    TripletBatch,
    bpr_loss,
    build_propagation_operator,
)
from .tensor import Tensor, mul, sum_all


def _random_triples(rng: np.random.Generator, n_users: int, n_items: int,
                    per_user: int) -> tuple[np.ndarray, TripletBatch]:
    pairs = []
    positives = []
    for u in range(n_users):
        items = rng.choice(n_items, size=per_user, replace=False)
        positives.append(set(int(i) for i in items))
        pairs.extend((u, int(i)) for i in items)
    pairs = np.array(pairs, dtype=np.int64)
    negs = []
    for u, _ in pairs:
        while True:
            j = int(rng.integers(0, n_items))
            if j not in positives[u]:
                negs.append(j)
                break
    batch = TripletBatch(users=pairs[:, 0].copy(), pos_items=pairs[:, 1].copy(),
                         neg_items=np.array(negs, dtype=np.int64))
    return pairs, batch


def build_suite(seed: int = 0) -> list[tuple[str, object, dict]]:
    """Named scalar functions with their parameter dicts, all on one seeded
    (5 users, 8 items, width 16, 4 branch channels) instance."""
    rng = np.random.default_rng(seed)
    suite = []

    # dilated refinement block end to end
    cfg = DreamConfig(input_length=16, branch_channels=4, attention_reduction=4)
    dream = DreamParams.create(cfg, rng)
    x = Tensor(rng.standard_normal((3, 16)), requires_grad=True)
    probe = Tensor(rng.standard_normal((3, 16)))
    dream_params = {"input": x, **dream.named("dream")}

    def dream_loss():
        return sum_all(mul(dream_forward(x, dream, cfg), probe))

    suite.append(("dream_forward", dream_loss, dream_params))

    # distribution distance between two trainable sample sets
    align_cfg = AlignConfig(bandwidths=(1.0, 1.5, 2.0))
    v = Tensor(rng.standard_normal((8, 16)), requires_grad=True)
    t = Tensor(rng.standard_normal((8, 16)) + 0.3, requires_grad=True)
    suite.append(("mmd_squared", lambda: mmd_squared(v, t, align_cfg),
                  {"first": v, "second": t}))

    v2 = Tensor(rng.standard_normal((8, 16)), requires_grad=True)
    t2 = Tensor(rng.standard_normal((8, 16)), requires_grad=True)
    suite.append(("infonce", lambda: infonce(v2, t2, 0.2),
                  {"first": v2, "second": t2}))

    # pairwise ranking loss on trainable representations
    users = Tensor(rng.standard_normal((5, 8)), requires_grad=True)
    items = Tensor(rng.standard_normal((8, 8)), requires_grad=True)
    _, bpr_batch = _random_triples(rng, 5, 8, 2)
    suite.append(("bpr_loss", lambda: bpr_loss(bpr_batch, users, items),
                  {"user_repr": users, "item_repr": items}))

    # the joint objective over a full model instance
    hp = HyperParams(reduction=2, id_dim=8, branch_channels=4, graph_layers=2)
    model_rng = np.random.default_rng(seed + 1)
    params = ModelParams.create(5, 8, 32, 32, hp, model_rng)
    pairs, batch = _random_triples(model_rng, 5, 8, 3)
    operator = build_propagation_operator(pairs, 5, 8)
    x_visual = Tensor(model_rng.standard_normal((8, 32)))
    x_text = Tensor(model_rng.standard_normal((8, 32)))
    model = Recommender(params, hp, x_visual, x_text, operator)
    suite.append(("total_loss", lambda: model.total_loss(batch)[0], params.named()))

    return suite


def run_gradcheck(seed: int = 0, tol: float = 1e-4, h: float = 1e-6,
                  max_coords: int = 8) -> tuple[dict, bool]:
    """Run every suite entry; returns (report dict, all passed)."""
    results = {}
    all_passed = True
    for name, fn, params in build_suite(seed):
        report: GradCheckReport = grad_check(fn, params, h=h, tol=tol,
                                             max_coords_per_param=max_coords,
                                             seed=seed)
        results[name] = {
            "passed": report.passed,
            "worst_rel_error": report.worst,
            "per_param": report.max_rel_error,
        }
        all_passed = all_passed and report.passed
    return results, all_passed


def align_stats(model: Recommender, export_path=None) -> dict:
    """Distribution diagnostics between the two item encodings.

    Reports the kernel-form distribution distance per bandwidth and averaged,
    plus the mean cosine of matched cross-modality pairs; optionally exports
    the fused item representations for external plotting.
    """
    user_repr, item_repr, h_v, h_t = model.representations()
    if h_v is None or h_t is None:
        raise ConfigError("alignment stats require both modalities")
    per_bandwidth = {}
    for sigma in model.hp.bandwidths:
        cfg = AlignConfig(bandwidths=(sigma,))
        per_bandwidth[str(sigma)] = mmd_squared(h_v, h_t, cfg).item()
    combined = mmd_squared(h_v, h_t, AlignConfig(bandwidths=model.hp.bandwidths))

    a = h_v.data / np.maximum(np.linalg.norm(h_v.data, axis=1, keepdims=True), 1e-12)
    b = h_t.data / np.maximum(np.linalg.norm(h_t.data, axis=1, keepdims=True), 1e-12)
    mean_cosine = float((a * b).sum(axis=1).mean())

    out = {"items": int(item_repr.shape[0]), "mmd": per_bandwidth,
           "mmd_mean": combined.item(), "mean_cosine": mean_cosine}
    if export_path is not None:
        save_fmat(export_path, item_repr.data)
        out["export"] = str(export_path)
    return out
