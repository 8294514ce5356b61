"""Training loop: shuffled triplet batches, Adam with stepped decay,
per-epoch validation, early stopping on Recall@20, best-checkpoint saving."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import Dataset, load_dataset, save_mapping
from .errors import ConfigError, DataFormatError, NumericalError
from .evaluation import EarlyStopState, SplitDataset, early_stop_update, \
    evaluate, lr_schedule, sample_negative, split_811
from .model import (
    ModelParams,
    Recommender,
    TripletBatch,
    build_propagation_operator,
    projection_param_count,
    save_checkpoint,
)
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, backward


def log(message: str) -> None:
    print(message, file=sys.stderr)


def emit(record: dict, stream, copy_to=None) -> None:
    line = json.dumps(record)
    print(line, file=stream)
    stream.flush()
    if copy_to is not None:
        copy_to.write(line + "\n")
        copy_to.flush()


def load_run_dataset(cfg: RunConfig, need_visual: bool, need_text: bool) -> Dataset:
    if cfg.interactions is None:
        raise ConfigError("no interactions path given")
    ds = load_dataset(cfg.interactions,
                      visual_path=cfg.visual if need_visual else None,
                      text_path=cfg.text if need_text else None,
                      kcore=cfg.kcore)
    if need_visual and ds.visual is None:
        raise ConfigError("variant requires --visual features")
    if need_text and ds.text is None:
        raise ConfigError("variant requires --text features")
    return ds


def feature_dims(cfg: RunConfig, ds: Dataset) -> tuple[int, int]:
    """Both raw dims are needed for the shared-width rule even when a variant
    uses one modality; fall back to the present one if the other is absent."""
    dv = ds.visual.shape[1] if ds.visual is not None else None
    dt = ds.text.shape[1] if ds.text is not None else None
    if dv is None and dt is None:
        raise ConfigError("at least one feature matrix is required")
    return dv if dv is not None else dt, dt if dt is not None else dv


def build_model(cfg: RunConfig, ds: Dataset, split) -> Recommender:
    hp = cfg.hyperparams()
    modalities = Recommender.modalities_for(cfg.variant)
    dv, dt = feature_dims(cfg, ds)
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams.create(ds.n_users, ds.n_items, dv, dt, hp, rng,
                                modalities=modalities)
    operator = build_propagation_operator(split.train, ds.n_users, ds.n_items)
    x_visual = Tensor(ds.visual) if ds.visual is not None and "visual" in modalities \
        else None
    x_text = Tensor(ds.text) if ds.text is not None and "text" in modalities else None
    return Recommender(params, hp, x_visual, x_text, operator, cfg.variant)


def iterate_batches(train_pairs: np.ndarray, positives, n_items: int,
                    batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(train_pairs))
    shuffled = train_pairs[order]
    for start in range(0, len(shuffled), batch_size):
        chunk = shuffled[start:start + batch_size]
        negatives = np.fromiter(
            (sample_negative(int(u), positives[int(u)], n_items, rng)
             for u, _ in chunk), dtype=np.int64, count=len(chunk))
        yield TripletBatch(users=chunk[:, 0].copy(), pos_items=chunk[:, 1].copy(),
                           neg_items=negatives)


def run_training(cfg: RunConfig, stdout=None) -> dict:
    """Train per the resolved config; returns a summary with the best epoch,
    test metrics and output paths. Emits one metrics JSON line per epoch
    (validation) plus a final test line at the restored best parameters."""
    stdout = stdout if stdout is not None else sys.stdout
    need_visual = cfg.variant != "text-only"
    need_text = cfg.variant != "visual-only"
    ds = load_run_dataset(cfg, need_visual, need_text)
    split = split_811(ds.pairs, ds.n_users, ds.n_items, cfg.seed)
    model = build_model(cfg, ds, split)
    params = model.params

    dv, dt = feature_dims(cfg, ds)
    named = params.named()
    total_params = sum(p.data.size for p in named.values())
    log(f"dataset: {ds.n_users} users, {ds.n_items} items, "
        f"{len(ds.pairs)} interactions "
        f"(train {len(split.train)}, val {len(split.validation)}, "
        f"test {len(split.test)})")
    log(f"params: total {total_params}, projection "
        f"{projection_param_count(dv, dt, cfg.reduction)} at reduction "
        f"{cfg.reduction}")

    out_dir = Path(cfg.out) if cfg.out else None
    metrics_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved_config.txt").write_text(
            "\n".join(cfg.lines()) + "\n", encoding="utf-8")
        save_mapping(out_dir / "users.tsv", ds.user_tokens)
        save_mapping(out_dir / "items.tsv", ds.item_tokens)
        metrics_file = open(out_dir / "metrics.jsonl", "w", encoding="utf-8")

    rng = np.random.default_rng(cfg.seed)
    adam = AdamState(lr=cfg.base_lr)
    stopper = EarlyStopState(patience=cfg.patience)
    best_state = {name: p.data.copy() for name, p in named.items()}
    best_epoch = 0
    tag = {"variant": cfg.variant} if cfg.variant != "full" else {}

    try:
        for epoch in range(1, cfg.max_epochs + 1):
            started = time.perf_counter()
            adam.lr = lr_schedule(epoch - 1, cfg.base_lr)
            loss_sums = {"bpr": 0.0, "mmd": 0.0, "infonce": 0.0, "reg": 0.0}
            n_batches = 0
            for batch in iterate_batches(split.train, split.train_positives,
                                         ds.n_items, cfg.batch_size, rng):
                params.zero_grads()
                with Tape() as tape:
                    loss, parts = model.total_loss(batch)
                if not np.isfinite(loss.data):
                    raise NumericalError(f"non-finite loss at epoch {epoch}")
                backward(loss, tape)
                grads = {name: p.grad for name, p in named.items()
                         if p.grad is not None}
                adam_step(named, grads, adam)
                for key in loss_sums:
                    loss_sums[key] += parts[key]
                n_batches += 1

            user_repr, item_repr, _, _ = model.representations()
            val = evaluate(user_repr.data, item_repr.data, split, "validation",
                           cfg.eval_ks)
            wall_ms = int(round((time.perf_counter() - started) * 1000))
            record = {"epoch": epoch, "split": "validation", **tag,
                      **{k: val[k] for k in sorted(val)},
                      "losses": {k: v / n_batches for k, v in loss_sums.items()},
                      "wall_ms": wall_ms}
            emit(record, stdout, metrics_file)

            stopper, should_stop = early_stop_update(
                stopper, val[f"recall@{max(cfg.eval_ks)}"], epoch)
            if stopper.best_epoch == epoch:
                best_state = {name: p.data.copy() for name, p in named.items()}
                best_epoch = epoch
            if should_stop:
                log(f"early stop at epoch {epoch}; best epoch {best_epoch}")
                break

        params.load_state(best_state)
        started = time.perf_counter()
        user_repr, item_repr, _, _ = model.representations()
        test = evaluate(user_repr.data, item_repr.data, split, "test", cfg.eval_ks)
        wall_ms = int(round((time.perf_counter() - started) * 1000))
        record = {"epoch": best_epoch, "split": "test", **tag,
                  **{k: test[k] for k in sorted(test)},
                  "losses": {"bpr": 0.0, "mmd": 0.0, "infonce": 0.0, "reg": 0.0},
                  "wall_ms": wall_ms}
        emit(record, stdout, metrics_file)

        checkpoint_path = None
        if out_dir is not None:
            checkpoint_path = out_dir / "checkpoint.mrec"
            save_checkpoint(checkpoint_path, params.named())
            log(f"checkpoint saved to {checkpoint_path}")
        return {"best_epoch": best_epoch, "test_metrics": test,
                "checkpoint": str(checkpoint_path) if checkpoint_path else None}
    finally:
        if metrics_file is not None:
            metrics_file.close()


def restore_model(cfg: RunConfig,
                  checkpoint_arrays: dict) -> tuple[Recommender, SplitDataset, Dataset]:
    """Rebuild the model for a saved run and load its parameters."""
    need_visual = cfg.variant != "text-only"
    need_text = cfg.variant != "visual-only"
    ds = load_run_dataset(cfg, need_visual, need_text)
    split = split_811(ds.pairs, ds.n_users, ds.n_items, cfg.seed)
    model = build_model(cfg, ds, split)
    try:
        model.params.load_state(checkpoint_arrays)
    except DataFormatError as err:
        raise DataFormatError(
            f"checkpoint does not fit dataset "
            f"({ds.n_users} users, {ds.n_items} items): {err}") from err
    return model, split, ds
