"""The recommender: reduced modality projections, refinement, graph smoothing,
fusion, inner-product scoring, BPR, and the joint training objective."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .align import AlignConfig, infonce, mmd_squared
from .dream import DreamConfig, DreamParams, dream_forward, xavier_uniform
from .errors import ConfigError, DataFormatError
from .tensor import (
    DimensionError,
    ParameterError,
    Tensor,
    UsageError,
    add,
    concat_rows,
    gather_rows,
    matmul,
    mul,
    scale,
    slice_rows,
    softplus,
    spmm_const,
    square,
    sub,
    sum_all,
    sum_axis,
)

VISUAL = "visual"
TEXT = "text"


def target_dim(visual_dim: int, text_dim: int, reduction: int) -> int:
    """Shared embedding width: floor(min(D_V, D_T) / r)."""
    if reduction < 1:
        raise ParameterError(f"reduction factor must be >= 1, got {reduction}")
    d = min(visual_dim, text_dim) // reduction
    if d < 1:
        raise ConfigError(
            f"reduction factor {reduction} collapses feature dims "
            f"(visual {visual_dim}, text {text_dim}) below 1")
    return d


def projection_param_count(visual_dim: int, text_dim: int, reduction: int) -> int:
    """Entries in both reduction matrices at a given reduction factor."""
    return target_dim(visual_dim, text_dim, reduction) * (visual_dim + text_dim)


@dataclass(frozen=True)
class HyperParams:
    """Loss weights, dimensions and architecture knobs for one model."""

    lambda_cl: float = 0.01
    lambda_mmd: float = 0.15
    lambda_reg: float = 1e-4
    reduction: int = 8
    id_dim: int = 64
    graph_layers: int = 2
    branch_channels: int = 8
    attention_reduction: int = 4
    dilations: tuple[int, ...] = (6, 12, 18)
    bandwidths: tuple[float, ...] = (1.0, 1.5, 2.0)
    temperature: float = 0.2
    symmetric_infonce: bool = False

    def __post_init__(self):
        if self.id_dim < 1:
            raise ConfigError(f"id_dim must be >= 1, got {self.id_dim}")
        if self.graph_layers < 0:
            raise ConfigError(f"graph_layers must be >= 0, got {self.graph_layers}")
        if min(self.lambda_cl, self.lambda_mmd, self.lambda_reg) < 0:
            raise ConfigError("loss weights must be non-negative")

    def align_config(self) -> AlignConfig:
        return AlignConfig(bandwidths=self.bandwidths, temperature=self.temperature,
                           lambda_mmd=self.lambda_mmd, lambda_cl=self.lambda_cl,
                           symmetric_infonce=self.symmetric_infonce)


@dataclass
class ModelParams:
    """Every learnable tensor; absent modalities hold None."""

    user_emb: Tensor
    item_emb: Tensor
    dream_cfg: DreamConfig
    visual_reduce: Tensor | None = None
    text_reduce: Tensor | None = None
    dream_visual: DreamParams | None = None
    dream_text: DreamParams | None = None
    visual_fuse: Tensor | None = None
    text_fuse: Tensor | None = None

    @classmethod
    def create(cls, n_users: int, n_items: int, visual_dim: int, text_dim: int,
               hp: HyperParams, rng: np.random.Generator,
               modalities: tuple[str, ...] = (VISUAL, TEXT)) -> "ModelParams":
        d = target_dim(visual_dim, text_dim, hp.reduction)
        dream_cfg = DreamConfig(input_length=d, branch_channels=hp.branch_channels,
                                attention_reduction=hp.attention_reduction,
                                dilations=hp.dilations)

        def t(shape):
            return Tensor(xavier_uniform(rng, shape, shape[0], shape[1]),
                          requires_grad=True)

        params = cls(user_emb=t((n_users, hp.id_dim)),
                     item_emb=t((n_items, hp.id_dim)),
                     dream_cfg=dream_cfg)
        if VISUAL in modalities:
            params.visual_reduce = t((visual_dim, d))
            params.dream_visual = DreamParams.create(dream_cfg, rng)
            params.visual_fuse = t((d, hp.id_dim))
        if TEXT in modalities:
            params.text_reduce = t((text_dim, d))
            params.dream_text = DreamParams.create(dream_cfg, rng)
            params.text_fuse = t((d, hp.id_dim))
        return params

    def named(self) -> dict[str, Tensor]:
        out = {"user_emb": self.user_emb, "item_emb": self.item_emb}
        for name, tensor in (("visual_reduce", self.visual_reduce),
                             ("text_reduce", self.text_reduce),
                             ("visual_fuse", self.visual_fuse),
                             ("text_fuse", self.text_fuse)):
            if tensor is not None:
                out[name] = tensor
        if self.dream_visual is not None:
            out.update(self.dream_visual.named("dream_visual"))
        if self.dream_text is not None:
            out.update(self.dream_text.named("dream_text"))
        return out

    def regularized(self) -> list[Tensor]:
        out = [self.user_emb, self.item_emb]
        for tensor in (self.visual_reduce, self.text_reduce,
                       self.visual_fuse, self.text_fuse):
            if tensor is not None:
                out.append(tensor)
        for dp in (self.dream_visual, self.dream_text):
            if dp is not None:
                out.extend(dp.regularized())
        return out

    def zero_grads(self) -> None:
        for p in self.named().values():
            p.zero_grad()

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        mine = self.named()
        missing = sorted(set(mine) - set(arrays))
        extra = sorted(set(arrays) - set(mine))
        if missing or extra:
            raise DataFormatError(
                f"checkpoint does not match model: missing {missing}, unexpected {extra}")
        for name, p in mine.items():
            if arrays[name].shape != p.data.shape:
                raise DataFormatError(
                    f"checkpoint param '{name}' has shape {arrays[name].shape}, "
                    f"model expects {p.data.shape}")
            p.data = arrays[name].astype(np.float64).copy()


@dataclass
class TripletBatch:
    """(user, interacted item, sampled non-interacted item) index triples."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


def reduce_modalities(x_visual: Tensor | None, x_text: Tensor | None,
                      params: ModelParams) -> tuple[Tensor | None, Tensor | None]:
    """Project raw modality features into the shared width d."""
    reduced_v = reduced_t = None
    if params.visual_reduce is not None:
        reduced_v = matmul(x_visual, params.visual_reduce)
    if params.text_reduce is not None:
        reduced_t = matmul(x_text, params.text_reduce)
    return reduced_v, reduced_t


def encode_items(x_visual: Tensor | None, x_text: Tensor | None,
                 params: ModelParams,
                 refine: bool = True) -> tuple[Tensor | None, Tensor | None]:
    """Reduced then refined per-modality item encodings.

    With refine=False the refinement stage is bypassed entirely and the
    outputs are exactly the reduced features (the local-alignment ablation).
    """
    h_v, h_t = reduce_modalities(x_visual, x_text, params)
    if refine:
        if h_v is not None:
            h_v = dream_forward(h_v, params.dream_visual, params.dream_cfg)
        if h_t is not None:
            h_t = dream_forward(h_t, params.dream_text, params.dream_cfg)
    return h_v, h_t


def build_propagation_operator(train_pairs: np.ndarray, n_users: int,
                               n_items: int) -> sp.csr_matrix:
    """Degree-normalized neighborhood-averaging operator on the bipartite graph.

    Row-stochastic: each node averages its neighbors, so applying the operator
    to all-ones yields values <= 1. Nodes with no training interactions get an
    identity row and keep their own embedding through every layer.
    """
    size = n_users + n_items
    if len(train_pairs) == 0:
        return sp.identity(size, format="csr")
    u = train_pairs[:, 0].astype(np.int64)
    i = train_pairs[:, 1].astype(np.int64) + n_users
    rows = np.concatenate([u, i])
    cols = np.concatenate([i, u])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size))
    degree = np.asarray(adj.sum(axis=1)).reshape(-1)
    isolated = np.flatnonzero(degree == 0)
    inv = np.zeros(size)
    inv[degree > 0] = 1.0 / degree[degree > 0]
    operator = sp.diags(inv) @ adj
    if isolated.size:
        operator = operator + sp.csr_matrix(
            (np.ones(isolated.size), (isolated, isolated)), shape=(size, size))
    return operator.tocsr()


def propagate(user_emb: Tensor, item_emb: Tensor, operator: sp.csr_matrix,
              layers: int) -> tuple[Tensor, Tensor]:
    """Average the embeddings of 0..layers propagation hops; 0 layers is identity."""
    if layers < 0:
        raise ParameterError(f"layers must be >= 0, got {layers}")
    if layers == 0:
        return user_emb, item_emb
    n_users = user_emb.shape[0]
    n_items = item_emb.shape[0]
    current = concat_rows(user_emb, item_emb)
    total = current
    for _ in range(layers):
        current = spmm_const(operator, current)
        total = add(total, current)
    mean = scale(total, 1.0 / (layers + 1))
    return slice_rows(mean, 0, n_users), slice_rows(mean, n_users, n_users + n_items)


def fuse(user_out: Tensor, item_out: Tensor, h_visual: Tensor | None,
         h_text: Tensor | None, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Additive fusion: items absorb projected modality encodings, users stay
    collaborative. Both modalities average; a single one enters with weight 1."""
    terms = []
    if h_visual is not None:
        terms.append(matmul(h_visual, params.visual_fuse))
    if h_text is not None:
        terms.append(matmul(h_text, params.text_fuse))
    if len(terms) == 2:
        item_repr = add(item_out, scale(add(terms[0], terms[1]), 0.5))
    elif len(terms) == 1:
        item_repr = add(item_out, terms[0])
    else:
        item_repr = item_out
    return user_out, item_repr


def score(user_repr: np.ndarray, item_repr: np.ndarray, user: int, item: int) -> float:
    """Inner-product preference score for one user-item pair."""
    n_users, n_items = user_repr.shape[0], item_repr.shape[0]
    if not (0 <= user < n_users):
        raise IndexError(f"user index {user} out of range for {n_users} users")
    if not (0 <= item < n_items):
        raise IndexError(f"item index {item} out of range for {n_items} items")
    return float(user_repr[user] @ item_repr[item])


def bpr_loss(batch: TripletBatch, user_repr: Tensor, item_repr: Tensor) -> Tensor:
    """Pairwise ranking loss: sum of -log sigmoid(pos score - neg score)."""
    if len(batch) == 0:
        raise UsageError("bpr_loss: empty batch")
    anchors = gather_rows(user_repr, batch.users)
    pos = gather_rows(item_repr, batch.pos_items)
    neg = gather_rows(item_repr, batch.neg_items)
    margin = sub(sum_axis(mul(anchors, pos), axis=1),
                 sum_axis(mul(anchors, neg), axis=1))
    return sum_all(softplus(scale(margin, -1.0)))


class Recommender:
    """Bundles parameters, constant item features and the propagation operator.

    `variant` selects an exact code path:
      full         everything on
      no-la        refinement bypassed, encodings are the reduced features
      no-ga        alignment loss weights forced to zero
      text-only    visual branch absent, alignment loss skipped
      visual-only  text branch absent, alignment loss skipped
    """

    VARIANTS = ("full", "no-la", "no-ga", "text-only", "visual-only")

    def __init__(self, params: ModelParams, hp: HyperParams,
                 x_visual: Tensor | None, x_text: Tensor | None,
                 operator: sp.csr_matrix, variant: str = "full"):
        if variant not in self.VARIANTS:
            raise ConfigError(
                f"unknown variant '{variant}'; valid: {', '.join(self.VARIANTS)}")
        self.params = params
        self.hp = hp
        self.x_visual = x_visual
        self.x_text = x_text
        self.operator = operator
        self.variant = variant
        self.refine = variant != "no-la"
        if variant == "no-ga":
            self.lambda_mmd = 0.0
            self.lambda_cl = 0.0
        else:
            self.lambda_mmd = hp.lambda_mmd
            self.lambda_cl = hp.lambda_cl

    @classmethod
    def modalities_for(cls, variant: str) -> tuple[str, ...]:
        if variant == "text-only":
            return (TEXT,)
        if variant == "visual-only":
            return (VISUAL,)
        return (VISUAL, TEXT)

    def representations(self) -> tuple[Tensor, Tensor, Tensor | None, Tensor | None]:
        """Forward pass to fused user/item representations (plus encodings)."""
        p_star, q_star = propagate(self.params.user_emb, self.params.item_emb,
                                   self.operator, self.hp.graph_layers)
        h_v, h_t = encode_items(self.x_visual, self.x_text, self.params,
                                refine=self.refine)
        user_repr, item_repr = fuse(p_star, q_star, h_v, h_t, self.params)
        return user_repr, item_repr, h_v, h_t

    def total_loss(self, batch: TripletBatch) -> tuple[Tensor, dict[str, float]]:
        """Mean BPR + weighted alignment terms + l2 penalty.

        The ranking term is averaged over the batch so the alignment and
        regularization weights keep their meaning at any batch size.
        Zero-weight terms are skipped entirely, keeping ablated paths
        bit-identical to their reduced objective."""
        user_repr, item_repr, h_v, h_t = self.representations()
        loss = scale(bpr_loss(batch, user_repr, item_repr), 1.0 / len(batch))
        parts = {"bpr": loss.item(), "mmd": 0.0, "infonce": 0.0, "reg": 0.0}
        if h_v is not None and h_t is not None and (
                self.lambda_mmd != 0.0 or self.lambda_cl != 0.0):
            unique_pos = np.unique(batch.pos_items)
            hv_rows = gather_rows(h_v, unique_pos)
            ht_rows = gather_rows(h_t, unique_pos)
            if self.lambda_mmd != 0.0:
                mmd = mmd_squared(hv_rows, ht_rows, self.hp.align_config())
                parts["mmd"] = mmd.item()
                loss = add(loss, scale(mmd, self.lambda_mmd))
            if self.lambda_cl != 0.0:
                nce = infonce(hv_rows, ht_rows, self.hp.temperature,
                              self.hp.symmetric_infonce)
                parts["infonce"] = nce.item()
                loss = add(loss, scale(nce, self.lambda_cl))
        if self.hp.lambda_reg != 0.0:
            reg = None
            for p in self.params.regularized():
                term = sum_all(square(p))
                reg = term if reg is None else add(reg, term)
            parts["reg"] = reg.item()
            loss = add(loss, scale(reg, self.hp.lambda_reg))
        return loss, parts


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 version, then per parameter (lexicographic by
# name): u16 name length, name bytes, u8 rank, u32 extents, f64 LE values
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MREC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named: dict[str, Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name in sorted(named):
            data = np.ascontiguousarray(named[name].data, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", data.ndim))
            for extent in data.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(data.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 8
    out: dict[str, np.ndarray] = {}

    def need(n: int):
        if offset + n > len(blob):
            raise DataFormatError(
                f"{path}: truncated checkpoint, expected {offset + n} bytes, "
                f"have {len(blob)}")

    while offset < len(blob):
        need(2)
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        need(name_len + 1)
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        need(4 * rank)
        shape = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
        offset += 4 * rank
        count = int(np.prod(shape)) if shape else 1
        need(8 * count)
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        out[name] = values.reshape(shape).astype(np.float64)
    return out
