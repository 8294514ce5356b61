"""Interaction/feature ingestion, k-core filtering, and synthetic datasets.

File formats:
  interactions  UTF-8 text, one ``user<TAB>item`` per line; blank lines and
                lines starting with ``#`` are skipped.
  FMAT          magic ``FMAT``, u32 version=1, u32 rows, u32 cols, then
                rows*cols little-endian float32 values, row-major.
  mapping TSV   ``token<TAB>dense_id`` per line.

Item tokens double as row indices into the feature matrices, so filtering
or remapping interactions never desynchronizes features from items.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .tensor import ParameterError

FMAT_MAGIC = b"FMAT"
FMAT_VERSION = 1


@dataclass
class RawInteractions:
    """De-duplicated (user token, item token) pairs in first-appearance order."""

    pairs: list[tuple[str, str]]

    def __len__(self) -> int:
        return len(self.pairs)


def load_interactions(path) -> RawInteractions:
    seen: dict[tuple[str, str], None] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 'user<TAB>item', got {stripped!r}")
            seen[(fields[0], fields[1])] = None
    return RawInteractions(pairs=list(seen))


def kcore_filter(raw: RawInteractions, k: int = 5) -> RawInteractions:
    """Iteratively drop users and items with fewer than k interactions."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    pairs = list(raw.pairs)
    while True:
        user_deg = Counter(u for u, _ in pairs)
        item_deg = Counter(i for _, i in pairs)
        kept = [(u, i) for u, i in pairs if user_deg[u] >= k and item_deg[i] >= k]
        if len(kept) == len(pairs):
            break
        pairs = kept
    if not pairs:
        raise DataFormatError(f"{k}-core filtering removed every interaction")
    return RawInteractions(pairs=pairs)


def remap(raw: RawInteractions) -> tuple[np.ndarray, list[str], list[str]]:
    """Assign dense 0-based ids in first-appearance order.

    Returns (pairs array (n, 2), user tokens by id, item tokens by id).
    """
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    dense = np.empty((len(raw.pairs), 2), dtype=np.int64)
    for row, (u, i) in enumerate(raw.pairs):
        dense[row, 0] = user_ids.setdefault(u, len(user_ids))
        dense[row, 1] = item_ids.setdefault(i, len(item_ids))
    return dense, list(user_ids), list(item_ids)


def save_mapping(path, tokens: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for dense_id, token in enumerate(tokens):
            fh.write(f"{token}\t{dense_id}\n")


def save_fmat(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise DataFormatError(f"feature matrix must be 2-d, got shape {values.shape}")
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(FMAT_MAGIC)
        fh.write(struct.pack("<III", FMAT_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def load_fmat(path) -> np.ndarray:
    """Read a feature matrix, upcast to float64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FMAT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:4]!r}, expected {FMAT_MAGIC!r}")
    if len(blob) < 16:
        raise DataFormatError(f"{path}: truncated header, {len(blob)} bytes")
    version, rows, cols = struct.unpack_from("<III", blob, 4)
    if version != FMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    expected = 16 + 4 * rows * cols
    if len(blob) != expected:
        raise DataFormatError(
            f"{path}: payload length mismatch, expected {expected} bytes, "
            f"have {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=16)
    return values.reshape(rows, cols).astype(np.float64)


@dataclass
class Dataset:
    """Remapped interactions plus per-item feature rows aligned to dense ids."""

    pairs: np.ndarray
    user_tokens: list[str]
    item_tokens: list[str]
    visual: np.ndarray | None = None
    text: np.ndarray | None = None

    @property
    def n_users(self) -> int:
        return len(self.user_tokens)

    @property
    def n_items(self) -> int:
        return len(self.item_tokens)


def _gather_feature_rows(matrix: np.ndarray, item_tokens: list[str],
                         path) -> np.ndarray:
    rows = np.empty(len(item_tokens), dtype=np.int64)
    for dense_id, token in enumerate(item_tokens):
        try:
            row = int(token)
        except ValueError:
            raise DataFormatError(
                f"item token {token!r} is not a feature row index; feature "
                f"matrices are keyed by integer item tokens") from None
        if not (0 <= row < matrix.shape[0]):
            raise DataFormatError(
                f"{path}: item token {token!r} addresses row {row} but the "
                f"matrix has {matrix.shape[0]} rows")
        rows[dense_id] = row
    return matrix[rows]


def load_dataset(interactions_path, visual_path=None, text_path=None,
                 kcore: int = 0) -> Dataset:
    raw = load_interactions(interactions_path)
    if kcore > 0:
        raw = kcore_filter(raw, kcore)
    pairs, user_tokens, item_tokens = remap(raw)
    ds = Dataset(pairs=pairs, user_tokens=user_tokens, item_tokens=item_tokens)
    if visual_path is not None:
        ds.visual = _gather_feature_rows(load_fmat(visual_path), item_tokens,
                                         visual_path)
    if text_path is not None:
        ds.text = _gather_feature_rows(load_fmat(text_path), item_tokens, text_path)
    return ds


@dataclass(frozen=True)
class SynthSpec:
    """Planted-factor dataset: interactions and both modalities derive from
    shared item latents, so modality content genuinely predicts preference.

    Each modality observes an overlapping span of the latent dimensions
    (each misses a distinct quarter), making the modalities complementary:
    together they cover every preference-driving direction, alone they do
    not. Feature rows are scaled to unit-order norms, matching the output
    scale of typical pretrained extractors."""

    users: int = 300
    items: int = 200
    latent_dim: int = 8
    interactions_per_user: int = 20
    visual_dim: int = 128
    text_dim: int = 96
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("users", "items", "latent_dim", "interactions_per_user",
                     "visual_dim", "text_dim"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.noise < 0:
            raise ParameterError(f"noise must be >= 0, got {self.noise}")
        if self.interactions_per_user >= self.items:
            raise ParameterError(
                f"interactions_per_user ({self.interactions_per_user}) must be "
                f"smaller than items ({self.items})")


def synth_generate(spec: SynthSpec, out_dir) -> dict:
    """Write interactions.tsv, visual.fmat, text.fmat and latents.fmat.

    Users interact with their top items by latent dot product. latents.fmat
    stacks user latents (first `users` rows) over item latents. Item tokens
    are the feature row indices.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    user_latents = rng.standard_normal((spec.users, spec.latent_dim))
    item_latents = rng.standard_normal((spec.items, spec.latent_dim))
    affinity = user_latents @ item_latents.T

    def modality(span: slice, dim: int) -> np.ndarray:
        source = item_latents[:, span]
        mix = rng.standard_normal((source.shape[1], dim))
        mix /= np.sqrt(source.shape[1] * dim)
        noise = (spec.noise / np.sqrt(dim)) * rng.standard_normal((spec.items, dim))
        return source @ mix + noise

    ell = spec.latent_dim
    visual_span = slice(0, max(1, (3 * ell) // 4))
    text_span = slice(min(ell - 1, ell // 4), ell)
    visual = modality(visual_span, spec.visual_dim)
    text = modality(text_span, spec.text_dim)

    interactions_path = out / "interactions.tsv"
    with open(interactions_path, "w", encoding="utf-8") as fh:
        for u in range(spec.users):
            top = np.argsort(-affinity[u], kind="stable")[:spec.interactions_per_user]
            for item in top:
                fh.write(f"u{u}\t{int(item)}\n")

    save_fmat(out / "visual.fmat", visual)
    save_fmat(out / "text.fmat", text)
    save_fmat(out / "latents.fmat", np.vstack([user_latents, item_latents]))

    count = spec.users * spec.interactions_per_user
    return {
        "interactions": str(interactions_path),
        "visual": str(out / "visual.fmat"),
        "text": str(out / "text.fmat"),
        "latents": str(out / "latents.fmat"),
        "interaction_count": count,
        "density": count / (spec.users * spec.items),
    }
