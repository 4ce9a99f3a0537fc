"""Cross-modal retrieval and frame-level alignment.

Retrieval follows the library protocol: every item is a query against
all M targets of the other modality, scored by dot product; recall@k is
the fraction whose true counterpart lands in the top k. Score ties are
broken by ascending target index, so results are deterministic. All six
query/target directions between image (i), English audio (e) and Hindi
audio (h) are reported; chance R@1 is 1/M.

Alignment compares the unpooled embedding sequences of the two spoken
captions of one item: similarities[r, c] = u_h[r] . u_e[c], each axis
ticking at frame_shift * trunk downsampling seconds.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .corpus import Corpus, Segment, Triple
from .encoders import TripleEncoder, audio_time_downsample, encode_audio, encode_image
from .errors import ConfigError, ShapeError
from .frontends import (
    ImageNormConfig,
    MelConfig,
    compute_logmel,
    crop_and_normalize,
    load_image,
    read_wav,
    resize_to_short_side,
)

__all__ = [
    "DIRECTIONS",
    "RetrievalLibrary",
    "build_library",
    "RecallReport",
    "recall_at_k",
    "evaluate_all_directions",
    "reports_to_json",
    "format_reports",
    "embed_split",
    "SimilarityMatrix",
    "alignment_matrix",
    "align_pair",
    "export_heatmap",
    "concept_block_mask",
    "block_contrast",
]

# query-to-target keys, fixed reporting order
DIRECTIONS = ("e2i", "i2e", "h2i", "i2h", "e2h", "h2e")


@dataclass(frozen=True)
class RetrievalLibrary:
    """Aligned embedding matrices: row j of every modality is the same item."""

    ids: tuple[str, ...]
    embeddings: Mapping[str, np.ndarray]


def build_library(ids: Sequence[str], embeddings: Mapping[str, np.ndarray]) -> RetrievalLibrary:
    if not ids:
        raise ShapeError("empty retrieval library")
    if not embeddings:
        raise ShapeError("library needs at least one modality")
    dims = set()
    for mod, arr in embeddings.items():
        if arr.ndim != 2 or arr.shape[0] != len(ids):
            raise ShapeError(
                f"modality {mod!r}: expected ({len(ids)}, d) embeddings, got {arr.shape}"
            )
        dims.add(arr.shape[1])
    if len(dims) != 1:
        raise ShapeError(f"modalities disagree on embedding dim: {sorted(dims)}")
    return RetrievalLibrary(ids=tuple(ids), embeddings=dict(embeddings))


@dataclass(frozen=True)
class RecallReport:
    direction: str
    recall_at: dict[int, float]
    M: int


def _parse_direction(direction: str) -> tuple[str, str]:
    parts = direction.split("2")
    if len(parts) != 2 or direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}, expected one of {DIRECTIONS}")
    return parts[0], parts[1]


def recall_at_k(
    lib: RetrievalLibrary, direction: str, ks: Sequence[int] = (1, 5, 10)
) -> RecallReport:
    """Recall@k with every library item as a query.

    Ranks count strictly-better targets plus tied targets with a smaller
    index; scores accumulate in float64 so tie detection is stable.
    """
    q_mod, t_mod = _parse_direction(direction)
    for mod in (q_mod, t_mod):
        if mod not in lib.embeddings:
            raise ConfigError(f"library has no {mod!r} embeddings for direction {direction}")
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"ks must be positive, got {ks}")
    queries = lib.embeddings[q_mod].astype(np.float64)
    targets = lib.embeddings[t_mod].astype(np.float64)
    M = queries.shape[0]
    scores = queries @ targets.T
    true = np.diagonal(scores)
    idx = np.arange(M)
    better = (scores > true[:, None]).sum(axis=1)
    tied_before = ((scores == true[:, None]) & (idx[None, :] < idx[:, None])).sum(axis=1)
    rank = better + tied_before  # 0-based rank of the true target
    return RecallReport(
        direction=direction,
        recall_at={int(k): float((rank < k).mean()) for k in ks},
        M=M,
    )


def evaluate_all_directions(
    lib: RetrievalLibrary, ks: Sequence[int] = (1, 5, 10)
) -> dict[str, RecallReport]:
    """All six directions whose modalities the library carries, in fixed order."""
    out = {}
    for direction in DIRECTIONS:
        q_mod, t_mod = direction.split("2")
        if q_mod in lib.embeddings and t_mod in lib.embeddings:
            out[direction] = recall_at_k(lib, direction, ks)
    if not out:
        raise ConfigError("library carries no evaluable direction")
    return out


def reports_to_json(reports: Mapping[str, RecallReport]) -> str:
    payload = {
        direction: {**{f"r{k}": v for k, v in r.recall_at.items()}, "M": r.M}
        for direction, r in reports.items()
    }
    return json.dumps(payload, indent=2, sort_keys=False)


def format_reports(reports: Mapping[str, RecallReport]) -> str:
    ks = sorted(next(iter(reports.values())).recall_at)
    header = "direction  " + "  ".join(f"R@{k:<4d}" for k in ks) + "  M"
    lines = [header]
    for direction, r in reports.items():
        cells = "  ".join(f"{r.recall_at[k]:.4f}" for k in ks)
        lines.append(f"{direction:<9s}  {cells}  {r.M}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# embedding whole splits


def _load_audio_features(triples: Iterable[Triple], lang: str, mel_cfg: MelConfig) -> np.ndarray:
    mats = []
    for t in triples:
        wav = read_wav(getattr(t, f"audio_{lang}"))
        mats.append(compute_logmel(wav, mel_cfg).values)
    return np.stack(mats)


def _load_image_features(triples: Iterable[Triple], img_cfg: ImageNormConfig) -> np.ndarray:
    mats = []
    for t in triples:
        resized = resize_to_short_side(load_image(t.image), img_cfg.resize_short_side)
        mats.append(crop_and_normalize(resized, img_cfg, mode="eval"))
    return np.stack(mats)


def embed_split(
    model: TripleEncoder,
    corpus: Corpus,
    split: str,
    mel_cfg: MelConfig,
    img_cfg: ImageNormConfig,
    batch_size: int = 64,
) -> RetrievalLibrary:
    """Eval-mode pooled embeddings for one split, all three modalities."""
    items = corpus.split(split)
    if not items:
        raise ConfigError(f"no items in split {split!r}")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    chunks: dict[str, list[np.ndarray]] = {"i": [], "e": [], "h": []}
    for lo in range(0, len(items), batch_size):
        batch = items[lo : lo + batch_size]
        for lang in ("e", "h"):
            pooled, _ = encode_audio(model, _load_audio_features(batch, lang, mel_cfg), lang, "eval")
            chunks[lang].append(pooled)
        pooled, _ = encode_image(model, _load_image_features(batch, img_cfg), "eval")
        chunks["i"].append(pooled)
    embeddings = {mod: np.concatenate(parts) for mod, parts in chunks.items()}
    return build_library([t.id for t in items], embeddings)


# ---------------------------------------------------------------------------
# alignment


@dataclass(frozen=True)
class SimilarityMatrix:
    """Dot products between two unpooled sequences; rows h, columns e."""

    values: np.ndarray
    row_step_s: float
    col_step_s: float


def alignment_matrix(
    unpooled_row: np.ndarray, unpooled_col: np.ndarray, row_step_s: float, col_step_s: float
) -> SimilarityMatrix:
    if unpooled_row.ndim != 2 or unpooled_col.ndim != 2:
        raise ShapeError("alignment takes two (T, d) sequences")
    if unpooled_row.shape[1] != unpooled_col.shape[1]:
        raise ShapeError(
            f"embedding dims differ: {unpooled_row.shape[1]} vs {unpooled_col.shape[1]}"
        )
    if row_step_s <= 0 or col_step_s <= 0:
        raise ConfigError("step durations must be positive")
    values = unpooled_row.astype(np.float64) @ unpooled_col.astype(np.float64).T
    return SimilarityMatrix(values=values, row_step_s=row_step_s, col_step_s=col_step_s)


def align_pair(model: TripleEncoder, triple: Triple, mel_cfg: MelConfig) -> SimilarityMatrix:
    """Hindi-vs-English alignment matrix for one triple (rows Hindi)."""
    step = mel_cfg.frame_shift_s * audio_time_downsample(model.config)
    _, u_e = encode_audio(model, _load_audio_features([triple], "e", mel_cfg), "e", "eval")
    _, u_h = encode_audio(model, _load_audio_features([triple], "h", mel_cfg), "h", "eval")
    return alignment_matrix(u_h[0], u_e[0], row_step_s=step, col_step_s=step)


_RAMP = np.stack(
    [
        np.clip(3 * np.linspace(0.0, 1.0, 256) - shift, 0.0, 1.0) * 255
        for shift in (0.0, 1.0, 2.0)
    ],
    axis=1,
).astype(np.uint8)  # black -> red -> yellow -> white


def export_heatmap(matrix: SimilarityMatrix, path: str | Path, base_cell_px: int = 6) -> None:
    """Render the matrix to PNG, cell sizes proportional to step durations.

    Min-max normalized; a constant matrix renders mid-scale.
    """
    if base_cell_px < 1:
        raise ConfigError("base_cell_px must be >= 1")
    v = matrix.values.astype(np.float64)
    lo, hi = float(v.min()), float(v.max())
    norm = np.full_like(v, 0.5) if hi <= lo else (v - lo) / (hi - lo)
    idx = np.clip(np.round(norm * 255), 0, 255).astype(np.uint8)
    rgb = _RAMP[idx]
    shortest = min(matrix.row_step_s, matrix.col_step_s)
    cell_h = max(1, int(round(base_cell_px * matrix.row_step_s / shortest)))
    cell_w = max(1, int(round(base_cell_px * matrix.col_step_s / shortest)))
    pixels = np.repeat(np.repeat(rgb, cell_h, axis=0), cell_w, axis=1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path)


def _steps_covered(segments: Sequence[Segment], concept: int, step_s: float, n_steps: int) -> set[int]:
    covered = set()
    for c, start, end in segments:
        if c != concept:
            continue
        for step in range(n_steps):
            lo, hi = step * step_s, (step + 1) * step_s
            overlap = min(end, hi) - max(start, lo)
            if overlap >= 0.5 * step_s:  # step mostly inside the segment
                covered.add(step)
    return covered


def concept_block_mask(
    matrix: SimilarityMatrix,
    segments_row: Sequence[Segment],
    segments_col: Sequence[Segment],
    concepts: Iterable[int],
) -> np.ndarray:
    """Boolean mask marking cells where both axes sit inside the same concept."""
    n_rows, n_cols = matrix.values.shape
    mask = np.zeros((n_rows, n_cols), dtype=bool)
    for concept in concepts:
        rows = _steps_covered(segments_row, concept, matrix.row_step_s, n_rows)
        cols = _steps_covered(segments_col, concept, matrix.col_step_s, n_cols)
        for r in rows:
            for c in cols:
                mask[r, c] = True
    return mask


def block_contrast(matrix: SimilarityMatrix, mask: np.ndarray) -> tuple[float, float]:
    """(mean inside matching-concept blocks, mean outside). Raises if one side is empty."""
    if mask.shape != matrix.values.shape:
        raise ShapeError(f"mask shape {mask.shape} != matrix shape {matrix.values.shape}")
    if mask.all() or not mask.any():
        raise ShapeError("block mask must have both inside and outside cells")
    return float(matrix.values[mask].mean()), float(matrix.values[~mask].mean())
