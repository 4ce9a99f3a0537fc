"""Triple corpora: manifests, synthetic data generation, batching.

A corpus is a JSONL manifest of (image, English audio, Hindi audio)
triples plus the referenced media files. The synthetic generator builds
a fully controlled corpus where each triple renders a small set of
shared concept ids: images show one colored glyph per concept on a
noisy background, and each language speaks a fixed two-tone signature
per concept, concatenated in a per-item random order. English and Hindi
signatures use disjoint frequency sets, so nothing acoustic ties the two
languages together; only the shared grounding does.
"""

import colorsys
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, ManifestError
from .frontends import Waveform, write_wav
from .seeding import rng_for

__all__ = [
    "Triple",
    "Corpus",
    "load_manifest",
    "save_manifest",
    "SyntheticSpec",
    "generate_synthetic",
    "split_batches",
]

_REQUIRED_KEYS = {"id", "image", "audio_e", "audio_h", "split"}
_OPTIONAL_KEYS = {"concepts", "segments_e", "segments_h"}
_SPLITS = ("train", "val")

# (concept id, start seconds, end seconds)
Segment = tuple[int, float, float]


@dataclass(frozen=True)
class Triple:
    """One corpus item. Media paths are absolute after loading."""

    id: str
    image: Path
    audio_e: Path
    audio_h: Path
    split: str
    concepts: tuple[int, ...] | None = None
    segments_e: tuple[Segment, ...] | None = None
    segments_h: tuple[Segment, ...] | None = None


@dataclass(frozen=True)
class Corpus:
    triples: tuple[Triple, ...]
    root: Path

    def split(self, name: str) -> list[Triple]:
        return [t for t in self.triples if t.split == name]

    def by_id(self, triple_id: str) -> Triple:
        for t in self.triples:
            if t.id == triple_id:
                return t
        raise ManifestError(f"no triple with id {triple_id!r}")


def _parse_segments(raw, key: str, where: str) -> tuple[Segment, ...]:
    if not isinstance(raw, list):
        raise ManifestError(f"{where}: {key} must be a list")
    segs: list[Segment] = []
    for entry in raw:
        if not (isinstance(entry, list) and len(entry) == 3):
            raise ManifestError(f"{where}: {key} entries must be [concept, start, end]")
        concept, start, end = entry
        if not isinstance(concept, int) or isinstance(concept, bool) or concept < 0:
            raise ManifestError(f"{where}: {key} concept ids must be non-negative ints")
        start, end = float(start), float(end)
        if not 0.0 <= start < end:
            raise ManifestError(f"{where}: {key} needs 0 <= start < end, got [{start}, {end}]")
        segs.append((concept, start, end))
    for prev, cur in zip(segs, segs[1:]):
        if cur[1] < prev[2] - 1e-9:
            raise ManifestError(f"{where}: {key} segments overlap or are unsorted")
    return tuple(segs)


def _parse_record(record: dict, where: str, root: Path) -> Triple:
    keys = set(record)
    missing = _REQUIRED_KEYS - keys
    if missing:
        raise ManifestError(f"{where}: missing keys {sorted(missing)}")
    unknown = keys - _REQUIRED_KEYS - _OPTIONAL_KEYS
    if unknown:
        raise ManifestError(f"{where}: unknown keys {sorted(unknown)}")

    triple_id = record["id"]
    if not isinstance(triple_id, str) or not triple_id:
        raise ManifestError(f"{where}: id must be a non-empty string")
    if record["split"] not in _SPLITS:
        raise ManifestError(f"{where}: split must be one of {_SPLITS}, got {record['split']!r}")

    paths = {}
    for key in ("image", "audio_e", "audio_h"):
        rel = record[key]
        if not isinstance(rel, str) or not rel:
            raise ManifestError(f"{where}: {key} must be a non-empty path")
        resolved = (root / rel).resolve()
        if not resolved.is_file():
            raise ManifestError(f"{where}: triple {triple_id!r} references missing {key}: {resolved}")
        paths[key] = resolved

    concepts = None
    if "concepts" in record:
        raw = record["concepts"]
        if not isinstance(raw, list) or not all(
            isinstance(c, int) and not isinstance(c, bool) and c >= 0 for c in raw
        ):
            raise ManifestError(f"{where}: concepts must be a list of non-negative ints")
        concepts = tuple(raw)

    segments = {}
    for key in ("segments_e", "segments_h"):
        if key in record:
            segs = _parse_segments(record[key], key, where)
            if concepts is not None:
                for concept, _, _ in segs:
                    if concept not in concepts:
                        raise ManifestError(
                            f"{where}: {key} mentions concept {concept} absent from concepts"
                        )
            segments[key] = segs

    return Triple(
        id=triple_id,
        image=paths["image"],
        audio_e=paths["audio_e"],
        audio_h=paths["audio_h"],
        split=record["split"],
        concepts=concepts,
        segments_e=segments.get("segments_e"),
        segments_h=segments.get("segments_h"),
    )


def load_manifest(path: str | Path) -> Corpus:
    """Parse and validate a JSONL manifest; media paths resolve relative to it."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent.resolve()
    triples: list[Triple] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}: line {lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{where}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise ManifestError(f"{where}: expected a JSON object")
            triple = _parse_record(record, where, root)
            if triple.id in seen:
                raise ManifestError(f"{where}: duplicate id {triple.id!r}")
            seen.add(triple.id)
            triples.append(triple)
    if not triples:
        raise ManifestError(f"empty manifest: {path}")
    return Corpus(triples=tuple(triples), root=root)


def save_manifest(corpus: Corpus, path: str | Path) -> None:
    """Write JSONL with media paths relative to the manifest location."""
    path = Path(path)
    root = path.parent.resolve()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for t in corpus.triples:
            record = {
                "id": t.id,
                "image": os.path.relpath(t.image, root),
                "audio_e": os.path.relpath(t.audio_e, root),
                "audio_h": os.path.relpath(t.audio_h, root),
                "split": t.split,
            }
            if t.concepts is not None:
                record["concepts"] = list(t.concepts)
            if t.segments_e is not None:
                record["segments_e"] = [[c, s, e] for c, s, e in t.segments_e]
            if t.segments_h is not None:
                record["segments_h"] = [[c, s, e] for c, s, e in t.segments_h]
            fh.write(json.dumps(record) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the synthetic triple generator.

    The last n_val items land in the val split. Waveforms always span
    concepts_max * tone_duration_s seconds regardless of how many
    concepts an item has; the unused tail is background noise only, so
    clip length carries no information about content.
    """

    n_items: int
    n_val: int = 0
    vocab_size: int = 20
    concepts_min: int = 1
    concepts_max: int = 5
    image_size: int = 64
    tone_duration_s: float = 0.3
    noise_level: float = 0.05
    sample_rate: int = 16000
    seed: int = 0

    def validate(self) -> None:
        if self.n_items < 1:
            raise ConfigError("n_items must be >= 1")
        if not 0 <= self.n_val < self.n_items:
            raise ConfigError(f"n_val must be in [0, n_items), got {self.n_val}")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if not 1 <= self.concepts_min <= self.concepts_max <= self.vocab_size:
            raise ConfigError(
                f"need 1 <= concepts_min <= concepts_max <= vocab_size, got "
                f"[{self.concepts_min}, {self.concepts_max}] with vocab {self.vocab_size}"
            )
        if self.image_size < 8:
            raise ConfigError("image_size must be >= 8")
        if self.tone_duration_s <= 0:
            raise ConfigError("tone_duration_s must be positive")
        if not 0.0 <= self.noise_level < 0.5:
            raise ConfigError(f"noise_level must be in [0, 0.5), got {self.noise_level}")
        if self.sample_rate < 2000:
            raise ConfigError("sample_rate must be >= 2000")


def concept_tone_pairs(spec: SyntheticSpec, lang: str) -> list[tuple[float, float]]:
    """Two sinusoid frequencies (Hz) per concept for one language.

    Concepts index into a (low, high) tone grid, DTMF style, so any two
    concepts differ in at least one tone. English uses even slots and
    Hindi odd slots of a mel-uniform frequency ladder, giving the two
    languages disjoint tone sets that both span the spectrum.
    """
    if lang not in ("e", "h"):
        raise ConfigError(f"lang must be 'e' or 'h', got {lang!r}")
    grid = math.ceil(math.sqrt(spec.vocab_size))
    n_low = math.ceil(spec.vocab_size / grid)
    per_lang = n_low + grid
    slots = 2 * per_lang
    lo_hz, hi_hz = 300.0, min(7600.0, 0.475 * spec.sample_rate)
    mel = lambda f: 2595.0 * math.log10(1.0 + f / 700.0)
    inv = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    lo_mel, hi_mel = mel(lo_hz), mel(hi_hz)
    ladder = [inv(lo_mel + (k + 0.5) * (hi_mel - lo_mel) / slots) for k in range(slots)]
    offset = 0 if lang == "e" else 1
    tones = ladder[offset::2]
    lows, highs = tones[:n_low], tones[n_low:]
    return [(lows[c // grid], highs[c % grid]) for c in range(spec.vocab_size)]


def _tone_signature(freqs: tuple[float, float], n: int, rate: int) -> np.ndarray:
    t = np.arange(n, dtype=np.float64) / rate
    sig = 0.45 * np.sin(2 * np.pi * freqs[0] * t) + 0.45 * np.sin(2 * np.pi * freqs[1] * t)
    ramp = max(1, n // 10)
    env = np.ones(n)
    fade = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
    env[:ramp] = fade
    env[-ramp:] = fade[::-1]
    return sig * env


def _render_audio(
    spec: SyntheticSpec, order: list[int], tones: list[tuple[float, float]], rng: np.random.Generator
) -> tuple[Waveform, tuple[Segment, ...]]:
    sig_len = int(round(spec.tone_duration_s * spec.sample_rate))
    total = spec.concepts_max * sig_len
    samples = rng.uniform(-spec.noise_level, spec.noise_level, total)
    segments = []
    for k, concept in enumerate(order):
        samples[k * sig_len : (k + 1) * sig_len] += _tone_signature(tones[concept], sig_len, spec.sample_rate)
        segments.append(
            (concept, round(k * spec.tone_duration_s, 9), round((k + 1) * spec.tone_duration_s, 9))
        )
    wf = Waveform(samples=np.clip(samples, -1.0, 1.0).astype(np.float32), sample_rate=spec.sample_rate)
    return wf, tuple(segments)


def _concept_color(concept: int) -> np.ndarray:
    # golden-ratio hue steps keep neighboring ids far apart in color
    hue = (concept * 0.618034) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
    return np.array([r * 255, g * 255, b * 255], dtype=np.float64)


def _render_image(spec: SyntheticSpec, concepts: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    size = spec.image_size
    cols = math.ceil(math.sqrt(spec.vocab_size))
    rows = math.ceil(spec.vocab_size / cols)
    cell_h, cell_w = size // rows, size // cols
    canvas = np.full((size, size, 3), 24.0)
    for concept in concepts:
        r, c = divmod(concept, cols)
        top, left = r * cell_h, c * cell_w
        m = max(1, min(cell_h, cell_w) // 8)
        ys = np.arange(top + m, top + cell_h - m)
        xs = np.arange(left + m, left + cell_w - m)
        if concept % 2 == 0:
            canvas[np.ix_(ys, xs)] = _concept_color(concept)
        else:
            cy, cx = top + cell_h / 2, left + cell_w / 2
            rad = min(cell_h, cell_w) / 2 - m
            yy, xx = np.meshgrid(ys + 0.5, xs + 0.5, indexing="ij")
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad**2
            block = canvas[np.ix_(ys, xs)]
            block[mask] = _concept_color(concept)
            canvas[np.ix_(ys, xs)] = block
    canvas += rng.uniform(-spec.noise_level * 255, spec.noise_level * 255, canvas.shape)
    return np.clip(canvas, 0, 255).astype(np.uint8)


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Corpus:
    """Render a synthetic corpus under out_dir and return the loaded result.

    Fully deterministic in spec.seed: per-item randomness comes from
    labeled derived streams, and every byte written (PNG, WAV, manifest)
    is reproducible.
    """
    spec.validate()
    out = Path(out_dir)
    for sub in ("images", "audio_e", "audio_h"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    tones = {lang: concept_tone_pairs(spec, lang) for lang in ("e", "h")}

    records = []
    for i in range(spec.n_items):
        item_id = f"t{i:06d}"
        rng_c = rng_for(spec.seed, f"synth/concepts/{i}")
        n_c = int(rng_c.integers(spec.concepts_min, spec.concepts_max + 1))
        concepts = tuple(sorted(rng_c.choice(spec.vocab_size, size=n_c, replace=False).tolist()))

        image = _render_image(spec, concepts, rng_for(spec.seed, f"synth/image/{i}"))
        Image.fromarray(image).save(out / "images" / f"{item_id}.png")

        audio = {}
        for lang in ("e", "h"):
            order = [concepts[j] for j in rng_for(spec.seed, f"synth/order_{lang}/{i}").permutation(n_c)]
            wf, segs = _render_audio(spec, order, tones[lang], rng_for(spec.seed, f"synth/noise_{lang}/{i}"))
            write_wav(out / f"audio_{lang}" / f"{item_id}.wav", wf)
            audio[lang] = segs

        records.append(
            {
                "id": item_id,
                "image": f"images/{item_id}.png",
                "audio_e": f"audio_e/{item_id}.wav",
                "audio_h": f"audio_h/{item_id}.wav",
                "split": "train" if i < spec.n_items - spec.n_val else "val",
                "concepts": list(concepts),
                "segments_e": [[c, s, e] for c, s, e in audio["e"]],
                "segments_h": [[c, s, e] for c, s, e in audio["h"]],
            }
        )

    manifest = out / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return load_manifest(manifest)


# ---------------------------------------------------------------------------
# batching


def split_batches(corpus: Corpus, split: str, batch_size: int, seed: int) -> list[list[Triple]]:
    """Shuffle one split and cut it into full batches; the short tail is dropped.

    batch_size must be at least 2 because every ranking term needs an
    imposter from the same batch.
    """
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    items = corpus.split(split)
    if not items:
        raise ManifestError(f"no items in split {split!r}")
    perm = np.random.default_rng(seed).permutation(len(items))
    n_full = len(items) // batch_size
    return [[items[j] for j in perm[b * batch_size : (b + 1) * batch_size]] for b in range(n_full)]
