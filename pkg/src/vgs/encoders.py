"""Modality encoders mapping spectrograms and images into one shared space.

Three independent convolutional encoders (image, English audio, Hindi
audio) each emit a grid of local d-dimensional embeddings plus their
global meanpool. Audio trunks collapse the 40 mel bins with their first
filter, then convolve and pool along time only (overall time
downsampling 27x); image trunks are plain conv/pool pyramids. A
BatchNorm over mel coefficients sits at the very front of each audio
encoder, normalizing per coefficient with batch statistics in training
and running estimates at eval.

Two presets: "paper" (d=2048, VGG16-shape image trunk, heavy audio
channels) and "desk" (d=64, thin trunks, 64 px images) which keeps the
full pipeline under a few hundred thousand parameters for CPU runs.

Checkpoints use the VGS1 container defined at the bottom: named float32
tensors plus a JSON metadata trailer.
"""

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, ConfigError, ShapeError
from .frontends import Spectrogram
from .seeding import rng_for

__all__ = [
    "ConvSpec",
    "PoolSpec",
    "EncoderConfig",
    "desk_encoder_config",
    "paper_encoder_config",
    "make_encoder_config",
    "audio_time_downsample",
    "TripleEncoder",
    "init_model",
    "restore_model",
    "import_trunk_weights",
    "stack_spectrograms",
    "encode_audio",
    "encode_image",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint_meta",
    "MODALITIES",
]

MODALITIES = ("i", "e", "h")


@dataclass(frozen=True)
class ConvSpec:
    """One convolution, stride 1, optional ReLU."""

    out_channels: int
    kernel: tuple[int, int]
    padding: tuple[int, int] = (0, 0)
    activation: str = "relu"  # "relu" | "linear"


@dataclass(frozen=True)
class PoolSpec:
    """Max pooling; stride equals the window, length floor-divides."""

    window: tuple[int, int]


LayerSpec = ConvSpec | PoolSpec


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int
    audio_trunk: tuple[LayerSpec, ...]
    image_trunk: tuple[LayerSpec, ...]
    n_mels: int = 40
    front_batchnorm: bool = True
    preset: str = "custom"

    def validate(self) -> None:
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        for name, trunk in (("audio", self.audio_trunk), ("image", self.image_trunk)):
            convs = [l for l in trunk if isinstance(l, ConvSpec)]
            if not convs:
                raise ConfigError(f"{name} trunk has no convolutions")
            for layer in trunk:
                if isinstance(layer, ConvSpec):
                    if layer.out_channels < 1 or min(layer.kernel) < 1:
                        raise ConfigError(f"{name} trunk has a degenerate convolution: {layer}")
                    if layer.activation not in ("relu", "linear"):
                        raise ConfigError(f"unknown activation {layer.activation!r}")
                elif min(layer.window) < 1:
                    raise ConfigError(f"{name} trunk has a degenerate pool: {layer}")
            if convs[-1].out_channels != self.embed_dim:
                raise ConfigError(
                    f"{name} trunk must end in embed_dim={self.embed_dim} channels, "
                    f"got {convs[-1].out_channels}"
                )
        first = self.audio_trunk[0]
        if not isinstance(first, ConvSpec) or first.kernel[0] != self.n_mels or first.padding[0] != 0:
            raise ConfigError(
                f"audio trunk must open with an unpadded conv spanning all {self.n_mels} mel bins"
            )
        for layer in self.audio_trunk[1:]:
            extent = layer.kernel[0] if isinstance(layer, ConvSpec) else layer.window[0]
            if extent != 1:
                raise ConfigError("audio trunk layers after the first must have frequency extent 1")


def desk_encoder_config(embed_dim: int = 64, front_batchnorm: bool = True) -> EncoderConfig:
    """Small trunks sized for single-core CPU training on 64 px images."""
    audio = (
        ConvSpec(16, (40, 1)),
        ConvSpec(32, (1, 11), padding=(0, 5)),
        PoolSpec((1, 3)),
        ConvSpec(64, (1, 17), padding=(0, 8)),
        PoolSpec((1, 3)),
        ConvSpec(64, (1, 17), padding=(0, 8)),
        PoolSpec((1, 3)),
        ConvSpec(embed_dim, (1, 1), activation="linear"),
    )
    image = (
        ConvSpec(16, (3, 3), padding=(1, 1)),
        PoolSpec((2, 2)),
        ConvSpec(32, (3, 3), padding=(1, 1)),
        PoolSpec((2, 2)),
        ConvSpec(64, (3, 3), padding=(1, 1)),
        PoolSpec((2, 2)),
        ConvSpec(64, (3, 3), padding=(1, 1)),
        PoolSpec((2, 2)),
        ConvSpec(embed_dim, (3, 3), padding=(1, 1), activation="linear"),
    )
    return EncoderConfig(
        embed_dim=embed_dim,
        audio_trunk=audio,
        image_trunk=image,
        front_batchnorm=front_batchnorm,
        preset="desk",
    )


def paper_encoder_config(embed_dim: int = 2048, front_batchnorm: bool = True) -> EncoderConfig:
    """Full-scale trunks: d=2048, VGG16 layout through conv5_3 for images."""
    audio = (
        ConvSpec(128, (40, 1)),
        ConvSpec(256, (1, 11), padding=(0, 5)),
        PoolSpec((1, 3)),
        ConvSpec(512, (1, 17), padding=(0, 8)),
        PoolSpec((1, 3)),
        ConvSpec(512, (1, 17), padding=(0, 8)),
        PoolSpec((1, 3)),
        ConvSpec(embed_dim, (1, 1), activation="linear"),
    )
    vgg_channels = (64, 64, "P", 128, 128, "P", 256, 256, 256, "P", 512, 512, 512, "P", 512, 512, 512)
    image: list[LayerSpec] = []
    for ch in vgg_channels:
        if ch == "P":
            image.append(PoolSpec((2, 2)))
        else:
            image.append(ConvSpec(int(ch), (3, 3), padding=(1, 1)))
    # linear 3x3 projection maps the 14 x 14 x 512 grid to d local embeddings
    image.append(ConvSpec(embed_dim, (3, 3), padding=(1, 1), activation="linear"))
    return EncoderConfig(
        embed_dim=embed_dim,
        audio_trunk=audio,
        image_trunk=tuple(image),
        front_batchnorm=front_batchnorm,
        preset="paper",
    )


def make_encoder_config(
    preset: str, embed_dim: int | None = None, front_batchnorm: bool = True
) -> EncoderConfig:
    if preset == "desk":
        return desk_encoder_config(embed_dim or 64, front_batchnorm)
    if preset == "paper":
        return paper_encoder_config(embed_dim or 2048, front_batchnorm)
    raise ConfigError(f"unknown encoder preset {preset!r}, expected 'desk' or 'paper'")


def audio_time_downsample(cfg: EncoderConfig) -> int:
    """Input frames consumed per output embedding step (pool product)."""
    factor = 1
    for layer in cfg.audio_trunk:
        if isinstance(layer, PoolSpec):
            factor *= layer.window[1]
    return factor


# ---------------------------------------------------------------------------
# modules


class _Trunk(nn.Sequential):
    def __init__(self, in_channels: int, layers: tuple[LayerSpec, ...]):
        mods: list[nn.Module] = []
        ch = in_channels
        for layer in layers:
            if isinstance(layer, ConvSpec):
                mods.append(nn.Conv2d(ch, layer.out_channels, layer.kernel, padding=layer.padding))
                if layer.activation == "relu":
                    mods.append(nn.ReLU())
                ch = layer.out_channels
            else:
                mods.append(nn.MaxPool2d(layer.window))
        super().__init__(*mods)


def _surviving_extent(n: int, layers: tuple[LayerSpec, ...], axis: int) -> int:
    """Length left along one axis after the trunk; 0 means it dies inside."""
    for layer in layers:
        if isinstance(layer, ConvSpec):
            n = n + 2 * layer.padding[axis] - layer.kernel[axis] + 1
        else:
            n = n // layer.window[axis]
        if n < 1:
            return 0
    return n


class AudioEncoder(nn.Module):
    """(B, F, n_mels) log-mels -> pooled (B, d) and unpooled (B, T', d)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.n_mels = cfg.n_mels
        self.layers = cfg.audio_trunk
        self.front_bn = nn.BatchNorm1d(cfg.n_mels) if cfg.front_batchnorm else None
        self.trunk = _Trunk(1, cfg.audio_trunk)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 3 or x.shape[2] != self.n_mels:
            raise ShapeError(f"expected (B, frames, {self.n_mels}) input, got {tuple(x.shape)}")
        # pooling would hit torch's own size error mid-trunk; check up front
        if _surviving_extent(x.shape[1], self.layers, axis=1) < 1:
            raise ShapeError("clip too short: no time steps survive the trunk downsampling")
        h = x.transpose(1, 2)  # (B, n_mels, F): BN normalizes each mel coefficient
        if self.front_bn is not None:
            h = self.front_bn(h)
        h = self.trunk(h.unsqueeze(1))  # (B, d, 1, T')
        if h.shape[2] != 1:
            raise ShapeError(f"audio trunk left {h.shape[2]} frequency rows, expected 1")
        if h.shape[3] < 1:
            raise ShapeError("clip too short: no time steps survive the trunk downsampling")
        unpooled = h.squeeze(2).transpose(1, 2)  # (B, T', d)
        return unpooled.mean(dim=1), unpooled


class ImageEncoder(nn.Module):
    """(B, H, W, 3) normalized pixels -> pooled (B, d) and unpooled (B, h*w, d)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.layers = cfg.image_trunk
        self.trunk = _Trunk(3, cfg.image_trunk)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 4 or x.shape[3] != 3:
            raise ShapeError(f"expected (B, H, W, 3) input, got {tuple(x.shape)}")
        if (
            _surviving_extent(x.shape[1], self.layers, axis=0) < 1
            or _surviving_extent(x.shape[2], self.layers, axis=1) < 1
        ):
            raise ShapeError("image too small: no spatial positions survive the trunk")
        h = self.trunk(x.permute(0, 3, 1, 2))  # (B, d, h, w)
        if h.shape[2] < 1 or h.shape[3] < 1:
            raise ShapeError("image too small: no spatial positions survive the trunk")
        unpooled = h.flatten(2).transpose(1, 2)  # (B, h*w, d), row-major positions
        return unpooled.mean(dim=1), unpooled


class TripleEncoder(nn.Module):
    """Container for the three independent encoders (no weight sharing)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.config = cfg
        self.image = ImageEncoder(cfg)
        self.audio_e = AudioEncoder(cfg)
        self.audio_h = AudioEncoder(cfg)

    def encoder(self, modality: str) -> nn.Module:
        try:
            return {"i": self.image, "e": self.audio_e, "h": self.audio_h}[modality]
        except KeyError:
            raise ConfigError(f"unknown modality {modality!r}, expected one of {MODALITIES}") from None


def init_model(cfg: EncoderConfig, seed: int, dtype: torch.dtype = torch.float32) -> TripleEncoder:
    """Deterministic init: fan-in-scaled uniform conv weights (bound
    sqrt(3/fan_in)), zero biases, unit BN.

    The hinge objective needs initial similarities near zero: this
    scaling shrinks activations slightly at every ReLU stage, keeping
    early dot products small so summed-loss SGD does not blow up.
    Conv weights draw from one labeled stream in lexicographic
    state-dict-name order, so the init is identical across runs and
    platforms for a given (config, seed).
    """
    model = TripleEncoder(cfg)
    rng = rng_for(seed, "init")
    state = model.state_dict()
    for name in sorted(state):
        t = state[name]
        if name.endswith(".weight") and t.ndim == 4:
            fan_in = t.shape[1] * t.shape[2] * t.shape[3]
            bound = float(np.sqrt(3.0 / fan_in))
            values = rng.uniform(-bound, bound, tuple(t.shape))
            state[name] = torch.from_numpy(values).to(t.dtype)
        elif name.endswith(".bias") or name.endswith("running_mean"):
            state[name] = torch.zeros_like(t)
        elif name.endswith(".weight") or name.endswith("running_var"):
            state[name] = torch.ones_like(t)
        elif name.endswith("num_batches_tracked"):
            state[name] = torch.zeros_like(t)
    model.load_state_dict(state)
    return model.to(dtype)


def restore_model(
    cfg: EncoderConfig, arrays: Mapping[str, np.ndarray], dtype: torch.dtype = torch.float32
) -> TripleEncoder:
    """Build a model from checkpoint arrays, validating names and shapes."""
    model = TripleEncoder(cfg)
    expected = {
        name: t for name, t in model.state_dict().items() if not name.endswith("num_batches_tracked")
    }
    missing = sorted(set(expected) - set(arrays))
    unexpected = sorted(set(arrays) - set(expected))
    if missing or unexpected:
        raise CheckpointError(
            f"checkpoint does not match architecture: missing {missing[:3]}, unexpected {unexpected[:3]}"
        )
    state = {}
    for name, arr in arrays.items():
        want = tuple(expected[name].shape)
        if tuple(arr.shape) != want:
            raise CheckpointError(f"checkpoint tensor {name!r} has shape {tuple(arr.shape)}, expected {want}")
        state[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(expected[name].dtype)
    model.load_state_dict(state, strict=False)
    return model.to(dtype)


def import_trunk_weights(model: TripleEncoder, modality: str, arrays: Mapping[str, np.ndarray]) -> int:
    """Copy externally trained trunk tensors (e.g. VGG weights) by name.

    Keys are relative to the encoder, e.g. "trunk.0.weight". Returns how
    many tensors were copied; unknown names or shape mismatches raise.
    """
    enc = model.encoder(modality)
    state = enc.state_dict()
    copied = 0
    for name, arr in arrays.items():
        if name not in state:
            raise CheckpointError(f"no tensor {name!r} in the {modality} encoder")
        if tuple(arr.shape) != tuple(state[name].shape):
            raise CheckpointError(
                f"tensor {name!r}: shape {tuple(arr.shape)} != expected {tuple(state[name].shape)}"
            )
        state[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(state[name].dtype)
        copied += 1
    if copied == 0:
        raise CheckpointError("no tensors to import")
    enc.load_state_dict(state)
    return copied


# ---------------------------------------------------------------------------
# batched encoding helpers (numpy in, numpy out)


def stack_spectrograms(specs: Sequence[Spectrogram]) -> np.ndarray:
    if not specs:
        raise ShapeError("no spectrograms to stack")
    shape = specs[0].values.shape
    for s in specs:
        if s.values.shape != shape:
            raise ShapeError(f"inconsistent spectrogram shapes: {s.values.shape} vs {shape}")
    return np.stack([s.values for s in specs]).astype(np.float32)


def _run_encoder(enc: nn.Module, x: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    dtype = next(enc.parameters()).dtype
    t = torch.from_numpy(np.ascontiguousarray(x)).to(dtype)
    if mode == "train":
        enc.train()
        pooled, unpooled = enc(t)
    elif mode == "eval":
        enc.eval()
        with torch.no_grad():
            pooled, unpooled = enc(t)
    else:
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    return (
        pooled.detach().cpu().numpy().astype(np.float32),
        unpooled.detach().cpu().numpy().astype(np.float32),
    )


def encode_audio(
    model: TripleEncoder, specs: Sequence[Spectrogram] | np.ndarray, lang: str, mode: str = "eval"
) -> tuple[np.ndarray, np.ndarray]:
    """Embed a batch of spectrograms; returns (pooled (B, d), unpooled (B, T', d)).

    Eval mode is pure (running BN stats, no grad); train mode uses batch
    statistics and updates the running estimates as a side effect.
    """
    if lang not in ("e", "h"):
        raise ConfigError(f"lang must be 'e' or 'h', got {lang!r}")
    x = specs if isinstance(specs, np.ndarray) else stack_spectrograms(specs)
    return _run_encoder(model.encoder(lang), x, mode)


def encode_image(
    model: TripleEncoder, images: np.ndarray, mode: str = "eval"
) -> tuple[np.ndarray, np.ndarray]:
    """Embed a batch of normalized (B, H, W, 3) images; same contract as audio."""
    return _run_encoder(model.encoder("i"), np.asarray(images), mode)


# ---------------------------------------------------------------------------
# VGS1 checkpoint container
#
# magic "VGS1", u32 tensor count, then per tensor: u16 name length, name
# (UTF-8), u8 rank, rank u64 dims, float32 data. After the tensors comes
# a UTF-8 JSON metadata blob followed by its u64 byte length. All
# integers and floats little-endian.

_VGS1_MAGIC = b"VGS1"
_META_REQUIRED = ("config_hash", "epoch", "scenario", "seed")


def save_checkpoint(model: TripleEncoder, meta: Mapping[str, object], path: str | Path) -> None:
    for key in _META_REQUIRED:
        if key not in meta:
            raise CheckpointError(f"checkpoint metadata missing required key {key!r}")
    state = [
        (name, t.detach().cpu().numpy().astype("<f4"))
        for name, t in model.state_dict().items()
        if not name.endswith("num_batches_tracked")
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_VGS1_MAGIC)
        fh.write(struct.pack("<I", len(state)))
        for name, arr in state:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())
        blob = json.dumps(dict(meta), sort_keys=True).encode("utf-8")
        fh.write(blob)
        fh.write(struct.pack("<Q", len(blob)))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    """Parse a VGS1 file into (named float32 arrays, metadata dict)."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != _VGS1_MAGIC:
        raise CheckpointError(f"{path}: not a VGS1 checkpoint")
    meta_len = struct.unpack("<Q", data[-8:])[0]
    if meta_len > len(data) - 16:
        raise CheckpointError(f"{path}: metadata trailer length {meta_len} exceeds file size")
    try:
        meta = json.loads(data[-8 - meta_len : -8].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata trailer ({exc})") from exc

    (count,) = struct.unpack("<I", data[4:8])
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    offset = 8
    end = len(data) - 8 - meta_len
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}Q", data, offset)
            offset += 8 * rank
            n = int(np.prod(dims)) if rank else 1
            if offset + 4 * n > end:
                raise CheckpointError(f"{path}: truncated while reading tensor {name!r}")
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(dims)
            offset += 4 * n
            if name in arrays:
                raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
            arrays[name] = arr.copy()
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from exc
    if offset != end:
        raise CheckpointError(f"{path}: {end - offset} unparsed bytes between tensors and trailer")
    for key in _META_REQUIRED:
        if key not in meta:
            raise CheckpointError(f"{path}: metadata missing required key {key!r}")
    return arrays, meta


def read_checkpoint_meta(path: str | Path) -> dict:
    return load_checkpoint(path)[1]
