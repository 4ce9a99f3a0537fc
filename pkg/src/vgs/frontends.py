"""Signal-level frontends: waveform I/O, log-mel spectrograms, image tensors.

Audio goes through the classic pipeline: pre-emphasis, 25 ms Hamming
windows every 10 ms, magnitude-squared FFT, 40 triangular mel filters,
natural log with a floor. Output is padded or truncated to a fixed frame
count so batches stack. Images are resized so the short side hits a
target, cropped (random in training, center at eval), and normalized
with fixed per-channel statistics.

Binary dump formats (LMF1 for log-mels, IMF1 for image tensors) are
little-endian and fully pinned here so other tooling can parse them.
"""

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AudioError, ConfigError, ImageError, ShapeError

__all__ = [
    "Waveform",
    "read_wav",
    "write_wav",
    "MelConfig",
    "Spectrogram",
    "mel_filterbank",
    "mel_center_frequencies",
    "num_frames",
    "compute_logmel",
    "write_lmf1",
    "read_lmf1",
    "ImageNormConfig",
    "load_image",
    "resize_to_short_side",
    "crop_and_normalize",
    "preprocess_image",
    "write_imf1",
    "read_imf1",
]


# ---------------------------------------------------------------------------
# waveforms


@dataclass(frozen=True)
class Waveform:
    """Mono audio in [-1, 1] float32 plus its sample rate."""

    samples: np.ndarray
    sample_rate: int


def read_wav(path: str | Path) -> Waveform:
    """Read a PCM 16-bit mono RIFF WAV file."""
    path = Path(path)
    if not path.is_file():
        raise AudioError(f"audio file not found: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise AudioError(f"{path}: expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise AudioError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise AudioError(f"{path}: not a readable WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    if samples.size == 0:
        raise AudioError(f"{path}: empty waveform")
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path: str | Path, waveform: Waveform) -> None:
    """Write PCM 16-bit mono. Samples are clipped to [-1, 1] first."""
    clipped = np.clip(waveform.samples, -1.0, 1.0)
    ints = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate)
        wf.writeframes(ints.tobytes())


# ---------------------------------------------------------------------------
# log-mel spectrograms


@dataclass(frozen=True)
class MelConfig:
    """Log-mel extraction settings.

    target_frames fixes the output length: longer clips keep their head,
    shorter ones are zero-padded at the end. The default 1024 frames
    covers roughly 10 s of speech at a 10 ms shift; the desk preset
    shrinks this to 160.
    """

    sample_rate: int = 16000
    frame_length_s: float = 0.025
    frame_shift_s: float = 0.010
    n_mels: int = 40
    fft_size: int = 512
    window: str = "hamming"
    mel_fmin: float = 20.0
    mel_fmax: float | None = None
    log_floor: float = 1e-10
    preemphasis: float = 0.97
    target_frames: int = 1024

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_length_s * self.sample_rate))

    @property
    def frame_shift(self) -> int:
        return int(round(self.frame_shift_s * self.sample_rate))

    @property
    def fmax(self) -> float:
        return self.sample_rate / 2.0 if self.mel_fmax is None else self.mel_fmax

    def validate(self) -> None:
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.frame_length <= 0 or self.frame_shift <= 0:
            raise ConfigError("frame length and shift must be positive")
        if self.fft_size < self.frame_length:
            raise ConfigError(
                f"fft_size {self.fft_size} shorter than frame length {self.frame_length} samples"
            )
        if self.n_mels < 1:
            raise ConfigError(f"n_mels must be >= 1, got {self.n_mels}")
        if not 0.0 <= self.mel_fmin < self.fmax:
            raise ConfigError(f"need 0 <= mel_fmin < fmax, got [{self.mel_fmin}, {self.fmax}]")
        if self.fmax > self.sample_rate / 2.0:
            raise ConfigError(f"mel_fmax {self.fmax} above Nyquist {self.sample_rate / 2.0}")
        if self.log_floor <= 0.0:
            raise ConfigError("log_floor must be positive")
        if not 0.0 <= self.preemphasis < 1.0:
            raise ConfigError(f"preemphasis must be in [0, 1), got {self.preemphasis}")
        if self.target_frames < 1:
            raise ConfigError(f"target_frames must be >= 1, got {self.target_frames}")
        if self.window not in ("hamming", "hann"):
            raise ConfigError(f"unknown window {self.window!r}, expected 'hamming' or 'hann'")


@dataclass(frozen=True)
class Spectrogram:
    """Fixed-length log-mel matrix. Rows past valid_frames are exactly zero."""

    values: np.ndarray  # (target_frames, n_mels) float32
    valid_frames: int

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _mel_corner_freqs(cfg: MelConfig) -> np.ndarray:
    """n_mels + 2 corner frequencies in Hz, equally spaced on the mel scale."""
    mels = np.linspace(_hz_to_mel(cfg.mel_fmin), _hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return _mel_to_hz(mels)


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    """Peak frequency (Hz) of each of the n_mels triangular filters."""
    return _mel_corner_freqs(cfg)[1:-1]


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular filter matrix of shape (n_mels, fft_size // 2 + 1).

    Filter i rises linearly in Hz from corner i to corner i+1 and falls
    to corner i+2; no area normalization is applied.
    """
    corners = _mel_corner_freqs(cfg)
    n_bins = cfg.fft_size // 2 + 1
    bin_hz = np.arange(n_bins, dtype=np.float64) * cfg.sample_rate / cfg.fft_size
    fb = np.zeros((cfg.n_mels, n_bins), dtype=np.float64)
    for i in range(cfg.n_mels):
        lo, mid, hi = corners[i], corners[i + 1], corners[i + 2]
        rising = (bin_hz - lo) / (mid - lo)
        falling = (hi - bin_hz) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def _window_coeffs(cfg: MelConfig) -> np.ndarray:
    if cfg.window == "hamming":
        return np.hamming(cfg.frame_length)
    return np.hanning(cfg.frame_length)


def num_frames(n_samples: int, cfg: MelConfig) -> int:
    """Whole windows that fit: 1 + floor((len - win) / hop), or 0 if too short."""
    win, hop = cfg.frame_length, cfg.frame_shift
    if n_samples < win:
        return 0
    return 1 + (n_samples - win) // hop


def compute_logmel(waveform: Waveform, cfg: MelConfig) -> Spectrogram:
    """Log-mel spectrogram with a fixed frame budget.

    Raises AudioError on empty or non-finite input or a sample-rate
    mismatch; there is deliberately no resampler.
    """
    cfg.validate()
    x = np.asarray(waveform.samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise AudioError("waveform must be a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        raise AudioError("waveform contains non-finite samples")
    if waveform.sample_rate != cfg.sample_rate:
        raise AudioError(
            f"sample rate {waveform.sample_rate} != configured {cfg.sample_rate}; resample upstream"
        )

    if cfg.preemphasis > 0.0:
        x = np.concatenate([x[:1], x[1:] - cfg.preemphasis * x[:-1]])

    out = np.zeros((cfg.target_frames, cfg.n_mels), dtype=np.float32)
    n = num_frames(x.size, cfg)
    valid = min(n, cfg.target_frames)
    if valid == 0:
        return Spectrogram(values=out, valid_frames=0)

    win, hop = cfg.frame_length, cfg.frame_shift
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[:: hop][:valid]
    windowed = frames * _window_coeffs(cfg)
    power = np.abs(np.fft.rfft(windowed, n=cfg.fft_size, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg).T
    out[:valid] = np.log(np.maximum(energies, cfg.log_floor)).astype(np.float32)
    return Spectrogram(values=out, valid_frames=valid)


# ---------------------------------------------------------------------------
# LMF1 binary dump: magic, u32 n_mels, u32 valid_frames, u32 total_frames,
# then total_frames * n_mels float32, row-major, all little-endian.

_LMF1_MAGIC = b"LMF1"


def write_lmf1(path: str | Path, spec: Spectrogram) -> None:
    values = np.ascontiguousarray(spec.values, dtype="<f4")
    total, n_mels = values.shape
    with open(path, "wb") as fh:
        fh.write(_LMF1_MAGIC)
        fh.write(struct.pack("<III", n_mels, spec.valid_frames, total))
        fh.write(values.tobytes())


def read_lmf1(path: str | Path) -> Spectrogram:
    path = Path(path)
    if not path.is_file():
        raise ShapeError(f"feature file not found: {path}")
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != _LMF1_MAGIC:
        raise ShapeError(f"{path}: not an LMF1 file")
    n_mels, valid, total = struct.unpack("<III", data[4:16])
    expect = 16 + 4 * total * n_mels
    if len(data) != expect:
        raise ShapeError(f"{path}: LMF1 payload is {len(data)} bytes, expected {expect}")
    values = np.frombuffer(data[16:], dtype="<f4").reshape(total, n_mels)
    return Spectrogram(values=values.copy(), valid_frames=valid)


# ---------------------------------------------------------------------------
# images


@dataclass(frozen=True)
class ImageNormConfig:
    """Resize / crop / normalize settings.

    Defaults are the ImageNet-style 256 -> 224 pipeline with the usual
    channel statistics; the desk preset uses 64 -> 64.
    """

    resize_short_side: int = 256
    crop: int = 224
    channel_means: tuple[float, float, float] = (0.485, 0.456, 0.406)
    channel_stds: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def validate(self) -> None:
        if self.resize_short_side < 1 or self.crop < 1:
            raise ConfigError("resize_short_side and crop must be >= 1")
        if self.crop > self.resize_short_side:
            raise ConfigError(
                f"crop {self.crop} larger than resized short side {self.resize_short_side}"
            )
        if len(self.channel_means) != 3 or len(self.channel_stds) != 3:
            raise ConfigError("channel means and stds must each have 3 entries")
        if any(s <= 0 for s in self.channel_stds):
            raise ConfigError("channel stds must be positive")


def load_image(path: str | Path) -> np.ndarray:
    """Decode PNG/JPEG to an H x W x 3 uint8 RGB array."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ImageError(f"{path}: cannot decode image ({exc})") from exc
    return arr


def resize_to_short_side(pixels: np.ndarray, short: int) -> np.ndarray:
    """Bilinear resize so min(H, W) == short, aspect ratio preserved."""
    h, w = pixels.shape[:2]
    if h <= w:
        new_h, new_w = short, max(short, int(round(w * short / h)))
    else:
        new_h, new_w = max(short, int(round(h * short / w))), short
    img = Image.fromarray(pixels).resize((new_w, new_h), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def crop_and_normalize(
    resized: np.ndarray,
    cfg: ImageNormConfig,
    mode: str = "eval",
    seed: int | None = None,
) -> np.ndarray:
    """Crop an already-resized uint8 image and normalize to float32.

    mode "train" takes a seeded random crop (top offset drawn before
    left); mode "eval" takes the center crop, rounding offsets down.
    """
    if mode not in ("train", "eval"):
        raise ImageError(f"mode must be 'train' or 'eval', got {mode!r}")
    h, w = resized.shape[:2]
    c = cfg.crop
    if h < c or w < c:
        raise ImageError(f"image {h} x {w} smaller than crop {c}")
    if mode == "train":
        if seed is None:
            raise ImageError("train-mode cropping requires a seed")
        rng = np.random.default_rng(seed)
        top = int(rng.integers(0, h - c + 1))
        left = int(rng.integers(0, w - c + 1))
    else:
        top, left = (h - c) // 2, (w - c) // 2
    patch = resized[top : top + c, left : left + c].astype(np.float32) / 255.0

    means = np.asarray(cfg.channel_means, dtype=np.float32)
    stds = np.asarray(cfg.channel_stds, dtype=np.float32)
    return (patch - means) / stds


def preprocess_image(
    pixels: np.ndarray,
    cfg: ImageNormConfig,
    mode: str = "eval",
    seed: int | None = None,
) -> np.ndarray:
    """uint8 H x W x 3 in, float32 crop x crop x 3 out (resize, crop, normalize)."""
    cfg.validate()
    if not (isinstance(pixels, np.ndarray) and pixels.ndim == 3 and pixels.shape[2] == 3):
        raise ImageError(f"expected an H x W x 3 array, got shape {getattr(pixels, 'shape', None)}")
    if pixels.dtype != np.uint8:
        raise ImageError(f"expected uint8 pixels, got {pixels.dtype}")
    if pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise ImageError("image has zero extent")
    return crop_and_normalize(resize_to_short_side(pixels, cfg.resize_short_side), cfg, mode, seed)


# ---------------------------------------------------------------------------
# IMF1 binary dump: magic, u32 height, u32 width, u32 channels, then
# height * width * channels float32, row-major, little-endian.

_IMF1_MAGIC = b"IMF1"


def write_imf1(path: str | Path, tensor: np.ndarray) -> None:
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    if arr.ndim != 3:
        raise ShapeError(f"IMF1 stores H x W x C tensors, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_IMF1_MAGIC)
        fh.write(struct.pack("<III", *arr.shape))
        fh.write(arr.tobytes())


def read_imf1(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ShapeError(f"feature file not found: {path}")
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != _IMF1_MAGIC:
        raise ShapeError(f"{path}: not an IMF1 file")
    h, w, c = struct.unpack("<III", data[4:16])
    expect = 16 + 4 * h * w * c
    if len(data) != expect:
        raise ShapeError(f"{path}: IMF1 payload is {len(data)} bytes, expected {expect}")
    return np.frombuffer(data[16:], dtype="<f4").reshape(h, w, c).copy()
