"""Run configuration: one YAML file describing an entire experiment.

Sections map onto the component configs (synthetic corpus, mel
frontend, image frontend, encoder architecture, training, eval). Every
key is validated; unknown keys are rejected rather than ignored. The
config_hash covers everything that shapes results (seed, data spec,
frontends, architecture, optimization) and deliberately skips execution
details (thread count, checkpoint directory, eval cadence), so moving a
run or changing its logging does not block resuming.

Encoder sections come in two forms: a preset reference
({preset: desk, embed_dim: 64}) or the fully spelled-out trunk list that
to_dict() emits. Round-tripping a config through to_dict/from_dict
preserves the hash exactly.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .corpus import SyntheticSpec
from .encoders import ConvSpec, EncoderConfig, PoolSpec, make_encoder_config
from .errors import ConfigError
from .frontends import ImageNormConfig, MelConfig
from .trainer import TrainConfig

__all__ = [
    "EvalConfig",
    "RunConfig",
    "desk_run_config",
    "paper_run_config",
    "load_config",
]

CONFIG_VERSION = 1

# execution details a hash must ignore (section, field)
_UNHASHED = {("train", "threads"), ("train", "checkpoint_dir"), ("train", "eval_every")}


@dataclass(frozen=True)
class EvalConfig:
    batch_size: int = 64
    recall_ks: tuple[int, ...] = (1, 5, 10)

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("eval batch_size must be >= 1")
        ks = self.recall_ks
        if not ks or any(k < 1 for k in ks) or list(ks) != sorted(set(ks)):
            raise ConfigError(f"recall_ks must be distinct ascending positive ints, got {ks}")


def _build_section(dc_type, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return dc_type(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _layer_to_dict(layer) -> dict:
    if isinstance(layer, ConvSpec):
        return {
            "conv": {
                "out_channels": layer.out_channels,
                "kernel": list(layer.kernel),
                "padding": list(layer.padding),
                "activation": layer.activation,
            }
        }
    return {"pool": {"window": list(layer.window)}}


def _layer_from_dict(data, where: str):
    if not (isinstance(data, dict) and len(data) == 1):
        raise ConfigError(f"{where}: each trunk layer is one {{conv: ...}} or {{pool: ...}} mapping")
    kind, body = next(iter(data.items()))
    if kind == "conv":
        spec = _build_section(ConvSpec, body, where)
    elif kind == "pool":
        spec = _build_section(PoolSpec, body, where)
    else:
        raise ConfigError(f"{where}: unknown layer kind {kind!r}")
    return spec


def _encoder_to_dict(cfg: EncoderConfig) -> dict:
    return {
        "preset": cfg.preset,
        "embed_dim": cfg.embed_dim,
        "n_mels": cfg.n_mels,
        "front_batchnorm": cfg.front_batchnorm,
        "audio_trunk": [_layer_to_dict(l) for l in cfg.audio_trunk],
        "image_trunk": [_layer_to_dict(l) for l in cfg.image_trunk],
    }


def _encoder_from_dict(data, where: str) -> EncoderConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    if "audio_trunk" in data or "image_trunk" in data:
        allowed = {"preset", "embed_dim", "n_mels", "front_batchnorm", "audio_trunk", "image_trunk"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"{where}: unknown keys {unknown}")
        for key in ("embed_dim", "audio_trunk", "image_trunk"):
            if key not in data:
                raise ConfigError(f"{where}: structural encoder config needs {key!r}")
        return EncoderConfig(
            embed_dim=data["embed_dim"],
            audio_trunk=tuple(
                _layer_from_dict(l, f"{where}.audio_trunk[{i}]") for i, l in enumerate(data["audio_trunk"])
            ),
            image_trunk=tuple(
                _layer_from_dict(l, f"{where}.image_trunk[{i}]") for i, l in enumerate(data["image_trunk"])
            ),
            n_mels=data.get("n_mels", 40),
            front_batchnorm=data.get("front_batchnorm", True),
            preset=data.get("preset", "custom"),
        )
    allowed = {"preset", "embed_dim", "front_batchnorm"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    if "preset" not in data:
        raise ConfigError(f"{where}: needs either a preset name or explicit trunks")
    return make_encoder_config(
        data["preset"], data.get("embed_dim"), data.get("front_batchnorm", True)
    )


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    synthetic: SyntheticSpec | None = None
    mel: MelConfig = MelConfig()
    image: ImageNormConfig = ImageNormConfig()
    encoder: EncoderConfig = None  # set via factories or from_dict
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    version: int = CONFIG_VERSION

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"config version {self.version} unsupported, expected {CONFIG_VERSION}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if self.encoder is None:
            raise ConfigError("config has no encoder section")
        if self.synthetic is not None:
            self.synthetic.validate()
        self.mel.validate()
        self.image.validate()
        self.encoder.validate()
        self.train.validate()
        self.eval.validate()
        if self.mel.n_mels != self.encoder.n_mels:
            raise ConfigError(
                f"mel n_mels {self.mel.n_mels} != encoder n_mels {self.encoder.n_mels}"
            )

    def to_dict(self) -> dict:
        def plain(dc):
            return {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in dataclasses.asdict(dc).items()
            }

        return {
            "version": self.version,
            "seed": self.seed,
            "synthetic": None if self.synthetic is None else plain(self.synthetic),
            "mel": plain(self.mel),
            "image": plain(self.image),
            "encoder": _encoder_to_dict(self.encoder),
            "train": plain(self.train),
            "eval": plain(self.eval),
        }

    def config_hash(self) -> str:
        data = self.to_dict()
        for section, key in _UNHASHED:
            data[section].pop(key, None)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8")


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    sections = {"version", "seed", "synthetic", "mel", "image", "encoder", "train", "eval"}
    unknown = sorted(set(data) - sections)
    if unknown:
        raise ConfigError(f"config: unknown top-level keys {unknown}")
    if "version" not in data:
        raise ConfigError("config: missing required 'version' field")
    cfg = RunConfig(
        version=data["version"],
        seed=data.get("seed", 0),
        synthetic=(
            _build_section(SyntheticSpec, data["synthetic"], "synthetic")
            if data.get("synthetic") is not None
            else None
        ),
        mel=_build_section(MelConfig, data.get("mel", {}), "mel"),
        image=_build_section(ImageNormConfig, data.get("image", {}), "image"),
        encoder=_encoder_from_dict(data.get("encoder", {"preset": "desk"}), "encoder"),
        train=_build_section(TrainConfig, data.get("train", {}), "train"),
        eval=_build_section(EvalConfig, data.get("eval", {}), "eval"),
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    try:
        return from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def desk_run_config(seed: int = 0, n_items: int = 2200, n_val: int = 200) -> RunConfig:
    """CPU-friendly experiment: 64 px images, 160 frames, d=64, batch 16."""
    return RunConfig(
        seed=seed,
        synthetic=SyntheticSpec(n_items=n_items, n_val=n_val, seed=seed),
        mel=MelConfig(target_frames=160),
        image=ImageNormConfig(resize_short_side=64, crop=64),
        encoder=make_encoder_config("desk"),
        train=TrainConfig(batch_size=16, epochs=30, grad_clip=500.0),
        eval=EvalConfig(),
    )


def paper_run_config(seed: int = 0) -> RunConfig:
    """Full-scale settings: d=2048, 1024 frames, 224 px crops, batch 128."""
    return RunConfig(
        seed=seed,
        synthetic=None,
        mel=MelConfig(),
        image=ImageNormConfig(),
        encoder=make_encoder_config("paper"),
        train=TrainConfig(),
        eval=EvalConfig(),
    )
