"""Training loop: plain SGD on summed ranking losses, one checkpoint per epoch.

The learning-rate schedule runs in rounds: within a round the rate
starts at the base value and drops by decay_factor every decay_every
epochs; at the start of the next round it resets to the base value.
Defaults are two rounds of 90 epochs with a 10x drop every 30, base
0.001 (0.01 for the pure audio-audio scenario).

Everything stochastic (init, batch order, imposters, crops) draws from
labeled streams derived from the one run seed, so a single-threaded run
is bitwise reproducible and resuming from epoch E replays epochs E+1..N
exactly as an uninterrupted run would.
"""

import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np
import torch

from .corpus import Corpus, split_batches
from .encoders import TripleEncoder, init_model, load_checkpoint, restore_model, save_checkpoint
from .errors import CheckpointError, ConfigError, DivergenceError
from .frontends import compute_logmel, crop_and_normalize, load_image, read_wav, resize_to_short_side
from .objectives import MarginRankingParams, get_scenario, sample_imposters, scenario_loss
from .seeding import derive_seed

__all__ = [
    "TrainConfig",
    "resolved_base_lr",
    "total_epochs",
    "lr_at_epoch",
    "EpochLog",
    "TrainResult",
    "train",
    "resume",
    "checkpoint_name",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. base_lr=None resolves per scenario."""

    scenario: str = "h-e-i-h"
    batch_size: int = 128
    base_lr: float | None = None
    decay_factor: float = 10.0
    decay_every: int = 30
    epochs_per_round: int = 90
    rounds: int = 2
    epochs: int | None = None  # override total epoch count, schedule shape unchanged
    momentum: float = 0.0
    weight_decay: float = 0.0
    grad_clip: float | None = None  # global grad-norm cap; None leaves steps untouched
    margin: float = 1.0
    eval_every: int = 0  # 0 disables in-loop val retrieval
    threads: int = 1
    checkpoint_dir: str | None = None

    def validate(self) -> None:
        get_scenario(self.scenario)
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.base_lr is not None and self.base_lr < 0:
            raise ConfigError("base_lr must be >= 0")
        if self.decay_factor <= 0:
            raise ConfigError("decay_factor must be positive")
        if self.decay_every < 1 or self.epochs_per_round < 1 or self.rounds < 1:
            raise ConfigError("decay_every, epochs_per_round and rounds must be >= 1")
        if self.decay_every > self.epochs_per_round:
            raise ConfigError(
                f"decay_every {self.decay_every} exceeds epochs_per_round {self.epochs_per_round}"
            )
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError(f"epochs override must be >= 0, got {self.epochs}")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("momentum and weight_decay must be >= 0")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


def resolved_base_lr(cfg: TrainConfig) -> float:
    if cfg.base_lr is not None:
        return cfg.base_lr
    return 0.01 if cfg.scenario == "e-h" else 0.001


def total_epochs(cfg: TrainConfig) -> int:
    return cfg.epochs if cfg.epochs is not None else cfg.rounds * cfg.epochs_per_round


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-based epoch; resets at each round boundary."""
    cfg.validate()
    if epoch < 1 or epoch > total_epochs(cfg):
        raise ConfigError(f"epoch {epoch} outside 1..{total_epochs(cfg)}")
    epoch_in_round = (epoch - 1) % cfg.epochs_per_round + 1
    drops = (epoch_in_round - 1) // cfg.decay_every
    return resolved_base_lr(cfg) / (cfg.decay_factor**drops)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    scenario: str
    mean_batch_loss: float
    n_batches: int
    wall_time_s: float
    val_recalls: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "epoch": self.epoch,
            "lr": self.lr,
            "scenario": self.scenario,
            "mean_batch_loss": self.mean_batch_loss,
            "n_batches": self.n_batches,
            "wall_time_s": self.wall_time_s,
        }
        if self.val_recalls is not None:
            d["val_recalls"] = self.val_recalls
        return d


@dataclass
class TrainResult:
    final_checkpoint: Path
    checkpoint_dir: Path
    logs: list[EpochLog] = field(default_factory=list)


def checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch:04d}.ckpt"


class _FeatureCache:
    """Spectrograms and resized (pre-crop) images for one split, in memory."""

    def __init__(self, run_cfg, triples, modalities):
        self.img_cfg = run_cfg.image
        self.audio: dict[str, dict[str, np.ndarray]] = {}
        self.images: dict[str, np.ndarray] = {}
        for lang in ("e", "h"):
            if lang in modalities:
                self.audio[lang] = {
                    t.id: compute_logmel(read_wav(getattr(t, f"audio_{lang}")), run_cfg.mel).values
                    for t in triples
                }
        if "i" in modalities:
            self.images = {
                t.id: resize_to_short_side(load_image(t.image), self.img_cfg.resize_short_side)
                for t in triples
            }

    def audio_batch(self, batch, lang: str) -> np.ndarray:
        return np.stack([self.audio[lang][t.id] for t in batch])

    def image_batch(self, batch, mode: str, seed_fn=None) -> np.ndarray:
        return np.stack(
            [
                crop_and_normalize(
                    self.images[t.id],
                    self.img_cfg,
                    mode,
                    None if seed_fn is None else seed_fn(t.id),
                )
                for t in batch
            ]
        )


def _val_recalls(model: TripleEncoder, cache: _FeatureCache, val_items, recall_ks) -> dict:
    from .evaluation import build_library, evaluate_all_directions

    model.eval()
    embeddings = {}
    with torch.no_grad():
        for lang in cache.audio:
            x = torch.from_numpy(cache.audio_batch(val_items, lang))
            embeddings[lang] = model.encoder(lang)(x)[0].numpy()
        if cache.images:
            x = torch.from_numpy(cache.image_batch(val_items, "eval"))
            embeddings["i"] = model.encoder("i")(x)[0].numpy()
    lib = build_library([t.id for t in val_items], embeddings)
    reports = evaluate_all_directions(lib, recall_ks)
    return {
        d: {**{f"r{k}": v for k, v in r.recall_at.items()}, "M": r.M}
        for d, r in reports.items()
    }


def train(
    run_cfg,
    corpus: Corpus,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    log_stream: TextIO | None = None,
) -> TrainResult:
    """Run (or continue) one training job; returns the final checkpoint path.

    Writes epoch_0000.ckpt (the untouched init), per-epoch checkpoints,
    train_log.jsonl, and the effective config to out_dir. Epoch logs also
    stream to log_stream (stdout by default) as JSON lines.
    """
    run_cfg.validate()
    cfg: TrainConfig = run_cfg.train
    torch.set_num_threads(cfg.threads)
    scenario = get_scenario(cfg.scenario)
    params = MarginRankingParams(margin=cfg.margin)
    n_epochs = total_epochs(cfg)
    seed = run_cfg.seed
    config_hash = run_cfg.config_hash()
    stream = sys.stdout if log_stream is None else log_stream

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_cfg.save(out_dir / "config.yaml")

    def meta_for(epoch: int) -> dict:
        return {
            "config_hash": config_hash,
            "epoch": epoch,
            "scenario": cfg.scenario,
            "seed": seed,
            "config": run_cfg.to_dict(),
        }

    if resume_from is not None:
        arrays, meta = load_checkpoint(resume_from)
        if meta["config_hash"] != config_hash:
            raise CheckpointError(
                f"checkpoint was trained under config {meta['config_hash'][:12]}, "
                f"current config hashes to {config_hash[:12]}"
            )
        start_epoch = int(meta["epoch"])
        if start_epoch > n_epochs:
            raise CheckpointError(f"checkpoint is at epoch {start_epoch}, beyond total {n_epochs}")
        model = restore_model(run_cfg.encoder, arrays)
    else:
        start_epoch = 0
        model = init_model(run_cfg.encoder, seed)
        save_checkpoint(model, meta_for(0), out_dir / checkpoint_name(0))

    train_items = corpus.split("train")
    if len(train_items) < cfg.batch_size:
        raise ConfigError(
            f"train split has {len(train_items)} items, fewer than one batch of {cfg.batch_size}"
        )
    cache = _FeatureCache(run_cfg, train_items, scenario.modalities)
    val_cache = None
    if cfg.eval_every > 0:
        val_items = corpus.split("val")
        if not val_items:
            raise ConfigError("eval_every set but the corpus has no val split")
        val_cache = _FeatureCache(run_cfg, val_items, ("i", "e", "h"))

    if cfg.momentum > 0 and resume_from is not None:
        # momentum buffers are not serialized; the first resumed step differs
        print("warning: resuming with momentum restarts velocity at zero", file=sys.stderr)
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=resolved_base_lr(cfg),
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )

    logs: list[EpochLog] = []
    final_path = Path(resume_from) if resume_from is not None else out_dir / checkpoint_name(0)
    with open(out_dir / "train_log.jsonl", "a", encoding="utf-8") as log_file:
        for epoch in range(start_epoch + 1, n_epochs + 1):
            t0 = time.perf_counter()
            lr = lr_at_epoch(cfg, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            batches = split_batches(
                corpus, "train", cfg.batch_size, derive_seed(seed, f"batches/epoch{epoch:04d}")
            )
            model.train()
            batch_losses = []
            for b, batch in enumerate(batches):
                draw = sample_imposters(
                    cfg.batch_size,
                    scenario.n_directed,
                    derive_seed(seed, f"imposters/epoch{epoch:04d}/batch{b:04d}"),
                )
                embeddings = {}
                for mod in scenario.modalities:
                    if mod == "i":
                        x = cache.image_batch(
                            batch,
                            "train",
                            seed_fn=lambda tid: derive_seed(seed, f"crop/epoch{epoch:04d}/{tid}"),
                        )
                    else:
                        x = cache.audio_batch(batch, mod)
                    embeddings[mod] = model.encoder(mod)(torch.from_numpy(x))[0]
                loss = scenario_loss(scenario, embeddings, draw, params)
                if not torch.isfinite(loss):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch} batch {b}; lower the learning rate"
                    )
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                if cfg.grad_clip is not None:
                    # summed hinge losses can self-amplify on separable data;
                    # capping the global step norm keeps rare spikes local
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                batch_losses.append(float(loss.detach()))

            entry = EpochLog(
                epoch=epoch,
                lr=lr,
                scenario=cfg.scenario,
                mean_batch_loss=float(np.mean(batch_losses)),
                n_batches=len(batch_losses),
                wall_time_s=round(time.perf_counter() - t0, 3),
            )
            if val_cache is not None and epoch % cfg.eval_every == 0:
                entry.val_recalls = _val_recalls(model, val_cache, val_items, run_cfg.eval.recall_ks)
            final_path = out_dir / checkpoint_name(epoch)
            save_checkpoint(model, meta_for(epoch), final_path)
            line = json.dumps(entry.to_dict())
            log_file.write(line + "\n")
            log_file.flush()
            print(line, file=stream)
            logs.append(entry)

    return TrainResult(final_checkpoint=final_path, checkpoint_dir=out_dir, logs=logs)


def resume(
    checkpoint: str | Path,
    run_cfg,
    corpus: Corpus,
    out_dir: str | Path,
    log_stream: TextIO | None = None,
) -> TrainResult:
    """Continue training from a checkpoint; a finished run is a no-op."""
    return train(run_cfg, corpus, out_dir, resume_from=checkpoint, log_stream=log_stream)
