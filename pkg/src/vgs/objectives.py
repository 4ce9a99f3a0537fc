"""Margin ranking objectives over paired embeddings.

The atom is a hinge on similarity differences: an anchor must score its
true pair higher than an imposter by a margin. Pairs are trained in
both directions, each directed term drawing its own single imposter
uniformly from the rest of the minibatch. Training scenarios compose
weighted pair terms over the modalities (i = image, e = English audio,
h = Hindi audio); all losses are summed, not averaged, over the batch.

The hinge is flat at zero: where margin - s(a, p) + s(a, imp) lands
exactly on the kink, the subgradient used is 0.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, ShapeError
from .seeding import rng_for

__all__ = [
    "MarginRankingParams",
    "rank_loss",
    "pair_loss_bidirectional",
    "scenario_loss",
    "ScenarioSpec",
    "SCENARIOS",
    "get_scenario",
    "sample_imposters",
]


@dataclass(frozen=True)
class MarginRankingParams:
    margin: float = 1.0
    similarity: str = "dot"

    def validate(self) -> None:
        if self.margin <= 0:
            raise ConfigError(f"margin must be positive, got {self.margin}")
        if self.similarity != "dot":
            raise ConfigError(f"only 'dot' similarity is supported, got {self.similarity!r}")


_DEFAULT = MarginRankingParams()


def rank_loss(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    imposter: torch.Tensor,
    params: MarginRankingParams = _DEFAULT,
) -> torch.Tensor:
    """max(0, margin - s(anchor, positive) + s(anchor, imposter)) for one triple."""
    params.validate()
    if not anchor.shape == positive.shape == imposter.shape or anchor.ndim != 1:
        raise ShapeError(
            f"rank_loss takes three equal-length vectors, got "
            f"{tuple(anchor.shape)}, {tuple(positive.shape)}, {tuple(imposter.shape)}"
        )
    margin = anchor.new_tensor(params.margin)
    return torch.clamp(margin - anchor @ positive + anchor @ imposter, min=0)


def sample_imposters(batch_size: int, n_directed: int, seed: int) -> np.ndarray:
    """Independent imposter index per directed term and item: (n_directed, B).

    Row d, column j holds the batch index of the imposter for item j in
    directed term d, uniform over the batch excluding j itself.
    """
    if batch_size < 2:
        raise ConfigError(f"imposter sampling needs batch_size >= 2, got {batch_size}")
    if n_directed < 1:
        raise ConfigError(f"n_directed must be >= 1, got {n_directed}")
    rng = rng_for(seed, "imposters")
    draw = rng.integers(0, batch_size - 1, size=(n_directed, batch_size))
    draw += draw >= np.arange(batch_size)  # skip self, keeping the draw uniform
    return draw.astype(np.int64)


def _check_pair(a: torch.Tensor, b: torch.Tensor, draw: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"paired batches must share shape (B, d), got {tuple(a.shape)} and {tuple(b.shape)}")
    B = a.shape[0]
    if B < 2:
        raise ShapeError(f"need at least 2 items per batch for imposters, got {B}")
    draw = np.asarray(draw)
    if draw.shape != (2, B):
        raise ShapeError(f"imposter draw must have shape (2, {B}), got {tuple(draw.shape)}")
    if draw.min() < 0 or draw.max() >= B:
        raise ShapeError("imposter indices out of range")
    if (draw == np.arange(B)).any():
        raise ShapeError("an item cannot be its own imposter")
    return draw


def pair_loss_bidirectional(
    a: torch.Tensor,
    b: torch.Tensor,
    draw: np.ndarray,
    params: MarginRankingParams = _DEFAULT,
) -> torch.Tensor:
    """Summed two-directional ranking loss for one aligned pair of batches.

    Direction 0 anchors each a_j against its imposter b_draw[0, j];
    direction 1 anchors b_j against a_draw[1, j].
    """
    params.validate()
    draw = _check_pair(a, b, draw)
    s_pos = (a * b).sum(dim=1)
    margin = params.margin
    ab = torch.clamp(margin - s_pos + (a * b[draw[0]]).sum(dim=1), min=0).sum()
    ba = torch.clamp(margin - s_pos + (b * a[draw[1]]).sum(dim=1), min=0).sum()
    return ab + ba


@dataclass(frozen=True)
class ScenarioSpec:
    """Weighted pair terms; order is fixed and drives imposter-draw layout."""

    name: str
    terms: tuple[tuple[tuple[str, str], float], ...]

    @property
    def n_directed(self) -> int:
        return 2 * len(self.terms)

    @property
    def modalities(self) -> tuple[str, ...]:
        seen: list[str] = []
        for (ma, mb), _ in self.terms:
            for m in (ma, mb):
                if m not in seen:
                    seen.append(m)
        return tuple(seen)


SCENARIOS: dict[str, ScenarioSpec] = {
    "e-i": ScenarioSpec("e-i", ((("e", "i"), 1.0),)),
    "h-i": ScenarioSpec("h-i", ((("h", "i"), 1.0),)),
    "e-h": ScenarioSpec("e-h", ((("e", "h"), 1.0),)),
    "e-i-h": ScenarioSpec("e-i-h", ((("e", "i"), 1.0), (("h", "i"), 1.0))),
    "h-e-i-h": ScenarioSpec(
        "h-e-i-h", ((("e", "i"), 1.0), (("h", "i"), 1.0), (("e", "h"), 5.0))
    ),
}


def get_scenario(name: str) -> ScenarioSpec:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ConfigError(
            f"unknown scenario {name!r}, expected one of {sorted(SCENARIOS)}"
        ) from None


def scenario_loss(
    spec: ScenarioSpec,
    embeddings: dict[str, torch.Tensor],
    draw: np.ndarray,
    params: MarginRankingParams = _DEFAULT,
) -> torch.Tensor:
    """Weighted sum of bidirectional pair losses for one minibatch.

    embeddings maps modality -> (B, d) pooled batch; draw has shape
    (spec.n_directed, B), rows 2t and 2t+1 serving term t.
    """
    missing = [m for m in spec.modalities if m not in embeddings]
    if missing:
        raise ConfigError(f"scenario {spec.name!r} needs embeddings for {missing}")
    draw = np.asarray(draw)
    some = embeddings[spec.modalities[0]]
    if draw.shape != (spec.n_directed, some.shape[0]):
        raise ShapeError(
            f"imposter draw must have shape ({spec.n_directed}, {some.shape[0]}), got {tuple(draw.shape)}"
        )
    total = None
    for t, ((ma, mb), weight) in enumerate(spec.terms):
        term = pair_loss_bidirectional(embeddings[ma], embeddings[mb], draw[2 * t : 2 * t + 2], params)
        total = weight * term if total is None else total + weight * term
    return total
