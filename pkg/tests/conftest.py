"""Shared fixtures: one small synthetic corpus and a matching run config.

The mini corpus is deliberately tiny (12 triples, 6 concepts, 0.36 s
clips) so unit tests stay fast; anything that needs realistic scale
builds its own corpus or lives in test_acceptance.py.
"""

import pytest

from vgs.config import EvalConfig, RunConfig
from vgs.corpus import SyntheticSpec, generate_synthetic
from vgs.encoders import make_encoder_config
from vgs.frontends import ImageNormConfig, MelConfig
from vgs.trainer import TrainConfig

MINI_SPEC = SyntheticSpec(
    n_items=12,
    n_val=4,
    vocab_size=6,
    concepts_min=1,
    concepts_max=3,
    image_size=64,
    tone_duration_s=0.12,
    seed=123,
)


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini_corpus")
    return generate_synthetic(MINI_SPEC, out)


@pytest.fixture(scope="session")
def mini_run_config():
    # 0.36 s clips give 34 valid frames; 40 keeps a visible zero-padding tail
    return RunConfig(
        seed=5,
        synthetic=MINI_SPEC,
        mel=MelConfig(target_frames=40),
        image=ImageNormConfig(resize_short_side=64, crop=64),
        encoder=make_encoder_config("desk"),
        train=TrainConfig(batch_size=4, epochs=2),
        eval=EvalConfig(batch_size=8),
    )
