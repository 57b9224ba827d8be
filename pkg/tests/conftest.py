import hypothesis
import numpy as np
import pytest

from seqnas.space import SearchSpaceConfig

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture
def default_cfg():
    return SearchSpaceConfig()


@pytest.fixture
def paper_cfg():
    return SearchSpaceConfig(decoder_enabled=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_cfg(**overrides):
    """A shrunk space small enough for exhaustive enumeration in tests."""
    base = dict(
        stem_kernel_options=(3,),
        stem_dropout_options=(False,),
        encoder_enabled=True,
        encoder_layer_count_options=(1,),
        mha_head_options=(1,),
        d_model=3,
        decoder_enabled=False,
        head_pooling_options=("max",),
        head_spatial_dropout_options=(False,),
    )
    base.update(overrides)
    return SearchSpaceConfig(**base)
