import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqnas.avec import DecodeError, FeatureVector, decode, encode, feature_layout
from seqnas.space import (
    ArchitectureSpec,
    SearchSpaceConfig,
    SpecError,
    cardinality,
    enumerate_space,
    sample_architecture,
)

from conftest import tiny_cfg


def test_layout_length_defaults(default_cfg):
    lay = feature_layout(default_cfg)
    assert len(lay) == 43


def test_layout_length_without_encoder():
    cfg = SearchSpaceConfig(encoder_enabled=False)
    assert len(feature_layout(cfg)) == 43 - (1 + 3 + 24)


def test_layout_is_deterministic(default_cfg):
    a = feature_layout(default_cfg)
    b = feature_layout(default_cfg)
    assert a.names == b.names
    assert a.fingerprint == b.fingerprint


def test_minimal_architecture_zeroes_optional_regions(default_cfg):
    spec = ArchitectureSpec.from_dict(
        {"stem": {"kernel": 3, "dropout": False}, "encoder": None, "decoder": None,
         "head": {"pooling": "max", "spatial_dropout": False}}
    )
    vec = encode(spec, default_cfg)
    lay = vec.layout
    enc_region = [i for i, (name, _) in enumerate(lay.slots) if name.startswith("encoder.")]
    dec_region = [i for i, (name, _) in enumerate(lay.slots) if name.startswith("decoder.")]
    assert all(vec.bits[i] == 0 for i in enc_region + dec_region)
    assert sum(vec.bits) == 2  # stem kernel one-hot + head pooling one-hot


def test_two_layer_spec_zeroes_trailing_layer_slots(default_cfg):
    spec = ArchitectureSpec.from_dict(
        {
            "stem": {"kernel": 5, "dropout": True},
            "encoder": [
                {"mha_heads": 2, "gru": False, "conv": False},
                {"mha_heads": None, "gru": True, "conv": True},
            ],
            "decoder": None,
            "head": {"pooling": "both", "spatial_dropout": True},
        }
    )
    vec = encode(spec, default_cfg)
    lay = vec.layout
    for pos in (2, 3):
        idx = lay.layer_slots[pos].all_indices()
        assert all(vec.bits[i] == 0 for i in idx)


def test_encode_distinct_specs_distinct_vectors(default_cfg, rng):
    seen_specs, seen_vecs = set(), set()
    while len(seen_specs) < 1000:
        spec = sample_architecture(default_cfg, rng)
        if spec in seen_specs:
            continue
        seen_specs.add(spec)
        seen_vecs.add(encode(spec, default_cfg).to01())
    assert len(seen_vecs) == 1000


def test_round_trip_over_sampled_specs(default_cfg, rng):
    lay = feature_layout(default_cfg)
    for _ in range(2000):
        spec = sample_architecture(default_cfg, rng)
        assert decode(encode(spec, default_cfg, lay), default_cfg) == spec


@given(seed=st.integers(0, 2**32 - 1), mode=st.sampled_from(["per-factor", "exact-uniform"]))
def test_round_trip_property(seed, mode):
    cfg = SearchSpaceConfig()
    spec = sample_architecture(cfg, np.random.default_rng(seed), mode)
    assert decode(encode(spec, cfg), cfg) == spec


def test_encode_injective_on_enumerable_space():
    cfg = tiny_cfg(
        stem_kernel_options=(3, 5),
        stem_dropout_options=(False, True),
        encoder_layer_count_options=(1, 2),
        mha_head_options=(1, 2),
        d_model=12,
        decoder_enabled=True,
        head_pooling_options=("max", "avg", "both"),
        head_spatial_dropout_options=(False, True),
    )
    assert cardinality(cfg) <= 10**5
    seen = set()
    for spec in enumerate_space(cfg):
        key = encode(spec, cfg).to01()
        assert key not in seen
        seen.add(key)


def test_masking_encoder_equals_zeroing_encoder_region(default_cfg, rng):
    lay = feature_layout(default_cfg)
    enc_idx = {i for i, (name, _) in enumerate(lay.slots) if name.startswith("encoder.")}
    hits = 0
    while hits < 200:
        spec = sample_architecture(default_cfg, rng)
        if spec.encoder is None:
            continue
        hits += 1
        masked = ArchitectureSpec(stem=spec.stem, encoder=None, decoder=spec.decoder, head=spec.head)
        direct = encode(masked, default_cfg, lay).bits
        zeroed = tuple(0 if i in enc_idx else b for i, b in enumerate(encode(spec, default_cfg, lay).bits))
        assert direct == zeroed


def test_encode_rejects_invalid_spec(default_cfg):
    bad = ArchitectureSpec.from_dict(
        {"stem": {"kernel": 9, "dropout": False}, "encoder": None, "decoder": None,
         "head": {"pooling": "max", "spatial_dropout": False}}
    )
    with pytest.raises(SpecError):
        encode(bad, default_cfg)


def _flip(bits, lay, name, value=1):
    idx = lay.names.index(name)
    out = list(bits)
    out[idx] = value
    return tuple(out)


def test_decode_rejects_double_kernel_bits(default_cfg):
    lay = feature_layout(default_cfg)
    spec = ArchitectureSpec.from_dict(
        {"stem": {"kernel": 3, "dropout": False}, "encoder": None, "decoder": None,
         "head": {"pooling": "max", "spatial_dropout": False}}
    )
    bits = _flip(encode(spec, default_cfg, lay).bits, lay, "stem.kernel=5")
    with pytest.raises(DecodeError, match="stem.kernel"):
        decode(FeatureVector(bits=bits, layout=lay), default_cfg)


def test_decode_rejects_present_without_count(default_cfg):
    lay = feature_layout(default_cfg)
    spec = ArchitectureSpec.from_dict(
        {"stem": {"kernel": 3, "dropout": False}, "encoder": None, "decoder": None,
         "head": {"pooling": "max", "spatial_dropout": False}}
    )
    bits = _flip(encode(spec, default_cfg, lay).bits, lay, "encoder.present")
    with pytest.raises(DecodeError, match="encoder.layers"):
        decode(FeatureVector(bits=bits, layout=lay), default_cfg)


def test_decode_rejects_op_bits_with_absent_encoder(default_cfg):
    lay = feature_layout(default_cfg)
    spec = ArchitectureSpec.from_dict(
        {"stem": {"kernel": 3, "dropout": False}, "encoder": None, "decoder": None,
         "head": {"pooling": "max", "spatial_dropout": False}}
    )
    bits = _flip(encode(spec, default_cfg, lay).bits, lay, "encoder.layer0.gru")
    with pytest.raises(DecodeError, match="absent"):
        decode(FeatureVector(bits=bits, layout=lay), default_cfg)


def test_vector_string_round_trip(default_cfg, rng):
    lay = feature_layout(default_cfg)
    vec = encode(sample_architecture(default_cfg, rng), default_cfg, lay)
    again = FeatureVector.from01(vec.to01(), lay)
    assert again.bits == vec.bits


def test_vector_entries_are_binary(default_cfg):
    lay = feature_layout(default_cfg)
    with pytest.raises(SpecError):
        FeatureVector(bits=(2,) * len(lay), layout=lay)
