import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from seqnas.space import (
    ArchitectureSpec,
    ConfigError,
    EncoderLayerSpec,
    SearchSpaceConfig,
    canonical_id,
    canonical_spec_bytes,
    cardinality,
    enumerate_layer_variants,
    enumerate_space,
    get_preset,
    sample_architecture,
    space_config_hash,
    validate_spec,
)

from conftest import tiny_cfg


# ---------------------------------------------------------------- config


def test_config_option_sets_are_canonically_ordered():
    cfg = SearchSpaceConfig(stem_kernel_options=(7, 3, 5), head_pooling_options=("both", "max", "avg"))
    assert cfg.stem_kernel_options == (3, 5, 7)
    assert cfg.head_pooling_options == ("max", "avg", "both")


@pytest.mark.parametrize(
    "overrides",
    [
        {"stem_kernel_options": ()},
        {"stem_kernel_options": (3, 3)},
        {"stem_kernel_options": (4,)},
        {"mha_head_options": (0,)},
        {"d_model": 100},  # not divisible by 3*8
        {"head_pooling_options": ("median",)},
    ],
)
def test_invalid_configs_are_rejected(overrides):
    cfg = SearchSpaceConfig(**overrides)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_config_dict_round_trip(default_cfg):
    again = SearchSpaceConfig.from_dict(json.loads(json.dumps(default_cfg.to_dict())))
    assert again == default_cfg
    assert space_config_hash(again) == space_config_hash(default_cfg)


# ---------------------------------------------------------------- layer variants


def test_layer_variants_default_count_is_19(default_cfg):
    variants = enumerate_layer_variants(default_cfg)
    assert len(variants) == 19
    assert len(set(variants)) == 19


def test_layer_variants_single_head_option():
    cfg = SearchSpaceConfig(mha_head_options=(1,), d_model=3)
    variants = enumerate_layer_variants(cfg)
    # brute-force oracle: all non-empty op subsets with at most one MHA entry
    brute = set()
    for mha in (None, 1):
        for gru in (False, True):
            for conv in (False, True):
                if (mha is not None) + gru + conv >= 1:
                    brute.add((mha, gru, conv))
    assert len(variants) == len(brute) == 7


@given(heads=st.lists(st.sampled_from([1, 2, 4, 8, 16]), min_size=1, max_size=5, unique=True))
def test_layer_variant_count_formula(heads):
    d = 6 * max(heads)  # divisible by 1/2/3 splits for power-of-two head sets
    cfg = SearchSpaceConfig(mha_head_options=tuple(heads), d_model=d)
    assert len(enumerate_layer_variants(cfg)) == 4 * len(heads) + 3


def test_layer_variants_without_mha_is_three_no_vocabulary_switch():
    # The op vocabulary is fixed; restricting to "no MHA" means the 3
    # MHA-free subsets, obtained by brute force over {GRU, CONV} subsets.
    subsets = [(g, c) for g in (False, True) for c in (False, True) if g or c]
    assert len(subsets) == 3


# ---------------------------------------------------------------- cardinality


def test_encoder_subspace_count_matches_brute_force(default_cfg):
    variants = enumerate_layer_variants(default_cfg)
    brute = 0
    for count in default_cfg.encoder_layer_count_options:
        brute += len(variants) ** count
    assert brute == 130_701
    closed = cardinality(default_cfg) // (6 * 6 * 9)  # strip stem, head, decoder factors
    assert closed == 130_701 + 1  # +1 for the absent-encoder option


def test_cardinality_presets():
    assert cardinality(get_preset("paper")) == 4_705_272
    assert cardinality(get_preset("default")) == 42_347_448


def test_cardinality_equals_enumeration_on_small_spaces():
    for cfg in (
        tiny_cfg(),
        tiny_cfg(encoder_layer_count_options=(1, 2), mha_head_options=(1, 2), d_model=12),
        tiny_cfg(decoder_enabled=True, decoder_layer_count_options=(1,), decoder_head_options=(1, 2)),
        tiny_cfg(encoder_enabled=False, stem_kernel_options=(3, 5), head_pooling_options=("max", "avg")),
    ):
        n = cardinality(cfg)
        assert n <= 10**6
        enumerated = list(enumerate_space(cfg))
        assert len(enumerated) == n
        assert len({canonical_id(s) for s in enumerated}) == n


# ---------------------------------------------------------------- sampling


def test_sampling_is_deterministic(default_cfg):
    for mode in ("per-factor", "exact-uniform"):
        a = sample_architecture(default_cfg, np.random.default_rng(7), mode)
        b = sample_architecture(default_cfg, np.random.default_rng(7), mode)
        assert a == b
        assert canonical_spec_bytes(a) == canonical_spec_bytes(b)


def test_sampled_specs_are_valid(default_cfg, rng):
    for _ in range(300):
        spec = sample_architecture(default_cfg, rng)
        assert validate_spec(spec, default_cfg) == []


def test_exact_uniform_over_stem_head_space():
    # 6 stem x 6 head combinations, no encoder/decoder: chi-square against uniform
    cfg = SearchSpaceConfig(encoder_enabled=False, decoder_enabled=False)
    assert cardinality(cfg) == 36
    rng = np.random.default_rng(2024)
    counts = {}
    for _ in range(36_000):
        spec = sample_architecture(cfg, rng, "exact-uniform")
        counts[canonical_id(spec)] = counts.get(canonical_id(spec), 0) + 1
    assert len(counts) == 36
    _, p = chisquare(list(counts.values()))
    assert p > 0.01


def test_exact_uniform_over_tiny_full_space():
    cfg = tiny_cfg(encoder_layer_count_options=(1,), mha_head_options=(1, 2), d_model=12)
    n = cardinality(cfg)
    ids = [canonical_id(s) for s in enumerate_space(cfg)]
    rng = np.random.default_rng(99)
    counts = dict.fromkeys(ids, 0)
    for _ in range(1000 * n):
        counts[canonical_id(sample_architecture(cfg, rng, "exact-uniform"))] += 1
    _, p = chisquare(list(counts.values()))
    assert p > 0.01


def test_unknown_sampling_mode_rejected(default_cfg, rng):
    with pytest.raises(ConfigError):
        sample_architecture(default_cfg, rng, "stratified")


def test_sampling_invalid_config_errors(rng):
    with pytest.raises(ConfigError):
        sample_architecture(SearchSpaceConfig(d_model=100), rng)


# ---------------------------------------------------------------- canonical id


def test_canonical_id_ignores_construction_order(default_cfg):
    a = ArchitectureSpec.from_dict(
        {
            "head": {"spatial_dropout": True, "pooling": "avg"},
            "stem": {"dropout": False, "kernel": 5},
            "decoder": None,
            "encoder": [{"conv": True, "gru": False, "mha_heads": 4}],
        }
    )
    b = ArchitectureSpec.from_dict(
        {
            "stem": {"kernel": 5, "dropout": False},
            "encoder": [{"mha_heads": 4, "gru": False, "conv": True}],
            "decoder": None,
            "head": {"pooling": "avg", "spatial_dropout": True},
        }
    )
    assert canonical_id(a) == canonical_id(b)


def test_canonical_id_separates_specs(default_cfg):
    a = ArchitectureSpec.from_dict(
        {"stem": {"kernel": 3, "dropout": False}, "encoder": None, "decoder": None,
         "head": {"pooling": "max", "spatial_dropout": False}}
    )
    b = ArchitectureSpec.from_dict(
        {"stem": {"kernel": 5, "dropout": False}, "encoder": None, "decoder": None,
         "head": {"pooling": "max", "spatial_dropout": False}}
    )
    assert canonical_id(a) != canonical_id(b)


def test_canonical_id_format_and_injectivity(default_cfg, rng):
    import re

    seen = {}
    for _ in range(10_000):
        spec = sample_architecture(default_cfg, rng)
        cid = canonical_id(spec)
        assert re.fullmatch(r"[0-9a-f]{64}", cid)
        if cid in seen:
            assert seen[cid] == spec
        seen[cid] = spec
    distinct_specs = len({canonical_spec_bytes(s) for s in seen.values()})
    assert distinct_specs == len(seen)  # no digest collisions


# ---------------------------------------------------------------- validate_spec


def _spec(stem_kernel=3, stem_dropout=False, encoder=None, decoder=None,
          pooling="max", spatial=False):
    return ArchitectureSpec.from_dict(
        {
            "stem": {"kernel": stem_kernel, "dropout": stem_dropout},
            "encoder": encoder,
            "decoder": decoder,
            "head": {"pooling": pooling, "spatial_dropout": spatial},
        }
    )


def test_validate_spec_slice_arithmetic_ok(default_cfg):
    spec = _spec(encoder=[{"mha_heads": 8, "gru": True, "conv": True}])
    assert validate_spec(spec, default_cfg) == []  # 192/3 = 64, 64 % 8 == 0


def test_validate_spec_slice_arithmetic_violation():
    cfg = SearchSpaceConfig(d_model=100)  # deliberately broken config
    spec = _spec(encoder=[{"mha_heads": 8, "gru": True, "conv": True}])
    violations = validate_spec(spec, cfg)
    assert any("34" in v and "8" in v for v in violations)  # slice widths 34/33/33


def test_validate_spec_empty_layer(default_cfg):
    spec = ArchitectureSpec(
        stem=_spec().stem,
        encoder=(EncoderLayerSpec(),),
        decoder=None,
        head=_spec().head,
    )
    assert any("empty operation set" in v for v in validate_spec(spec, default_cfg))


def test_validate_spec_membership_violations(default_cfg):
    spec = _spec(stem_kernel=9)
    assert validate_spec(spec, default_cfg)
    spec = _spec(decoder={"layers": 3, "heads": 4})
    assert any("decoder layer count" in v for v in validate_spec(spec, default_cfg))
    paper = get_preset("paper")
    spec = _spec(decoder={"layers": 1, "heads": 4})
    assert any("disabled" in v for v in validate_spec(spec, paper))
