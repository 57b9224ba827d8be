"""Discrete architecture search space: configuration, specs, sampling, counting.

An architecture is a choice of stem (conv kernel + dropout), an optional
stack of encoder layers (each layer a non-empty subset of {MHA(h), GRU, CONV}
acting on equal feature slices), an optional transformer decoder (layers x
heads), and a head (pooling + spatial dropout). The space is finite; its
exact size is available in closed form and by enumeration.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

POOLING_MODES = ("max", "avg", "both")

SAMPLING_MODES = ("per-factor", "exact-uniform")


class ConfigError(ValueError):
    """A SearchSpaceConfig violates its invariants."""


class SpecError(ValueError):
    """An ArchitectureSpec is invalid for the governing config."""


def canonical_json(obj) -> bytes:
    """UTF-8 JSON with lexicographically sorted keys and no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _pooling_rank(p: str) -> int:
    return POOLING_MODES.index(p) if p in POOLING_MODES else len(POOLING_MODES)


_OPTION_FIELDS = (
    "stem_kernel_options",
    "stem_dropout_options",
    "encoder_layer_count_options",
    "mha_head_options",
    "decoder_layer_count_options",
    "decoder_head_options",
    "head_pooling_options",
    "head_spatial_dropout_options",
)


@dataclass(frozen=True)
class SearchSpaceConfig:
    """Option sets for every searchable factor; d_model is the fixed feature width."""

    stem_kernel_options: tuple[int, ...] = (3, 5, 7)
    stem_dropout_options: tuple[bool, ...] = (False, True)
    d_model: int = 192
    encoder_enabled: bool = True
    encoder_layer_count_options: tuple[int, ...] = (1, 2, 4)
    mha_head_options: tuple[int, ...] = (1, 2, 4, 8)
    decoder_enabled: bool = True
    decoder_layer_count_options: tuple[int, ...] = (1, 2)
    decoder_head_options: tuple[int, ...] = (1, 2, 4, 8)
    head_pooling_options: tuple[str, ...] = POOLING_MODES
    head_spatial_dropout_options: tuple[bool, ...] = (False, True)

    def __post_init__(self):
        # Canonical option order: ascending numerics, False < True, max < avg < both.
        for name in _OPTION_FIELDS:
            vals = tuple(getattr(self, name))
            if name == "head_pooling_options":
                vals = tuple(sorted(vals, key=_pooling_rank))
            else:
                vals = tuple(sorted(vals))
            object.__setattr__(self, name, vals)

    def validate(self) -> None:
        """Raise ConfigError on any invariant violation."""
        problems = []
        for name in _OPTION_FIELDS:
            vals = getattr(self, name)
            if not vals:
                problems.append(f"{name} is empty")
            if len(set(vals)) != len(vals):
                problems.append(f"{name} has duplicates: {vals}")
        for k in self.stem_kernel_options:
            if not (isinstance(k, int) and k > 0 and k % 2 == 1):
                problems.append(f"stem kernel {k!r} is not an odd positive integer")
        for name in ("encoder_layer_count_options", "mha_head_options",
                     "decoder_layer_count_options", "decoder_head_options"):
            for v in getattr(self, name):
                if not (isinstance(v, int) and v > 0):
                    problems.append(f"{name} entry {v!r} is not a positive integer")
        for p in self.head_pooling_options:
            if p not in POOLING_MODES:
                problems.append(f"unknown pooling mode {p!r}")
        for name in ("stem_dropout_options", "head_spatial_dropout_options"):
            for v in getattr(self, name):
                if not isinstance(v, bool):
                    problems.append(f"{name} entry {v!r} is not a boolean")
        if not (isinstance(self.d_model, int) and self.d_model > 0):
            problems.append(f"d_model {self.d_model!r} is not a positive integer")
        elif self.mha_head_options and not problems:
            divisor = 3 * max(self.mha_head_options)
            if self.d_model % divisor != 0:
                problems.append(
                    f"d_model {self.d_model} is not divisible by 3*max(heads) = {divisor}"
                )
            # The divisibility above is not sufficient for every head set
            # (e.g. d_model=6 with heads {1,2} leaves a width-3 slice);
            # require what it exists to guarantee: the attention slice works
            # with every allowed head count at every split arity.
            for n_ops in (1, 2, 3):
                width = slice_widths(self.d_model, n_ops)[0]
                for h in self.mha_head_options:
                    if width % h != 0:
                        problems.append(
                            f"d_model {self.d_model} split into {n_ops} slices leaves an "
                            f"attention slice of width {width}, incompatible with {h} heads"
                        )
                        break
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpaceConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown search-space config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class StemSpec:
    kernel: int
    dropout: bool


@dataclass(frozen=True)
class EncoderLayerSpec:
    """One encoder layer: a non-empty subset of {MHA(h), GRU, CONV}."""

    mha_heads: int | None = None
    gru: bool = False
    conv: bool = False

    @property
    def n_ops(self) -> int:
        return int(self.mha_heads is not None) + int(self.gru) + int(self.conv)

    def op_tags(self) -> tuple[str, ...]:
        """Operation tags in canonical slice order (MHA, GRU, CONV)."""
        tags = []
        if self.mha_heads is not None:
            tags.append(f"mha{self.mha_heads}")
        if self.gru:
            tags.append("gru")
        if self.conv:
            tags.append("conv")
        return tuple(tags)


@dataclass(frozen=True)
class DecoderSpec:
    layers: int
    heads: int


@dataclass(frozen=True)
class HeadSpec:
    pooling: str
    spatial_dropout: bool


@dataclass(frozen=True)
class ArchitectureSpec:
    stem: StemSpec
    encoder: tuple[EncoderLayerSpec, ...] | None
    decoder: DecoderSpec | None
    head: HeadSpec

    def to_dict(self) -> dict:
        return {
            "stem": {"kernel": self.stem.kernel, "dropout": self.stem.dropout},
            "encoder": None if self.encoder is None else [
                {"mha_heads": l.mha_heads, "gru": l.gru, "conv": l.conv} for l in self.encoder
            ],
            "decoder": None if self.decoder is None else
                {"layers": self.decoder.layers, "heads": self.decoder.heads},
            "head": {"pooling": self.head.pooling, "spatial_dropout": self.head.spatial_dropout},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        try:
            stem = StemSpec(kernel=int(d["stem"]["kernel"]), dropout=bool(d["stem"]["dropout"]))
            enc = d.get("encoder")
            encoder = None if enc is None else tuple(
                EncoderLayerSpec(
                    mha_heads=None if l.get("mha_heads") is None else int(l["mha_heads"]),
                    gru=bool(l.get("gru", False)),
                    conv=bool(l.get("conv", False)),
                )
                for l in enc
            )
            dec = d.get("decoder")
            decoder = None if dec is None else DecoderSpec(layers=int(dec["layers"]), heads=int(dec["heads"]))
            head = HeadSpec(pooling=str(d["head"]["pooling"]),
                            spatial_dropout=bool(d["head"]["spatial_dropout"]))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed architecture spec document: {exc}") from exc
        return cls(stem=stem, encoder=encoder, decoder=decoder, head=head)


def canonical_spec_bytes(spec: ArchitectureSpec) -> bytes:
    return canonical_json(spec.to_dict())


def canonical_id(spec: ArchitectureSpec) -> str:
    """SHA-256 hex digest of the canonical spec serialization."""
    return hashlib.sha256(canonical_spec_bytes(spec)).hexdigest()


def space_config_hash(cfg: SearchSpaceConfig) -> str:
    """SHA-256 hex digest of the canonical config serialization (protocol handshake)."""
    return hashlib.sha256(canonical_json(cfg.to_dict())).hexdigest()


def slice_widths(d_model: int, n_ops: int) -> list[int]:
    """Contiguous slice widths for a layer with n_ops operations; remainder goes left."""
    base, extra = divmod(d_model, n_ops)
    return [base + (1 if i < extra else 0) for i in range(n_ops)]


def enumerate_layer_variants(cfg: SearchSpaceConfig) -> list[EncoderLayerSpec]:
    """Every distinct encoder-layer variant, in a fixed canonical order.

    Count is 4*|mha_head_options| + 3 under the op vocabulary {MHA, GRU, CONV}:
    each subset contains at most one MHA entry, parameterized by head count.
    """
    cfg.validate()
    variants = []
    for mha in (None, *cfg.mha_head_options):
        for gru in (False, True):
            for conv in (False, True):
                layer = EncoderLayerSpec(mha_heads=mha, gru=gru, conv=conv)
                if layer.n_ops >= 1:
                    variants.append(layer)
    return variants


def cardinality(cfg: SearchSpaceConfig) -> int:
    """Exact number of distinct architectures expressible under cfg."""
    cfg.validate()
    stem = len(cfg.stem_kernel_options) * len(cfg.stem_dropout_options)
    head = len(cfg.head_pooling_options) * len(cfg.head_spatial_dropout_options)
    n_variants = 4 * len(cfg.mha_head_options) + 3
    encoder = 1
    if cfg.encoder_enabled:
        encoder += sum(n_variants ** count for count in cfg.encoder_layer_count_options)
    decoder = 1
    if cfg.decoder_enabled:
        decoder += len(cfg.decoder_layer_count_options) * len(cfg.decoder_head_options)
    return stem * encoder * decoder * head


def validate_spec(spec: ArchitectureSpec, cfg: SearchSpaceConfig) -> list[str]:
    """Return a list of violations (empty when the spec is valid under cfg)."""
    v = []
    if spec.stem.kernel not in cfg.stem_kernel_options:
        v.append(f"stem kernel {spec.stem.kernel} not in {cfg.stem_kernel_options}")
    if spec.stem.dropout not in cfg.stem_dropout_options:
        v.append(f"stem dropout {spec.stem.dropout} not in {cfg.stem_dropout_options}")
    if spec.encoder is not None:
        if not cfg.encoder_enabled:
            v.append("encoder present but disabled in config")
        if len(spec.encoder) not in cfg.encoder_layer_count_options:
            v.append(f"encoder layer count {len(spec.encoder)} not in {cfg.encoder_layer_count_options}")
        for i, layer in enumerate(spec.encoder):
            if layer.n_ops < 1:
                v.append(f"encoder layer {i} has an empty operation set")
                continue
            if layer.mha_heads is not None:
                if layer.mha_heads not in cfg.mha_head_options:
                    v.append(f"encoder layer {i} head count {layer.mha_heads} not in {cfg.mha_head_options}")
                else:
                    width = slice_widths(cfg.d_model, layer.n_ops)[0]
                    if width % layer.mha_heads != 0:
                        v.append(
                            f"encoder layer {i}: MHA slice width {width} "
                            f"not divisible by {layer.mha_heads} heads"
                        )
    if spec.decoder is not None:
        if not cfg.decoder_enabled:
            v.append("decoder present but disabled in config")
        if spec.decoder.layers not in cfg.decoder_layer_count_options:
            v.append(f"decoder layer count {spec.decoder.layers} not in {cfg.decoder_layer_count_options}")
        if spec.decoder.heads not in cfg.decoder_head_options:
            v.append(f"decoder head count {spec.decoder.heads} not in {cfg.decoder_head_options}")
    if spec.head.pooling not in cfg.head_pooling_options:
        v.append(f"head pooling {spec.head.pooling!r} not in {cfg.head_pooling_options}")
    if spec.head.spatial_dropout not in cfg.head_spatial_dropout_options:
        v.append(f"head spatial dropout {spec.head.spatial_dropout} not in {cfg.head_spatial_dropout_options}")
    return v


def _weighted_index(rng: np.random.Generator, weights: Sequence[int]) -> int:
    """Index drawn proportionally to integer weights, exactly (no float rounding)."""
    total = sum(weights)
    u = int(rng.integers(total))
    acc = 0
    for i, w in enumerate(weights):
        acc += w
        if u < acc:
            return i
    raise AssertionError("unreachable")


def sample_architecture(
    cfg: SearchSpaceConfig,
    rng: np.random.Generator,
    mode: str = "per-factor",
) -> ArchitectureSpec:
    """Draw one architecture.

    per-factor: every block factor is sampled independently and uniformly;
    block absence counts as one extra option of the layer-count factor.
    exact-uniform: presence/layer-count choices are weighted by sub-space
    cardinality so that every architecture in the space is equiprobable.
    """
    cfg.validate()
    if mode not in SAMPLING_MODES:
        raise ConfigError(f"unknown sampling mode {mode!r}; expected one of {SAMPLING_MODES}")
    variants = enumerate_layer_variants(cfg)

    stem = StemSpec(
        kernel=cfg.stem_kernel_options[int(rng.integers(len(cfg.stem_kernel_options)))],
        dropout=cfg.stem_dropout_options[int(rng.integers(len(cfg.stem_dropout_options)))],
    )

    encoder = None
    if cfg.encoder_enabled:
        counts = cfg.encoder_layer_count_options
        if mode == "per-factor":
            choice = int(rng.integers(len(counts) + 1))  # 0 means absent
        else:
            weights = [1] + [len(variants) ** c for c in counts]
            choice = _weighted_index(rng, weights)
        if choice > 0:
            n_layers = counts[choice - 1]
            encoder = tuple(variants[int(rng.integers(len(variants)))] for _ in range(n_layers))

    decoder = None
    if cfg.decoder_enabled:
        lay, hd = cfg.decoder_layer_count_options, cfg.decoder_head_options
        if mode == "per-factor":
            choice = int(rng.integers(len(lay) + 1))
            if choice > 0:
                decoder = DecoderSpec(
                    layers=lay[choice - 1],
                    heads=hd[int(rng.integers(len(hd)))],
                )
        else:
            choice = _weighted_index(rng, [1] + [1] * (len(lay) * len(hd)))
            if choice > 0:
                li, hi = divmod(choice - 1, len(hd))
                decoder = DecoderSpec(layers=lay[li], heads=hd[hi])

    head = HeadSpec(
        pooling=cfg.head_pooling_options[int(rng.integers(len(cfg.head_pooling_options)))],
        spatial_dropout=cfg.head_spatial_dropout_options[
            int(rng.integers(len(cfg.head_spatial_dropout_options)))],
    )
    return ArchitectureSpec(stem=stem, encoder=encoder, decoder=decoder, head=head)


def enumerate_space(cfg: SearchSpaceConfig) -> Iterator[ArchitectureSpec]:
    """Yield every architecture in the space once. Exponential in layer count;
    intended for shrunk configs (see cardinality before calling)."""
    cfg.validate()
    variants = enumerate_layer_variants(cfg)
    encoder_choices: list[tuple[EncoderLayerSpec, ...] | None] = [None]
    if cfg.encoder_enabled:
        for count in cfg.encoder_layer_count_options:
            encoder_choices.extend(itertools.product(variants, repeat=count))
    decoder_choices: list[DecoderSpec | None] = [None]
    if cfg.decoder_enabled:
        decoder_choices.extend(
            DecoderSpec(layers=l, heads=h)
            for l in cfg.decoder_layer_count_options
            for h in cfg.decoder_head_options
        )
    for kernel in cfg.stem_kernel_options:
        for dropout in cfg.stem_dropout_options:
            for enc in encoder_choices:
                for dec in decoder_choices:
                    for pooling in cfg.head_pooling_options:
                        for sd in cfg.head_spatial_dropout_options:
                            yield ArchitectureSpec(
                                stem=StemSpec(kernel=kernel, dropout=dropout),
                                encoder=enc,
                                decoder=dec,
                                head=HeadSpec(pooling=pooling, spatial_dropout=sd),
                            )


PRESETS = {
    "default": SearchSpaceConfig(),
    "paper": SearchSpaceConfig(decoder_enabled=False),
}


def load_space_config(path: str | Path) -> SearchSpaceConfig:
    """Load a search-space config from a JSON document with exact field names."""
    with open(path, "r", encoding="utf-8") as fh:
        return SearchSpaceConfig.from_dict(json.load(fh))


def get_preset(name: str) -> SearchSpaceConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]
