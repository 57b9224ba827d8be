"""Binary path-style feature encoding of architectures (and its strict inverse).

One bit per block-presence flag, layer-count option, per-layer operation
variant, decoder option, head option and stem option. Absent blocks zero out
their whole slot region, including the presence bit. Slot order is a pure
function of the governing SearchSpaceConfig, so vectors from equal configs
are directly comparable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .space import (
    ArchitectureSpec,
    DecoderSpec,
    EncoderLayerSpec,
    HeadSpec,
    SearchSpaceConfig,
    SpecError,
    StemSpec,
    validate_spec,
)


class DecodeError(ValueError):
    """A bit vector violates one-hot or absence-zeroing rules."""


@dataclass(frozen=True)
class _LayerSlots:
    mha: dict[int, int]  # head count -> slot index
    gru: int
    conv: int

    def all_indices(self) -> list[int]:
        return [*self.mha.values(), self.gru, self.conv]


@dataclass(frozen=True)
class FeatureLayout:
    """Ordered slot names plus the index structure used by encode/decode."""

    slots: tuple[tuple[str, str], ...]  # (name, description)
    kernel_slots: dict[int, int] = field(repr=False, default_factory=dict)
    stem_dropout_slot: int = field(repr=False, default=-1)
    enc_present_slot: int | None = field(repr=False, default=None)
    enc_count_slots: dict[int, int] = field(repr=False, default_factory=dict)
    layer_slots: tuple[_LayerSlots, ...] = field(repr=False, default=())
    dec_present_slot: int | None = field(repr=False, default=None)
    dec_layer_slots: dict[int, int] = field(repr=False, default_factory=dict)
    dec_head_slots: dict[int, int] = field(repr=False, default_factory=dict)
    pool_slots: dict[str, int] = field(repr=False, default_factory=dict)
    spatial_dropout_slot: int = field(repr=False, default=-1)

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.slots)

    @property
    def fingerprint(self) -> str:
        """SHA-256 over the newline-joined slot names."""
        return hashlib.sha256("\n".join(self.names).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class FeatureVector:
    bits: tuple[int, ...]
    layout: FeatureLayout

    def __post_init__(self):
        if len(self.bits) != len(self.layout):
            raise SpecError(
                f"vector length {len(self.bits)} does not match layout length {len(self.layout)}"
            )
        if any(b not in (0, 1) for b in self.bits):
            raise SpecError("feature vector entries must be 0 or 1")

    def to01(self) -> str:
        return "".join(str(b) for b in self.bits)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.float64)

    @classmethod
    def from01(cls, text: str, layout: FeatureLayout) -> "FeatureVector":
        if set(text) - {"0", "1"}:
            raise SpecError(f"feature string contains characters outside 0/1: {text!r}")
        return cls(bits=tuple(int(c) for c in text), layout=layout)


def feature_layout(cfg: SearchSpaceConfig) -> FeatureLayout:
    """Deterministic slot layout for cfg. Equal configs yield identical layouts."""
    cfg.validate()
    slots: list[tuple[str, str]] = []

    def add(name: str, desc: str) -> int:
        slots.append((name, desc))
        return len(slots) - 1

    kernel_slots = {k: add(f"stem.kernel={k}", f"stem convolution kernel size {k}")
                    for k in cfg.stem_kernel_options}
    stem_dropout_slot = add("stem.dropout", "dropout after the stem convolution")

    enc_present_slot = None
    enc_count_slots: dict[int, int] = {}
    layer_slots: list[_LayerSlots] = []
    if cfg.encoder_enabled:
        enc_present_slot = add("encoder.present", "encoder block present")
        enc_count_slots = {c: add(f"encoder.layers={c}", f"encoder has {c} layers")
                           for c in cfg.encoder_layer_count_options}
        for pos in range(max(cfg.encoder_layer_count_options)):
            mha = {h: add(f"encoder.layer{pos}.mha{h}",
                          f"layer {pos} uses {h}-head self-attention")
                   for h in cfg.mha_head_options}
            gru = add(f"encoder.layer{pos}.gru", f"layer {pos} uses a GRU slice")
            conv = add(f"encoder.layer{pos}.conv", f"layer {pos} uses a convolution slice")
            layer_slots.append(_LayerSlots(mha=mha, gru=gru, conv=conv))

    dec_present_slot = None
    dec_layer_slots: dict[int, int] = {}
    dec_head_slots: dict[int, int] = {}
    if cfg.decoder_enabled:
        dec_present_slot = add("decoder.present", "decoder block present")
        dec_layer_slots = {c: add(f"decoder.layers={c}", f"decoder has {c} layers")
                           for c in cfg.decoder_layer_count_options}
        dec_head_slots = {h: add(f"decoder.heads={h}", f"decoder attention uses {h} heads")
                          for h in cfg.decoder_head_options}

    pool_slots = {p: add(f"head.pool={p}", f"head pools over time with {p}")
                  for p in cfg.head_pooling_options}
    spatial_dropout_slot = add("head.spatial_dropout", "whole-channel dropout before pooling")

    return FeatureLayout(
        slots=tuple(slots),
        kernel_slots=kernel_slots,
        stem_dropout_slot=stem_dropout_slot,
        enc_present_slot=enc_present_slot,
        enc_count_slots=enc_count_slots,
        layer_slots=tuple(layer_slots),
        dec_present_slot=dec_present_slot,
        dec_layer_slots=dec_layer_slots,
        dec_head_slots=dec_head_slots,
        pool_slots=pool_slots,
        spatial_dropout_slot=spatial_dropout_slot,
    )


def encode(spec: ArchitectureSpec, cfg: SearchSpaceConfig,
           layout: FeatureLayout | None = None) -> FeatureVector:
    """Encode a valid spec into its binary feature vector."""
    violations = validate_spec(spec, cfg)
    if violations:
        raise SpecError("cannot encode invalid spec: " + "; ".join(violations))
    lay = layout if layout is not None else feature_layout(cfg)
    bits = [0] * len(lay)

    bits[lay.kernel_slots[spec.stem.kernel]] = 1
    if spec.stem.dropout:
        bits[lay.stem_dropout_slot] = 1

    if spec.encoder is not None:
        bits[lay.enc_present_slot] = 1
        bits[lay.enc_count_slots[len(spec.encoder)]] = 1
        for pos, layer in enumerate(spec.encoder):
            ls = lay.layer_slots[pos]
            if layer.mha_heads is not None:
                bits[ls.mha[layer.mha_heads]] = 1
            if layer.gru:
                bits[ls.gru] = 1
            if layer.conv:
                bits[ls.conv] = 1

    if spec.decoder is not None:
        bits[lay.dec_present_slot] = 1
        bits[lay.dec_layer_slots[spec.decoder.layers]] = 1
        bits[lay.dec_head_slots[spec.decoder.heads]] = 1

    bits[lay.pool_slots[spec.head.pooling]] = 1
    if spec.head.spatial_dropout:
        bits[lay.spatial_dropout_slot] = 1

    return FeatureVector(bits=tuple(bits), layout=lay)


def _read_onehot(bits, slot_map: dict, group: str):
    """Value of a one-hot group; errors name the group."""
    chosen = [value for value, idx in slot_map.items() if bits[idx] == 1]
    if len(chosen) > 1:
        raise DecodeError(f"one-hot group {group!r} has {len(chosen)} bits set: {chosen}")
    return chosen[0] if chosen else None


def _require_zero(bits, indices, names, region: str) -> None:
    hot = [names[i] for i in indices if bits[i] != 0]
    if hot:
        raise DecodeError(f"{region} is absent but slots {hot} are set")


def decode(vec: FeatureVector, cfg: SearchSpaceConfig) -> ArchitectureSpec:
    """Invert encode; reject any vector violating one-hot or zeroing rules."""
    lay = feature_layout(cfg)
    if len(vec.bits) != len(lay):
        raise DecodeError(f"vector length {len(vec.bits)} does not match layout length {len(lay)}")
    bits = vec.bits
    names = lay.names

    kernel = _read_onehot(bits, lay.kernel_slots, "stem.kernel")
    if kernel is None:
        raise DecodeError("one-hot group 'stem.kernel' has no bit set")
    dropout = bool(bits[lay.stem_dropout_slot])
    if dropout not in cfg.stem_dropout_options:
        raise DecodeError(f"slot 'stem.dropout' value {dropout} is not an allowed option")

    encoder = None
    if cfg.encoder_enabled:
        all_layer_idx = [i for ls in lay.layer_slots for i in ls.all_indices()]
        if bits[lay.enc_present_slot] == 0:
            _require_zero(bits, list(lay.enc_count_slots.values()) + all_layer_idx,
                          names, "encoder")
        else:
            count = _read_onehot(bits, lay.enc_count_slots, "encoder.layers")
            if count is None:
                raise DecodeError("encoder present but one-hot group 'encoder.layers' has no bit set")
            layers = []
            for pos, ls in enumerate(lay.layer_slots):
                if pos >= count:
                    _require_zero(bits, ls.all_indices(), names, f"encoder.layer{pos}")
                    continue
                heads = _read_onehot(bits, ls.mha, f"encoder.layer{pos}.mha")
                layer = EncoderLayerSpec(
                    mha_heads=heads, gru=bool(bits[ls.gru]), conv=bool(bits[ls.conv])
                )
                if layer.n_ops == 0:
                    raise DecodeError(f"active encoder.layer{pos} has no operation bits set")
                layers.append(layer)
            encoder = tuple(layers)

    decoder = None
    if cfg.decoder_enabled:
        dec_idx = list(lay.dec_layer_slots.values()) + list(lay.dec_head_slots.values())
        if bits[lay.dec_present_slot] == 0:
            _require_zero(bits, dec_idx, names, "decoder")
        else:
            layers = _read_onehot(bits, lay.dec_layer_slots, "decoder.layers")
            heads = _read_onehot(bits, lay.dec_head_slots, "decoder.heads")
            if layers is None or heads is None:
                raise DecodeError("decoder present but a decoder one-hot group has no bit set")
            decoder = DecoderSpec(layers=layers, heads=heads)

    pooling = _read_onehot(bits, lay.pool_slots, "head.pool")
    if pooling is None:
        raise DecodeError("one-hot group 'head.pool' has no bit set")
    spatial = bool(bits[lay.spatial_dropout_slot])
    if spatial not in cfg.head_spatial_dropout_options:
        raise DecodeError(f"slot 'head.spatial_dropout' value {spatial} is not an allowed option")

    return ArchitectureSpec(
        stem=StemSpec(kernel=kernel, dropout=dropout),
        encoder=encoder,
        decoder=decoder,
        head=HeadSpec(pooling=pooling, spatial_dropout=spatial),
    )
