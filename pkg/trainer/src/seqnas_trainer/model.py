"""The searchable network, assembled from a wire-format architecture spec.

Stem: per-categorical embeddings plus batch-normalized, per-channel convolved
numeric features, concatenated and projected to d_model; sinusoidal time
encoding of the event timestamps is added to every token. Encoder layers
split the features into one slice per chosen operation (attention / GRU /
depthwise convolution, in that fixed order), apply them, and concatenate.
The optional decoder is a pre-norm transformer stack. The head applies
optional whole-channel dropout, pools over time (max, mean or both) and
projects to class logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .encoding import embedding_size
from .schema import EvsSchema, SchemaError, TrainRunConfig


class ArchError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderLayerPlan:
    mha_heads: int | None
    gru: bool
    conv: bool

    @property
    def n_ops(self) -> int:
        return int(self.mha_heads is not None) + int(self.gru) + int(self.conv)


@dataclass(frozen=True)
class ArchPlan:
    stem_kernel: int
    stem_dropout: bool
    encoder: tuple[EncoderLayerPlan, ...] | None
    decoder_layers: int | None
    decoder_heads: int | None
    pooling: str
    spatial_dropout: bool


def parse_arch(spec: dict) -> ArchPlan:
    """Parse the architecture document carried by train messages."""
    try:
        stem, head = spec["stem"], spec["head"]
        enc = spec.get("encoder")
        dec = spec.get("decoder")
        encoder = None if enc is None else tuple(
            EncoderLayerPlan(
                mha_heads=None if layer.get("mha_heads") is None else int(layer["mha_heads"]),
                gru=bool(layer.get("gru", False)),
                conv=bool(layer.get("conv", False)),
            )
            for layer in enc
        )
        plan = ArchPlan(
            stem_kernel=int(stem["kernel"]),
            stem_dropout=bool(stem["dropout"]),
            encoder=encoder,
            decoder_layers=None if dec is None else int(dec["layers"]),
            decoder_heads=None if dec is None else int(dec["heads"]),
            pooling=str(head["pooling"]),
            spatial_dropout=bool(head["spatial_dropout"]),
        )
    except (KeyError, TypeError) as exc:
        raise ArchError(f"malformed architecture spec: {exc}") from exc
    if plan.pooling not in ("max", "avg", "both"):
        raise ArchError(f"unknown pooling {plan.pooling!r}")
    if plan.encoder is not None:
        for i, layer in enumerate(plan.encoder):
            if layer.n_ops < 1:
                raise ArchError(f"encoder layer {i} has no operations")
    return plan


def slice_widths(d_model: int, n_ops: int) -> list[int]:
    base, extra = divmod(d_model, n_ops)
    return [base + (1 if i < extra else 0) for i in range(n_ops)]


def temporal_encoding_tensor(t: torch.Tensor, d: int) -> torch.Tensor:
    """(B, T) normalized times -> (B, T, d) sinusoidal features."""
    if d % 2 != 0:
        raise ArchError(f"time-encoding width must be even, got {d}")
    i2 = torch.arange(0, d, 2, dtype=torch.float32, device=t.device)
    denom = torch.pow(torch.tensor(10000.0, device=t.device), i2 / d)
    angle = t.unsqueeze(-1) / denom
    out = torch.empty(*t.shape, d, device=t.device)
    out[..., 0::2] = torch.sin(angle)
    out[..., 1::2] = torch.cos(angle)
    return out


class Stem(nn.Module):
    def __init__(self, plan: ArchPlan, schema: EvsSchema, cfg: TrainRunConfig):
        super().__init__()
        self.plan = plan
        self.schema = schema
        if cfg.embedding_size_from == "sequence_length":
            emb_sizes = [embedding_size(schema.seq_len) for _ in schema.categorical]
        else:
            emb_sizes = [embedding_size(card) for _, card in schema.categorical]
        self.embeddings = nn.ModuleList(
            nn.Embedding(card, size)
            for (_, card), size in zip(schema.categorical, emb_sizes)
        )
        n_num = len(schema.numeric)
        self.num_width = embedding_size(schema.seq_len) if n_num else 0
        if n_num:
            self.num_norm = nn.BatchNorm1d(n_num)
            pad = plan.stem_kernel // 2
            self.num_convs = nn.ModuleList(
                nn.Conv1d(1, self.num_width, plan.stem_kernel, padding=pad)
                for _ in range(n_num)
            )
        self.dropout = nn.Dropout(cfg.stem_dropout_rate) if plan.stem_dropout else None
        total = sum(emb_sizes) + n_num * self.num_width
        self.project = nn.Linear(total, cfg.d_model)
        self.d_model = cfg.d_model

    def forward(self, cat: torch.Tensor, num: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        parts = [emb(cat[:, i, :]) for i, emb in enumerate(self.embeddings)]
        if self.num_width:
            normed = self.num_norm(num)
            for i, conv in enumerate(self.num_convs):
                channel = conv(normed[:, i:i + 1, :])        # (B, width, T)
                if self.dropout is not None:
                    channel = self.dropout(channel)
                parts.append(channel.transpose(1, 2))        # (B, T, width)
        tokens = self.project(torch.cat(parts, dim=-1))
        return tokens + temporal_encoding_tensor(t, self.d_model)


class SliceAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads != 0:
            raise ArchError(f"attention slice width {width} not divisible by {heads} heads")
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)

    def forward(self, x):
        out, _ = self.attn(x, x, x, need_weights=False)
        return out


class SliceGru(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.gru = nn.GRU(width, width, batch_first=True)

    def forward(self, x):
        out, _ = self.gru(x)
        return out


class SliceConv(nn.Module):
    # depthwise temporal convolution, kernel 3, same padding
    def __init__(self, width: int):
        super().__init__()
        self.conv = nn.Conv1d(width, width, kernel_size=3, padding=1, groups=width)

    def forward(self, x):
        return self.conv(x.transpose(1, 2)).transpose(1, 2)


class EncoderLayer(nn.Module):
    """Feature split across the chosen operations, outputs concatenated."""

    def __init__(self, layer: EncoderLayerPlan, d_model: int):
        super().__init__()
        widths = slice_widths(d_model, layer.n_ops)
        ops: list[nn.Module] = []
        it = iter(widths)
        if layer.mha_heads is not None:
            ops.append(SliceAttention(next(it), layer.mha_heads))
        if layer.gru:
            ops.append(SliceGru(next(it)))
        if layer.conv:
            ops.append(SliceConv(next(it)))
        self.ops = nn.ModuleList(ops)
        self.widths = widths

    def forward(self, x):
        slices = torch.split(x, self.widths, dim=-1)
        return torch.cat([op(s) for op, s in zip(self.ops, slices)], dim=-1)


def build_model(plan: ArchPlan, schema: EvsSchema, cfg: TrainRunConfig) -> nn.Module:
    schema.validate()
    cfg.validate()

    layers: list[nn.Module] = [Stem(plan, schema, cfg)]
    if plan.encoder is not None:
        layers.extend(EncoderLayer(layer, cfg.d_model) for layer in plan.encoder)
    if plan.decoder_layers is not None:
        if cfg.d_model % plan.decoder_heads != 0:
            raise ArchError(
                f"d_model {cfg.d_model} not divisible by {plan.decoder_heads} decoder heads")
        block = nn.TransformerEncoderLayer(
            d_model=cfg.d_model, nhead=plan.decoder_heads,
            dim_feedforward=2 * cfg.d_model, batch_first=True, norm_first=True,
        )
        layers.append(nn.TransformerEncoder(block, num_layers=plan.decoder_layers,
                                            norm=nn.LayerNorm(cfg.d_model),
                                            enable_nested_tensor=False))
    backbone_width = cfg.d_model

    class Network(nn.Module):
        def __init__(self):
            super().__init__()
            self.blocks = nn.ModuleList(layers)
            self.spatial_dropout = (
                nn.Dropout1d(cfg.spatial_dropout_rate) if plan.spatial_dropout else None)
            head_width = 2 * backbone_width if plan.pooling == "both" else backbone_width
            self.classify = nn.Linear(head_width, schema.n_classes)
            self.pooling = plan.pooling

        def forward(self, cat, num, t):
            x = self.blocks[0](cat, num, t)
            for block in self.blocks[1:]:
                x = block(x)
            if self.spatial_dropout is not None:
                x = self.spatial_dropout(x.transpose(1, 2)).transpose(1, 2)
            pooled = []
            if self.pooling in ("max", "both"):
                pooled.append(x.max(dim=1).values)
            if self.pooling in ("avg", "both"):
                pooled.append(x.mean(dim=1))
            return self.classify(torch.cat(pooled, dim=-1))

    return Network()
