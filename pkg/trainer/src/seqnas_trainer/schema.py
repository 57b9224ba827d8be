"""Dataset schema and training-run configuration."""

from __future__ import annotations

from dataclasses import dataclass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class EvsSchema:
    """Shape of an event-sequence dataset: each sequence holds seq_len events,
    every event carries all categorical and numeric features plus a timestamp
    normalized to [0, 1] and strictly increasing within the sequence."""

    categorical: tuple[tuple[str, int], ...] = (("event_type", 8),)
    numeric: tuple[str, ...] = ("amount",)
    seq_len: int = 20
    n_classes: int = 2

    def validate(self) -> None:
        if not self.categorical and not self.numeric:
            raise SchemaError("schema needs at least one feature")
        if self.seq_len < 1:
            raise SchemaError("seq_len must be positive")
        if self.n_classes < 2:
            raise SchemaError("need at least two classes")
        for name, card in self.categorical:
            if card < 2:
                raise SchemaError(f"categorical feature {name!r} needs cardinality >= 2")

    def to_dict(self) -> dict:
        return {
            "categorical": [[n, c] for n, c in self.categorical],
            "numeric": list(self.numeric),
            "seq_len": self.seq_len,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvsSchema":
        return cls(
            categorical=tuple((str(n), int(c)) for n, c in d.get("categorical", [])),
            numeric=tuple(str(n) for n in d.get("numeric", [])),
            seq_len=int(d["seq_len"]),
            n_classes=int(d["n_classes"]),
        )


@dataclass(frozen=True)
class TrainRunConfig:
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3
    kd_weight: float = 1.0
    seed: int = 0
    spatial_dropout_rate: float = 0.3
    stem_dropout_rate: float = 0.1
    d_model: int = 192
    val_fraction: float = 0.2
    device: str = "cpu"
    # the embedding-size formula names N "a sequence length"; the common
    # heuristic reads N as the categorical cardinality -- both supported
    embedding_size_from: str = "sequence_length"  # or "cardinality"

    def validate(self) -> None:
        if min(self.epochs, self.batch_size) < 1:
            raise SchemaError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise SchemaError("learning rate must be positive")
        if self.kd_weight < 0:
            raise SchemaError("kd_weight must be non-negative")
        if not 0.0 < self.val_fraction < 1.0:
            raise SchemaError("val_fraction must be in (0, 1)")
        if self.d_model < 2 or self.d_model % 2 != 0:
            raise SchemaError("d_model must be a positive even integer")
        if self.embedding_size_from not in ("sequence_length", "cardinality"):
            raise SchemaError(f"unknown embedding_size_from {self.embedding_size_from!r}")
