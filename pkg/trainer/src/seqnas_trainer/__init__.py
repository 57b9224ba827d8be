"""Toy-scale event-sequence trainer behind the external-trainer protocol."""

__version__ = "0.1.0"

from .encoding import embedding_size, temporal_encoding  # noqa: F401
from .schema import EvsSchema, TrainRunConfig  # noqa: F401
