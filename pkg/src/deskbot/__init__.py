"""Desk-scale robot-learning pipeline: bus, recording, alignment, policies."""

__version__ = "0.1.0"

from .frames import SCHEMA_ID, FieldValue, UnifiedFrame, decode_json, encode_json

__all__ = [
    "SCHEMA_ID",
    "FieldValue",
    "UnifiedFrame",
    "decode_json",
    "encode_json",
    "__version__",
]
