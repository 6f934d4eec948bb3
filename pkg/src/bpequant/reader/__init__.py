"""Blinded reader study: side assignment, scoring rules, persistence, rendering, HTTP service."""

from .study import (
    ReaderRecord,
    RecordStore,
    SideAssignment,
    StudyConfig,
    assign_sides,
    export_scores,
    validate_record,
)

__all__ = [
    "ReaderRecord",
    "RecordStore",
    "SideAssignment",
    "StudyConfig",
    "assign_sides",
    "export_scores",
    "validate_record",
]
