"""Core reader-study logic: blinded side assignment, scoring rules, storage.

Everything here is deliberately free of HTTP concerns so the rules can be
tested directly.  Scores are recorded against screen sides ("middle",
"right"); the mapping from sides back to method names exists only in the
deterministic assignment function and is applied no earlier than export.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

RULE_CAP = "unacceptable slice caps score at 2"
RULE_PREFERENCE_ONLY_WHEN_EQUAL = "preference only when scores equal"
RULE_PREFERENCE_REQUIRED_WHEN_EQUAL = "preference required when scores equal"
RULE_SCORE_RANGE = "score must be an integer between 1 and 5"
RULE_PREFERENCE_VALUE = "preference must be middle, right, or none"

_PREFERENCES = ("middle", "right", "none")


@dataclass(frozen=True)
class StudyConfig:
    """Static configuration of one blinded study."""

    data_dir: str
    method_a: str
    method_b: str
    seed: int
    token: str
    records_path: str

    def __post_init__(self) -> None:
        if self.method_a == self.method_b:
            raise ValueError("two distinct methods are required")
        if not self.token:
            raise ValueError("study token must be non-empty")


@dataclass(frozen=True)
class SideAssignment:
    """Which method is shown on which screen side for one case."""

    case_id: str
    middle: str
    right: str


@dataclass(frozen=True)
class ReaderRecord:
    case_id: str
    reader_id: str
    middle_score: int
    middle_flag: bool
    right_score: int
    right_flag: bool
    preference: str | None
    timestamp: str


def assign_sides(seed: int, case_id: str, method_a: str, method_b: str) -> SideAssignment:
    """Deterministic 50/50 side assignment from (seed, case_id).

    Uses the parity of the first digest byte of sha256("{seed}:{case_id}"),
    so the split is reproducible across processes and languages without
    sharing generator state.
    """
    if method_a == method_b:
        raise ValueError("two distinct methods are required")
    digest = hashlib.sha256(f"{seed}:{case_id}".encode()).digest()
    if digest[0] & 1:
        return SideAssignment(case_id, middle=method_a, right=method_b)
    return SideAssignment(case_id, middle=method_b, right=method_a)


def validate_record(record: ReaderRecord) -> None:
    """Enforce the scoring rules; raises ValueError naming the violated rule."""
    for score in (record.middle_score, record.right_score):
        if not isinstance(score, int) or isinstance(score, bool) or not 1 <= score <= 5:
            raise ValueError(RULE_SCORE_RANGE)
    if record.preference is not None and record.preference not in _PREFERENCES:
        raise ValueError(RULE_PREFERENCE_VALUE)
    if record.middle_flag and record.middle_score > 2:
        raise ValueError(RULE_CAP)
    if record.right_flag and record.right_score > 2:
        raise ValueError(RULE_CAP)
    if record.middle_score == record.right_score:
        if record.preference is None:
            raise ValueError(RULE_PREFERENCE_REQUIRED_WHEN_EQUAL)
    elif record.preference is not None:
        raise ValueError(RULE_PREFERENCE_ONLY_WHEN_EQUAL)


class RecordStore:
    """Append-only JSONL persistence with write-then-acknowledge ordering.

    Each accepted record is one JSON line, flushed and fsynced before the
    caller gets its id back, so a crash after acknowledgement cannot lose
    the record.  Resubmissions for the same (reader_id, case_id) append a
    new line; analysis reads the latest occurrence.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)

    def append(self, record: ReaderRecord) -> int:
        validate_record(record)
        line = json.dumps(asdict(record), sort_keys=True)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", newline="\n") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        return self._count_lines() - 1

    def _count_lines(self) -> int:
        with open(self.path, "rb") as fh:
            return sum(1 for _ in fh)

    def load(self) -> list[ReaderRecord]:
        if not self.path.exists():
            return []
        records = []
        with open(self.path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(ReaderRecord(**json.loads(line)))
        return records

    def latest(self) -> list[ReaderRecord]:
        """Latest record per (reader_id, case_id), in first-seen key order."""
        by_key: dict[tuple[str, str], ReaderRecord] = {}
        for record in self.load():
            by_key[(record.reader_id, record.case_id)] = record
        return list(by_key.values())


def export_scores(
    records: list[ReaderRecord],
    assignment_for,
    methods: tuple[str, str],
) -> str:
    """Unblind records into a CSV string keyed by method names.

    ``assignment_for`` maps a case_id to its SideAssignment.  Output rows
    are sorted by (case_id, reader_id) and columns follow the sorted
    method order, so exporting the same store twice is byte-identical.
    """
    method_lo, method_hi = sorted(methods)
    header = (
        "case_id",
        "reader_id",
        f"score__{method_lo}",
        f"flag__{method_lo}",
        f"score__{method_hi}",
        f"flag__{method_hi}",
        "preference",
        "timestamp",
    )
    lines = [",".join(header)]
    for record in sorted(records, key=lambda r: (r.case_id, r.reader_id)):
        assignment = assignment_for(record.case_id)
        by_method = {
            assignment.middle: (record.middle_score, record.middle_flag),
            assignment.right: (record.right_score, record.right_flag),
        }
        if record.preference == "middle":
            preference = assignment.middle
        elif record.preference == "right":
            preference = assignment.right
        elif record.preference == "none":
            preference = "none"
        else:
            preference = ""
        score_lo, flag_lo = by_method[method_lo]
        score_hi, flag_hi = by_method[method_hi]
        lines.append(
            ",".join(
                (
                    record.case_id,
                    record.reader_id,
                    str(score_lo),
                    "1" if flag_lo else "0",
                    str(score_hi),
                    "1" if flag_hi else "0",
                    preference,
                    record.timestamp,
                )
            )
        )
    return "\n".join(lines) + "\n"
