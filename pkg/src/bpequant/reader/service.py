"""HTTP service for the blinded reader study.

Serves case lists, rendered slices (original plus two anonymized
segmentation overlays in randomized screen positions), accepts scored
records, and exports the unblinded CSV behind a study token.  The
method-to-side mapping lives only in server memory and the export; no
other response ever names a method.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException, Response
from pydantic import BaseModel, ConfigDict

from ..io import read_mask, read_volume
from ..volume import Mask3D, Volume3D
from .render import render_slice, volume_window
from .study import (
    ReaderRecord,
    RecordStore,
    StudyConfig,
    assign_sides,
    export_scores,
    validate_record,
)

logger = logging.getLogger(__name__)

_LAYERS = ("original", "middle", "right")


@dataclass
class _CaseData:
    volume: Volume3D
    window: tuple[float, float]
    masks: dict[str, Mask3D]


class SideScore(BaseModel):
    model_config = ConfigDict(extra="forbid")

    score: int
    unacceptable_slice_flag: bool = False


class ScoreSubmission(BaseModel):
    model_config = ConfigDict(extra="forbid")

    case_id: str
    reader_id: str
    middle: SideScore
    right: SideScore
    preference: str | None = None


def discover_cases(config: StudyConfig) -> list[str]:
    """Case ids under the data directory, each required to have both mask sets."""
    data = Path(config.data_dir)
    preproc = data / "preproc"
    if not preproc.is_dir():
        raise ValueError(f"no preproc directory under {config.data_dir}")
    case_ids = sorted(
        p.name for p in preproc.iterdir() if (p / "s0.nii").exists()
    )
    if not case_ids:
        raise ValueError(f"no preprocessed cases under {config.data_dir}")
    for case_id in case_ids:
        for method in (config.method_a, config.method_b):
            if not (data / "masks" / method / case_id / "fgt.nii").exists():
                raise ValueError(f"case '{case_id}' has fewer than two mask sets")
    return case_ids


def create_app(config: StudyConfig) -> FastAPI:
    case_ids = discover_cases(config)
    assignments = {
        case_id: assign_sides(config.seed, case_id, config.method_a, config.method_b)
        for case_id in case_ids
    }
    store = RecordStore(config.records_path)
    cache: dict[str, _CaseData] = {}
    cache_lock = threading.Lock()
    write_lock = threading.Lock()

    data = Path(config.data_dir)

    def case_data(case_id: str) -> _CaseData:
        with cache_lock:
            if case_id not in cache:
                volume = read_volume(data / "preproc" / case_id / "s0.nii")
                masks = {
                    method: read_mask(data / "masks" / method / case_id / "fgt.nii")
                    for method in (config.method_a, config.method_b)
                }
                cache[case_id] = _CaseData(volume, volume_window(volume), masks)
            return cache[case_id]

    app = FastAPI(title="Blinded segmentation reader study")

    @app.get("/api/cases")
    def list_cases() -> dict:
        return {
            "cases": [
                {"case_id": case_id, "slices": case_data(case_id).volume.dims[2]}
                for case_id in case_ids
            ]
        }

    @app.get("/api/case/{case_id}/slice/{z}")
    def get_slice(case_id: str, z: int, layer: str = "original") -> Response:
        if layer not in _LAYERS:
            raise HTTPException(status_code=400, detail="unknown layer")
        if case_id not in assignments:
            raise HTTPException(status_code=404, detail="unknown case")
        entry = case_data(case_id)
        if not 0 <= z < entry.volume.dims[2]:
            raise HTTPException(status_code=404, detail="slice out of range")
        mask = None
        if layer != "original":
            assignment = assignments[case_id]
            method = assignment.middle if layer == "middle" else assignment.right
            mask = entry.masks[method]
        png = render_slice(entry.volume, z, entry.window, mask)
        return Response(content=png, media_type="image/png")

    @app.post("/api/score")
    def submit_score(submission: ScoreSubmission) -> dict:
        if submission.case_id not in assignments:
            raise HTTPException(status_code=404, detail="unknown case")
        record = ReaderRecord(
            case_id=submission.case_id,
            reader_id=submission.reader_id,
            middle_score=submission.middle.score,
            middle_flag=submission.middle.unacceptable_slice_flag,
            right_score=submission.right.score,
            right_flag=submission.right.unacceptable_slice_flag,
            preference=submission.preference,
            timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
        try:
            validate_record(record)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        with write_lock:
            record_id = store.append(record)
        logger.info(
            "stored record %d for case %s reader %s",
            record_id,
            record.case_id,
            record.reader_id,
        )
        return {"record_id": record_id}

    @app.get("/api/export")
    def export(x_study_token: str | None = Header(default=None)) -> Response:
        if x_study_token != config.token:
            raise HTTPException(status_code=401, detail="missing or wrong study token")
        csv_text = export_scores(
            store.latest(),
            assignments.__getitem__,
            (config.method_a, config.method_b),
        )
        return Response(content=csv_text, media_type="text/csv")

    return app
