"""Batch processing of DCE-MRI exams driven by JSON manifests.

A manifest lists cases (pre- and post-contrast volume paths plus optional
per-case segmentation overrides); a config file holds every tunable
parameter and the single seed all randomness flows from.  The stages write
a fixed tree under the output directory:

    preproc/<case_id>/s0.nii            resampled pre-contrast volume
    preproc/<case_id>/s1.nii            registered + resampled post-contrast
    preproc/<case_id>/provenance.json   input hashes, parameters, transform
    preproc/<case_id>/status.json
    masks/<namespace>/<case_id>/        breast.nii, fgt.nii [, vessel.nii]
                                        plus info.json and status.json
    metrics.csv
    metrics_status.json

where <namespace> is "<method>__<operator>", or the bare method name when
no operator label was given.  Stages only ever write per-case files, so
cases can run in parallel and deleting the output directory and rerunning
reproduces every byte.

A failing case never aborts the batch: it is logged, recorded in its
status.json, and skipped; callers inspect the returned statuses (the CLI
maps any failure to a nonzero exit).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

from .bpe import BpeParams, compute_bpe_mask, compute_metrics, compute_pe_map
from .fcm import (
    EllipseExclusion,
    FcmParams,
    apply_probability_threshold,
    fcm_cluster,
    threshold_breast_mask,
)
from .io import read_mask, read_volume, write_mask, write_volume
from .patches import (
    ConstantBackend,
    DlParams,
    ExternalProcessBackend,
    IdentityBackend,
    ThresholdBackend,
    segment_dl,
)
from .preprocess import PreprocParams, register_inplane, resample_isotropic

logger = logging.getLogger(__name__)

DENSITY_CATEGORIES = (
    "fatty",
    "scattered",
    "heterogeneously dense",
    "extremely dense",
)

METRICS_CSV_HEADER = (
    "case_id",
    "method",
    "breast_volume_mm3",
    "fgt_volume_mm3",
    "bpe_volume_mm3",
    "bpe_fgt_ratio_pct",
    "bpe_breast_ratio_pct",
    "bpe_integrated_intensity",
)

_CASE_ID_OK = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-"
)


@dataclass(frozen=True)
class FcmOverrides:
    """Per-case deviations from the configured FCM defaults.

    ``ellipse_given`` distinguishes "the manifest said nothing" (fall back
    to the config) from "the manifest explicitly set the exclusion", where
    an explicit null means no exclusion at all.
    """

    threshold: float | str | None = None
    prob_threshold: float | None = None
    ellipse: EllipseExclusion | None = None
    ellipse_given: bool = False


@dataclass(frozen=True)
class ManifestCase:
    case_id: str
    s0_path: str
    s1_path: str
    qualitative_bpe: int | None = None
    density_category: str | None = None
    fcm: FcmOverrides = field(default_factory=FcmOverrides)


@dataclass(frozen=True)
class Manifest:
    cases: tuple[ManifestCase, ...]

    def __post_init__(self) -> None:
        if not self.cases:
            raise ValueError("manifest contains no cases")
        seen: set[str] = set()
        for case in self.cases:
            if case.case_id in seen:
                raise ValueError(f"duplicate case_id '{case.case_id}' in manifest")
            seen.add(case.case_id)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    preproc: PreprocParams = field(default_factory=PreprocParams)
    fcm_params: FcmParams = field(default_factory=FcmParams)
    fcm_threshold: float | str = "otsu"
    fcm_chest_exclusion: bool = True
    bpe: BpeParams = field(default_factory=BpeParams)
    dl: DlParams = field(default_factory=DlParams)
    dl_breast_backend: dict | None = None
    dl_fgt_vessel_backend: dict | None = None


@dataclass(frozen=True)
class CaseStatus:
    """Outcome of one case in one stage; ``namespace`` is empty outside segment/metrics."""

    stage: str
    namespace: str
    case_id: str
    ok: bool
    error: str | None = None


def _check_keys(mapping, allowed, where: str) -> None:
    if not isinstance(mapping, dict):
        raise ValueError(f"{where} must be a JSON object")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ValueError(f"unknown key '{unknown[0]}' in {where}")


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{where} must be a number, got {value!r}")
    return float(value)


def _parse_ellipse(raw, where: str) -> EllipseExclusion | None:
    if raw is None:
        return None
    _check_keys(raw, {"center_x", "center_y", "semi_x", "semi_y"}, where)
    for key in ("center_x", "center_y", "semi_x", "semi_y"):
        if key not in raw:
            raise ValueError(f"{where} missing key '{key}'")
    return EllipseExclusion(
        center_x=_number(raw["center_x"], f"{where}.center_x"),
        center_y=_number(raw["center_y"], f"{where}.center_y"),
        semi_x=_number(raw["semi_x"], f"{where}.semi_x"),
        semi_y=_number(raw["semi_y"], f"{where}.semi_y"),
    )


def _parse_threshold(raw, where: str) -> float | str:
    if raw == "otsu":
        return "otsu"
    return _number(raw, where)


def load_manifest(path: str | Path) -> Manifest:
    """Parse and validate a JSON case manifest.

    Volume paths are resolved relative to the manifest's own directory.
    Referenced files are deliberately not required to exist yet; a missing
    file surfaces as a per-case failure at run time, not a parse error.
    """
    path = Path(path)
    data = json.loads(path.read_text())
    _check_keys(data, {"cases"}, "manifest")
    if "cases" not in data or not isinstance(data["cases"], list):
        raise ValueError("manifest must contain a 'cases' list")
    base = path.resolve().parent

    cases = []
    for i, raw in enumerate(data["cases"]):
        where = f"cases[{i}]"
        _check_keys(
            raw,
            {"case_id", "s0", "s1", "qualitative_bpe", "density_category", "fcm"},
            where,
        )
        for key in ("case_id", "s0", "s1"):
            if key not in raw or not isinstance(raw[key], str) or not raw[key]:
                raise ValueError(f"{where} needs a non-empty string '{key}'")
        case_id = raw["case_id"]
        if not set(case_id) <= _CASE_ID_OK:
            raise ValueError(
                f"case_id '{case_id}' contains characters unsafe for directory names"
            )

        qual = raw.get("qualitative_bpe")
        if qual is not None:
            if not isinstance(qual, int) or isinstance(qual, bool) or not 1 <= qual <= 4:
                raise ValueError(f"{where}.qualitative_bpe must be an integer 1..4")
        density = raw.get("density_category")
        if density is not None and density not in DENSITY_CATEGORIES:
            raise ValueError(
                f"{where}.density_category must be one of {DENSITY_CATEGORIES}"
            )

        overrides = FcmOverrides()
        if "fcm" in raw:
            fcm_raw = raw["fcm"]
            fwhere = f"{where}.fcm"
            _check_keys(fcm_raw, {"threshold", "prob_threshold", "ellipse"}, fwhere)
            prob = fcm_raw.get("prob_threshold")
            if prob is not None:
                prob = _number(prob, f"{fwhere}.prob_threshold")
                if not 0.0 <= prob < 1.0:
                    raise ValueError(f"{fwhere}.prob_threshold must be in [0, 1)")
            overrides = FcmOverrides(
                threshold=(
                    _parse_threshold(fcm_raw["threshold"], f"{fwhere}.threshold")
                    if "threshold" in fcm_raw
                    else None
                ),
                prob_threshold=prob,
                ellipse=(
                    _parse_ellipse(fcm_raw["ellipse"], f"{fwhere}.ellipse")
                    if "ellipse" in fcm_raw
                    else None
                ),
                ellipse_given="ellipse" in fcm_raw,
            )

        cases.append(
            ManifestCase(
                case_id=case_id,
                s0_path=str((base / raw["s0"]).resolve()),
                s1_path=str((base / raw["s1"]).resolve()),
                qualitative_bpe=qual,
                density_category=density,
                fcm=overrides,
            )
        )
    return Manifest(cases=tuple(cases))


_BACKEND_KINDS = ("constant", "identity", "threshold", "external")


def _check_backend_spec(raw, where: str) -> dict:
    _check_keys(raw, {"kind", "values", "outputs", "thresholds", "command"}, where)
    kind = raw.get("kind")
    if kind not in _BACKEND_KINDS:
        raise ValueError(f"{where}.kind must be one of {_BACKEND_KINDS}")
    needs = {
        "constant": "values",
        "identity": "outputs",
        "threshold": "thresholds",
        "external": "command",
    }[kind]
    if needs not in raw:
        raise ValueError(f"{where} with kind '{kind}' needs '{needs}'")
    return dict(raw)


def build_backend(spec: dict):
    """Instantiate a segmentation backend from its config description."""
    kind = spec["kind"]
    if kind == "constant":
        return ConstantBackend(tuple(float(v) for v in spec["values"]))
    if kind == "identity":
        return IdentityBackend(int(spec["outputs"]))
    if kind == "threshold":
        return ThresholdBackend(tuple(float(v) for v in spec["thresholds"]))
    if kind == "external":
        return ExternalProcessBackend(tuple(str(a) for a in spec["command"]))
    raise ValueError(f"unknown backend kind '{kind}'")


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate the JSON pipeline configuration."""
    data = json.loads(Path(path).read_text())
    _check_keys(data, {"seed", "preproc", "fcm", "bpe", "dl"}, "config")

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ValueError("config.seed must be a non-negative integer")

    preproc_raw = data.get("preproc", {})
    _check_keys(
        preproc_raw,
        {
            "target_spacing",
            "cap_low_pct",
            "cap_high_pct",
            "reg_levels",
            "reg_max_iters_per_level",
            "reg_convergence_tol",
        },
        "config.preproc",
    )
    preproc = PreprocParams(**preproc_raw)

    fcm_raw = data.get("fcm", {})
    _check_keys(
        fcm_raw,
        {
            "threshold",
            "chest_exclusion",
            "fuzziness",
            "max_iters",
            "tol",
            "prob_threshold",
        },
        "config.fcm",
    )
    fcm_threshold = _parse_threshold(fcm_raw.get("threshold", "otsu"), "config.fcm.threshold")
    chest = fcm_raw.get("chest_exclusion", True)
    if not isinstance(chest, bool):
        raise ValueError("config.fcm.chest_exclusion must be true or false")
    fcm_params = FcmParams(
        **{
            k: fcm_raw[k]
            for k in ("fuzziness", "max_iters", "tol", "prob_threshold")
            if k in fcm_raw
        }
    )

    bpe_raw = data.get("bpe", {})
    _check_keys(bpe_raw, {"pe_threshold_pct", "s0_floor"}, "config.bpe")
    bpe = BpeParams(**bpe_raw)

    dl_raw = data.get("dl", {})
    _check_keys(
        dl_raw,
        {"patch_size", "cap_low_pct", "cap_high_pct", "breast_backend", "fgt_vessel_backend"},
        "config.dl",
    )
    dl = DlParams(
        **{
            k: dl_raw[k]
            for k in ("patch_size", "cap_low_pct", "cap_high_pct")
            if k in dl_raw
        }
    )
    breast_spec = None
    if "breast_backend" in dl_raw:
        breast_spec = _check_backend_spec(dl_raw["breast_backend"], "config.dl.breast_backend")
    fgt_spec = None
    if "fgt_vessel_backend" in dl_raw:
        fgt_spec = _check_backend_spec(
            dl_raw["fgt_vessel_backend"], "config.dl.fgt_vessel_backend"
        )

    return PipelineConfig(
        seed=seed,
        preproc=preproc,
        fcm_params=fcm_params,
        fcm_threshold=fcm_threshold,
        fcm_chest_exclusion=chest,
        bpe=bpe,
        dl=dl,
        dl_breast_backend=breast_spec,
        dl_fgt_vessel_backend=fgt_spec,
    )


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_status(case_dir: Path, status: CaseStatus) -> None:
    _write_json(
        case_dir / "status.json",
        {
            "stage": status.stage,
            "namespace": status.namespace,
            "case_id": status.case_id,
            "status": "ok" if status.ok else "failed",
            "error": status.error,
        },
    )


def _preprocess_case(case: ManifestCase, config: PipelineConfig, out_dir: str) -> CaseStatus:
    case_dir = Path(out_dir) / "preproc" / case.case_id
    case_dir.mkdir(parents=True, exist_ok=True)
    try:
        s0 = read_volume(case.s0_path)
        s1 = read_volume(case.s1_path)
        reg = register_inplane(s1, s0, config.preproc)
        s0_iso = resample_isotropic(s0, config.preproc.target_spacing)
        s1_iso = resample_isotropic(reg.resampled, config.preproc.target_spacing)
        write_volume(s0_iso, case_dir / "s0.nii")
        write_volume(s1_iso, case_dir / "s1.nii")
        t = reg.transform
        _write_json(
            case_dir / "provenance.json",
            {
                "case_id": case.case_id,
                "inputs": {
                    "s0": {"path": case.s0_path, "sha256": _sha256(case.s0_path)},
                    "s1": {"path": case.s1_path, "sha256": _sha256(case.s1_path)},
                },
                "parameters": asdict(config.preproc),
                "registration": {
                    "transform": {
                        "a11": t.a11,
                        "a12": t.a12,
                        "a21": t.a21,
                        "a22": t.a22,
                        "tx": t.tx,
                        "ty": t.ty,
                    },
                    "fell_back_to_identity": reg.fell_back_to_identity,
                    "objective_identity": reg.objective_identity,
                    "objective_final": reg.objective_final,
                },
            },
        )
        status = CaseStatus("preprocess", "", case.case_id, True)
    except Exception as exc:
        logger.error("preprocess failed for case %s: %s", case.case_id, exc)
        status = CaseStatus("preprocess", "", case.case_id, False, str(exc))
    _write_status(case_dir, status)
    return status


def _resolve_ellipse(
    case: ManifestCase, config: PipelineConfig, dims: tuple[int, int, int]
) -> EllipseExclusion | None:
    if case.fcm.ellipse_given:
        return case.fcm.ellipse
    if config.fcm_chest_exclusion:
        return EllipseExclusion.chest_default(dims)
    return None


def _segment_case(
    case: ManifestCase,
    config: PipelineConfig,
    out_dir: str,
    method: str,
    namespace: str,
) -> CaseStatus:
    out = Path(out_dir)
    case_dir = out / "masks" / namespace / case.case_id
    case_dir.mkdir(parents=True, exist_ok=True)
    try:
        pre_path = out / "preproc" / case.case_id / "s0.nii"
        if not pre_path.exists():
            raise FileNotFoundError(
                f"no preprocessed volume at {pre_path}; run preprocess first"
            )
        s0 = read_volume(pre_path)

        if method == "fcm":
            threshold = case.fcm.threshold if case.fcm.threshold is not None else config.fcm_threshold
            prob = (
                case.fcm.prob_threshold
                if case.fcm.prob_threshold is not None
                else config.fcm_params.prob_threshold
            )
            ellipse = _resolve_ellipse(case, config, s0.dims)
            breast = threshold_breast_mask(s0, threshold=threshold, ellipse=ellipse)
            result = fcm_cluster(s0, breast, config.fcm_params)
            fgt = apply_probability_threshold(result, prob)
            write_mask(breast, case_dir / "breast.nii")
            write_mask(fgt, case_dir / "fgt.nii")
            info = {
                "method": "fcm",
                "threshold": threshold,
                "prob_threshold": prob,
                "ellipse": None
                if ellipse is None
                else {
                    "center_x": ellipse.center_x,
                    "center_y": ellipse.center_y,
                    "semi_x": ellipse.semi_x,
                    "semi_y": ellipse.semi_y,
                },
                "centroids": list(result.centroids),
                "iterations": result.iterations,
                "converged": result.converged,
                "objective": result.objective,
            }
        else:
            if config.dl_breast_backend is None or config.dl_fgt_vessel_backend is None:
                raise ValueError(
                    "config.dl must define breast_backend and fgt_vessel_backend for the dl method"
                )
            seg = segment_dl(
                s0,
                build_backend(config.dl_breast_backend),
                build_backend(config.dl_fgt_vessel_backend),
                config.dl,
            )
            write_mask(seg.breast_mask, case_dir / "breast.nii")
            write_mask(seg.fgt_mask, case_dir / "fgt.nii")
            write_mask(seg.vessel_mask, case_dir / "vessel.nii")
            info = {
                "method": "dl",
                "patch_size": config.dl.patch_size,
                "breast_backend": config.dl_breast_backend["kind"],
                "fgt_vessel_backend": config.dl_fgt_vessel_backend["kind"],
            }
        _write_json(case_dir / "info.json", info)
        status = CaseStatus("segment", namespace, case.case_id, True)
    except Exception as exc:
        logger.error(
            "segment (%s) failed for case %s: %s", namespace, case.case_id, exc
        )
        status = CaseStatus("segment", namespace, case.case_id, False, str(exc))
    _write_status(case_dir, status)
    return status


def _map_cases(fn, cases, jobs: int):
    if jobs <= 1:
        return [fn(case) for case in cases]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cases))


def run_preprocess(
    manifest: Manifest, config: PipelineConfig, out_dir: str | Path, jobs: int = 1
) -> list[CaseStatus]:
    """Register S1 onto S0 and resample both for every case."""
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    fn = partial(_preprocess_case, config=config, out_dir=str(out_dir))
    statuses = _map_cases(fn, manifest.cases, jobs)
    failed = [s for s in statuses if not s.ok]
    logger.info(
        "preprocess: %d ok, %d failed", len(statuses) - len(failed), len(failed)
    )
    return statuses


def run_segment(
    manifest: Manifest,
    config: PipelineConfig,
    out_dir: str | Path,
    method: str,
    operator: str = "",
    jobs: int = 1,
) -> list[CaseStatus]:
    """Segment every case with one method, namespaced by the operator label.

    Distinct operator labels write to distinct namespaces, so several
    operators' mask sets coexist under the same output directory.
    """
    if method not in ("fcm", "dl"):
        raise ValueError(f"method must be 'fcm' or 'dl', got '{method}'")
    namespace = f"{method}__{operator}" if operator else method
    fn = partial(
        _segment_case,
        config=config,
        out_dir=str(out_dir),
        method=method,
        namespace=namespace,
    )
    statuses = _map_cases(fn, manifest.cases, jobs)
    failed = [s for s in statuses if not s.ok]
    logger.info(
        "segment %s: %d ok, %d failed", namespace, len(statuses) - len(failed), len(failed)
    )
    return statuses


def _format_metric(value: float | None) -> str:
    return "NA" if value is None else repr(float(value))


def run_metrics(
    manifest: Manifest,
    config: PipelineConfig,
    out_dir: str | Path,
    namespaces: list[str] | None = None,
) -> list[CaseStatus]:
    """Compute enhancement metrics for every (case, mask namespace) pair.

    Writes ``metrics.csv`` with one row per pair, cases in manifest order
    and namespaces sorted, so reruns from identical inputs are
    byte-identical.
    """
    out = Path(out_dir)
    masks_root = out / "masks"
    if namespaces is None:
        if not masks_root.is_dir():
            raise FileNotFoundError(f"no masks directory under {out}; run segment first")
        namespaces = sorted(p.name for p in masks_root.iterdir() if p.is_dir())
    if not namespaces:
        raise ValueError("no mask namespaces to compute metrics for")

    rows: list[tuple[str, ...]] = []
    statuses: list[CaseStatus] = []
    for case in manifest.cases:
        pre_dir = out / "preproc" / case.case_id
        try:
            s0 = read_volume(pre_dir / "s0.nii")
            s1 = read_volume(pre_dir / "s1.nii")
            pe = compute_pe_map(s0, s1, config.bpe)
        except Exception as exc:
            logger.error("metrics failed reading case %s: %s", case.case_id, exc)
            for namespace in namespaces:
                statuses.append(
                    CaseStatus("metrics", namespace, case.case_id, False, str(exc))
                )
            continue
        for namespace in namespaces:
            mask_dir = masks_root / namespace / case.case_id
            try:
                breast = read_mask(mask_dir / "breast.nii")
                fgt = read_mask(mask_dir / "fgt.nii")
                bpe_mask = compute_bpe_mask(pe, fgt, config.bpe)
                metrics = compute_metrics(pe, fgt, breast, bpe_mask)
            except Exception as exc:
                logger.error(
                    "metrics (%s) failed for case %s: %s", namespace, case.case_id, exc
                )
                statuses.append(
                    CaseStatus("metrics", namespace, case.case_id, False, str(exc))
                )
                continue
            rows.append(
                (
                    case.case_id,
                    namespace,
                    _format_metric(metrics.breast_volume_mm3),
                    _format_metric(metrics.fgt_volume_mm3),
                    _format_metric(metrics.bpe_volume_mm3),
                    _format_metric(metrics.bpe_fgt_ratio_pct),
                    _format_metric(metrics.bpe_breast_ratio_pct),
                    _format_metric(metrics.bpe_integrated_intensity),
                )
            )
            statuses.append(CaseStatus("metrics", namespace, case.case_id, True))

    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_CSV_HEADER)
        writer.writerows(rows)
    _write_json(
        out / "metrics_status.json",
        {
            "rows": len(rows),
            "failures": [
                {"case_id": s.case_id, "namespace": s.namespace, "error": s.error}
                for s in statuses
                if not s.ok
            ],
        },
    )
    failed = [s for s in statuses if not s.ok]
    logger.info("metrics: %d rows, %d failures", len(rows), len(failed))
    return statuses


def collect_failures(out_dir: str | Path) -> list[dict]:
    """Gather every failed per-case status recorded under an output tree."""
    out = Path(out_dir)
    failures = []
    for status_path in sorted(out.glob("preproc/*/status.json")) + sorted(
        out.glob("masks/*/*/status.json")
    ):
        record = json.loads(status_path.read_text())
        if record.get("status") == "failed":
            failures.append(
                {
                    "stage": record["stage"],
                    "namespace": record.get("namespace", ""),
                    "case_id": record["case_id"],
                    "error": record.get("error"),
                }
            )
    metrics_status = out / "metrics_status.json"
    if metrics_status.exists():
        record = json.loads(metrics_status.read_text())
        for item in record.get("failures", []):
            failures.append(
                {
                    "stage": "metrics",
                    "namespace": item["namespace"],
                    "case_id": item["case_id"],
                    "error": item.get("error"),
                }
            )
    failures.sort(key=lambda f: (f["stage"], f["namespace"], f["case_id"]))
    return failures
