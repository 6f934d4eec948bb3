"""Quantification of background parenchymal enhancement from breast DCE-MRI."""

from .bpe import BpeMetrics, BpeParams, PeMap, compute_bpe_mask, compute_metrics, compute_pe_map
from .fcm import (
    EllipseExclusion,
    FcmParams,
    FcmResult,
    apply_probability_threshold,
    fcm_cluster,
    threshold_breast_mask,
)
from .io import read_mask, read_volume, write_mask, write_volume
from .patches import (
    ConstantBackend,
    DlParams,
    DlSegmentation,
    ExternalProcessBackend,
    IdentityBackend,
    ModelBackend,
    ThresholdBackend,
    TilingPlan,
    plan_tiling,
    segment_dl,
    stitch,
)
from .preprocess import (
    Affine2D,
    PreprocParams,
    RegistrationResult,
    cap_intensities,
    percentile_nearest_rank,
    register_inplane,
    resample_isotropic,
    zscore_normalize,
)
from .pipeline import (
    CaseStatus,
    Manifest,
    ManifestCase,
    PipelineConfig,
    collect_failures,
    load_config,
    load_manifest,
    run_metrics,
    run_preprocess,
    run_segment,
)
from .report import build_report, render_report_text, write_report
from .stats import (
    RNG_ALGORITHM,
    AgreementReport,
    PairedSample,
    QualitativeBpe,
    bootstrap_compare_spearman,
    ccc,
    ccc_ci,
    dice,
    spearman,
    wilcoxon_signed_rank,
)
from .volume import DceSeries, Mask3D, Volume3D, volume_of_mask

__version__ = "0.1.0"

__all__ = [
    "Affine2D",
    "AgreementReport",
    "BpeMetrics",
    "BpeParams",
    "CaseStatus",
    "ConstantBackend",
    "DceSeries",
    "DlParams",
    "DlSegmentation",
    "EllipseExclusion",
    "ExternalProcessBackend",
    "FcmParams",
    "FcmResult",
    "IdentityBackend",
    "Manifest",
    "ManifestCase",
    "Mask3D",
    "ModelBackend",
    "PairedSample",
    "PeMap",
    "PipelineConfig",
    "PreprocParams",
    "QualitativeBpe",
    "RNG_ALGORITHM",
    "RegistrationResult",
    "ThresholdBackend",
    "TilingPlan",
    "Volume3D",
    "apply_probability_threshold",
    "bootstrap_compare_spearman",
    "build_report",
    "cap_intensities",
    "ccc",
    "ccc_ci",
    "collect_failures",
    "compute_bpe_mask",
    "compute_metrics",
    "compute_pe_map",
    "dice",
    "fcm_cluster",
    "load_config",
    "load_manifest",
    "percentile_nearest_rank",
    "plan_tiling",
    "read_mask",
    "read_volume",
    "register_inplane",
    "render_report_text",
    "resample_isotropic",
    "run_metrics",
    "run_preprocess",
    "run_segment",
    "segment_dl",
    "spearman",
    "stitch",
    "threshold_breast_mask",
    "volume_of_mask",
    "wilcoxon_signed_rank",
    "write_mask",
    "write_report",
    "write_volume",
    "zscore_normalize",
]
