"""Model-agnostic perturbation attribution for image classifiers.

Pipeline: segment an image, sample which segments to perturb, blend the
perturbed segments toward a replacement color, collect model outputs, and
attribute the prediction to segments (CIU, PDA, LIME, SHAP, or RISE).
Faithfulness of the resulting maps is scored by occlusion curves (LIF, MIF,
and their gap SRG).
"""

__version__ = "0.1.0"

from .attribution import (
    SurrogateFit,
    attribute,
    attribute_ciu,
    attribute_pda,
    attribute_rise,
    fit_kernel_shap,
    fit_lime,
    project_per_pixel,
    shap_kernel_weight,
)
from .core import (
    AttributionMethod,
    AttributionResult,
    ColorSpace,
    Image,
    PredictionRecord,
    SampleOrigin,
    SampleSet,
    SegmentMap,
    SegmentMaskStack,
    SmoothingConfig,
    SmoothingMethod,
    decode_tensor,
    encode_tensor,
    from_dict,
    to_dict,
    validate,
)
from .evaluation import FaithfulnessScore, occlusion_curve, rank_pixels, srg
from .harness import (
    ColorPolicy,
    ConfigError,
    PipelineConfig,
    RunRecord,
    SamplerSpec,
    SegmenterSpec,
    aggregate_records,
    config_hash,
    config_to_dict,
    expand_config_document,
    load_configs,
    parse_config,
    run_matrix,
    run_pipeline,
    write_aggregates_csv,
    write_records_csv,
    write_sidecar,
)
from .masking import combine, indicator_masks, smooth_bilinear, smooth_gaussian
from .models import (
    AdditiveModel,
    ExternalPredictor,
    HandshakeError,
    MalformedResponse,
    ModelConnectionError,
    OutputSemantics,
    PredictorSpec,
    ResponseTimeout,
    ServerError,
    TransportError,
    connect_external,
    make_additive_model,
)
from .perturbation import apply_perturbation, perturb_batch
from .report import render_heatmap
from .sampling import (
    derive_seed,
    sample_all_but_one,
    sample_entropic,
    sample_only_one,
    sample_random,
)
from .segmentation import grid_segment, slic_segment
