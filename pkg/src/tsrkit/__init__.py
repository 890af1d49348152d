"""Traffic sign extraction and in-context MLLM recognition pipeline."""

from .contours import (
    BoundingBox,
    Contour,
    Detection,
    DetectionSet,
    filter_detections,
    trace_borders,
    trace_contours,
)
from .dataset import (
    CatalogEntry,
    ClassCatalog,
    Sample,
    SampleManifest,
    load_catalog,
    load_manifest,
    sample_subset,
    save_manifest,
)
from .descriptions import (
    ClassDescription,
    DescriptionPrompt,
    DescriptionSet,
    apply_correction,
    build_description_set,
    generate_description,
    load_description_set,
    save_description_set,
)
from .evaluator import (
    EvalRecord,
    EvalReport,
    build_report,
    render_table,
    top_k_accuracy,
)
from .gateway import (
    LiveBackend,
    MllmGateway,
    MllmRequest,
    MllmResponse,
    MockBackend,
    RateLimiter,
    ResponseCache,
    request_digest,
)
from .images import RgbImage, encode_png, load_image, save_png
from .mask import BinaryMask, SegmentationMap, load_legend, to_binary_mask
from .recognizer import (
    RecognitionResult,
    RecognitionStrategy,
    build_baseline_prompt,
    build_recognition_prompt,
    parse_ranked_response,
    recognize,
)
from .regions import MaskedImage, SignCrop, apply_mask, crop, extract_all

__version__ = "0.1.0"
