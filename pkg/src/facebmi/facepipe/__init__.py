from .detector import Detection, DlibFrontalDetector, FaceDetector, HogLinearDetector, load_detector, train_hog_detector
from .pipeline import (
    DEFAULT_MARGIN,
    IMAGENET_NORM,
    UNIT_NORM,
    EnrollmentResult,
    FaceCrop,
    NormSpec,
    crop_from_bbox,
    detect_face,
    enroll,
    expand_bbox,
    preprocess,
    read_image,
)

__all__ = [
    "DEFAULT_MARGIN",
    "Detection",
    "DlibFrontalDetector",
    "EnrollmentResult",
    "FaceCrop",
    "FaceDetector",
    "HogLinearDetector",
    "IMAGENET_NORM",
    "NormSpec",
    "UNIT_NORM",
    "crop_from_bbox",
    "detect_face",
    "enroll",
    "expand_bbox",
    "load_detector",
    "preprocess",
    "read_image",
    "train_hog_detector",
]
