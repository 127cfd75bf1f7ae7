from .backbones import build_network, export_torchvision_weights, load_network, save_network_weights
from .cache import CacheError, FeatureCache, cache_get, cache_put
from .extractor import FeatureExtractor, FeatureVector, extract_batch, extract_features
from .mfm import MaxFeatureMap, mfm
from .registry import REFERENCE_FEATURE_DIMS, BackboneSpec, get_backbone, registry, stub_spec

__all__ = [
    "BackboneSpec",
    "CacheError",
    "FeatureCache",
    "FeatureExtractor",
    "FeatureVector",
    "MaxFeatureMap",
    "REFERENCE_FEATURE_DIMS",
    "build_network",
    "cache_get",
    "cache_put",
    "export_torchvision_weights",
    "extract_batch",
    "extract_features",
    "get_backbone",
    "load_network",
    "mfm",
    "registry",
    "save_network_weights",
    "stub_spec",
]
