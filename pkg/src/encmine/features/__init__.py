from .engine import (FeatureRecord, aggregate_stats, build_feature_record, packet_features,
                     ratio_features, session_features)
from .manifest import FeatureManifest, default_manifest, load_manifest

__all__ = [
    "FeatureRecord", "FeatureManifest", "aggregate_stats", "build_feature_record",
    "default_manifest", "load_manifest", "packet_features", "ratio_features", "session_features",
]
