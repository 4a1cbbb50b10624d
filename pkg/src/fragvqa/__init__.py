"""No-reference video quality assessment from spatio-temporal fragments.

Pipeline: sample frame pairs, locate the most active patches in frame
differences and optical flow, assemble fragment mosaics, pool deep features
over them, and regress a quality score with a small MLP trained on a hybrid
absolute-error plus ranking loss.
"""

from .config import PipelineConfig, config_hash, load_pipeline_config, save_pipeline_config
from .errors import FragVqaError
from .features import FeaturePlan, FeatureVector, frame_pair_feature, video_feature
from .fragments import FragmentBundle, build_fragment_bundle
from .head import MlpModel, TrainConfig, TrainedHead, train
from .media import Frame, FramePair, FrameSequence, load_frame_sequence, sample_frame_pairs
from .metrics import MetricsReport, compute_metrics, krcc, logistic_fit, plcc, rmse, srcc
from .protocol import ProtocolConfig, ProtocolReport, run_protocol

__version__ = "0.1.0"

__all__ = [
    "Frame",
    "FramePair",
    "FrameSequence",
    "FragmentBundle",
    "FeaturePlan",
    "FeatureVector",
    "FragVqaError",
    "MetricsReport",
    "MlpModel",
    "PipelineConfig",
    "ProtocolConfig",
    "ProtocolReport",
    "TrainConfig",
    "TrainedHead",
    "build_fragment_bundle",
    "compute_metrics",
    "config_hash",
    "frame_pair_feature",
    "krcc",
    "load_frame_sequence",
    "load_pipeline_config",
    "logistic_fit",
    "plcc",
    "rmse",
    "run_protocol",
    "sample_frame_pairs",
    "save_pipeline_config",
    "srcc",
    "train",
    "video_feature",
    "__version__",
]
