"""Prompt-guided action disentanglement over spatio-temporal scene graphs."""
from .action_spec import ActionSpecPair, build_pairs
from .pipeline import ProDAModel, TrainConfig, VideoArrays, build_model, train_stage1, train_stage2
from .ssg import SceneGraphSequence, VideoAnnotation
from .synthgen import GenConfig, generate_dataset, generate_videos

__version__ = "0.1.0"
