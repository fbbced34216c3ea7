"""
model - four residual encoders, max fusion, projection heads and a shared decoder

Main Components:
- params: ModelParams and build_model (He initialization, one stream per encoder)
- network: encode_modality, fuse_levels, project_contrastive, decode, forward
- checkpoint: the RFSG binary checkpoint format
"""

from config import ModelConfig
from .params import ModelParams, build_model
from .network import (
    ForwardOutput,
    check_extent,
    decode,
    encode_modality,
    forward,
    fuse_levels,
    predict_labels,
    project_contrastive,
)
from .checkpoint import (
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "1.0.0"
__all__ = [
    "ModelConfig", "ModelParams", "build_model",
    "ForwardOutput", "check_extent", "decode", "encode_modality", "forward", "fuse_levels",
    "predict_labels", "project_contrastive",
    "Checkpoint", "decode_checkpoint", "encode_checkpoint", "load_checkpoint", "save_checkpoint",
]
