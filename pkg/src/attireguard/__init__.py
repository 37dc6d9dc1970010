"""Detection of unauthorized attire in surveillance zones.

Grid-detector decoding and NMS, a person -> attire cascade, fuzzy
confidence adjustment with adaptive thresholds and temporal persistence,
plus the training, augmentation and evaluation tooling around it.
"""

from .core import (
    ATTIRE_VOCAB,
    PERSON_VOCAB,
    BoundingBox,
    ClassLabel,
    Detection,
    FrameRef,
    Vocabulary,
    ZonePolicy,
    bbox_area,
    clip_to_frame,
    iou,
)
from .decode import Anchor, GridSpec, RawCellPrediction, RawGridTensor, decode_cell, decode_grid, encode_cell, nms, read_tensor, write_tensor
from .engine import AlertRecord, AnomalyEngine, FrameContext, TemporalParams, ThresholdParams
from .errors import AttireGuardError
from .fuzzy import FuzzyRuleBase, adjust_confidence
from .kernels import BACKEND
from .pipeline import DecodeParams, FrameResult, ScriptedBackend, TensorFileBackend, run_frame

__version__ = "0.1.0"
