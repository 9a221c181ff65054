from . import tensor as F
from .gradcheck import GradCheckReport, finite_difference_check, rel_error
from .optim import AdamW, clip_grad_norm
from .params import ParamStore, load_checkpoint, save_checkpoint
from .tensor import ShapeError, Tape, TapeError, Tensor, backward

__all__ = [
    "F",
    "AdamW",
    "GradCheckReport",
    "ParamStore",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "backward",
    "clip_grad_norm",
    "finite_difference_check",
    "load_checkpoint",
    "rel_error",
    "save_checkpoint",
]
