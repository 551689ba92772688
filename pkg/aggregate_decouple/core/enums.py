"""
Enumeration classes for the segmentation framework.
"""

from enum import Enum


class TaskKind(str, Enum):
    """Semi-supervised sampling scenario"""
    SSL = "SSL"          # one domain, few labels
    IBSSL = "IBSSL"      # class-imbalanced SSL
    UDA = "UDA"          # labeled source, unlabeled target
    SEMIDG = "SemiDG"    # several training domains, unseen test domain


class ProbKind(str, Enum):
    """Interpretation of a rank-4 class map"""
    LOGITS = "logits"
    SIMPLEX = "simplex"


class NormalizeMode(str, Enum):
    """Intensity normalization applied after clipping"""
    UNIT_RANGE = "unit_range"
    ZERO_MEAN_UNIT_VAR = "zero_mean_unit_var"
    NONE = "none"        # keep intensities as stored


class OpKind(str, Enum):
    """Augmentation family"""
    SPATIAL = "spatial"  # image and label move together
    VOXEL = "voxel"      # image only


class AugName(str, Enum):
    """The seven SVDA operations"""
    RANDOM_CROP = "random_crop"
    RANDOM_ROTATION = "random_rotation"
    RANDOM_SCALING = "random_scaling"
    GAUSSIAN_BLUR = "gaussian_blur"
    BRIGHTNESS = "brightness"
    CONTRAST = "contrast"
    GAMMA = "gamma"


class SampleRole(str, Enum):
    """Role of a manifest record"""
    LABELED = "labeled"
    UNLABELED = "unlabeled"
    TEST = "test"


class Command(str, Enum):
    """CLI commands"""
    SYNTH = "synth"
    TRAIN = "train"
    EVAL = "eval"
