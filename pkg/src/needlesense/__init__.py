"""Needle-insertion force synthesis, preprocessing, and phase/tissue classification."""

from .labels import NUM_CLASSES, TISSUE_LABELS, ClassLabel, tissue_label
from .mechanics import (
    DEFAULT_PROFILES,
    Cavity,
    InsertionTrace,
    MotionProgram,
    Scene,
    TissueProfile,
    cutting_force,
    friction_force,
    jittered_profile,
    simulate_insertion,
    stiffness_force,
)
from .filters import BiquadCascade, FilterSpec, design_butterworth
from .dataset import (
    Dataset,
    KFoldSplit,
    Normalization,
    RawFrame,
    TrainingExample,
    build_dataset,
    compute_normalization,
    kfold_split,
    label_trace,
    random_windows,
    read_dataset,
    read_trace,
    write_dataset,
    write_trace,
    zero_pad,
)
from .corpus import CorpusConfig, nominal_scene, synthesize_frames
from .model import (
    ModelConfig,
    ModelParameters,
    attention_head,
    embed,
    encoder_block,
    forward,
    init_parameters,
    loss_and_gradients,
    predict,
)
from .training import (
    TrainConfig,
    TrainResult,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_curve,
)
from .evaluation import (
    REFERENCE_ACCURACY,
    CrossValReport,
    EvalReport,
    cross_validate,
    score,
    write_confusion_csv,
    write_metrics_csv,
)
from .streaming import StreamOutput, StreamState, offline_predictions, replay

__version__ = "0.1.0"
