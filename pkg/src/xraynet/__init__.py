"""From-scratch chest X-ray classifiers with Grad-CAM explanations.

A miniature deep-learning stack (tensors, autodiff, conv/batchnorm
kernels) carrying two binary classifiers: a small feedforward CNN and
DenseNet-121. Includes deterministic dataset splitting, photometric
augmentation, training/evaluation with ROC/AUC and confusion metrics,
Grad-CAM heatmaps, a bit-exact checkpoint format, and a CLI wiring the
whole workflow.
"""

from .autodiff import Node, Parameter, backward, grad_check, leaf
from .data import (
    AugmentSpec,
    DataError,
    DatasetManifest,
    LABELS,
    ManifestRow,
    augment,
    augment_seed,
    load_dataset,
    load_image,
    preprocess,
    read_manifest,
    resize_bilinear,
    save_image_png,
    split,
    write_manifest,
)
from .gradcam import Heatmap, overlay, upsample_bilinear
from . import gradcam  # keep the submodule addressable: xraynet.gradcam.gradcam(...)
from .metrics import (
    ConfusionMatrix,
    MetricsError,
    RocCurve,
    auc,
    auc_pair_oracle,
    classify_auc_band,
    confusion,
    roc,
)
from .models import (
    BaselineCnnConfig,
    DenseNetConfig,
    FeatureCapture,
    LayerSpec,
    ModelGraph,
    UnknownLayerError,
    build_baseline_cnn,
    build_densenet121,
    count_layers,
    feature_maps,
    forward,
)
from .persistence import (
    BadMagicError,
    Checkpoint,
    CheckpointError,
    FormatVersionError,
    TensorFormatError,
    TruncatedFileError,
    load,
    read_checkpoint,
    save,
)
from .tensor import ShapeError, Tensor
from .training import (
    EpochRecord,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    cross_entropy,
    evaluate_accuracy,
    predict_scores,
    sgd_step,
    train,
    write_metrics_csv,
)

__version__ = "0.1.0"
