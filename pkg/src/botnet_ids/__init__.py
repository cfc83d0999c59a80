"""Attention-based 1D-CNN + BiLSTM intrusion detection for N-BaIoT traffic.

The package is a self-contained numpy implementation: a small set of
differentiable primitives with hand-derived backward rules, a BiLSTM +
attention encoder with full backpropagation through time, the model
assembly, Adam training with early stopping, the N-BaIoT preprocessing
pipeline, and the evaluation/reliability metrics suite. A CLI
(`botnet-ids`) wires the pieces end to end.
"""

from .data import (
    DEFAULT_CLASSES,
    DEFAULT_VOCAB,
    DatasetSplit,
    LabelVocab,
    MinMaxScaler,
    RawTable,
    balance_classes,
    fit_transform_scaler,
    apply_scaler,
    load_dataset,
    load_nbaiot,
    save_dataset,
    stratified_split,
    synthetic_blobs,
    to_model_input,
)
from .metrics import (
    ClassReport,
    ConfusionMatrix,
    RocCurve,
    auc,
    class_report,
    cohen_kappa,
    cohen_kappa_ovr,
    confusion,
    eq_metrics,
    mcc,
    mcc_ovr,
    render_report,
    roc_curve,
    roc_per_class,
)
from .model import (
    Checkpoint,
    ModelConfig,
    ModelParams,
    build_model,
    load_checkpoint,
    model_backward,
    model_forward,
    save_checkpoint,
)
from .recurrent import (
    AttentionParams,
    BiLstmOutput,
    LstmDirection,
    LstmParams,
    attention_backward,
    attention_forward,
    bilstm_backward,
    bilstm_forward,
    lstm_cell,
)
from .tensor import (
    BatchNormParams,
    ConvParams,
    DropoutState,
    Tensor,
    activation,
    batchnorm1d,
    conv1d_forward,
    conv1d_backward,
    dense,
    dropout,
    grad_check,
    matmul,
    maxpool1d,
    softmax,
    sparse_ce_loss,
)
from .training import (
    AdamState,
    TrainConfig,
    TrainingCurves,
    adam_step,
    evaluate,
    fit,
)

__version__ = "0.1.0"
