"""Experimentation toolkit for source-code vulnerability detection with
language models: data preparation, prompting, adapter fine-tuning,
retrieval, evaluation, and plotting, all deterministic under explicit seeds.
"""

from .backend import (
    AdapterConfig,
    BackendDescriptor,
    CapabilityError,
    LowRankAdapter,
    ModelBackend,
    ToyBackend,
    apply_adapter,
    create_backend,
    load_checkpoint,
    register_backend,
    save_checkpoint,
)
from .corpus import CodeSample, DatasetSplit, balance_undersample, ingest, load_jsonl, save_jsonl, split
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    RocCurve,
    auc,
    confusion,
    evaluate_predictions,
    f1_score,
    metrics,
    roc,
)
from .index import FlatIndex, build_index, pool_mean
from .prompting import (
    FewShotSelection,
    RenderedPrompt,
    parse_label,
    render_few_shot,
    render_zero_shot,
    select_rag,
    select_random_balanced,
    select_same_cwe,
)
from .records import PredictionRecord
from .tuning import (
    TrainConfig,
    TrainingDiverged,
    TuningRun,
    double_finetune_evaluate,
    finetune_classifier,
    finetune_generative,
    testtime_finetune_predict,
)
from .visualization import ProjectionConfig, class_silhouette, emit_roc_plot, emit_scatter_plot, project_2d

__version__ = "0.1.0"
