from .errors import (
    DefectGraphError,
    ValidationError,
    SchemaError,
    ParseError,
    ConfigError,
    UsageError,
    ShapeError,
    SamplingError,
    NumericError,
    TrainingError,
    OptimizerError,
    GradCheckError,
    EvaluationError,
    AnalysisError,
    ExperimentInterrupted,
)
from .ingest import (
    MetricManifest,
    ModuleRecord,
    RawDependencyEdge,
    OwnershipRecord,
    VersionDataset,
    parse_metrics,
    parse_dependencies,
    parse_ownership,
    load_dataset_dir,
    write_dataset_dir,
    normalize_metrics,
    SyntheticConfig,
    generate_synthetic,
)
from .graph import (
    GraphView,
    Direction,
    DependencyGraph,
    build_cdg,
    build_ddg,
    build_msdg,
    build_view,
    normalize_edge_weights,
    read_graph,
    write_graph,
)
from .sampling import SamplingConfig, AugmentedDataset, nearest_same_class, synthesize_node, smote_augment
from .model import (
    SEARCH_SPACE,
    ModelConfig,
    BiGGNNParams,
    TrainHistory,
    aggregate_directional,
    fuse,
    forward,
    embed,
    predict_proba,
    train,
    random_search,
)
from .metrics import MEASURES, MetricReport, auc, brier, confusion_and_threshold_metrics
from .stats import StatTestResult, wilcoxon_signed_rank, cliffs_delta, bonferroni, paired_test
from .protocols import (
    RunRecord,
    ExperimentReport,
    stratified_split,
    run_wpdp,
    run_cpdp,
    run_cpdp_campaign,
    score_baseline,
    compare_reports,
    summary_table,
)
from .analysis import (
    NeighborShareReport,
    SeparabilityReport,
    same_label_weight_share,
    interclass_distance,
    neighbor_share_table,
    separability_table,
)
