"""Contrast-level Shapley explanations for multi-channel segmentation models."""

__version__ = "0.1.0"

from .volume import (  # noqa: F401
    BinaryMask,
    LabelMap,
    MultiContrastVolume,
    one_hot,
    read_mcv,
    read_seg,
    write_mcv,
    write_seg,
)
from .metrics import (  # noqa: F401
    DICE,
    HD95,
    MetricConfig,
    MetricId,
    dice,
    hd95,
    label_averaged_metric,
    metric_by_name,
    squared_edt,
    surface,
)
from .shapley import (  # noqa: F401
    AblationStrategy,
    Coalition,
    CoalitionCache,
    ShapleyMatrix,
    SubjectVector,
    ablate,
    exact_shapley,
    mc_shapley,
    shapley_weight,
    subject_shapley,
)
from .adapters import (  # noqa: F401
    AdapterSpec,
    StoreAdapter,
    SubprocessAdapter,
    SyntheticAdapter,
    build_adapter,
    probe,
)
from .stats import (  # noqa: F401
    CiReport,
    SampleGroup,
    StatsLedger,
    TestReport,
    adjust_pvalues,
    consistency_battery,
    dagostino_k2,
    dunn,
    kruskal_wallis,
    levene,
    paired_mean_ci,
    skewness,
    t_cdf,
    t_quantile,
)
from .cluster import (  # noqa: F401
    PlanarProjection,
    ShapleyKMeans,
    kmeans,
    pca2,
    silhouette,
)
