"""palmgrid: desk-scale raster analytics for palm probability mapping.

Subpackages split along pipeline stages: rastercore (grids and the FGRD
format), compositor (annual predictor stacks), dataset (samples and folds),
palmnet (the per-pixel MLP), metrics (accuracy reporting and Otsu), riskengine
(transition risk), synth (seeded synthetic inputs), cli (the palmgrid tool).
"""

from .compositor import (
    CHANNEL_ORDER,
    AnnualStack,
    Scene,
    assemble_annual_stack,
    gapfill_rolling_mean,
    load_scene_manifest,
    load_stack,
    masked_annual_mean,
    sar_annual_stats,
    save_stack,
    slope_from_dem,
    to_scaled_db,
)
from .dataset import (
    FoldAssignment,
    HexGridSpec,
    SamplePoint,
    assign_folds,
    extract_features,
    hex_cell_of,
    pseudo_absence_sample,
    read_samples,
    write_samples,
)
from .errors import (
    CapacityError,
    ConfigError,
    DegenerateInputError,
    DivergenceError,
    GridFormatError,
    PalmgridError,
    ParseError,
    SchemaError,
    TruncationError,
    UndefinedMetricError,
)
from .metrics import (
    MetricReport,
    ScoredSample,
    SweepResult,
    auc,
    curve_sweep,
    evaluate,
    make_scored,
    otsu_threshold,
)
from .palmnet import (
    MlpParams,
    TrainConfig,
    TrainingLog,
    gradient_check,
    init_params,
    load_model,
    predict,
    predict_grid,
    save_model,
    train,
)
from .rastercore import (
    BandGrid,
    GridHeader,
    MaskGrid,
    RegionOfInterest,
    rasterize_roi,
    read_grid,
    read_rois,
    write_grid,
)
from .riskengine import (
    EpochPair,
    JointProbGrids,
    TransitionRiskReport,
    expected_area_ha,
    joint_probabilities,
    risk_aggregate,
    stable_palm,
    thresholded_area_ha,
    windowed_spearman,
)

__version__ = "0.1.0"

__all__ = [
    "BandGrid",
    "GridHeader",
    "MaskGrid",
    "RegionOfInterest",
    "rasterize_roi",
    "read_grid",
    "read_rois",
    "write_grid",
    "Scene",
    "AnnualStack",
    "CHANNEL_ORDER",
    "assemble_annual_stack",
    "gapfill_rolling_mean",
    "load_scene_manifest",
    "load_stack",
    "masked_annual_mean",
    "sar_annual_stats",
    "save_stack",
    "slope_from_dem",
    "to_scaled_db",
    "SamplePoint",
    "HexGridSpec",
    "FoldAssignment",
    "assign_folds",
    "extract_features",
    "hex_cell_of",
    "pseudo_absence_sample",
    "read_samples",
    "write_samples",
    "MlpParams",
    "TrainConfig",
    "TrainingLog",
    "gradient_check",
    "init_params",
    "load_model",
    "predict",
    "predict_grid",
    "save_model",
    "train",
    "ScoredSample",
    "MetricReport",
    "SweepResult",
    "auc",
    "curve_sweep",
    "evaluate",
    "make_scored",
    "otsu_threshold",
    "EpochPair",
    "JointProbGrids",
    "TransitionRiskReport",
    "expected_area_ha",
    "joint_probabilities",
    "risk_aggregate",
    "stable_palm",
    "thresholded_area_ha",
    "windowed_spearman",
    "PalmgridError",
    "GridFormatError",
    "TruncationError",
    "SchemaError",
    "ConfigError",
    "CapacityError",
    "ParseError",
    "DivergenceError",
    "DegenerateInputError",
    "UndefinedMetricError",
    "__version__",
]
