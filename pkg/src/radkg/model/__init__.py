from radkg.model.lm import (
    LmConfig,
    LmParams,
    PrefixedBatch,
    init_lm,
    lm_forward,
    lm_loss,
    lm_param_count,
)
from radkg.model.params import ParamSet
from radkg.model.projector import (
    OutputSlice,
    ProjectorConfig,
    ProjectorParams,
    count_params,
    init_projector,
    project,
)

__all__ = [
    "LmConfig",
    "LmParams",
    "PrefixedBatch",
    "init_lm",
    "lm_forward",
    "lm_loss",
    "lm_param_count",
    "ParamSet",
    "OutputSlice",
    "ProjectorConfig",
    "ProjectorParams",
    "count_params",
    "init_projector",
    "project",
]
