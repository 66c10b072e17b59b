try:
    from causalpima.constants.presets import PRESETS
    from causalpima.constants.defaults import (
        VARIANCE_FLOOR,
        EMPTY_CLUSTER_MASS,
        EDGE_ZERO_TOL,
        LOGIT_INIT_STD,
        GMM_INIT_JITTER_STD,
        GMM_FIT_MAX_ITERS,
        GRAD_CLIP_NORM,
        ENUMERATION_MAX_NODES,
        ENUMERATION_MAX_OUTCOMES,
        CHECKPOINT_FORMAT,
        CHECKPOINT_VERSION,
        TENSOR_MAGIC,
        TENSOR_VERSION,
        LOG_LEVEL_ENV,
    )
    from causalpima.constants import circles, curves
except ImportError:
    from constants.presets import PRESETS
    from constants.defaults import (
        VARIANCE_FLOOR,
        EMPTY_CLUSTER_MASS,
        EDGE_ZERO_TOL,
        LOGIT_INIT_STD,
        GMM_INIT_JITTER_STD,
        GMM_FIT_MAX_ITERS,
        GRAD_CLIP_NORM,
        ENUMERATION_MAX_NODES,
        ENUMERATION_MAX_OUTCOMES,
        CHECKPOINT_FORMAT,
        CHECKPOINT_VERSION,
        TENSOR_MAGIC,
        TENSOR_VERSION,
        LOG_LEVEL_ENV,
    )
    from constants import circles, curves
