VARIANCE_FLOOR = 1e-6
EMPTY_CLUSTER_MASS = 1e-8
EDGE_ZERO_TOL = 1e-3
LOGIT_INIT_STD = 0.1
GMM_INIT_JITTER_STD = 0.01
GMM_FIT_MAX_ITERS = 100
GRAD_CLIP_NORM = 10.0
ENUMERATION_MAX_NODES = 10
ENUMERATION_MAX_OUTCOMES = 4096
CHECKPOINT_FORMAT = "causalpima-checkpoint"
CHECKPOINT_VERSION = 1
TENSOR_MAGIC = "CPTENSOR"
TENSOR_VERSION = 1
LOG_LEVEL_ENV = "CAUSALPIMA_LOG_LEVEL"
