try:
    from causalpima.config import ExperimentConfig, load_config
    from causalpima.model import CausalPima
    from causalpima.trainer import TrainState, fit, pretrain, train_epoch
    from causalpima.datagen import Dataset, generate_circles, generate_curves
except ImportError:
    from config import ExperimentConfig, load_config
    from model import CausalPima
    from trainer import TrainState, fit, pretrain, train_epoch
    from datagen import Dataset, generate_circles, generate_curves
