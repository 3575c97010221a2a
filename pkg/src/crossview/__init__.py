"""View-specific embedding networks trained with cross-view constraints."""
from .dataset import Dataset, GenSpec, SplitSpec, generate, load_csv, save_csv, split
from .errors import CrossViewError, NumericError, ParseError, SizingError, StorageError, ValidationError
from .evalkit import EvalReport, evaluate_protocol
from .losses import CenterBank, cross_view_intra_class_distance, cv_cl, cv_ec
from .network import ViewNetwork, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, desk_config, train_icv_eccl, train_multiview

__version__ = "0.1.0"
