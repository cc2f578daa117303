"""Semi-supervised regression with a Siamese MLP trained by alternating
pairwise difference regression and ranked-list metric learning."""

__version__ = "0.1.0"

from .dataio import (  # noqa: E402
    Dataset, ExperimentSplit, NormParams, apply_minmax, clean_sentinels, fit_minmax,
    load_csv, load_schema, make_split, prepare,
)
from .dml import RLLConfig, TripletSets, dml_epoch, rll_loss, select_sets  # noqa: E402
from .psm import PairBatch, build_pairs, psm_epoch, psm_loss  # noqa: E402
from .siamese import SiameseModel, embed, embed_distance, init_siamese, pair_forward  # noqa: E402
from .trainer import TrainConfig, TrainHistory, alternate_train, predict, predict_batch  # noqa: E402

__all__ = [
    "Dataset", "ExperimentSplit", "NormParams", "apply_minmax", "clean_sentinels", "fit_minmax",
    "load_csv", "load_schema", "make_split", "prepare",
    "RLLConfig", "TripletSets", "dml_epoch", "rll_loss", "select_sets",
    "PairBatch", "build_pairs", "psm_epoch", "psm_loss",
    "SiameseModel", "embed", "embed_distance", "init_siamese", "pair_forward",
    "TrainConfig", "TrainHistory", "alternate_train", "predict", "predict_batch",
]
