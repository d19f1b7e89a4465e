"""Oversampling benchmark for RSS fingerprint classification with recurrence plots."""
from .classic import ADASYN, SMOTE
from .classifier import SVC
from .dataset import (
    CorpusConfig,
    LabeledSet,
    MinMaxRSSScaler,
    RecurrencePlotTransformer,
    load_csv,
    make_imbalanced,
    prepare_sets,
    synth_corpus,
)
from .generative import ConvVAE, CVAEOversampler, TrainConfig, VAEOversampler
from .harness import ExperimentPlan, run_plan
from .metrics import GroupReport, evaluate, relative_change

__version__ = "0.1.0"

__all__ = [
    "ADASYN",
    "SMOTE",
    "SVC",
    "ConvVAE",
    "CVAEOversampler",
    "VAEOversampler",
    "TrainConfig",
    "CorpusConfig",
    "LabeledSet",
    "MinMaxRSSScaler",
    "RecurrencePlotTransformer",
    "load_csv",
    "make_imbalanced",
    "prepare_sets",
    "synth_corpus",
    "ExperimentPlan",
    "run_plan",
    "GroupReport",
    "evaluate",
    "relative_change",
]
