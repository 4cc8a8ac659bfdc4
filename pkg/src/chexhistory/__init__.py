"""Patient-history chest X-ray classification.

Curate longitudinal datapoints from CheXpert-format metadata, train recurrent
models that condition on the labels of earlier scans, and evaluate them with
bootstrapped AUROC.
"""

from .curate import (CurationConfig, HistoryDatapoint, ScanRecord, build_histories, compute_stats,
                     map_labels, parse_chexpert_csv, split_by_patient)
from .evaluate import (MetricsReport, ScoredSet, auroc, auroc_macro, auroc_micro, auroc_weighted,
                       poisson_bootstrap)
from .models import EncoderConfig, HistoryClassifier, SequenceHeadConfig, Variant, assemble_inputs
from .synth import SynthConfig, gen_dataset, oracle_auroc
from .train import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "CurationConfig", "EncoderConfig", "HistoryClassifier", "HistoryDatapoint", "MetricsReport",
    "ScanRecord", "ScoredSet", "SequenceHeadConfig", "SynthConfig", "TrainConfig", "Variant",
    "assemble_inputs", "auroc", "auroc_macro", "auroc_micro", "auroc_weighted", "build_histories",
    "compute_stats", "fit", "gen_dataset", "map_labels", "oracle_auroc", "parse_chexpert_csv",
    "poisson_bootstrap", "split_by_patient",
]
