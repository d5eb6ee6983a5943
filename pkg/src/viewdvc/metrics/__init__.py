from .caption import CiderD, DegenerateIDFError, bleu4, cider, corpus_bleu4, meteor_lite
from .dense import (
    DVC_THRESHOLDS,
    MetricReport,
    dvc_eval,
    evaluate,
    load_predictions,
    save_predictions,
    soda,
    soda_idf,
    soda_video,
    tiou,
)

__all__ = [
    "CiderD",
    "DVC_THRESHOLDS",
    "DegenerateIDFError",
    "MetricReport",
    "bleu4",
    "cider",
    "corpus_bleu4",
    "dvc_eval",
    "evaluate",
    "load_predictions",
    "meteor_lite",
    "save_predictions",
    "soda",
    "soda_idf",
    "soda_video",
    "tiou",
]
