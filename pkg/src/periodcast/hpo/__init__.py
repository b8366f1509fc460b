"""Asynchronous Bayesian hyperparameter search."""
from .acquisition import GpEiSuggester, Observation, RandomSuggester, expected_improvement
from .gpr import GprPosterior, gpr_fit, gpr_predict
from .scheduler import Journal, SearchResult, TrialRecord, WorkerQueue, best_so_far, replay, result_to_dict, run
from .space import Dimension, SearchSpace, periodformer_space

__all__ = ["Dimension", "GpEiSuggester", "GprPosterior", "Journal", "Observation", "RandomSuggester",
           "SearchResult", "SearchSpace", "TrialRecord", "WorkerQueue", "best_so_far", "expected_improvement",
           "gpr_fit", "gpr_predict", "periodformer_space", "replay", "result_to_dict", "run"]
