"""Collaborative competitive filtering.

Latent-factor utility models fitted to whole recommender sessions (what was
offered and what was chosen) with softmax or hinge objectives, plus the
positives-only CF baselines they are compared against.
"""
from .data import (DyadicDataset, SessionDataset, SynthConfig, SyntheticGroundTruth, parse_dyadic,
                   parse_sessions, simulate_contexts, split, synth_generate)
from .evaluation import (EvalReport, ap_at_n, ar_at_n, evaluate_offline, ndcg_at_n, online_accuracy,
                         rank_top_n, score_histogram)
from .model import (ContentFeatures, ParameterStore, Session, hash_index, init_params, load_checkpoint,
                    save_checkpoint, utility, utility_with_content)
from .objectives import DyadObservation, GradientAccumulator, Loss, LossKind
from .trainer import TrainConfig, TrainReport, fit, sgd_step, sharded_train, train, train_epoch

__version__ = "0.1.0"
