"""Streaming Bayesian tensor-train completion."""
from .data import (ObservationBatch, SplitDataset, TensorDataError, group_by_mode_index,
                   load_coo, partition_stream, save_coo, split_train_test)
from .engine import (BatchInfo, EngineConfig, EnvMoments, compute_envs, fit_batch,
                     process_batch, run_stream, update_core_element_mean,
                     update_core_element_variance, update_noise)
from .metrics import ErrorLog, evaluate_on_test, mc_second_moment_oracle, relative_error
from .posterior import (CheckpointError, CorePosterior, ModelState, NoisePosterior,
                        PriorConfig, init_state, load_checkpoint, predict_mean,
                        predict_means, predictive_moments, save_checkpoint,
                        slice_second_moment, tt_ranks)
from .synthetic import (GroundTruth, corrupt_and_observe, sample_ground_truth,
                        true_value, true_values)

__version__ = "0.1.0"
