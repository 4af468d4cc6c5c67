"""Class-incremental learning with herded exemplars, distillation and nearest-mean inference."""

from .classify import FeatureExtractor, Stream, classify_batch, fuse, nme_classify
from .dataset import Dataset, DatasetManifest, Sample, SyntheticSpec, generate_synthetic, load_dataset, save_dataset, split_by_group, task_view
from .evaluate import AccuracyMatrix, accuracy, compute_bwt, compute_mean_accuracy, initial_accuracy, summarize_means
from .exemplar import ExemplarStore, FeatureMeanMatrix, class_mean, compute_mean_matrix, herd_select, update_store
from .nnkernel import SGD, Network, backward, expand_output, extract_feature, forward, init_network
from .trainer import RunOptions, TaskSchedule, TrainConfig, run_joint, run_schedule, snapshot_targets, task_loss, train_task

__version__ = "0.1.0"
