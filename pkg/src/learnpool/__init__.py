"""Jointly learned spatial pooling regions and linear classifiers."""

from .errors import FormatError, InvalidArgument, NumericFailure
from .features import (CodeGrid, Dictionary, WhitenTransform, encode_image, encode_images,
                       extract_patches, fit_dictionary, fit_zca, kmeans_fit, normalize_patch,
                       triangle_encode)
from .pooling import PoolingWeights, init_pooling, pool_all, pool_unit, prepool
from .training import (ClassifierParams, Hyperparams, LabeledDataset, ModelParams, data_loss,
                       finite_diff_check, full_objective, gradient, project_box,
                       smoothness_penalty, softmax_probs, train_joint)
from .batching import (BatchPlan, assemble_features, make_plan, retrain_classifier,
                       slice_dataset, train_batches, transfer_pooling)

__version__ = "0.1.0"
