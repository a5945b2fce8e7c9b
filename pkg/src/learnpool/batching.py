"""Code-batch approximation: independent sub-models over slices of the code.

A K-dimensional code is split into K/D contiguous batches of D
coordinates (plus, optionally, a second split of a seeded permutation).
Each batch gets its own pooling model trained in isolation; only the
pooling weights are kept and their pooled features are concatenated for a
final classifier.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classifiers import feature_accuracy, fit_classifier
from .errors import InvalidArgument, NumericFailure
from .pooling import PoolingWeights, init_pooling, pool_stack
from .training import (ClassifierParams, Hyperparams, LabeledDataset, ModelParams,
                       train_joint)

log = logging.getLogger(__name__)


@dataclass
class BatchPlan:
    K: int
    D: int
    assignments: list
    redundant: bool = False
    seed: int = 0

    def __len__(self):
        return len(self.assignments)


def make_plan(K, D, redundant=False, seed=0):
    if D < 1 or K < 1 or D > K or K % D:
        raise InvalidArgument(f"batch width D={D} must divide K={K}")
    coords = np.arange(K)
    assignments = [coords[i:i + D].tolist() for i in range(0, K, D)]
    if redundant:
        perm = np.random.default_rng(seed).permutation(K)
        assignments += [sorted(perm[i:i + D].tolist()) for i in range(0, K, D)]
    return BatchPlan(K, D, assignments, redundant, seed)


def slice_dataset(data, coords):
    coords = np.asarray(coords, dtype=np.int64)
    if coords.size == 0:
        raise InvalidArgument("cannot slice a dataset to zero code coordinates")
    if coords.min() < 0 or coords.max() >= data.K:
        raise InvalidArgument(f"coordinates must lie in 0..{data.K - 1}")
    return LabeledDataset(np.ascontiguousarray(data.codes[:, :, coords]), data.labels,
                          data.grid_h, data.grid_w, data.n_classes)


def batch_seed(global_seed, index):
    """Per-batch seed that does not depend on scheduling."""
    return int(np.random.SeedSequence([int(global_seed), int(index)]).generate_state(1)[0])


@dataclass
class PartialModel:
    index: int
    coords: list
    pooling: PoolingWeights = None
    error: str = None
    trace: list = field(default_factory=list, repr=False)

    @property
    def ok(self):
        return self.error is None


def initial_model(data, scheme, L, seed, **init_kw):
    W = init_pooling(scheme, L, data.grid_h, data.grid_w, data.K, seed=seed, **init_kw)
    return ModelParams(W, ClassifierParams.zeros(max(data.n_classes, 2), L * data.K))


def _train_one(job):
    index, coords, data, hyper, scheme, L, seed, optimizer = job
    part = slice_dataset(data, coords)
    init = initial_model(part, scheme, L, batch_seed(seed, index))
    try:
        res = train_joint(part, init, hyper, optimizer=optimizer)
    except NumericFailure as exc:
        return PartialModel(index, list(coords), error=str(exc))
    return PartialModel(index, list(coords), res.model.pooling, trace=res.objectives)


def train_batches(data, plan, hyper, init_scheme="spm_quadrants", worker_count=1, seed=0,
                  optimizer="lbfgs", n_units=4):
    """Train one pooling model per batch of ``plan``; results come back in plan order.

    A batch that fails numerically is returned with ``error`` set and no
    weights; the other batches are unaffected.
    """
    if worker_count < 1:
        raise InvalidArgument("worker_count must be at least 1")
    if plan.K != data.K:
        raise InvalidArgument(f"plan covers K={plan.K} but data has K={data.K}")
    jobs = [(i, coords, data, hyper, init_scheme, n_units, seed, optimizer)
            for i, coords in enumerate(plan.assignments)]
    if worker_count == 1 or len(jobs) == 1:
        partials = [_train_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=worker_count) as pool:
            partials = list(pool.map(_train_one, jobs))
    for p in partials:
        if not p.ok:
            log.warning("batch %d failed: %s", p.index, p.error)
    return partials


def as_partials(source):
    """Accept PoolingWeights, ModelParams or partial models and return partials."""
    if isinstance(source, ModelParams):
        source = source.pooling
    if isinstance(source, PoolingWeights):
        return [PartialModel(0, list(range(source.K)), source)]
    return list(source)


def assemble_features(data, partials):
    """Concatenate every partial model's pooled features, in plan order."""
    codes = data.codes if isinstance(data, LabeledDataset) else np.asarray(data, dtype=np.float64)
    blocks = []
    for p in as_partials(partials):
        if not p.ok:
            raise InvalidArgument(f"batch {p.index} has no trained weights: {p.error}")
        coords = np.asarray(p.coords)
        if coords.max() >= codes.shape[2] or len(coords) != p.pooling.K:
            raise InvalidArgument(f"batch {p.index} coordinates do not match the code dimension")
        if p.pooling.M != codes.shape[1]:
            raise InvalidArgument(
                f"batch {p.index} pools over M={p.pooling.M} positions, codes have {codes.shape[1]}")
        blocks.append(pool_stack(p.pooling.weights, np.ascontiguousarray(codes[:, :, coords])))
    return np.concatenate(blocks, axis=1)


def retrain_classifier(features, labels, kind="softmax", hyper=None, n_classes=None,
                       max_iters=None):
    """Train only a classifier on frozen pooled features."""
    hyper = hyper or Hyperparams(alpha1=1e-3)
    return fit_classifier(features, labels, kind=kind, alpha1=hyper.alpha1, n_classes=n_classes,
                          max_iters=max_iters or min(hyper.max_iters, 1000))


@dataclass
class TransferReport:
    source: str
    target: str
    classifier: str
    accuracy: float

    FIELDS = ("source", "target", "classifier", "accuracy")

    def row(self):
        return [self.source, self.target, self.classifier, f"{self.accuracy:.4f}"]


def transfer_pooling(source_model, target_train, target_test, kind="linear_svm", hyper=None,
                     source_id="source", target_id="target"):
    """Freeze the source pooling, retrain a classifier on the target, score on target test."""
    partials = as_partials(source_model)
    for p in partials:
        if p.ok and (p.pooling.grid_h, p.pooling.grid_w) != (target_train.grid_h, target_train.grid_w):
            raise InvalidArgument(
                f"source pooling grid {p.pooling.grid_h}x{p.pooling.grid_w} does not match target "
                f"grid {target_train.grid_h}x{target_train.grid_w}")
    train_feats = assemble_features(target_train, partials)
    clf = retrain_classifier(train_feats, target_train.labels, kind, hyper,
                             n_classes=target_train.n_classes)
    acc = feature_accuracy(clf, assemble_features(target_test, partials), target_test.labels)
    return TransferReport(source_id, target_id, kind, acc)
