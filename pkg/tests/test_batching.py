import numpy as np
import pytest

from conftest import random_problem
from learnpool.batching import (BatchPlan, PartialModel, assemble_features, batch_seed,
                                make_plan, retrain_classifier, slice_dataset, train_batches,
                                transfer_pooling)
from learnpool.classifiers import feature_accuracy, fit_classifier
from learnpool.errors import InvalidArgument
from learnpool.pooling import init_pooling, pool_all
from learnpool.training import (ClassifierParams, Hyperparams, LabeledDataset, ModelParams,
                                train_joint)


def dataset(rng, n=24, gh=4, gw=4, K=8, C=3):
    labels = np.arange(n) % C
    codes = rng.uniform(0, 1, (n, gh * gw, K))
    codes[np.arange(n), labels * 3, :] += 2.0  # class-dependent hot spot
    return LabeledDataset(codes, labels, gh, gw, C)


def test_plan_forty_by_forty():
    plan = make_plan(1600, 40)
    assert len(plan) == 40 and all(len(a) == 40 for a in plan.assignments)
    assert plan.assignments[1] == list(range(40, 80))


def test_plan_full_width_is_single_batch():
    assert make_plan(80, 80).assignments == [list(range(80))]


def test_redundant_plan_small():
    plan = make_plan(4, 2, redundant=True, seed=3)
    assert len(plan) == 4
    assert sorted(plan.assignments[2] + plan.assignments[3]) == [0, 1, 2, 3]


@pytest.mark.parametrize("K,D", [(12, 3), (16, 4), (10, 10), (9, 1)])
def test_partition_disjoint_and_covering(K, D):
    plan = make_plan(K, D, redundant=True, seed=K)
    half = len(plan) // 2
    for part in (plan.assignments[:half], plan.assignments[half:]):
        flat = sorted(c for a in part for c in a)
        assert flat == list(range(K))


def test_plan_needs_divisible_width():
    with pytest.raises(InvalidArgument):
        make_plan(10, 4)


def test_plan_seed_reproducible():
    assert make_plan(16, 4, True, 5).assignments == make_plan(16, 4, True, 5).assignments
    assert make_plan(16, 4, True, 5).assignments != make_plan(16, 4, True, 6).assignments


def test_slice_dataset(rng):
    data = dataset(rng)
    same = slice_dataset(data, range(data.K))
    np.testing.assert_array_equal(same.codes, data.codes)
    part = slice_dataset(data, [1, 5])
    assert (part.M, part.grid_h, part.grid_w, part.K) == (16, 4, 4, 2)
    np.testing.assert_array_equal(part.codes[:, :, 1], data.codes[:, :, 5])
    with pytest.raises(InvalidArgument):
        slice_dataset(data, [])
    with pytest.raises(InvalidArgument):
        slice_dataset(data, [8])


def test_batch_seed_depends_on_index_only():
    assert batch_seed(0, 3) == batch_seed(0, 3)
    assert len({batch_seed(0, i) for i in range(50)}) == 50


def test_single_batch_equals_full_training(rng):
    data = dataset(rng)
    hyper = Hyperparams(alpha1=1e-3, alpha3=1e-2, max_iters=40)
    partials = train_batches(data, make_plan(8, 8), hyper, n_units=4)
    init = ModelParams(init_pooling("spm_quadrants", 4, 4, 4, 8),
                       ClassifierParams.zeros(3, 32))
    full = train_joint(data, init, hyper)
    np.testing.assert_array_equal(partials[0].pooling.weights, full.model.pooling.weights)
    np.testing.assert_array_equal(assemble_features(data, partials),
                                  pool_all(full.model.pooling, data.codes))


def test_worker_count_does_not_change_results(rng):
    data = dataset(rng)
    plan = make_plan(8, 2, redundant=True, seed=1)
    hyper = Hyperparams(alpha1=1e-3, max_iters=15)
    serial = train_batches(data, plan, hyper, init_scheme="random_gaussian", seed=4)
    parallel = train_batches(data, plan, hyper, init_scheme="random_gaussian", seed=4,
                             worker_count=3)
    assert [p.index for p in parallel] == list(range(len(plan)))
    for a, b in zip(serial, parallel):
        assert a.coords == b.coords
        np.testing.assert_array_equal(a.pooling.weights, b.pooling.weights)


def test_partials_have_batch_width(rng):
    data = dataset(rng, K=8)
    partials = train_batches(data, make_plan(8, 2), Hyperparams(max_iters=3))
    assert len(partials) == 4 and all(p.pooling.K == 2 for p in partials)


def test_failed_batch_reported_others_complete(rng):
    data = dataset(rng, K=4)
    data.codes[0, 0, 3] = np.nan
    with np.errstate(invalid="ignore"):
        partials = train_batches(data, make_plan(4, 2), Hyperparams(max_iters=5))
    assert partials[0].ok and not partials[1].ok
    assert "not finite" in partials[1].error
    with pytest.raises(InvalidArgument):
        assemble_features(data, partials)


def test_feature_length_law(rng):
    data = dataset(rng, K=8)
    for redundant in (False, True):
        plan = make_plan(8, 2, redundant=redundant, seed=0)
        parts = [PartialModel(i, c, init_pooling("constant", 3, 4, 4, 2))
                 for i, c in enumerate(plan.assignments)]
        assert assemble_features(data, parts).shape == (len(data), len(plan) * 3 * 2)


def test_large_scale_feature_counts():
    for redundant, want in ((False, 6400), (True, 12800)):
        plan = make_plan(1600, 40, redundant=redundant)
        assert len(plan) * 4 * plan.D == want


def test_assembly_pools_the_right_coordinates(rng):
    data = dataset(rng, K=4)
    W = init_pooling("random_gaussian", 2, 4, 4, 2, seed=0)
    feats = assemble_features(data, [PartialModel(0, [3, 1], W)])
    np.testing.assert_allclose(feats[0], pool_all(W, data.codes[0][:, [3, 1]]))


def test_spm_transfer_reproduces_baseline(rng):
    data = dataset(rng)
    W = init_pooling("spm_quadrants", 4, 4, 4, 8)
    feats = pool_all(W, data.codes)
    base = feature_accuracy(fit_classifier(feats, data.labels, "softmax"), feats, data.labels)
    rep = transfer_pooling(W, data, data, kind="softmax", hyper=Hyperparams(alpha1=1e-3))
    assert rep.accuracy == base


def test_retrain_on_separable_features(rng):
    labels = np.arange(40) % 2
    feats = np.where(labels[:, None] == 0, 3.0, -3.0) + rng.normal(0, 0.1, (40, 4))
    for kind in ("softmax", "linear_svm"):
        clf = retrain_classifier(feats, labels, kind)
        assert feature_accuracy(clf, feats, labels) == 100.0


def test_transfer_shape_mismatch(rng):
    data = dataset(rng)
    with pytest.raises(InvalidArgument):
        transfer_pooling(init_pooling("constant", 2, 3, 3, 8), data, data)


def test_transfer_report_schema(rng):
    data = dataset(rng)
    rep = transfer_pooling(init_pooling("spm_quadrants", 4, 4, 4, 8), data, data,
                           source_id="c100", target_id="c10")
    assert rep.FIELDS == ("source", "target", "classifier", "accuracy")
    assert rep.row()[:3] == ["c100", "c10", "linear_svm"]
    assert 0 <= rep.accuracy <= 100


def test_train_batches_validates(rng):
    data = dataset(rng, K=8)
    with pytest.raises(InvalidArgument):
        train_batches(data, make_plan(8, 2), Hyperparams(), worker_count=0)
    with pytest.raises(InvalidArgument):
        train_batches(data, make_plan(4, 2), Hyperparams())
