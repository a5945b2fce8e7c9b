import numpy as np
import pytest

from learnpool.config import load_config
from learnpool.experiment import (MethodResult, accuracy_protocol, code_scale, format_results,
                                  scaled)
from learnpool.pooling import init_pooling, pool_all
from learnpool.synthetic import CLASS_LAYOUT, make_images, write_dataset
from learnpool.training import LabeledDataset


def test_code_scaling_commutes_with_pooling(rng):
    data = LabeledDataset(rng.uniform(size=(10, 9, 4)), np.arange(10) % 2, 3, 3, 2)
    s = code_scale(data)
    W = init_pooling("random_gaussian", 2, 3, 3, 4, seed=0)
    a = pool_all(W, scaled(data, s).codes).reshape(10, 2, 4)
    b = pool_all(W, data.codes).reshape(10, 2, 4) * s
    np.testing.assert_allclose(a, b, rtol=1e-12)
    whole = scaled(data, s).codes.sum(axis=1)
    np.testing.assert_allclose(whole.std(axis=0), 1.0, rtol=1e-6)


def test_results_table_alignment():
    rows = [MethodResult("spm_fixed", 16, 64, 46.5), MethodResult("learned_full", 16, 64,
                                                                  error="NumericFailure: x")]
    lines = format_results(rows).splitlines()
    assert lines[1].split() == ["spm_fixed", "16", "64", "46.50%"]
    assert lines[2].split()[-1] == "failed"
    assert len({len(l) for l in lines}) == 1


def test_synthetic_images_are_valid():
    x, y = make_images(30, seed=1)
    assert x.shape == (30, 3, 32, 32) and x.min() >= 0 and x.max() <= 1
    assert set(y) <= set(range(len(CLASS_LAYOUT)))
    x2, y2 = make_images(30, seed=1)
    np.testing.assert_array_equal(x, x2)


def test_accuracy_protocol_on_synthetic_data(tmp_path):
    """Reduced-scale run of the CIFAR ordering protocol on synthetic data.

    Checks that every piece of the protocol runs and beats chance.  The
    accuracy ordering is not asserted: at this size it varies from seed to
    seed, and synthetic data says nothing about CIFAR-10 anyway.
    """
    train, test = write_dataset(tmp_path, n_train=1200, n_test=400, seed=0)
    cfg = load_config(None, [f"--train_path={train}", f"--test_path={test}", "--K=16",
                             "--subset=random", "--train_limit=1000", "--test_limit=400",
                             "--patch_samples=50000", "--kmeans_iters=20", "--max_iters=150",
                             "--alpha1=1e-3", "--alpha2=0", "--alpha3=1e-2"])
    acc = accuracy_protocol(cfg, seeds=(0, 1, 2))
    print("synthetic protocol:", acc)
    assert set(acc) == {"spm_fixed", "free", "smooth"}
    for values in acc.values():
        assert len(values) == 3 and all(30.0 < v <= 100.0 for v in values)
