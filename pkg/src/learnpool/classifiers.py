"""Linear classifiers trained on fixed, precomputed pooled features."""

import numpy as np

from . import optim
from .errors import InvalidArgument
from .training import ClassifierParams, _log_softmax

CLASSIFIER_KINDS = ("softmax", "linear_svm")


def _check(features, labels, n_classes):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise InvalidArgument("need an (n, F) feature matrix and n labels")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if len(np.unique(labels)) < 2:
        raise InvalidArgument("classifier training needs at least two distinct classes")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise InvalidArgument(f"labels must lie in 0..{n_classes - 1}")
    return features, labels, max(n_classes, 2)


def standardization(features, floor=0.01):
    """Per-feature mean and scale ``sqrt(var + floor)`` of a training matrix."""
    features = np.asarray(features, dtype=np.float64)
    return features.mean(axis=0), np.sqrt(features.var(axis=0) + floor)


def _fold(theta, bias, mean, scale):
    """Rewrite a classifier on standardized features as one on raw features."""
    theta = theta / scale
    return ClassifierParams(theta, bias - theta @ mean)


def fit_softmax(features, labels, alpha1=0.0, n_classes=None, max_iters=500):
    x, y, C = _check(features, labels, n_classes)
    n, F = x.shape
    onehot = np.zeros((n, C))
    onehot[np.arange(n), y] = 1.0

    def fun(v):
        theta, bias = v[:C * F].reshape(C, F), v[C * F:]
        logp = _log_softmax(x @ theta.T + bias)
        delta = (np.exp(logp) - onehot) / n
        f = -np.sum(logp * onehot) / n + 0.5 * alpha1 * np.sum(theta * theta)
        g = np.concatenate([(delta.T @ x + alpha1 * theta).ravel(), delta.sum(axis=0)])
        return f, g

    res = optim.lbfgs(fun, np.zeros(C * F + C), max_iters)
    return ClassifierParams(res.x[:C * F].reshape(C, F), res.x[C * F:].copy())


def fit_linear_svm(features, labels, alpha1=1e-3, n_classes=None, max_iters=500):
    """One-vs-rest L2-regularized squared-hinge SVMs, one L-BFGS run per class."""
    x, y, C = _check(features, labels, n_classes)
    n, F = x.shape
    theta, bias = np.zeros((C, F)), np.zeros(C)
    for c in range(C):
        t = np.where(y == c, 1.0, -1.0)

        def fun(v):
            w, b = v[:F], v[F]
            slack = np.maximum(0.0, 1.0 - t * (x @ w + b))
            f = np.sum(slack * slack) / n + 0.5 * alpha1 * (w @ w)
            coef = -2.0 * t * slack / n
            return f, np.concatenate([x.T @ coef + alpha1 * w, [coef.sum()]])

        res = optim.lbfgs(fun, np.zeros(F + 1), max_iters)
        theta[c], bias[c] = res.x[:F], res.x[F]
    return ClassifierParams(theta, bias)


def fit_classifier(features, labels, kind="softmax", alpha1=1e-3, n_classes=None,
                   max_iters=500, standardize=True):
    """Train a classifier of ``kind`` on raw features.

    With ``standardize`` the training happens on standardized features and
    the scaling is folded back, so the returned parameters apply to raw
    features directly.
    """
    features = np.asarray(features, dtype=np.float64)
    if standardize:
        mean, scale = standardization(features)
        z = (features - mean) / scale
    else:
        z = features
    if kind == "softmax":
        clf = fit_softmax(z, labels, alpha1, n_classes, max_iters)
    elif kind == "linear_svm":
        clf = fit_linear_svm(z, labels, alpha1, n_classes, max_iters)
    else:
        raise InvalidArgument(f"unknown classifier {kind!r}; expected one of {CLASSIFIER_KINDS}")
    return _fold(clf.theta, clf.bias, mean, scale) if standardize else clf


def predict_features(classifier, features):
    return classifier.logits(np.asarray(features, dtype=np.float64)).argmax(axis=1)


def feature_accuracy(classifier, features, labels):
    return 100.0 * float(np.mean(predict_features(classifier, features) == np.asarray(labels)))
