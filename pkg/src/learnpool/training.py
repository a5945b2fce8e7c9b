"""Joint training of pooling weights and a softmax classifier.

The objective is the mean negative log-likelihood of a softmax classifier
on pooled features plus ``alpha1/2 |theta|^2``, ``alpha2/2 |W|^2`` and
``alpha3/2`` times the squared forward-difference smoothness of every
weight map, minimized over W restricted to the unit cube.
"""

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from . import optim
from .errors import InvalidArgument
from .features import CodeGrid
from .pooling import PoolingWeights, pool_stack


@dataclass
class ClassifierParams:
    theta: np.ndarray
    bias: np.ndarray = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2 or self.theta.shape[0] < 2:
            raise InvalidArgument("theta must be a (C, F) matrix with C >= 2")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.theta.shape[0],):
                raise InvalidArgument("bias must have one entry per class")

    @property
    def include_bias(self):
        return self.bias is not None

    @property
    def C(self):
        return self.theta.shape[0]

    @property
    def F(self):
        return self.theta.shape[1]

    @classmethod
    def zeros(cls, C, F, include_bias=True):
        return cls(np.zeros((C, F)), np.zeros(C) if include_bias else None)

    def logits(self, features):
        out = features @ self.theta.T
        return out + self.bias if self.bias is not None else out

    def copy(self):
        return ClassifierParams(self.theta.copy(), None if self.bias is None else self.bias.copy())


@dataclass
class ModelParams:
    pooling: PoolingWeights
    classifier: ClassifierParams

    def __post_init__(self):
        if self.classifier.F != self.pooling.L * self.pooling.K:
            raise InvalidArgument(
                f"classifier expects {self.classifier.F} features but pooling yields "
                f"{self.pooling.L * self.pooling.K}")

    def copy(self):
        return ModelParams(self.pooling.copy(), self.classifier.copy())


@dataclass
class Hyperparams:
    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha3: float = 0.0
    gamma: float = 1.0
    max_iters: int = 3000
    prepool_s: int = 3
    batch_width: int = None

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise InvalidArgument("regularization weights must be nonnegative")
        if not self.gamma > 0:
            raise InvalidArgument("gamma must be positive")


@dataclass
class LabeledDataset:
    """Code grids of ``n`` images stacked as (n, M, K) with integer labels."""

    codes: np.ndarray
    labels: np.ndarray
    grid_h: int
    grid_w: int
    n_classes: int = None

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.codes.ndim != 3 or self.codes.shape[1] != self.grid_h * self.grid_w:
            raise InvalidArgument(
                f"codes of shape {self.codes.shape} do not fit a {self.grid_h}x{self.grid_w} grid")
        if self.labels.shape != (self.codes.shape[0],):
            raise InvalidArgument("need exactly one label per code grid")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidArgument(f"labels must lie in 0..{self.n_classes - 1}")

    @classmethod
    def from_grids(cls, grids, labels, n_classes=None):
        grids = list(grids)
        if not grids:
            raise InvalidArgument("empty list of code grids")
        h, w = grids[0].grid_h, grids[0].grid_w
        if any((g.grid_h, g.grid_w, g.K) != (h, w, grids[0].K) for g in grids):
            raise InvalidArgument("all code grids must share grid shape and K")
        return cls(np.stack([g.codes for g in grids]), labels, h, w, n_classes)

    def __len__(self):
        return self.codes.shape[0]

    @property
    def M(self):
        return self.codes.shape[1]

    @property
    def K(self):
        return self.codes.shape[2]

    def grid(self, i):
        return CodeGrid(self.codes[i], self.grid_h, self.grid_w)

    def subset(self, index):
        return LabeledDataset(self.codes[index], self.labels[index], self.grid_h, self.grid_w,
                              self.n_classes)


# -- objective pieces ---------------------------------------------------------

def softmax_probs(classifier, a):
    """Class probabilities for one feature vector or a stack of them."""
    logits = classifier.logits(np.asarray(a, dtype=np.float64))
    return _softmax(logits)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_data(model, data):
    if len(data) == 0:
        raise InvalidArgument("dataset is empty")
    W = model.pooling
    if (data.M, data.K) != (W.M, W.K):
        raise InvalidArgument(
            f"dataset (M={data.M}, K={data.K}) does not match pooling (M={W.M}, K={W.K})")
    if data.n_classes > model.classifier.C:
        raise InvalidArgument("dataset has more classes than the classifier")


def data_loss(model, data):
    _check_data(model, data)
    feats = pool_stack(model.pooling.weights, data.codes)
    logp = _log_softmax(model.classifier.logits(feats))
    return float(-logp[np.arange(len(data)), data.labels].mean())


def _map_diffs(maps):
    return np.diff(maps, axis=1), np.diff(maps, axis=2)


def smoothness_penalty(W):
    """Sum of squared forward differences along both grid axes, no wraparound."""
    dx, dy = _map_diffs(W.maps())
    return float(np.sum(dx * dx) + np.sum(dy * dy))


def smoothness_gradient(W):
    """Gradient of ``smoothness_penalty`` with respect to the (L, M, K) weights."""
    maps = W.maps()
    dx, dy = _map_diffs(maps)
    g = np.zeros_like(maps)
    g[:, 1:] += 2.0 * dx
    g[:, :-1] -= 2.0 * dx
    g[:, :, 1:] += 2.0 * dy
    g[:, :, :-1] -= 2.0 * dy
    return g.reshape(W.weights.shape)


@dataclass
class ObjectiveTerms:
    objective: float
    data_loss: float
    theta_l2: float
    w_l2: float
    smoothness: float


def objective_terms(model, data, hyper):
    loss = data_loss(model, data)
    theta_l2 = 0.5 * hyper.alpha1 * float(np.sum(model.classifier.theta ** 2))
    w_l2 = 0.5 * hyper.alpha2 * float(np.sum(model.pooling.weights ** 2))
    smooth = 0.5 * hyper.alpha3 * smoothness_penalty(model.pooling)
    return ObjectiveTerms(loss + theta_l2 + w_l2 + smooth, loss, theta_l2, w_l2, smooth)


def full_objective(model, data, hyper):
    return objective_terms(model, data, hyper).objective


class _Problem:
    """Flat-vector view of the joint objective: x = [W, theta, bias]."""

    def __init__(self, data, template, hyper, train_pooling=True):
        _check_data(template, data)
        self.data = data
        self.hyper = hyper
        self.grid = (template.pooling.grid_h, template.pooling.grid_w)
        self.w_shape = template.pooling.weights.shape
        self.theta_shape = template.classifier.theta.shape
        self.include_bias = template.classifier.include_bias
        self.train_pooling = train_pooling
        self.n_w = int(np.prod(self.w_shape))
        self.n_theta = int(np.prod(self.theta_shape))
        # (K, n, M) layout for batched GEMMs over the code coordinate
        self.codes_t = np.ascontiguousarray(data.codes.transpose(2, 0, 1))
        n = len(data)
        self.onehot = np.zeros((n, self.theta_shape[0]))
        self.onehot[np.arange(n), data.labels] = 1.0
        self.last_terms = {}

    def pack(self, model):
        parts = [model.pooling.weights.ravel(), model.classifier.theta.ravel()]
        if self.include_bias:
            parts.append(model.classifier.bias)
        return np.concatenate(parts)

    def unpack(self, x):
        W = x[:self.n_w].reshape(self.w_shape)
        theta = x[self.n_w:self.n_w + self.n_theta].reshape(self.theta_shape)
        bias = x[self.n_w + self.n_theta:] if self.include_bias else None
        return ModelParams(PoolingWeights(W.copy(), *self.grid),
                           ClassifierParams(theta.copy(), None if bias is None else bias.copy()))

    def bounds(self):
        lower = np.full(self.n_w + self.n_theta + (self.theta_shape[0] if self.include_bias else 0),
                        -np.inf)
        upper = np.full_like(lower, np.inf)
        lower[:self.n_w] = 0.0
        upper[:self.n_w] = 1.0
        return lower, upper

    def __call__(self, x):
        h = self.hyper
        L, M, K = self.w_shape
        W = x[:self.n_w].reshape(self.w_shape)
        theta = x[self.n_w:self.n_w + self.n_theta].reshape(self.theta_shape)
        n = self.codes_t.shape[1]

        pooled = np.matmul(self.codes_t, W.transpose(2, 1, 0))        # (K, n, L)
        feats = pooled.transpose(1, 2, 0).reshape(n, L * K)
        logits = feats @ theta.T
        if self.include_bias:
            logits += x[self.n_w + self.n_theta:]
        logp = _log_softmax(logits)
        loss = -float(np.sum(logp * self.onehot)) / n
        delta = (np.exp(logp) - self.onehot) / n                     # (n, C)

        g_theta = delta.T @ feats + h.alpha1 * theta
        grads = [None, g_theta.ravel()]
        if self.include_bias:
            grads.append(delta.sum(axis=0))

        maps = W.reshape(L, *self.grid, K)
        dx, dy = _map_diffs(maps)
        smooth = float(np.sum(dx * dx) + np.sum(dy * dy))
        if self.train_pooling:
            d_feats = (delta @ theta).reshape(n, L, K).transpose(2, 0, 1)   # (K, n, L)
            g_w = np.matmul(self.codes_t.transpose(0, 2, 1), d_feats)       # (K, M, L)
            g_w = g_w.transpose(2, 1, 0) + h.alpha2 * W
            if h.alpha3:
                g_w += 0.5 * h.alpha3 * smoothness_gradient(PoolingWeights(W, *self.grid))
            grads[0] = g_w.ravel()
        else:
            grads[0] = np.zeros(self.n_w)

        terms = ObjectiveTerms(0.0, loss, 0.5 * h.alpha1 * float(np.sum(theta * theta)),
                               0.5 * h.alpha2 * float(np.sum(W * W)), 0.5 * h.alpha3 * smooth)
        terms.objective = terms.data_loss + terms.theta_l2 + terms.w_l2 + terms.smoothness
        if len(self.last_terms) > 8:
            self.last_terms.clear()
        self.last_terms[x.tobytes()] = terms
        return terms.objective, np.concatenate(grads)

    def terms(self, x):
        t = self.last_terms.get(x.tobytes())
        if t is None:
            self(x)
            t = self.last_terms[x.tobytes()]
        return t


def gradient(model, data, hyper):
    """Analytic gradient of the full objective as ``(grad_W, grad_theta)``.

    A classifier bias, when present, gets its gradient under ``grad_bias``
    via :func:`gradient_with_bias`.
    """
    gW, gT, _ = gradient_with_bias(model, data, hyper)
    return gW, gT


def gradient_with_bias(model, data, hyper):
    prob = _Problem(data, model, hyper)
    _, g = prob(prob.pack(model))
    gW = g[:prob.n_w].reshape(prob.w_shape)
    gT = g[prob.n_w:prob.n_w + prob.n_theta].reshape(prob.theta_shape)
    gb = g[prob.n_w + prob.n_theta:] if prob.include_bias else None
    return gW, gT, gb


def project_box(W):
    """Euclidean projection of the weights onto [0, 1]."""
    return PoolingWeights(np.clip(W.weights, 0.0, 1.0), W.grid_h, W.grid_w)


# -- training -----------------------------------------------------------------

@dataclass
class TraceRow:
    iteration: int
    objective: float
    data_loss: float
    theta_l2: float
    w_l2: float
    smoothness: float
    clamp_count: int


@dataclass
class TrainResult:
    model: ModelParams
    trace: list = field(default_factory=list)
    message: str = ""

    @property
    def objectives(self):
        return [row.objective for row in self.trace]


OPTIMIZERS = ("projected_gd", "lbfgs")


def train_joint(data, init, hyper, optimizer="lbfgs", train_pooling=True, on_iteration=None,
                backtrack=True, history_size=10):
    """Minimize the regularized objective from ``init``.

    ``on_iteration(iteration, model)`` is called on every accepted iterate,
    including the starting point as iteration 0.  With
    ``train_pooling=False`` only the classifier moves.
    Raises NumericFailure carrying the iteration on non-finite values.
    """
    if hyper.max_iters < 1:
        raise InvalidArgument("max_iters must be at least 1")
    prob = _Problem(data, init, hyper, train_pooling=train_pooling)
    x0 = prob.pack(init)
    lower, upper = prob.bounds()
    if not train_pooling:
        lower[:prob.n_w] = upper[:prob.n_w] = np.clip(x0[:prob.n_w], 0.0, 1.0)
    rows = []

    def callback(it, x, f, clamped):
        t = prob.terms(x)
        rows.append(TraceRow(it, t.objective, t.data_loss, t.theta_l2, t.w_l2, t.smoothness,
                             clamped))
        if on_iteration is not None:
            on_iteration(it, prob.unpack(x))

    if optimizer == "projected_gd":
        res = optim.projected_gd(prob, x0, hyper.gamma, hyper.max_iters, lower, upper,
                                 backtrack=backtrack, callback=callback)
    elif optimizer == "lbfgs":
        res = optim.lbfgs(prob, x0, hyper.max_iters, lower, upper, history_size=history_size,
                          callback=callback)
    else:
        raise InvalidArgument(f"unknown optimizer {optimizer!r}; expected one of {OPTIMIZERS}")
    return TrainResult(prob.unpack(res.x), rows, res.message)


@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    skipped: list = field(default_factory=list)


def finite_diff_check(model, data, hyper, h=1e-5, n_coords=200, seed=0):
    """Compare the analytic gradient with central differences.

    Checks every coordinate when there are at most ``n_coords`` of them,
    otherwise a seeded random subset of that size.  Pooling weights closer
    than ``h`` to the box boundary are skipped and listed in ``skipped``
    as flat indices.
    """
    if not h > 0:
        raise InvalidArgument("step h must be positive")
    prob = _Problem(data, model, hyper)
    x = prob.pack(model)
    _, g = prob(x)
    n = x.size
    rng = np.random.default_rng(seed)
    coords = np.arange(n) if n <= n_coords else np.sort(rng.choice(n, n_coords, replace=False))
    worst, checked, skipped = 0.0, 0, []
    for i in coords:
        if i < prob.n_w and (x[i] - h < 0.0 or x[i] + h > 1.0):
            skipped.append(int(i))
            continue
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        numeric = (prob(xp)[0] - prob(xm)[0]) / (2.0 * h)
        worst = max(worst, abs(g[i] - numeric) / max(1e-8, abs(numeric)))
        checked += 1
    return GradCheck(worst, checked, skipped)


def predict(model, data):
    feats = pool_stack(model.pooling.weights, data.codes)
    return model.classifier.logits(feats).argmax(axis=1)


def accuracy(model, data):
    """Percentage of correctly classified items."""
    return 100.0 * float(np.mean(predict(model, data) == data.labels))


ALPHA_GRID = (0.0, 1e-4, 1e-3, 1e-2, 1e-1)


def kfold_indices(n, folds, seed=0):
    if folds < 2 or folds > n:
        raise InvalidArgument(f"cannot split {n} items into {folds} folds")
    order = np.random.default_rng(seed).permutation(n)
    return np.array_split(order, folds)


def cross_validate(data, make_init, hyper, grid=None, folds=5, optimizer="lbfgs", seed=0,
                   score=None):
    """Grid-search the regularization weights by k-fold cross-validation.

    ``grid`` maps hyperparameter names to candidate values (default: each
    alpha over ALPHA_GRID).  ``make_init(train_data)`` builds the starting
    model for one fold.  Returns ``(best_hyper, scores)`` where ``scores``
    maps each candidate tuple to its mean held-out accuracy.
    """
    if grid is None:
        grid = {"alpha1": ALPHA_GRID, "alpha2": ALPHA_GRID, "alpha3": ALPHA_GRID}
    names = sorted(grid)
    parts = kfold_indices(len(data), folds, seed)
    if score is None:
        def score(train, held_out, h):
            fit = train_joint(train, make_init(train), h, optimizer=optimizer)
            return accuracy(fit.model, held_out)
    scores = {}
    for values in product(*(grid[k] for k in names)):
        h = replace(hyper, **dict(zip(names, values)))
        accs = []
        for f in range(folds):
            held = parts[f]
            train_idx = np.concatenate([parts[i] for i in range(folds) if i != f])
            accs.append(score(data.subset(train_idx), data.subset(held), h))
        scores[values] = float(np.mean(accs))
    best = max(scores, key=lambda v: (scores[v], [-x for x in v]))
    return replace(hyper, **dict(zip(names, best))), scores
