"""End-to-end experiment pipeline: dictionary, encoding, training, evaluation."""

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .batching import (PartialModel, assemble_features, make_plan, retrain_classifier,
                       train_batches)
from .classifiers import feature_accuracy, fit_classifier
from .errors import FormatError, InvalidArgument, NumericFailure
from .features import encode_images, fit_dictionary
from .pooling import init_pooling, pool_stack, prepool
from .training import (ClassifierParams, Hyperparams, LabeledDataset, ModelParams, accuracy,
                       cross_validate, train_joint)

log = logging.getLogger(__name__)

ABLATION = (("free", False, False), ("l2", True, False), ("smooth", False, True),
            ("l2+smooth", True, True))


# -- data ----------------------------------------------------------------------

def load_images(config, key, limit):
    images, labels = [], []
    for path in config.paths(key):
        x, y = formats.load_cifar(path, config.dataset_format)
        images.append(x)
        labels.append(y)
    if not images:
        raise InvalidArgument(f"config key {key!r} lists no files")
    x, y = np.concatenate(images), np.concatenate(labels)
    if limit and limit < len(y):
        if config.subset == "random":
            pick = np.sort(np.random.default_rng(config.seed).choice(len(y), limit, replace=False))
        else:
            pick = np.arange(limit)
        x, y = x[pick], y[pick]
    return x, y


def n_classes_for(config):
    return formats.CIFAR_FORMATS[config.dataset_format][1]


def train_dictionary(images, config):
    if config.K > config.patch_samples:
        raise InvalidArgument(
            f"K={config.K} exceeds the number of sampled patches ({config.patch_samples})")
    return fit_dictionary(images, config.K, config.patch_side, samples=config.patch_samples,
                          iterations=config.kmeans_iters, seed=config.seed,
                          var_floor=config.var_floor, epsilon=config.whiten_eps)


def encode_dataset(images, labels, dictionary, whiten, config, n_classes):
    codes, (gh, gw) = encode_images(images, dictionary, whiten, config.patch_side,
                                    var_floor=config.var_floor)
    codes, (gh, gw) = prepool(codes, config.prepool, gh, gw)
    return LabeledDataset(codes, labels, gh, gw, n_classes)


def code_scale(data):
    """Per-coordinate scale making the whole-image pooled codes unit-variance.

    Scaling a code coordinate commutes with pooling, so it only conditions
    the optimization and does not change the model family.
    """
    pooled = data.codes.sum(axis=1)
    return 1.0 / np.sqrt(pooled.var(axis=0) + 1e-12)


def scaled(data, scale):
    return LabeledDataset(data.codes * scale, data.labels, data.grid_h, data.grid_w,
                          data.n_classes)


# -- methods -------------------------------------------------------------------

def base_hyper(config, alpha1=None, alpha2=0.0, alpha3=0.0):
    return Hyperparams(alpha1=config.alphas("alpha1")[0] if alpha1 is None else alpha1,
                       alpha2=alpha2, alpha3=alpha3, gamma=config.gamma,
                       max_iters=config.max_iters, prepool_s=config.prepool,
                       batch_width=config.batch_width)


def initial_model(data, config, scheme=None, seed=None):
    W = init_pooling(scheme or config.init, config.units, data.grid_h, data.grid_w, data.K,
                     seed=config.seed if seed is None else seed)
    return ModelParams(W, ClassifierParams.zeros(max(data.n_classes, 2), config.units * data.K))


def select_hyper(train, config, use_l2=True, use_smooth=True):
    """Resolve the alpha settings, cross-validating when a key lists several values."""
    grid = {"alpha1": config.alphas("alpha1"),
            "alpha2": config.alphas("alpha2") if use_l2 else [0.0],
            "alpha3": config.alphas("alpha3") if use_smooth else [0.0]}
    hyper = base_hyper(config)
    if all(len(v) == 1 for v in grid.values()) or config.cv_folds < 2:
        return replace(hyper, **{k: v[0] for k, v in grid.items()})
    best, scores = cross_validate(train, lambda d: initial_model(d, config), hyper, grid,
                                  folds=config.cv_folds, optimizer=config.optimizer,
                                  seed=config.seed)
    log.info("cross-validation scores: %s", scores)
    return best


@dataclass
class MethodResult:
    method: str
    dict_size: int
    features: int
    accuracy: float = None
    error: str = None
    artifacts: dict = field(default_factory=dict)


def fixed_pooling_accuracy(train, test, W, config):
    feats_tr = pool_stack(W.weights, train.codes)
    clf = fit_classifier(feats_tr, train.labels, config.classifier, config.alphas("alpha1")[0],
                         n_classes=train.n_classes, max_iters=config.max_iters)
    return feature_accuracy(clf, pool_stack(W.weights, test.codes), test.labels), clf


def learned_full(train, test, config, use_l2=True, use_smooth=True):
    hyper = select_hyper(train, config, use_l2, use_smooth)
    res = train_joint(train, initial_model(train, config), hyper, optimizer=config.optimizer)
    if config.retrain_full:
        acc, clf = fixed_pooling_accuracy(train, test, res.model.pooling, config)
        model = ModelParams(res.model.pooling, clf)
    else:
        model = res.model
        acc = accuracy(model, test)
    return acc, model, res, hyper


def learned_batches(train, test, config, redundant):
    plan = make_plan(train.K, config.batch_width, redundant=redundant, seed=config.seed)
    hyper = select_hyper(train, config)
    partials = train_batches(train, plan, hyper, init_scheme=config.init,
                             worker_count=config.workers, seed=config.seed,
                             optimizer=config.optimizer, n_units=config.units)
    failed = [p for p in partials if not p.ok]
    if failed:
        raise NumericFailure(f"{len(failed)} of {len(partials)} batches failed: {failed[0].error}")
    feats = assemble_features(train, partials)
    clf = retrain_classifier(feats, train.labels, config.classifier, hyper,
                             n_classes=train.n_classes, max_iters=config.max_iters)
    acc = feature_accuracy(clf, assemble_features(test, partials), test.labels)
    return acc, plan, partials, feats.shape[1]


def run_methods(train, test, config, out_dir=None):
    out_dir = Path(out_dir or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    K, L = train.K, config.units
    results = []

    def attempt(name, features, fn):
        row = MethodResult(name, K, features)
        try:
            fn(row)
        except (NumericFailure, InvalidArgument) as exc:
            log.error("method %s failed: %s", name, exc)
            row.error = f"{type(exc).__name__}: {exc}"
        results.append(row)

    for method in config.method_list():
        if method == "spm_fixed":
            def fn(row):
                W = init_pooling("spm_quadrants", L, train.grid_h, train.grid_w, K)
                row.accuracy, _ = fixed_pooling_accuracy(train, test, W, config)
            attempt(method, L * K, fn)
        elif method == "random_pooling":
            def fn(row):
                W = init_pooling("random_gaussian", L, train.grid_h, train.grid_w, K,
                                 seed=config.seed)
                row.accuracy, _ = fixed_pooling_accuracy(train, test, W, config)
            attempt(method, L * K, fn)
        elif method == "learned_full":
            settings = ABLATION if config.ablation else (("learned_full", True, True),)
            for label, use_l2, use_smooth in settings:
                def fn(row, label=label, use_l2=use_l2, use_smooth=use_smooth):
                    acc, model, res, hyper = learned_full(train, test, config, use_l2, use_smooth)
                    stem = label.replace("+", "_")
                    formats.save_model(out_dir / f"{stem}.model", model)
                    formats.write_trace_csv(out_dir / f"{stem}_trace.csv", res.trace)
                    row.accuracy = acc
                    row.artifacts = {"model": str(out_dir / f"{stem}.model"), "hyper": hyper}
                attempt(label, L * K, fn)
        else:
            redundant = method == "learned_redundant"
            n_batches = (2 if redundant else 1) * (K // config.batch_width
                                                   if config.batch_width and K % config.batch_width == 0 else 0)

            def fn(row, redundant=redundant, method=method):
                acc, plan, partials, n_feats = learned_batches(train, test, config, redundant)
                bdir = out_dir / method
                bdir.mkdir(exist_ok=True)
                formats.write_manifest(bdir / "plan.txt", plan)
                for p in partials:
                    formats.save_model(bdir / f"batch_{p.index:04d}.model", p.pooling)
                row.accuracy, row.features = acc, n_feats
            attempt(method, n_batches * L * config.batch_width, fn)
    return results


# -- reporting -----------------------------------------------------------------

RESULT_FIELDS = ("method", "dict_size", "features", "accuracy")


def write_results(results, out_dir):
    out_dir = Path(out_dir)
    with open(out_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for r in results:
            w.writerow([r.method, r.dict_size, r.features,
                        "failed" if r.error else f"{r.accuracy:.2f}"])
    text = format_results(results)
    (out_dir / "results.txt").write_text(text)
    return text


def format_results(results):
    rows = [("Method", "Dict. size", "Features", "Acc.")]
    for r in results:
        rows.append((r.method, str(r.dict_size), str(r.features),
                     "failed" if r.error else f"{r.accuracy:.2f}%"))
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = []
    for row in rows:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                               for i, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"


def load_source_pooling(path):
    """Read pooling for transfer: a model, a pooling file, or a batch manifest."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    head = path.read_bytes()[:8]
    if head == formats.MODEL_MAGIC:
        return [PartialModel(0, None, formats.load_model_parts(path)[0])]
    if head == formats.POOL_MAGIC:
        return [PartialModel(0, None, formats.load_pooling(path))]
    try:
        plan = formats.read_manifest(path)
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{path} is neither a model, a pooling file nor a batch manifest") from exc
    partials = []
    for i, coords in enumerate(plan.assignments):
        W = formats.load_model_parts(path.parent / f"batch_{i:04d}.model")[0]
        partials.append(PartialModel(i, coords, W))
    return partials


def fill_coords(partials, K):
    for p in partials:
        if p.coords is None:
            if p.pooling.K != K:
                raise InvalidArgument(f"source pooling has K={p.pooling.K}, target codes K={K}")
            p.coords = list(range(K))
    return partials


def prepare_datasets(config, dictionary, whiten):
    """Load, encode, pre-pool and (optionally) rescale the train and test splits."""
    n_classes = n_classes_for(config)
    x_tr, y_tr = load_images(config, "train_path", config.train_limit)
    x_te, y_te = load_images(config, "test_path", config.test_limit)
    train = encode_dataset(x_tr, y_tr, dictionary, whiten, config, n_classes)
    test = encode_dataset(x_te, y_te, dictionary, whiten, config, n_classes)
    if config.code_scaling:
        s = code_scale(train)
        train, test = scaled(train, s), scaled(test, s)
    return train, test


def accuracy_protocol(config, seeds=(0, 1, 2), settings=("free", "smooth")):
    """Fixed 2x2 pooling against learned pooling, once per seed.

    Each seed redraws the train/test subsets (when ``subset = random``), the
    dictionary and the initialization.  Returns ``{name: [accuracy per
    seed]}`` with ``spm_fixed`` plus every requested ablation setting.
    """
    table = {name: (use_l2, use_smooth) for name, use_l2, use_smooth in ABLATION}
    out = {"spm_fixed": []}
    out.update({name: [] for name in settings})
    for seed in seeds:
        cfg = replace(config, seed=seed)
        images, _ = load_images(cfg, "train_path", cfg.train_limit)
        dictionary, whiten = train_dictionary(images, cfg)
        train, test = prepare_datasets(cfg, dictionary, whiten)
        W = init_pooling("spm_quadrants", cfg.units, train.grid_h, train.grid_w, train.K)
        out["spm_fixed"].append(fixed_pooling_accuracy(train, test, W, cfg)[0])
        for name in settings:
            use_l2, use_smooth = table[name]
            out[name].append(learned_full(train, test, cfg, use_l2, use_smooth)[0])
        log.info("seed %d: %s", seed, {k: v[-1] for k, v in out.items()})
    return out
