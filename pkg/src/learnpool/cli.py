"""Command-line driver.

    learnpool train-dictionary --config exp.cfg
    learnpool encode --config exp.cfg
    learnpool run --config exp.cfg --ablation=true
    learnpool visualize out/learned_full.model --out viz/
    learnpool transfer --source out/learned_full.model --config target.cfg
    learnpool gradcheck --instances 20

Any ``--key=value`` that is not a command option overrides a config key.
Exit codes: 0 success, 2 usage or config error, 3 data format error,
4 numeric failure.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from . import formats
from .batching import TransferReport, transfer_pooling
from .config import load_config
from .errors import FormatError, InvalidArgument, NumericFailure
from .features import encode_images
from .pooling import PoolingWeights
from .training import (ClassifierParams, Hyperparams, LabeledDataset, ModelParams,
                       finite_diff_check)

log = logging.getLogger("learnpool")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _config(args, extra):
    return load_config(args.config, extra)


def cmd_train_dictionary(args, extra):
    config = _config(args, extra)
    config.check_paths("train_path")
    if not config.dictionary:
        raise InvalidArgument("config key 'dictionary' (output path) is required")
    images, _ = ex.load_images(config, "train_path", config.train_limit)
    dictionary, whiten = ex.train_dictionary(images, config)
    formats.save_dictionary(config.dictionary, dictionary, whiten)
    print(f"wrote {config.dictionary} (K={dictionary.K}, dim={dictionary.dim})")
    return EXIT_OK


def _load_dictionary(config):
    config.check_paths("dictionary")
    dictionary, whiten = formats.load_dictionary(config.dictionary)
    if dictionary.K != config.K:
        log.warning("dictionary has K=%d, config says K=%d; using the file", dictionary.K, config.K)
    return dictionary, whiten


def cmd_encode(args, extra):
    config = _config(args, extra)
    config.check_paths("train_path")
    dictionary, whiten = _load_dictionary(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for key, limit, name in (("train_path", config.train_limit, "train"),
                             ("test_path", config.test_limit, "test")):
        if not config.paths(key):
            continue
        config.check_paths(key)
        images, labels = ex.load_images(config, key, limit)
        codes, (gh, gw) = encode_images(images, dictionary, whiten, config.patch_side,
                                        var_floor=config.var_floor)
        path = out / f"codes_{name}.npz"
        np.savez(path, codes=codes, labels=labels, grid=np.array([gh, gw]))
        print(f"wrote {path} ({codes.shape[0]} grids of {gh}x{gw}x{codes.shape[2]})")
    return EXIT_OK


def cmd_run(args, extra):
    config = _config(args, extra)
    config.check_paths("train_path", "test_path")
    dictionary, whiten = _load_dictionary(config)
    train, test = ex.prepare_datasets(config, dictionary, whiten)
    results = ex.run_methods(train, test, config)
    print(ex.write_results(results, config.out_dir), end="")
    failed = [r for r in results if r.error]
    if results and len(failed) == len(results):
        return EXIT_NUMERIC if all("NumericFailure" in r.error for r in failed) else EXIT_USAGE
    return EXIT_OK


def cmd_visualize(args, extra):
    if extra:
        raise UsageError(f"unexpected arguments: {extra}")
    model = Path(args.model)
    if not model.exists():
        raise FileNotFoundError(str(model))
    head = model.read_bytes()[:8]
    W = formats.load_pooling(model) if head == formats.POOL_MAGIC else formats.load_model_parts(model)[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["file unit coord min max mean"]
    maps = W.maps()
    written = 0
    for k in range(W.K):
        for l in range(W.L):
            if written >= args.cap:
                break
            name = f"unit{l}_coord{k:04d}.pgm"
            data = maps[l, :, :, k]
            formats.write_pgm(out / name, data)
            lines.append(f"{name} {l} {k} {data.min():.6g} {data.max():.6g} {data.mean():.6g}")
            written += 1
    (out / "index.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {written} PGM files to {out}")
    return EXIT_OK


def cmd_transfer(args, extra):
    config = _config(args, extra)
    source = Path(args.source)
    if not source.exists():
        raise FileNotFoundError(str(source))
    config.check_paths("train_path", "test_path")
    dictionary, whiten = _load_dictionary(config)
    train, test = ex.prepare_datasets(config, dictionary, whiten)
    partials = ex.fill_coords(ex.load_source_pooling(source), train.K)
    report = transfer_pooling(partials, train, test, kind=config.classifier,
                              hyper=ex.base_hyper(config),
                              source_id=config.source_id or source.stem,
                              target_id=config.dataset_id or config.dataset_format)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "transfer.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TransferReport.FIELDS)
        w.writerow(report.row())
    print(",".join(TransferReport.FIELDS))
    print(",".join(report.row()))
    return EXIT_OK


def random_instance(rng, max_grid=4, max_k=4, max_l=3, max_c=3, max_n=8):
    """A small random interior instance for gradient checking."""
    gh, gw = (int(v) for v in rng.integers(1, max_grid + 1, size=2))
    K, L = int(rng.integers(1, max_k + 1)), int(rng.integers(1, max_l + 1))
    C, n = int(rng.integers(2, max_c + 1)), int(rng.integers(1, max_n + 1))
    data = LabeledDataset(rng.uniform(0.0, 1.0, (n, gh * gw, K)), rng.integers(0, C, n), gh, gw, C)
    W = PoolingWeights(rng.uniform(0.05, 0.95, (L, gh * gw, K)), gh, gw)
    clf = ClassifierParams(rng.normal(0.0, 0.1, (C, L * K)), rng.normal(0.0, 0.1, C))
    return ModelParams(W, clf), data


REG_SETTINGS = {"free": (0.0, 0.0), "l2": (0.1, 0.0), "smooth": (0.0, 0.1), "l2+smooth": (0.1, 0.1)}


def cmd_gradcheck(args, extra):
    if extra:
        raise UsageError(f"unexpected arguments: {extra}")
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for i in range(args.instances):
        model, data = random_instance(rng)
        for name, (a2, a3) in REG_SETTINGS.items():
            hyper = Hyperparams(alpha1=0.05, alpha2=a2, alpha3=a3)
            res = finite_diff_check(model, data, hyper, h=args.h, seed=args.seed + i)
            worst = max(worst, res.max_rel_error)
            print(f"instance {i:3d} {name:10s} M={data.M:2d} K={data.K} L={model.pooling.L} "
                  f"C={model.classifier.C} n={len(data)} max_rel_error={res.max_rel_error:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


def build_parser():
    ap = argparse.ArgumentParser(prog="learnpool", description="Learnable spatial pooling.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("train-dictionary", cmd_train_dictionary), ("encode", cmd_encode),
                     ("run", cmd_run)):
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.set_defaults(fn=fn)
    p = sub.add_parser("visualize")
    p.add_argument("model")
    p.add_argument("--out", default="viz")
    p.add_argument("--cap", type=int, default=64)
    p.set_defaults(fn=cmd_visualize)
    p = sub.add_parser("transfer")
    p.add_argument("--source", required=True)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_transfer)
    p = sub.add_parser("gradcheck")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args, extra)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (InvalidArgument, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
