"""Synthetic CIFAR-format data whose classes differ by where a texture sits.

Each class places an oriented grating blob at a class-specific position
(jittered) on a smooth random background.  Several positions straddle the
2x2 quadrant boundaries, so a fixed quadrant pooling separates them less
cleanly than pooling regions fitted to the data.

    python -m learnpool.synthetic OUT_DIR [--train N] [--test N] [--seed S]
"""

import argparse
from pathlib import Path

import numpy as np

from .formats import write_cifar

SIZE = 32
# (row, col) centres and grating angle per class
CLASS_LAYOUT = [
    ((16, 16), 0.0), ((16, 16), np.pi / 2),
    ((8, 16), 0.0), ((24, 16), 0.0),
    ((16, 8), np.pi / 2), ((16, 24), np.pi / 2),
    ((8, 8), np.pi / 4), ((24, 24), np.pi / 4),
    ((8, 24), 3 * np.pi / 4), ((24, 8), 3 * np.pi / 4),
]


def make_images(n, seed=0, n_classes=10, jitter=3, noise=0.25, contrast=0.6):
    """Return ``(images, labels)`` with images (n, 3, 32, 32) in [0, 1]."""
    if not 2 <= n_classes <= len(CLASS_LAYOUT):
        raise ValueError(f"n_classes must be in 2..{len(CLASS_LAYOUT)}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    images = np.empty((n, 3, SIZE, SIZE))
    for i, c in enumerate(labels):
        (cy, cx), angle = CLASS_LAYOUT[c]
        cy += rng.integers(-jitter, jitter + 1)
        cx += rng.integers(-jitter, jitter + 1)
        # low-frequency background from a coarse upsampled grid
        coarse = rng.normal(0.0, 1.0, size=(3, 5, 5))
        background = np.kron(coarse, np.ones((7, 7)))[:, :SIZE, :SIZE]
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 4.0 ** 2))
        phase = rng.uniform(0, 2 * np.pi)
        grating = np.sin(0.9 * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
        tint = rng.uniform(0.5, 1.0, size=3)
        img = 0.5 + 0.08 * background + contrast * 0.5 * tint[:, None, None] * blob * grating
        img += rng.normal(0.0, noise * 0.1, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return images, labels


def write_dataset(out_dir, n_train=2000, n_test=500, seed=0, n_classes=10):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x, y = make_images(n_train, seed=seed, n_classes=n_classes)
    write_cifar(out / "train.bin", x, y)
    x, y = make_images(n_test, seed=seed + 1, n_classes=n_classes)
    write_cifar(out / "test.bin", x, y)
    return out / "train.bin", out / "test.bin"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    for p in write_dataset(args.out_dir, args.train, args.test, args.seed):
        print(p)


if __name__ == "__main__":
    main()
