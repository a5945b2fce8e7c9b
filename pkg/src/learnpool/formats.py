"""Binary and text file formats.

All binary integers are little-endian u32 and all reals little-endian f64.

PCDICT01  magic, K, dim, centroids (K x dim), whitening mean (dim),
          whitening matrix (dim x dim), epsilon
PCPOOL01  magic, L, grid_h, grid_w, K, weights (l-major, then position j
          row-major, then k)
PCMODL01  magic, PCPOOL01 block, u32 C, u32 F, u8 has_bias, theta (C x F),
          bias (C, only if has_bias).  C = F = 0 marks a model without a
          classifier (partial batch models).
"""

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .features import Dictionary, WhitenTransform
from .pooling import PoolingWeights
from .training import ClassifierParams, ModelParams, TraceRow

DICT_MAGIC = b"PCDICT01"
POOL_MAGIC = b"PCPOOL01"
MODEL_MAGIC = b"PCMODL01"

CIFAR_PIXELS = 3 * 32 * 32
CIFAR_FORMATS = {"cifar10": (1, 10), "cifar100": (2, 100)}


class _Reader:
    def __init__(self, data, what):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def magic(self, expected):
        got = self.take(len(expected))
        if got != expected:
            raise FormatError(f"bad magic {got!r} in {self.what}, expected {expected!r}",
                              self.pos - len(expected))

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def f64(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"trailing bytes in {self.what}", self.pos)


def _f64(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _read(path):
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


# -- dictionary ----------------------------------------------------------------

def dictionary_bytes(dictionary, whiten):
    K, dim = dictionary.centroids.shape
    if whiten.dim != dim:
        raise FormatError("whitening and dictionary dimensions differ")
    return (DICT_MAGIC + struct.pack("<2I", K, dim) + _f64(dictionary.centroids)
            + _f64(whiten.mean) + _f64(whiten.matrix) + _f64([whiten.epsilon]))


def save_dictionary(path, dictionary, whiten):
    Path(path).write_bytes(dictionary_bytes(dictionary, whiten))


def load_dictionary(path):
    r = _Reader(_read(path), f"dictionary file {path}")
    r.magic(DICT_MAGIC)
    K, dim = r.u32(2)
    if K < 1 or dim < 1:
        raise FormatError("dictionary with empty shape", 8)
    centroids = r.f64(K * dim).reshape(K, dim)
    mean = r.f64(dim)
    matrix = r.f64(dim * dim).reshape(dim, dim)
    eps = float(r.f64(1)[0])
    r.done()
    return Dictionary(centroids), WhitenTransform(mean, matrix, eps)


# -- pooling and models ----------------------------------------------------------

def pooling_bytes(W):
    return POOL_MAGIC + struct.pack("<4I", W.L, W.grid_h, W.grid_w, W.K) + _f64(W.weights)


def _read_pooling(r):
    r.magic(POOL_MAGIC)
    L, gh, gw, K = r.u32(4)
    weights = r.f64(L * gh * gw * K).reshape(L, gh * gw, K)
    return PoolingWeights(weights, gh, gw)


def save_pooling(path, W):
    Path(path).write_bytes(pooling_bytes(W))


def load_pooling(path):
    r = _Reader(_read(path), f"pooling file {path}")
    W = _read_pooling(r)
    r.done()
    return W


def model_bytes(pooling, classifier=None):
    out = MODEL_MAGIC + pooling_bytes(pooling)
    if classifier is None:
        return out + struct.pack("<2IB", 0, 0, 0)
    has_bias = classifier.bias is not None
    out += struct.pack("<2IB", classifier.C, classifier.F, int(has_bias)) + _f64(classifier.theta)
    return out + (_f64(classifier.bias) if has_bias else b"")


def save_model(path, model_or_pooling, classifier=None):
    if isinstance(model_or_pooling, ModelParams):
        pooling, classifier = model_or_pooling.pooling, model_or_pooling.classifier
    else:
        pooling = model_or_pooling
    Path(path).write_bytes(model_bytes(pooling, classifier))


def load_model_parts(path):
    """Return ``(pooling, classifier)``; the classifier is None for partial models."""
    r = _Reader(_read(path), f"model file {path}")
    r.magic(MODEL_MAGIC)
    pooling = _read_pooling(r)
    C, F = r.u32(2)
    has_bias = r.take(1)[0]
    if has_bias not in (0, 1):
        raise FormatError("bias flag must be 0 or 1", r.pos - 1)
    classifier = None
    if C or F:
        theta = r.f64(C * F).reshape(C, F)
        bias = r.f64(C) if has_bias else None
        try:
            classifier = ClassifierParams(theta, bias)
        except ValueError as exc:
            raise FormatError(f"invalid classifier block: {exc}") from exc
    r.done()
    return pooling, classifier


def load_model(path):
    pooling, classifier = load_model_parts(path)
    if classifier is None:
        raise FormatError(f"model file {path} carries no classifier")
    try:
        return ModelParams(pooling, classifier)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


# -- PGM, CSV and manifests ------------------------------------------------------

def to_gray(values):
    """Map weights in [0, 1] to bytes with round-half-up of 255 * v."""
    return np.floor(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, image):
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = to_gray(image)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_pgm(path):
    data = _read(path)
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path} is not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    pixels = data[len(data) - w * h:]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


TRACE_FIELDS = ("iteration", "objective", "data_loss", "theta_l2", "w_l2", "smoothness",
                "clamp_count")


def write_trace_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for r in rows:
            writer.writerow([r.iteration, repr(r.objective), repr(r.data_loss), repr(r.theta_l2),
                             repr(r.w_l2), repr(r.smoothness), r.clamp_count])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [TraceRow(int(d["iteration"]), float(d["objective"]), float(d["data_loss"]),
                         float(d["theta_l2"]), float(d["w_l2"]), float(d["smoothness"]),
                         int(d["clamp_count"])) for d in reader]


def write_manifest(path, plan):
    with open(path, "w") as fh:
        fh.write(f"# K={plan.K} D={plan.D} redundant={int(plan.redundant)} seed={plan.seed}\n")
        for i, coords in enumerate(plan.assignments):
            fh.write(f"{i}: {' '.join(str(c) for c in coords)}\n")


def read_manifest(path):
    from .batching import BatchPlan

    header, assignments = {}, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line.startswith("#"):
                header.update(kv.split("=", 1) for kv in line[1:].split() if "=" in kv)
                continue
            if not line:
                continue
            index, _, rest = line.partition(":")
            if int(index) != len(assignments):
                raise FormatError(f"{path}:{lineno}: batch index out of order")
            assignments.append([int(c) for c in rest.split()])
    try:
        return BatchPlan(int(header["K"]), int(header["D"]), assignments,
                         bool(int(header["redundant"])), int(header["seed"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad manifest header") from exc


# -- CIFAR -------------------------------------------------------------------------

def cifar_record_size(fmt):
    if fmt not in CIFAR_FORMATS:
        raise FormatError(f"unknown CIFAR format {fmt!r}; expected one of {sorted(CIFAR_FORMATS)}")
    return CIFAR_FORMATS[fmt][0] + CIFAR_PIXELS


def load_cifar(path, fmt="cifar10", limit=None, label="fine"):
    """Read a CIFAR binary batch into (n, 3, 32, 32) floats in [0, 1] and labels.

    CIFAR-100 records carry (coarse, fine) label bytes; ``label`` selects
    which one is returned.
    """
    n_labels, n_classes = CIFAR_FORMATS.get(fmt, (None, None))
    size = cifar_record_size(fmt)
    raw = _read(path)
    if len(raw) % size:
        raise FormatError(
            f"{path}: size {len(raw)} is not a multiple of the {size}-byte {fmt} record",
            len(raw) - len(raw) % size)
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, size)
    if limit is not None:
        records = records[:limit]
    if fmt == "cifar100":
        if label == "coarse":
            labels, n_classes = records[:, 0], 20
        else:
            labels = records[:, 1]
    else:
        labels = records[:, 0]
    bad = np.flatnonzero(labels >= n_classes)
    if bad.size:
        raise FormatError(f"{path}: label {labels[bad[0]]} out of range for {fmt}",
                          int(bad[0]) * size)
    pixels = records[:, n_labels:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return pixels, labels.astype(np.int64)


def write_cifar(path, images, labels, fmt="cifar10", coarse=None):
    """Write (n, 3, 32, 32) images in [0, 1] (or uint8) as a CIFAR binary batch."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    n = images.shape[0]
    labels = np.asarray(labels, dtype=np.uint8).reshape(n, 1)
    if fmt == "cifar100":
        coarse = np.zeros_like(labels) if coarse is None else np.asarray(coarse, np.uint8).reshape(n, 1)
        labels = np.hstack([coarse, labels])
    Path(path).write_bytes(np.hstack([labels, images.reshape(n, -1)]).tobytes())
