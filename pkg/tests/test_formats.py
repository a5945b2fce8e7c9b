import struct

import numpy as np
import pytest

from learnpool import formats
from learnpool.batching import make_plan
from learnpool.errors import FormatError
from learnpool.features import Dictionary, WhitenTransform
from learnpool.pooling import PoolingWeights, init_pooling
from learnpool.training import ClassifierParams, ModelParams, TraceRow


def test_dictionary_roundtrip_bitwise(tmp_path, rng):
    d = Dictionary(rng.normal(size=(5, 12)))
    w = WhitenTransform(rng.normal(size=12), rng.normal(size=(12, 12)), 0.1)
    p = tmp_path / "d.bin"
    formats.save_dictionary(p, d, w)
    d2, w2 = formats.load_dictionary(p)
    assert d2.centroids.tobytes() == d.centroids.tobytes()
    assert w2.mean.tobytes() == w.mean.tobytes() and w2.matrix.tobytes() == w.matrix.tobytes()
    assert w2.epsilon == 0.1
    assert formats.dictionary_bytes(d2, w2) == p.read_bytes()


def test_dictionary_layout(rng):
    d = Dictionary(np.arange(6.0).reshape(2, 3))
    w = WhitenTransform(np.zeros(3), np.eye(3), 0.5)
    raw = formats.dictionary_bytes(d, w)
    assert raw[:8] == b"PCDICT01"
    assert struct.unpack("<2I", raw[8:16]) == (2, 3)
    assert np.frombuffer(raw[16:64], "<f8").tolist() == [0, 1, 2, 3, 4, 5]
    assert struct.unpack("<d", raw[-8:])[0] == 0.5
    assert len(raw) == 16 + 8 * (6 + 3 + 9 + 1)


def test_pooling_roundtrip_and_layout(tmp_path, rng):
    W = PoolingWeights(rng.uniform(size=(2, 6, 3)), 2, 3)
    p = tmp_path / "w.pool"
    formats.save_pooling(p, W)
    raw = p.read_bytes()
    assert raw[:8] == b"PCPOOL01" and struct.unpack("<4I", raw[8:24]) == (2, 2, 3, 3)
    # l-major, then position, then k
    assert struct.unpack("<d", raw[24 + 8 * (1 * 18 + 4 * 3 + 2):][:8])[0] == W.weights[1, 4, 2]
    assert formats.load_pooling(p).weights.tobytes() == W.weights.tobytes()


@pytest.mark.parametrize("bias", [True, False])
def test_model_roundtrip(tmp_path, rng, bias):
    W = PoolingWeights(rng.uniform(size=(4, 9, 2)), 3, 3)
    clf = ClassifierParams(rng.normal(size=(3, 8)), rng.normal(size=3) if bias else None)
    p = tmp_path / "m.model"
    formats.save_model(p, ModelParams(W, clf))
    m = formats.load_model(p)
    assert m.pooling.weights.tobytes() == W.weights.tobytes()
    assert m.classifier.theta.tobytes() == clf.theta.tobytes()
    assert (m.classifier.bias is None) == (not bias)
    assert formats.model_bytes(m.pooling, m.classifier) == p.read_bytes()


def test_partial_model_has_no_classifier(tmp_path, rng):
    p = tmp_path / "b.model"
    formats.save_model(p, init_pooling("constant", 1, 2, 2, 3))
    W, clf = formats.load_model_parts(p)
    assert clf is None and W.K == 3
    with pytest.raises(FormatError):
        formats.load_model(p)


@pytest.mark.parametrize("cut", [4, 20, 40])
def test_truncated_model_reports_offset(tmp_path, rng, cut):
    p = tmp_path / "m.model"
    formats.save_model(p, init_pooling("constant", 1, 2, 2, 3))
    p.write_bytes(p.read_bytes()[:cut])
    with pytest.raises(FormatError, match="offset"):
        formats.load_model_parts(p)


def test_bad_magic_and_trailing_bytes(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"PCPOOL02" + bytes(16))
    with pytest.raises(FormatError, match="magic"):
        formats.load_pooling(p)
    formats.save_pooling(p, init_pooling("constant", 1, 1, 1, 1))
    p.write_bytes(p.read_bytes() + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        formats.load_pooling(p)


# -- PGM ------------------------------------------------------------------------------

def test_gray_mapping():
    np.testing.assert_array_equal(formats.to_gray([0.0, 0.5, 1.0, 1 / 255]), [0, 128, 255, 1])


def test_pgm_roundtrip(tmp_path, rng):
    img = rng.uniform(size=(5, 7))
    p = tmp_path / "a.pgm"
    formats.write_pgm(p, img)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n7 5\n255\n") and len(raw) == len(b"P5\n7 5\n255\n") + 35
    np.testing.assert_array_equal(formats.read_pgm(p), formats.to_gray(img))


# -- trace CSV and manifest -----------------------------------------------------------------

def test_trace_csv_roundtrip(tmp_path):
    rows = [TraceRow(0, 1.25, 1.0, 0.1, 0.1, 0.05, 0), TraceRow(1, 0.1 + 0.2, 0.2, 0, 0, 0, 3)]
    p = tmp_path / "t.csv"
    formats.write_trace_csv(p, rows)
    assert p.read_text().splitlines()[0] == ",".join(formats.TRACE_FIELDS)
    assert formats.read_trace_csv(p) == rows


def test_manifest_roundtrip(tmp_path):
    plan = make_plan(8, 2, redundant=True, seed=9)
    p = tmp_path / "plan.txt"
    formats.write_manifest(p, plan)
    assert p.read_text().splitlines()[1] == "0: 0 1"
    back = formats.read_manifest(p)
    assert back.assignments == plan.assignments and back.redundant and back.seed == 9


# -- CIFAR -------------------------------------------------------------------------------------

def test_cifar10_roundtrip(tmp_path, rng):
    imgs = rng.integers(0, 256, (6, 3, 32, 32)).astype(np.uint8)
    labels = np.array([0, 9, 3, 3, 1, 2])
    p = tmp_path / "data_batch_1.bin"
    formats.write_cifar(p, imgs, labels)
    assert p.stat().st_size == 6 * 3073
    x, y = formats.load_cifar(p)
    np.testing.assert_array_equal(y, labels)
    np.testing.assert_array_equal(np.round(x * 255).astype(np.uint8), imgs)
    assert x.min() >= 0 and x.max() <= 1


def test_cifar_record_layout(tmp_path):
    rec = bytearray(3073)
    rec[0] = 7
    rec[1 + 1024 + 32 * 2 + 5] = 255   # green channel, row 2, col 5
    p = tmp_path / "r.bin"
    p.write_bytes(bytes(rec))
    x, y = formats.load_cifar(p)
    assert y[0] == 7 and x[0, 1, 2, 5] == 1.0 and x.sum() == 1.0


def test_cifar100_fine_and_coarse(tmp_path, rng):
    imgs = rng.integers(0, 256, (3, 3, 32, 32)).astype(np.uint8)
    p = tmp_path / "train.bin"
    formats.write_cifar(p, imgs, [99, 5, 42], fmt="cifar100", coarse=[19, 0, 7])
    assert formats.load_cifar(p, "cifar100")[1].tolist() == [99, 5, 42]
    assert formats.load_cifar(p, "cifar100", label="coarse")[1].tolist() == [19, 0, 7]


def test_cifar_limit_keeps_file_order(tmp_path, rng):
    p = tmp_path / "b.bin"
    formats.write_cifar(p, rng.uniform(size=(10, 3, 32, 32)), np.arange(10))
    x, y = formats.load_cifar(p, limit=4)
    assert y.tolist() == [0, 1, 2, 3] and len(x) == 4


def test_cifar_rejects_3072_bytes(tmp_path):
    p = tmp_path / "short.bin"
    p.write_bytes(bytes(3072))
    with pytest.raises(FormatError, match="not a multiple"):
        formats.load_cifar(p)


def test_cifar_rejects_bad_label(tmp_path):
    p = tmp_path / "bad.bin"
    rec = bytearray(3073 * 2)
    rec[3073] = 10
    p.write_bytes(bytes(rec))
    with pytest.raises(FormatError) as err:
        formats.load_cifar(p)
    assert err.value.offset == 3073


def test_unknown_cifar_format(tmp_path):
    with pytest.raises(FormatError):
        formats.cifar_record_size("svhn")
