"""Tests for the weight file format and the numpy network forward pass."""

import json
import struct
import zlib

import numpy as np
import pytest

from cdolab import (
    FormatError,
    InvalidParameterError,
    forward_f,
    forward_g,
    fraction_monotone,
    load_weights,
    save_weights,
)
from cdolab.nn_inference import (
    MAGIC,
    _conv1d_same,
    _expected_shapes,
    f_layer_spec,
    g_layer_spec,
)

G_RANGES = {"rho": (0.0, 0.999999), "beta": (-0.5, 1.2), "x0": (0.0, 6.0)}
F_RANGES = {"rho": (0.0, 0.999999), "beta": (-0.5, 1.2)}


def random_arrays(tag, k=None, seed=0, scale=0.3):
    spec = g_layer_spec() if tag == "g" else f_layer_spec(k)
    pairs = _expected_shapes(tag, spec, 3 if tag == "g" else 2)
    rng = np.random.default_rng(seed)
    return [(rng.normal(0.0, scale, ws).astype(np.float32),
             rng.normal(0.0, scale, bs).astype(np.float32)) for ws, bs in pairs]


def test_g_roundtrip_bitwise(tmp_path):
    arrays = random_arrays("g", seed=1)
    path = str(tmp_path / "g.nnw")
    save_weights(path, "g", arrays, G_RANGES)
    w = load_weights(path)
    assert w.tag == "g"
    assert w.header["dtype"] == "float32"
    assert w.header["input_layout"] == "seq"
    assert w.header["padding"] == "same"
    assert w.input_ranges["x0"] == pytest.approx((0.0, 6.0))
    assert len(w.arrays) == len(arrays)
    for (gw, gb), (ww, wb) in zip(w.arrays, arrays):
        # stored as float32; loader widens to float64 without changing values
        assert gw.dtype == np.float64 and gb.dtype == np.float64
        assert np.array_equal(gw.astype(np.float32), ww)
        assert np.array_equal(gb.astype(np.float32), wb)


def test_f_roundtrip_with_quotes(tmp_path):
    quotes = np.linspace(0.05, 0.005, 12)  # decimal CDS quotes, descending
    arrays = random_arrays("f", k=12, seed=2)
    path = str(tmp_path / "f.nnw")
    save_weights(path, "f", arrays, F_RANGES, quotes=quotes)
    w = load_weights(path)
    assert w.tag == "f"
    assert w.n_outputs == 12
    assert w.quotes == pytest.approx(quotes)


def test_save_rejects_wrong_shapes(tmp_path):
    arrays = random_arrays("g", seed=3)
    w2, b2 = arrays[2]
    arrays[2] = (w2[:, :-1], b2)
    with pytest.raises(InvalidParameterError):
        save_weights(str(tmp_path / "bad.nnw"), "g", arrays, G_RANGES)
    with pytest.raises(InvalidParameterError):
        save_weights(str(tmp_path / "bad.nnw"), "f", random_arrays("f", k=4), F_RANGES)


def test_load_rejects_corruption(tmp_path):
    path = str(tmp_path / "g.nnw")
    save_weights(path, "g", random_arrays("g", seed=4), G_RANGES)
    blob = bytearray(open(path, "rb").read())

    flipped = bytearray(blob)
    flipped[len(flipped) // 2] ^= 0x40  # payload bit flip -> checksum mismatch
    open(path, "wb").write(bytes(flipped))
    with pytest.raises(FormatError):
        load_weights(path)

    open(path, "wb").write(bytes(blob[:-13]))  # truncated
    with pytest.raises(FormatError):
        load_weights(path)

    open(path, "wb").write(b"NOTAMAGIC" + bytes(blob[9:]))
    with pytest.raises(FormatError):
        load_weights(path)


def rewrite_header(path, mutate):
    """Load a weight file, apply `mutate` to its header dict, re-checksum."""
    blob = open(path, "rb").read()
    hlen = struct.unpack("<I", blob[8:12])[0]
    header = json.loads(blob[12:12 + hlen])
    mutate(header)
    hb = json.dumps(header).encode()
    body = MAGIC + struct.pack("<I", len(hb)) + hb + blob[12 + hlen:-4]
    open(path, "wb").write(body + struct.pack("<I", zlib.crc32(body)))


def test_load_rejects_bad_header_fields(tmp_path):
    path = str(tmp_path / "g.nnw")

    def fresh():
        save_weights(path, "g", random_arrays("g", seed=5), G_RANGES)

    for mutate in (
        lambda h: h.update(tag="h"),
        lambda h: h.update(dtype="float64"),
        lambda h: h.update(padding="valid"),
        lambda h: h["layers"].pop(),
        lambda h: h["layers"][0].update(filters=17),
        lambda h: h["input_ranges"].pop("x0"),
    ):
        fresh()
        rewrite_header(path, mutate)
        with pytest.raises(FormatError):
            load_weights(path)

    fpath = str(tmp_path / "f.nnw")
    for mutate in (
        lambda h: h.update(quotes=h["quotes"][::-1]),      # ascending
        lambda h: h.update(quotes=[-q for q in h["quotes"]]),
        lambda h: h.pop("quotes"),
    ):
        save_weights(fpath, "f", random_arrays("f", k=6, seed=6), F_RANGES,
                     quotes=np.linspace(0.04, 0.01, 6))
        rewrite_header(fpath, mutate)
        with pytest.raises(FormatError):
            load_weights(fpath)


def test_conv1d_same_against_plain_loops():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 5))          # (batch, channels, length)
    w = rng.normal(size=(4, 3, 2))          # (filters, channels, kernel)
    b = rng.normal(size=4)
    got = _conv1d_same(x, w, b)
    pad = (w.shape[2] - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, w.shape[2] - 1 - pad)))
    want = np.empty((2, 4, 5))
    for n in range(2):
        for f in range(4):
            for l in range(5):
                acc = b[f]
                for c in range(3):
                    for t in range(w.shape[2]):
                        acc += xp[n, c, l + t] * w[f, c, t]
                want[n, f, l] = acc
    assert got == pytest.approx(want, abs=1e-12)


def test_forward_g_shapes_and_clamp(tmp_path):
    path = str(tmp_path / "g.nnw")
    save_weights(path, "g", random_arrays("g", seed=8), G_RANGES)
    w = load_weights(path)
    q = forward_g(w, 0.3, 0.1, 2.0)
    assert np.isscalar(q) or q.shape == ()
    assert q >= 0.0
    qv = forward_g(w, np.full(5, 0.3), 0.1, np.linspace(0.5, 4.0, 5))
    assert qv.shape == (5,)
    assert qv[0] == pytest.approx(float(q) if np.isclose(qv[0], q) else qv[0])

    # all-zero weights: the head outputs 0, the quote is 0^2
    zeros = [(np.zeros_like(w_), np.zeros_like(b_)) for w_, b_ in random_arrays("g")]
    save_weights(path, "g", zeros, G_RANGES)
    assert forward_g(load_weights(path), 0.5, 0.2, 1.0) == 0.0

    # a large negative head bias is clamped before squaring
    zeros[-1][1][:] = -3.0
    save_weights(path, "g", zeros, G_RANGES)
    assert forward_g(load_weights(path), 0.5, 0.2, 1.0) == 0.0


def test_forward_g_square_law(tmp_path):
    # zero conv/dense weights, head bias c: network output c, quote c^2
    path = str(tmp_path / "g.nnw")
    zeros = [(np.zeros_like(w_), np.zeros_like(b_)) for w_, b_ in random_arrays("g")]
    zeros[-1][1][:] = 0.07
    save_weights(path, "g", zeros, G_RANGES)
    assert forward_g(load_weights(path), 0.1, 0.0, 3.0) == pytest.approx(0.07**2, rel=1e-6)


def test_forward_f_shapes(tmp_path):
    quotes = np.linspace(0.05, 0.01, 8)
    path = str(tmp_path / "f.nnw")
    save_weights(path, "f", random_arrays("f", k=8, seed=9), F_RANGES, quotes=quotes)
    w = load_weights(path)
    x0 = forward_f(w, 0.3, 0.1)
    assert x0.shape == (8,)
    assert np.all(x0 >= 0)
    betas = np.linspace(-0.2, 0.9, 4)
    betas[0] = 0.1
    xb = forward_f(w, np.full((4,), 0.3), betas)
    assert xb.shape == (4, 8)
    assert xb[0] == pytest.approx(x0)


def test_fraction_monotone():
    vectors = np.array([
        [1.0, 2.0, 3.0],
        [1.0, 2.0, 1.5],
        [0.5, 0.5, 1.0],
    ])
    assert fraction_monotone(vectors) == pytest.approx(2 / 3)
    assert fraction_monotone(vectors, tol=0.5) == 1.0
    assert fraction_monotone(vectors[:1]) == 1.0


def test_forward_f_square_law(tmp_path):
    # zero weights + head bias sqrt(x0): the network returns exactly x0
    quotes = np.linspace(0.05, 0.0148, 10)
    x0_true = np.linspace(0.2, 4.7, 10)
    arrays = [(np.zeros_like(w_), np.zeros_like(b_)) for w_, b_ in random_arrays("f", k=10)]
    arrays[-1] = (arrays[-1][0], np.sqrt(x0_true).astype(np.float32))
    path = str(tmp_path / "f.nnw")
    save_weights(path, "f", arrays, F_RANGES, quotes=quotes)
    w = load_weights(path)
    out = forward_f(w, 0.4, 0.2)
    assert out == pytest.approx(x0_true, rel=1e-6)

    # the raw head's sign is immaterial: squares land on the same distances
    arrays[-1] = (arrays[-1][0], -np.sqrt(x0_true).astype(np.float32))
    save_weights(path, "f", arrays, F_RANGES, quotes=quotes)
    assert forward_f(load_weights(path), 0.4, 0.2) == pytest.approx(x0_true, rel=1e-6)
