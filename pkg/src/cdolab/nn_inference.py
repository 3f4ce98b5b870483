"""Weight-file I/O and numpy inference for the two pricing networks.

The file format is the contract between this package and any trainer:

``magic`` (8 bytes, ``b"CDONNW01"``) — ``header_len`` (u32 LE) — JSON header
(UTF-8, exactly ``header_len`` bytes) — payload (f32 LE, row-major) —
``crc32`` (u32 LE over every preceding byte).

The header pins the architecture (layer list), the input normalisation
ranges, and for the distance network the fixed quote list it was trained
to invert.  The payload is the concatenation, in layer order, of each
layer's weight then bias: conv kernels as (filters, in_channels, kernel)
and dense matrices as (units_out, units_in).  Flattening between the conv
stack and the dense stack is channels-major: a (channels, length)
activation becomes a vector with the channel index varying slowest.

Both networks work in square-root space and square their raw outputs:

* tag ``"g"`` — (rho, beta, x0) -> one quote.  Input is the length-3
  sequence with one channel.  The final dense layer has 8 units; the quote
  is the squared, clamped-at-zero mean of those units.
* tag ``"f"`` — (rho, beta) -> initial distances, one per entry of the
  header's ``quotes`` list (decimal CDS quotes, sorted descending).  Each
  head unit is squared directly — the square already enforces x0 >= 0 —
  so a well-trained vector comes out nondecreasing.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidParameterError

MAGIC = b"CDONNW01"

# conv stack shared by both networks: (filters, kernel) pairs, all ReLU.
_G_CONV = ((16, 4), (32, 16), (64, 32), (128, 64))
_F_CONV = ((16, 2), (32, 16), (64, 32), (128, 64))
# dense stacks: hidden ReLU layers then a linear head.
_G_DENSE = (256, 128, 64, 8)
_G_INPUT_LEN = 3
_F_INPUT_LEN = 2


def g_layer_spec():
    """Header layer list for the point network."""
    layers = [
        {"type": "conv1d", "filters": f, "kernel": k, "activation": "relu"}
        for f, k in _G_CONV
    ]
    for i, u in enumerate(_G_DENSE):
        act = "linear" if i == len(_G_DENSE) - 1 else "relu"
        layers.append({"type": "dense", "units": u, "activation": act})
    return layers


def f_layer_spec(k: int):
    """Header layer list for the distance network with k quote outputs."""
    layers = [
        {"type": "conv1d", "filters": f, "kernel": kk, "activation": "relu"}
        for f, kk in _F_CONV
    ]
    for i, u in enumerate((4 * k, 2 * k, k)):
        act = "linear" if i == 2 else "relu"
        layers.append({"type": "dense", "units": u, "activation": act})
    return layers


@dataclass(frozen=True)
class NetworkWeights:
    """A parsed, validated weight file."""

    tag: str
    header: dict
    arrays: tuple  # ((w, b), ...) in layer order, as float64 for inference
    input_ranges: dict
    quotes: np.ndarray | None  # "f" only: the fixed quote list, descending

    @property
    def n_outputs(self) -> int:
        return self.arrays[-1][0].shape[0]


def _expected_shapes(tag: str, layer_spec, input_len: int):
    """Weight/bias shapes implied by a header layer list."""
    shapes = []
    channels = 1
    length = input_len
    dense_in = None
    for layer in layer_spec:
        if layer["type"] == "conv1d":
            if dense_in is not None:
                raise FormatError("conv layer after dense layer")
            f, k = int(layer["filters"]), int(layer["kernel"])
            shapes.append(((f, channels, k), (f,)))
            channels = f
        elif layer["type"] == "dense":
            if dense_in is None:
                dense_in = channels * length
            u = int(layer["units"])
            shapes.append(((u, dense_in), (u,)))
            dense_in = u
        else:
            raise FormatError(f"unknown layer type {layer['type']!r}")
    return shapes


def _validate_header(header: dict) -> None:
    tag = header.get("tag")
    if tag not in ("g", "f"):
        raise FormatError(f"unknown network tag {tag!r}")
    if header.get("dtype") != "float32":
        raise FormatError(f"unsupported payload dtype {header.get('dtype')!r}")
    if header.get("input_layout") != "seq":
        raise FormatError(f"unsupported input layout {header.get('input_layout')!r}")
    if header.get("padding") != "same":
        raise FormatError(f"unsupported padding {header.get('padding')!r}")
    ranges = header.get("input_ranges")
    need = ("rho", "beta", "x0") if tag == "g" else ("rho", "beta")
    if not isinstance(ranges, dict) or set(ranges) != set(need):
        raise FormatError(f"input_ranges must have keys {need}")
    for k, v in ranges.items():
        if len(v) != 2 or not (float(v[0]) < float(v[1])):
            raise FormatError(f"bad input range for {k}: {v}")
    if tag == "g":
        expect = g_layer_spec()
    else:
        quotes = header.get("quotes")
        if not isinstance(quotes, list) or len(quotes) < 2:
            raise FormatError("distance network header must carry its quotes list")
        q = np.asarray(quotes, dtype=np.float64)
        if not np.all(np.isfinite(q)) or np.any(q <= 0) or not np.all(np.diff(q) < 0):
            raise FormatError("quotes must be finite, positive and strictly decreasing")
        expect = f_layer_spec(len(quotes))
    if header.get("layers") != expect:
        raise FormatError(f"layer list does not match the '{tag}' architecture")


def save_weights(path: str, tag: str, arrays, input_ranges: dict,
                 quotes=None) -> None:
    """Write a weight file; ``arrays`` is ((w, b), ...) in layer order."""
    header = {
        "tag": tag,
        "dtype": "float32",
        "input_layout": "seq",
        "padding": "same",
        "input_ranges": {k: [float(v[0]), float(v[1])] for k, v in input_ranges.items()},
    }
    if tag == "g":
        header["layers"] = g_layer_spec()
        input_len = _G_INPUT_LEN
    elif tag == "f":
        if quotes is None:
            raise InvalidParameterError("distance network needs its quotes list")
        qs = [float(v) for v in np.asarray(quotes).ravel()]
        header["quotes"] = qs
        header["layers"] = f_layer_spec(len(qs))
        input_len = _F_INPUT_LEN
    else:
        raise InvalidParameterError(f"unknown network tag {tag!r}")
    _validate_header(header)
    shapes = _expected_shapes(tag, header["layers"], input_len)
    if len(arrays) != len(shapes):
        raise InvalidParameterError(f"expected {len(shapes)} layers, got {len(arrays)}")
    chunks = []
    for (w, b), (ws, bs) in zip(arrays, shapes):
        w = np.asarray(w, dtype=np.float32)
        b = np.asarray(b, dtype=np.float32)
        if w.shape != ws or b.shape != bs:
            raise InvalidParameterError(
                f"layer shape mismatch: got {w.shape}/{b.shape}, want {ws}/{bs}"
            )
        chunks.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def load_weights(path: str) -> NetworkWeights:
    """Read and validate a weight file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8:
        raise FormatError("weight file truncated")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic; not a network weight file")
    body, (crc_stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    crc = zlib.crc32(body) & 0xFFFFFFFF
    if crc != crc_stored:
        raise FormatError(f"weight file checksum mismatch (stored {crc_stored:#x}, computed {crc:#x})")
    (header_len,) = struct.unpack("<I", blob[len(MAGIC) : len(MAGIC) + 4])
    off = len(MAGIC) + 4
    if off + header_len > len(body):
        raise FormatError("weight file header overruns payload")
    try:
        header = json.loads(body[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unparseable weight header: {e}") from e
    _validate_header(header)
    tag = header["tag"]
    input_len = _G_INPUT_LEN if tag == "g" else _F_INPUT_LEN
    shapes = _expected_shapes(tag, header["layers"], input_len)
    payload = body[off + header_len :]
    expect_floats = sum(int(np.prod(ws)) + int(np.prod(bs)) for ws, bs in shapes)
    if len(payload) != 4 * expect_floats:
        raise FormatError(
            f"payload holds {len(payload) // 4} floats, architecture needs {expect_floats}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    if not np.all(np.isfinite(flat)):
        raise FormatError("weight payload contains non-finite values")
    arrays = []
    pos = 0
    for ws, bs in shapes:
        nw, nb = int(np.prod(ws)), int(np.prod(bs))
        w = flat[pos : pos + nw].reshape(ws).astype(np.float64)
        pos += nw
        b = flat[pos : pos + nb].reshape(bs).astype(np.float64)
        pos += nb
        arrays.append((w, b))
    quotes = None
    if tag == "f":
        quotes = np.asarray(header["quotes"], dtype=np.float64)
    return NetworkWeights(
        tag=tag,
        header=header,
        arrays=tuple(arrays),
        input_ranges={k: (float(v[0]), float(v[1])) for k, v in header["input_ranges"].items()},
        quotes=quotes,
    )


# --------------------------------------------------------------------------
# forward passes
# --------------------------------------------------------------------------


def _conv1d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """'same' 1-D convolution, x (B, C, L), w (F, C, k) -> (B, F, L)."""
    k = w.shape[2]
    pl = (k - 1) // 2
    pr = k - 1 - pl
    xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    return np.einsum("bclk,fck->bfl", win, w, optimize=True) + b[None, :, None]


def _forward(weights: NetworkWeights, seq: np.ndarray) -> np.ndarray:
    """Run the network on normalised sequences (B, L) -> raw outputs (B, U)."""
    x = seq[:, None, :]  # (B, 1, L)
    flat = None
    for layer, (w, b) in zip(weights.header["layers"], weights.arrays):
        if layer["type"] == "conv1d":
            x = _conv1d_same(x, w, b)
            x = np.maximum(x, 0.0)
        else:
            if flat is None:
                flat = x.reshape(x.shape[0], -1)  # channels-major
            flat = flat @ w.T + b
            if layer["activation"] == "relu":
                flat = np.maximum(flat, 0.0)
    return flat


def _normalise(value, rng):
    lo, hi = rng
    return (np.asarray(value, dtype=np.float64) - lo) / (hi - lo)


def forward_g(weights: NetworkWeights, rho, beta, x0):
    """Point-network quotes for broadcastable (rho, beta, x0) inputs."""
    if weights.tag != "g":
        raise InvalidParameterError(f"need a point network, got tag {weights.tag!r}")
    r_ = _normalise(rho, weights.input_ranges["rho"])
    b_ = _normalise(beta, weights.input_ranges["beta"])
    z_ = _normalise(x0, weights.input_ranges["x0"])
    r_, b_, z_ = np.broadcast_arrays(r_, b_, z_)
    shape = r_.shape
    seq = np.stack([r_.ravel(), b_.ravel(), z_.ravel()], axis=1)
    out = _forward(weights, seq)
    sq = np.maximum(out.mean(axis=1), 0.0)
    quotes = (sq * sq).reshape(shape)
    return float(quotes) if shape == () else quotes


def forward_f(weights: NetworkWeights, rho, beta):
    """Distance-network x0 vectors; returns (..., len(quotes)) distances.

    The k-th output is the initial distance implied for the k-th entry of
    the header's fixed quote list.  Raw head units are squared — no clamp,
    the square alone keeps the distances nonnegative.
    """
    if weights.tag != "f":
        raise InvalidParameterError(f"need a distance network, got tag {weights.tag!r}")
    r_ = _normalise(rho, weights.input_ranges["rho"])
    b_ = _normalise(beta, weights.input_ranges["beta"])
    r_, b_ = np.broadcast_arrays(r_, b_)
    shape = r_.shape
    seq = np.stack([r_.ravel(), b_.ravel()], axis=1)
    out = _forward(weights, seq)
    return (out * out).reshape(shape + (weights.n_outputs,))


def fraction_monotone(vectors: np.ndarray, tol: float = 0.0) -> float:
    """Share of vectors that are nondecreasing along the last axis.

    Distances for quotes sorted descending should come out increasing;
    this measures how often a trained network actually delivers that.
    """
    v = np.atleast_2d(vectors)
    ok = np.all(np.diff(v, axis=-1) >= -tol, axis=-1)
    return float(np.mean(ok))
