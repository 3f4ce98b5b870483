"""Readers and writers for the shared on-disk formats.

The trainer talks to the pricing library only through files, so this module
is a complete, independent implementation of the three interop formats:

* network weight files — ``CDONNW01`` magic, u32 header length, canonical
  JSON header (``sort_keys``), float32 little-endian payload of each layer's
  weight then bias, and a trailing CRC-32 over everything before it;
* CDS training datasets — raw little-endian float64 rows of
  (rho, beta, x0, quote) plus a JSON sidecar;
* quote files — CSV with a ``spread_bps`` column, values in basis points.

Layer payload shapes: conv kernels are (filters, in_channels, kernel) and
dense matrices (units_out, units_in); the flatten between the conv and the
dense stack is channels-major.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, WeightFormatError

MAGIC = b"CDONNW01"

DATASET_FORMAT = "cdolab-cds-dataset"
DATASET_VERSION = 1
DATASET_COLUMNS = ("rho", "beta", "x0", "quote")

G_CONV = ((16, 4), (32, 16), (64, 32), (128, 64))
F_CONV = ((16, 2), (32, 16), (64, 32), (128, 64))
G_DENSE = (256, 128, 64, 8)
G_INPUT_LEN = 3
F_INPUT_LEN = 2


def g_layer_spec() -> list[dict]:
    layers = [
        {"type": "conv1d", "filters": f, "kernel": k, "activation": "relu"}
        for f, k in G_CONV
    ]
    for i, u in enumerate(G_DENSE):
        act = "linear" if i == len(G_DENSE) - 1 else "relu"
        layers.append({"type": "dense", "units": u, "activation": act})
    return layers


def f_layer_spec(k: int) -> list[dict]:
    layers = [
        {"type": "conv1d", "filters": f, "kernel": kk, "activation": "relu"}
        for f, kk in F_CONV
    ]
    for i, u in enumerate((4 * k, 2 * k, k)):
        act = "linear" if i == 2 else "relu"
        layers.append({"type": "dense", "units": u, "activation": act})
    return layers


def expected_shapes(layer_spec: list[dict], input_len: int):
    """(weight, bias) shape pairs implied by a header layer list."""
    shapes = []
    channels = 1
    dense_in = None
    for layer in layer_spec:
        if layer["type"] == "conv1d":
            f, k = int(layer["filters"]), int(layer["kernel"])
            shapes.append(((f, channels, k), (f,)))
            channels = f
        else:
            if dense_in is None:
                dense_in = channels * input_len
            u = int(layer["units"])
            shapes.append(((u, dense_in), (u,)))
            dense_in = u
    return shapes


@dataclass(frozen=True)
class WeightFile:
    """A parsed weight file: float32 arrays exactly as stored."""

    tag: str
    header: dict
    arrays: tuple  # ((w, b), ...) in layer order
    input_ranges: dict
    quotes: np.ndarray | None  # "f" only


def write_weight_file(path: str, tag: str, arrays, input_ranges: dict,
                      quotes=None) -> None:
    """Serialize trained layers into the shared weight format."""
    header = {
        "tag": tag,
        "dtype": "float32",
        "input_layout": "seq",
        "padding": "same",
        "input_ranges": {k: [float(v[0]), float(v[1])] for k, v in input_ranges.items()},
    }
    if tag == "g":
        header["layers"] = g_layer_spec()
        input_len = G_INPUT_LEN
    elif tag == "f":
        if quotes is None:
            raise ConfigError("the distance network needs its fixed quote list")
        qs = np.asarray(quotes, dtype=np.float64).ravel()
        if qs.size < 2 or not np.all(np.isfinite(qs)) or np.any(qs <= 0):
            raise ConfigError("quotes must be >= 2 finite positive values")
        if not np.all(np.diff(qs) < 0):
            raise ConfigError("quotes must be strictly decreasing")
        header["quotes"] = [float(v) for v in qs]
        header["layers"] = f_layer_spec(qs.size)
        input_len = F_INPUT_LEN
    else:
        raise ConfigError(f"unknown network tag {tag!r}")
    shapes = expected_shapes(header["layers"], input_len)
    if len(arrays) != len(shapes):
        raise ConfigError(f"expected {len(shapes)} layers, got {len(arrays)}")
    chunks = []
    for (w, b), (ws, bs) in zip(arrays, shapes):
        w = np.asarray(w, dtype=np.float32)
        b = np.asarray(b, dtype=np.float32)
        if w.shape != ws or b.shape != bs:
            raise ConfigError(f"layer shape mismatch: got {w.shape}/{b.shape}, want {ws}/{bs}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ConfigError("refusing to export non-finite weights")
        chunks.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def read_weight_file(path: str) -> WeightFile:
    """Parse and validate a weight file (used to load the frozen g)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise WeightFormatError(f"{path}: not a network weight file")
    body, (crc_stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise WeightFormatError(f"{path}: checksum mismatch")
    (hlen,) = struct.unpack("<I", blob[len(MAGIC) : len(MAGIC) + 4])
    off = len(MAGIC) + 4
    if off + hlen > len(body):
        raise WeightFormatError(f"{path}: header overruns payload")
    try:
        header = json.loads(body[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightFormatError(f"{path}: unparseable header: {e}") from e
    tag = header.get("tag")
    if tag not in ("g", "f"):
        raise WeightFormatError(f"{path}: unknown tag {tag!r}")
    for key, want in (("dtype", "float32"), ("input_layout", "seq"), ("padding", "same")):
        if header.get(key) != want:
            raise WeightFormatError(f"{path}: unsupported {key} {header.get(key)!r}")
    quotes = None
    if tag == "g":
        expect, input_len = g_layer_spec(), G_INPUT_LEN
    else:
        qs = header.get("quotes")
        if not isinstance(qs, list) or len(qs) < 2:
            raise WeightFormatError(f"{path}: distance network header lacks its quotes")
        quotes = np.asarray(qs, dtype=np.float64)
        if not np.all(np.isfinite(quotes)) or np.any(quotes <= 0) or not np.all(np.diff(quotes) < 0):
            raise WeightFormatError(f"{path}: quotes must be positive and strictly decreasing")
        expect, input_len = f_layer_spec(len(qs)), F_INPUT_LEN
    if header.get("layers") != expect:
        raise WeightFormatError(f"{path}: layer list does not match the '{tag}' architecture")
    ranges = header.get("input_ranges")
    need = ("rho", "beta", "x0") if tag == "g" else ("rho", "beta")
    if not isinstance(ranges, dict) or set(ranges) != set(need):
        raise WeightFormatError(f"{path}: input_ranges must have keys {need}")
    shapes = expected_shapes(header["layers"], input_len)
    payload = body[off + hlen :]
    n_floats = sum(int(np.prod(ws)) + int(np.prod(bs)) for ws, bs in shapes)
    if len(payload) != 4 * n_floats:
        raise WeightFormatError(
            f"{path}: payload holds {len(payload) // 4} floats, need {n_floats}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    if not np.all(np.isfinite(flat)):
        raise WeightFormatError(f"{path}: non-finite weight values")
    arrays, pos = [], 0
    for ws, bs in shapes:
        nw, nb = int(np.prod(ws)), int(np.prod(bs))
        arrays.append((flat[pos : pos + nw].reshape(ws).copy(),
                       flat[pos + nw : pos + nw + nb].reshape(bs).copy()))
        pos += nw + nb
    return WeightFile(
        tag=tag,
        header=header,
        arrays=tuple(arrays),
        input_ranges={k: (float(v[0]), float(v[1])) for k, v in ranges.items()},
        quotes=quotes,
    )


def read_dataset(path: str):
    """Load a (rho, beta, x0, quote) dataset; returns (rows, sidecar)."""
    base, _ = os.path.splitext(path)
    side = base + ".json"
    if not os.path.exists(side):
        raise WeightFormatError(f"missing dataset sidecar {side}")
    try:
        with open(side) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as e:
        raise WeightFormatError(f"unparseable dataset sidecar {side}: {e}") from e
    if meta.get("format") != DATASET_FORMAT:
        raise WeightFormatError(f"{side}: format={meta.get('format')!r} is not a CDS dataset")
    if meta.get("version") != DATASET_VERSION:
        raise WeightFormatError(f"{side}: unsupported version {meta.get('version')!r}")
    if list(meta.get("columns", [])) != list(DATASET_COLUMNS):
        raise WeightFormatError(f"{side}: unexpected columns {meta.get('columns')!r}")
    ranges = meta.get("ranges")
    if not isinstance(ranges, dict) or not {"rho", "beta", "x0"}.issubset(ranges):
        raise WeightFormatError(f"{side}: sidecar lacks rho/beta/x0 ranges")
    n_rows = int(meta["n_rows"])
    expect = n_rows * len(DATASET_COLUMNS) * 8
    if os.path.getsize(path) != expect:
        raise WeightFormatError(
            f"{path}: payload is {os.path.getsize(path)} bytes, sidecar implies {expect}"
        )
    rows = np.fromfile(path, dtype="<f8").reshape(n_rows, 4)
    if not np.all(np.isfinite(rows)):
        raise WeightFormatError(f"{path}: non-finite rows")
    # exact zeros are legitimate (no sampled defaults at safe corners)
    if np.any(rows[:, 3] < 0):
        raise WeightFormatError(f"{path}: quotes cannot be negative")
    return rows, meta


def read_quotes_csv(path: str) -> np.ndarray:
    """Fixed market quotes from a CSV with a spread_bps column (-> decimal)."""
    quotes = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "spread_bps" not in reader.fieldnames:
                raise WeightFormatError(f"{path}: need a header with a spread_bps column")
            for row in reader:
                quotes.append(float(row["spread_bps"]) * 1e-4)
    except ValueError as e:
        raise WeightFormatError(f"{path}: {e}") from e
    if len(quotes) < 2:
        raise WeightFormatError(f"{path}: need at least two quotes")
    q = np.asarray(quotes, dtype=np.float64)
    if not np.all(np.isfinite(q)) or np.any(q <= 0):
        raise WeightFormatError(f"{path}: quotes must be finite and positive")
    return q


def write_loss_csv(path: str, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
