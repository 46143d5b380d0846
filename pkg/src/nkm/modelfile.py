"""Binary model container.

Layout (all integers and floats little-endian)::

    b"NKM1"                      magic
    uint32                       header length in bytes
    header                       UTF-8 JSON, sorted keys, no whitespace
    payload                      float64 arrays, row-major, concatenated in
                                 the order of header["arrays"]

Each feature map is described in ``header["maps"]`` by
``{type, d, D|m, sigma, seed}`` plus the names of its payload arrays.
Nothing time- or host-dependent is written, so saving the same model twice
gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import StandardizationStats
from .features import NystromMap, RFFMap
from .network import Block, Network

MAGIC = b"NKM1"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


class ModelFileError(ValueError):
    pass


@dataclass(eq=False)
class ModelBundle:
    """A trained network with everything needed to score raw CSV rows."""

    network: Network
    stats: StandardizationStats
    labels: tuple[str, ...]
    label_column: str = "-1"
    has_header: bool = False
    feature_names: tuple[str, ...] | None = None


class _Writer:
    def __init__(self):
        self.arrays: list[dict] = []
        self.chunks: list[bytes] = []

    def add(self, name: str, arr) -> str:
        arr = np.ascontiguousarray(arr, dtype=_LE_F64)
        self.arrays.append({"name": name, "shape": list(arr.shape)})
        self.chunks.append(arr.tobytes(order="C"))
        return name


def map_header(fmap, prefix: str, w: _Writer) -> dict:
    if isinstance(fmap, RFFMap):
        return {
            "type": "rff", "d": fmap.d, "D": fmap.D, "sigma": fmap.sigma, "seed": fmap.seed,
            "zeta": w.add(f"{prefix}.zeta", fmap.zeta),
        }
    if isinstance(fmap, NystromMap):
        return {
            "type": "nystrom", "d": fmap.d, "m": fmap.m, "rank": fmap.rank,
            "sigma": fmap.sigma, "seed": fmap.seed,
            "prototypes": w.add(f"{prefix}.prototypes", fmap.prototypes),
            "lambda": w.add(f"{prefix}.lambda", fmap.lam),
            "U": w.add(f"{prefix}.U", fmap.U),
        }
    raise TypeError(f"cannot serialize map of type {type(fmap).__name__}")


def map_from_header(h: dict, arrays: dict[str, np.ndarray]):
    if h["type"] == "rff":
        zeta = arrays[h["zeta"]]
        if zeta.shape != (h["D"], h["d"]):
            raise ModelFileError(f"RFF payload shape {zeta.shape} disagrees with header")
        return RFFMap(zeta, float(h["sigma"]), int(h["seed"]))
    if h["type"] == "nystrom":
        return NystromMap(arrays[h["prototypes"]], arrays[h["lambda"]], arrays[h["U"]],
                          float(h["sigma"]), int(h["seed"]))
    raise ModelFileError(f"unknown map type {h['type']!r}")


def pack(header: dict, w: _Writer) -> bytes:
    header = dict(header, format_version=FORMAT_VERSION, arrays=w.arrays)
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(w.chunks)


def unpack(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if buf[:4] != MAGIC:
        raise ModelFileError("not an NKM1 model file (bad magic)")
    if len(buf) < 8:
        raise ModelFileError("truncated model file")
    (hlen,) = struct.unpack("<I", buf[4:8])
    try:
        header = json.loads(buf[8:8 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise ModelFileError(f"corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFileError(f"unsupported format version {header.get('format_version')}")
    arrays = {}
    off = 8 + hlen
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(buf):
            raise ModelFileError("truncated payload")
        arrays[spec["name"]] = np.frombuffer(buf, _LE_F64, nbytes // 8, off).reshape(shape).astype(np.float64)
        off += nbytes
    if off != len(buf):
        raise ModelFileError(f"{len(buf) - off} trailing bytes after payload")
    return header, arrays


def encode_model(bundle: ModelBundle) -> bytes:
    w = _Writer()
    net = bundle.network
    w.add("stats.mean", bundle.stats.mean)
    w.add("stats.std", bundle.stats.std)
    blocks = []
    for i, blk in enumerate(net.blocks):
        p = f"blocks.{i}"
        entry = {
            "m": blk.m, "d_in": blk.d_in, "d_out": blk.d_out, "pooling": blk.pooling,
            "freeze": blk.freeze,
            "V": w.add(f"{p}.V", blk.V),
            "b": w.add(f"{p}.b", blk.b),
            "map": map_header(blk.rff, p, w),
        }
        if blk.conv_filter is not None:
            entry["filter"] = w.add(f"{p}.filter", blk.conv_filter)
        blocks.append(entry)
    header = {
        "d": net.d, "Q": net.Q, "blocks": blocks,
        "W": w.add("W", net.W), "b": w.add("b", net.b),
        "labels": list(bundle.labels),
        "label_column": str(bundle.label_column),
        "has_header": bool(bundle.has_header),
        "feature_names": list(bundle.feature_names) if bundle.feature_names is not None else None,
    }
    return pack(header, w)


def decode_model(buf: bytes) -> ModelBundle:
    header, arrays = unpack(buf)
    try:
        blocks = []
        for e in header["blocks"]:
            rff = map_from_header(e["map"], arrays)
            filt = arrays[e["filter"]] if "filter" in e else None
            blocks.append(Block(arrays[e["V"]], arrays[e["b"]], e["pooling"], rff, filt, bool(e["freeze"])))
        net = Network(blocks, arrays[header["W"]], arrays[header["b"]])
        stats = StandardizationStats(arrays["stats.mean"], arrays["stats.std"])
    except (KeyError, ValueError) as exc:
        raise ModelFileError(f"inconsistent model file: {exc}") from exc
    names = header.get("feature_names")
    return ModelBundle(net, stats, tuple(header["labels"]), header["label_column"],
                       header["has_header"], tuple(names) if names is not None else None)


def save_model(path, bundle: ModelBundle) -> None:
    Path(path).write_bytes(encode_model(bundle))


def load_model(path) -> ModelBundle:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFileError(f"cannot read model {path}: {exc}") from exc
    return decode_model(buf)


def encode_map(fmap) -> bytes:
    """Serialize a standalone feature map with the same container layout."""
    w = _Writer()
    return pack({"map": map_header(fmap, "map", w)}, w)


def decode_map(buf: bytes):
    header, arrays = unpack(buf)
    return map_from_header(header["map"], arrays)
