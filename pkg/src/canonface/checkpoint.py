"""Versioned binary model files with checksummed sections.

Layout:

    magic "CVFR" | version u32 LE | section... | fnv1a64 u64 LE

Each section is a 4-byte ASCII tag, a u64 LE payload length, and the
payload. The trailing checksum is FNV-1a 64 over every byte before it
(magic and version included). Tags in use: "NETW" holds one network
(a JSON architecture header then all parameters as little-endian float64
in documented order); the verification pipeline appends "FCNW" and
"VRFY" sections of its own.

Parameter order inside "NETW": layers in network order; per layer,
weights then biases; locally-connected weights as (q, u, v, p, i, j)
C-order, shared convolution as (q, p, i, j), dense as (out, in).
"""

from __future__ import annotations

import json
import struct
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from . import net
from ._kernels import FNV_OFFSET, fnv1a64
from .errors import DataError

MAGIC = b"CVFR"
VERSION = 1

TAG_NETWORK = b"NETW"
TAG_FCN = b"FCNW"
TAG_VERIFIER = b"VRFY"


class _ChecksumWriter:
    def __init__(self, f):
        self.f = f
        self.h = FNV_OFFSET

    def write(self, data) -> None:
        buf = np.frombuffer(data, dtype=np.uint8)
        if buf.size:
            self.h = fnv1a64(buf, self.h)
        self.f.write(data)


def save_checkpoint(path, sections: Sequence[Tuple[bytes, Iterable[bytes]]]) -> None:
    """Write sections (tag, iterable of payload chunks) with checksum."""
    with open(path, "wb") as f:
        w = _ChecksumWriter(f)
        w.write(MAGIC)
        w.write(struct.pack("<I", VERSION))
        for tag, chunks in sections:
            if len(tag) != 4:
                raise DataError(f"section tag must be 4 bytes, got {tag!r}")
            chunks = list(chunks)
            w.write(tag)
            w.write(struct.pack("<Q", sum(len(c) for c in chunks)))
            for c in chunks:
                w.write(c)
        f.write(struct.pack("<Q", int(w.h)))


def load_checkpoint(path) -> List[Tuple[bytes, bytes]]:
    """Read and verify a checkpoint; returns (tag, payload) in file order."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise DataError(f"{path}: not a model checkpoint")
    body, stored = blob[:-8], struct.unpack("<Q", blob[-8:])[0]
    h = fnv1a64(np.frombuffer(body, dtype=np.uint8), FNV_OFFSET)
    if int(h) != stored:
        raise DataError(f"{path}: checksum failure (corrupt checkpoint)")
    version = struct.unpack("<I", body[4:8])[0]
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    sections = []
    off = 8
    while off < len(body):
        if off + 12 > len(body):
            raise DataError(f"{path}: truncated section header")
        tag = body[off : off + 4]
        (length,) = struct.unpack("<Q", body[off + 4 : off + 12])
        off += 12
        if off + length > len(body):
            raise DataError(f"{path}: truncated section {tag!r}")
        sections.append((tag, body[off : off + length]))
        off += length
    return sections


# ---------------------------------------------------------------------------
# layer spec <-> JSON

_KIND_BY_TYPE = {
    net.LocalConv: "local_conv",
    net.Conv: "conv",
    net.Relu: "relu",
    net.Sigmoid: "sigmoid",
    net.MaxPool: "maxpool",
    net.Dropout: "dropout",
    net.ZeroPad: "zeropad",
    net.Dense: "dense",
}


def layer_to_dict(layer) -> dict:
    kind = _KIND_BY_TYPE.get(type(layer))
    if kind is None:
        raise DataError(f"unserializable layer {layer!r}")
    d = {"kind": kind}
    if isinstance(layer, (net.LocalConv, net.Conv)):
        d.update(k=layer.k, out_channels=layer.out_channels,
                 padding=layer.padding)
    elif isinstance(layer, net.MaxPool):
        d.update(cell=layer.cell)
    elif isinstance(layer, net.Dropout):
        d.update(rate=layer.rate)
    elif isinstance(layer, net.ZeroPad):
        d.update(pad_h=layer.pad_h, pad_w=layer.pad_w)
    elif isinstance(layer, net.Dense):
        d.update(out_dim=layer.out_dim)
    return d


def layer_from_dict(d: dict):
    kind = d.get("kind")
    try:
        if kind == "local_conv":
            return net.LocalConv(d["k"], d["out_channels"], d["padding"])
        if kind == "conv":
            return net.Conv(d["k"], d["out_channels"], d["padding"])
        if kind == "relu":
            return net.Relu()
        if kind == "sigmoid":
            return net.Sigmoid()
        if kind == "maxpool":
            return net.MaxPool(d["cell"])
        if kind == "dropout":
            return net.Dropout(d["rate"])
        if kind == "zeropad":
            return net.ZeroPad(d["pad_h"], d["pad_w"])
        if kind == "dense":
            return net.Dense(d["out_dim"])
    except KeyError as exc:
        raise DataError(f"layer dict {d!r} missing field {exc}") from None
    raise DataError(f"unknown layer kind {kind!r}")


def spec_to_dict(spec: net.NetworkSpec) -> dict:
    return {
        "input_shape": list(spec.input_shape),
        "layers": [layer_to_dict(l) for l in spec.layers],
    }


def spec_from_dict(d: dict) -> net.NetworkSpec:
    try:
        shape = tuple(int(x) for x in d["input_shape"])
        layers = tuple(layer_from_dict(ld) for ld in d["layers"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed network header: {exc}") from None
    return net.NetworkSpec(shape, layers)


# ---------------------------------------------------------------------------
# network payload

def network_chunks(network: net.Network) -> List[bytes]:
    """Payload chunks for one network: JSON header + float64 parameters."""
    header = json.dumps(spec_to_dict(network.spec)).encode("utf-8")
    chunks = [struct.pack("<I", len(header)), header]
    for layer in network.layers:
        for arr in layer.export_params():
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return chunks


def network_from_payload(payload: bytes, dtype=np.float32) -> net.Network:
    if len(payload) < 4:
        raise DataError("network section too short")
    (hlen,) = struct.unpack("<I", payload[:4])
    if 4 + hlen > len(payload):
        raise DataError("network section header overruns payload")
    try:
        spec = spec_from_dict(json.loads(payload[4 : 4 + hlen].decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed network header: {exc}") from None
    network = net.Network(spec, seed=0, dtype=dtype)
    off = 4 + hlen
    for layer in network.layers:
        shapes = [a.shape for a in layer.export_params()]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            if off + 8 * count > len(payload):
                raise DataError("network section parameters truncated")
            arrays.append(
                np.frombuffer(payload, dtype="<f8", count=count, offset=off)
                .reshape(shape)
            )
            off += 8 * count
        layer.import_params(arrays)
    if off != len(payload):
        raise DataError("network section has trailing bytes")
    return network


def save_network(path, network: net.Network,
                 extra_sections: Sequence[Tuple[bytes, Iterable[bytes]]] = ()) -> None:
    save_checkpoint(path, [(TAG_NETWORK, network_chunks(network))]
                    + list(extra_sections))


def load_network(path, dtype=np.float32) -> net.Network:
    for tag, payload in load_checkpoint(path):
        if tag == TAG_NETWORK:
            return network_from_payload(payload, dtype)
    raise DataError(f"{path}: no network section in checkpoint")
