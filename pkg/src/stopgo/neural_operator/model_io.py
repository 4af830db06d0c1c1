"""Self-describing model container.

Layout::

    STOPGO-MODEL <version>\\n
    <one-line JSON header, sorted keys>\\n
    <little-endian float64 payload>

The header lists every array (name, shape) in payload order, the network
structure, metadata and the payload's SHA-256.  No timestamps are written,
so identical models give identical files.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from ..errors import ModelFileError
from .deeponet import DeepOperatorModel, KernelPINN
from .network import DenseNetwork

MAGIC = b"STOPGO-MODEL"
VERSION = 1


def _arrays(model):
    out = []
    if isinstance(model, KernelPINN):
        nets = {"net": model.net}
    else:
        nets = {"branch": model.branch, "trunk": model.trunk}
    for prefix, net in nets.items():
        for k, a in enumerate(net.params):
            out.append((f"{prefix}.{k}", a))
    for key in sorted(model.norm):
        out.append((f"norm.{key}", model.norm[key]))
    return out


def save_model(model, path):
    arrays = _arrays(model)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    header = {
        "kind": model.kind,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "meta": model.meta,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    if isinstance(model, KernelPINN):
        header.update(widths=model.net.widths, activation=model.net.activation, lambda2=model.lambda2)
    else:
        header.update(p=model.p, heads=model.heads, branch_widths=model.branch.widths,
                      trunk_widths=model.trunk.widths, activation=model.branch.activation)
    line = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" " + str(VERSION).encode() + b"\n")
        fh.write(line.encode() + b"\n")
        fh.write(payload)


def load_model(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc}") from exc
    first, sep, rest = raw.partition(b"\n")
    parts = first.split(b" ")
    if not sep or len(parts) != 2 or parts[0] != MAGIC:
        raise ModelFileError(f"{path} is not a model file")
    try:
        version = int(parts[1])
    except ValueError:
        raise ModelFileError(f"{path}: bad version field") from None
    if version != VERSION:
        raise ModelFileError(f"{path}: unsupported model file version {version} (expected {VERSION})")
    line, sep, payload = rest.partition(b"\n")
    try:
        header = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise ModelFileError(f"{path}: corrupt header") from None
    if not sep or len(payload) != header.get("payload_bytes"):
        raise ModelFileError(f"{path}: truncated payload ({len(payload)} of {header.get('payload_bytes')} bytes)")
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise ModelFileError(f"{path}: checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8").astype(float)
    arrays, pos = {}, 0
    for spec in header["arrays"]:
        size = int(np.prod(spec["shape"], dtype=int))
        arrays[spec["name"]] = flat[pos:pos + size].reshape(spec["shape"])
        pos += size

    def net(prefix, widths):
        params = [arrays[f"{prefix}.{k}"] for k in range(2 * (len(widths) - 1))]
        return DenseNetwork(widths, activation=header["activation"], params=params)

    norm = {n[5:]: a for n, a in arrays.items() if n.startswith("norm.")}
    try:
        if header["kind"] == "pinn":
            return KernelPINN(net("net", header["widths"]), header["lambda2"], norm, header["meta"])
        return DeepOperatorModel(net("branch", header["branch_widths"]), net("trunk", header["trunk_widths"]),
                                 header["p"], header["heads"], norm, header["kind"], header["meta"])
    except (KeyError, ValueError) as exc:
        raise ModelFileError(f"{path}: inconsistent header ({exc})") from exc
