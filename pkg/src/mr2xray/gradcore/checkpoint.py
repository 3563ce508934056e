"""Checkpoint files: a text index followed by a raw f32le parameter payload.

Layout::

    PTCKPT1
    arch_hash <hex>
    meta <key> <value>
    param <name> <d0,d1,...> <byte offset> <byte count>
    end
    <payload>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "PTCKPT1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays, arch_hash, meta=None):
    lines = [MAGIC, f"arch_hash {arch_hash}"]
    for k, v in (meta or {}).items():
        if any(ch.isspace() for ch in str(k)) or "\n" in str(v):
            raise CheckpointError(f"meta entry {k!r} not representable")
        lines.append(f"meta {k} {v}")
    offset = 0
    blobs = []
    for name, a in arrays.items():
        if any(ch.isspace() for ch in name):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        blob = np.ascontiguousarray(a, dtype="<f4").tobytes()
        shape = ",".join(str(d) for d in np.shape(a)) or "scalar"
        lines.append(f"param {name} {shape} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    lines.append("end")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path, expected_arch_hash=None):
    """Return (arrays, arch_hash, meta)."""
    blob = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = blob.find(marker)
    if not blob.startswith(MAGIC.encode() + b"\n") or cut < 0:
        raise CheckpointError(f"{path} is not a {MAGIC} checkpoint")
    header = blob[:cut].decode("utf-8").splitlines()
    payload = blob[cut + len(marker):]
    arch_hash, meta, arrays = None, {}, {}
    for line in header[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "arch_hash":
            arch_hash = rest
        elif kind == "meta":
            k, _, v = rest.partition(" ")
            meta[k] = v
        elif kind == "param":
            name, shape, off, nbytes = rest.split(" ")
            off, nbytes = int(off), int(nbytes)
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split(","))
            arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=off)
            arrays[name] = arr.reshape(dims).astype(np.float32)
        else:
            raise CheckpointError(f"unknown header line {line!r}")
    if expected_arch_hash is not None and arch_hash != expected_arch_hash:
        raise CheckpointError(
            f"architecture hash mismatch: checkpoint {arch_hash}, expected {expected_arch_hash}"
        )
    return arrays, arch_hash, meta
