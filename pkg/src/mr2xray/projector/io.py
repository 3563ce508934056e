"""On-disk formats for volumes and projection sets.

Volume: ``<name>.volh`` key=value header + ``<name>.vol`` raw f32le payload.
Projection set: a directory holding ``manifest.txt`` and ``view_<index>.img``
raw f32le payloads, one per pose.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from mr2xray.geometry import ConeBeamGeometry, Trajectory, ViewPose
from mr2xray.projector import ProjectionImage, ProjectionSet, Volume

VOLUME_FORMAT = "VOL1"
PSET_FORMAT = "PSET1"


def _fmt_vec(values):
    return ",".join(repr(float(v)) for v in values)


def _parse_kv(lines):
    out = {}
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed header line: {line!r}")
        out[key.strip()] = value.strip()
    return out


def write_volume(vol, path, meta=None):
    """Write ``path.volh`` + ``path.vol``; ``path`` may carry either suffix or none."""
    base = Path(path)
    if base.suffix in (".vol", ".volh"):
        base = base.with_suffix("")
    header = [
        f"format={VOLUME_FORMAT}",
        "dims=" + ",".join(str(n) for n in vol.dims),
        "spacing_mm=" + _fmt_vec(vol.spacing_mm),
        "origin_mm=" + _fmt_vec(vol.origin_mm),
        "dtype=f32le",
        "order=x-fastest",
    ]
    for k, v in (meta or {}).items():
        header.append(f"{k}={v}")
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".volh").write_text("\n".join(header) + "\n")
    vol.data.astype("<f4").tofile(base.with_suffix(".vol"))
    return base.with_suffix(".volh")


def read_volume(path):
    base = Path(path)
    if base.suffix in (".vol", ".volh"):
        base = base.with_suffix("")
    hdr = _parse_kv(base.with_suffix(".volh").read_text().splitlines())
    if hdr.get("dtype") != "f32le" or hdr.get("order") != "x-fastest":
        raise ValueError(f"unsupported volume encoding in {base}.volh")
    nx, ny, nz = (int(v) for v in hdr["dims"].split(","))
    raw = np.fromfile(base.with_suffix(".vol"), dtype="<f4")
    if raw.size != nx * ny * nz:
        raise ValueError(f"{base}.vol holds {raw.size} values, header says {nx * ny * nz}")
    spacing = tuple(float(v) for v in hdr["spacing_mm"].split(","))
    origin = tuple(float(v) for v in hdr["origin_mm"].split(","))
    return Volume(raw.reshape(nz, ny, nx), spacing, origin)


def read_volume_meta(path):
    base = Path(path)
    if base.suffix in (".vol", ".volh"):
        base = base.with_suffix("")
    return _parse_kv(base.with_suffix(".volh").read_text().splitlines())


def format_manifest(pset, meta=None):
    rows, cols = pset.images[0].data.shape
    lines = [
        f"format={PSET_FORMAT}",
        f"subject_id={pset.subject_id}",
        f"channel={pset.channel}",
        f"rows={rows}",
        f"cols={cols}",
        f"trajectory_label={pset.trajectory.label}",
    ]
    for k, v in (meta or {}).items():
        lines.append(f"{k}={v}")
    lines.append("[geometry]")
    lines.append(pset.geometry.to_text().rstrip("\n"))
    lines.append("[trajectory]")
    lines.append("index azimuth_deg inclination_deg")
    for i, pose in enumerate(pset.trajectory):
        lines.append(f"{i} {pose.azimuth_deg!r} {pose.inclination_deg!r}")
    return "\n".join(lines) + "\n"


def parse_manifest(text):
    """Split a projection-set manifest into (header dict, geometry, trajectory)."""
    sections = {"": [], "geometry": [], "trajectory": []}
    current = ""
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1]
            sections.setdefault(current, [])
            continue
        sections[current].append(line)
    header = _parse_kv(sections[""])
    geometry = ConeBeamGeometry.from_text("\n".join(sections["geometry"]))
    poses = []
    for line in sections["trajectory"]:
        parts = line.split()
        if not parts or parts[0] == "index":
            continue
        poses.append(ViewPose(float(parts[1]), float(parts[2])))
    trajectory = Trajectory(poses, label=header.get("trajectory_label", "custom"))
    return header, geometry, trajectory


def view_filename(index):
    return f"view_{index:04d}.img"


def write_projection_set(pset, directory, meta=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, im in enumerate(pset.images):
        im.data.astype("<f4").tofile(d / view_filename(i))
    (d / "manifest.txt").write_text(format_manifest(pset, meta))
    return d


def read_view(directory, index, rows, cols):
    raw = np.fromfile(Path(directory) / view_filename(index), dtype="<f4")
    if raw.size != rows * cols:
        raise ValueError(f"view {index} in {directory} has {raw.size} values, expected {rows * cols}")
    return raw.reshape(rows, cols)


def read_projection_set(directory):
    d = Path(directory)
    header, geometry, trajectory = parse_manifest((d / "manifest.txt").read_text())
    rows, cols = int(header["rows"]), int(header["cols"])
    images = [
        ProjectionImage(read_view(d, i, rows, cols), pose, geometry.geometry_id)
        for i, pose in enumerate(trajectory)
    ]
    return ProjectionSet(
        geometry, trajectory, images,
        subject_id=header.get("subject_id", ""), channel=header.get("channel", "xray"),
    )


def write_pgm(image, path, lo=None, hi=None):
    """Min-max windowed 16-bit binary PGM export for visual inspection."""
    a = np.asarray(image, dtype=np.float64)
    lo = a.min() if lo is None else lo
    hi = a.max() if hi is None else hi
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    px = np.clip(np.round((a - lo) * scale), 0, 65535).astype(">u2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n65535\n".encode("ascii"))
        fh.write(px.tobytes())
    return path


def read_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos].decode("ascii"))
    pos += 1
    if tokens[0] != "P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(blob[pos:], dtype=dtype, count=w * h).reshape(h, w)

