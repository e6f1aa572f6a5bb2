"""Binary scan/label formats, class maps, PLY export and checkpoints.

On-disk layouts:

* scan: packed little-endian ``float32 x4`` (x, y, z, intensity) per point
* labels: packed little-endian ``uint32`` per point, semantic id in the low
  16 bits, instance id in the high 16 bits
* predictions: packed little-endian ``uint16`` class id + ``float32``
  confidence per point
* checkpoint: little-endian ``uint64`` parameter count, then ``float32`` values
* class map: text, one ``<src> <dst>`` pair per line, ``#`` comments
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import IGNORE, LABEL_DTYPE, ClassSet, PointCloud, as_labels
from .errors import (
    CountMismatch,
    DuplicateSource,
    EmptyDataset,
    IncompleteMap,
    IoFailure,
    MalformedLine,
    MissingPaletteEntry,
    NonFiniteCoordinate,
    TruncatedFile,
    UnknownClassId,
    UnmappedClass,
)

SCAN_DTYPE = np.dtype("<f4")
LABEL_FILE_DTYPE = np.dtype("<u4")
PREDICTION_DTYPE = np.dtype([("label", "<u2"), ("confidence", "<f4")])

SCAN_RECORD = 16
LABEL_RECORD = 4


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, payload: bytes) -> None:
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# scans and labels


def read_scan(path) -> PointCloud:
    raw = _read_bytes(path)
    if len(raw) % SCAN_RECORD:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is not a multiple of 16")
    values = np.frombuffer(raw, dtype=SCAN_DTYPE).reshape(-1, 4)
    if not np.all(np.isfinite(values)):
        raise NonFiniteCoordinate(f"{path}: non-finite value in scan")
    return PointCloud(values.astype(np.float64))


def write_scan(cloud: PointCloud, path) -> None:
    _write_bytes(path, cloud.points.astype(SCAN_DTYPE).tobytes())


def read_labels(path, point_count: int, unlabeled_id: int | None = None) -> np.ndarray:
    """Read semantic labels; instance bits are dropped.

    With ``unlabeled_id`` set, points carrying that id come back as IGNORE.
    """
    raw = _read_bytes(path)
    if len(raw) != LABEL_RECORD * point_count:
        raise CountMismatch(
            f"{path}: {len(raw)} bytes for {point_count} points "
            f"(expected {LABEL_RECORD * point_count})"
        )
    values = np.frombuffer(raw, dtype=LABEL_FILE_DTYPE)
    labels = (values & 0xFFFF).astype(LABEL_DTYPE)
    if unlabeled_id is not None:
        labels[labels == unlabeled_id] = IGNORE
    return labels


def write_labels(labels, path, unlabeled_id: int = 0) -> None:
    """Write semantic labels with zero instance bits; IGNORE becomes ``unlabeled_id``."""
    labels = as_labels(labels)
    out = np.where(labels == IGNORE, unlabeled_id, labels)
    if np.any((out < 0) | (out > 0xFFFF)):
        raise ValueError("label ids must fit in 16 bits")
    _write_bytes(path, out.astype(LABEL_FILE_DTYPE).tobytes())


def read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    raw = _read_bytes(path)
    if len(raw) % PREDICTION_DTYPE.itemsize:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is not a multiple of 6")
    rec = np.frombuffer(raw, dtype=PREDICTION_DTYPE)
    return rec["label"].astype(LABEL_DTYPE), rec["confidence"].astype(np.float64)


def write_predictions(labels, confidence, path) -> None:
    labels = as_labels(labels)
    confidence = np.asarray(confidence, dtype=np.float64)
    if labels.shape != confidence.shape:
        raise CountMismatch("labels and confidences differ in length")
    rec = np.empty(labels.shape[0], dtype=PREDICTION_DTYPE)
    rec["label"] = labels
    rec["confidence"] = confidence
    _write_bytes(path, rec.tobytes())


def write_mask(mask, path) -> None:
    _write_bytes(path, np.asarray(mask, dtype=np.uint8).tobytes())


def read_mask(path) -> np.ndarray:
    return np.frombuffer(_read_bytes(path), dtype=np.uint8).copy()


# --------------------------------------------------------------------------
# class maps


@dataclass(frozen=True)
class ClassMap:
    entries: Mapping[int, int]
    name: str = ""
    _table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = {int(k): int(v) for k, v in dict(self.entries).items()}
        table = np.full(IGNORE + 1, -1, dtype=LABEL_DTYPE)
        for src, dst in entries.items():
            if not (0 <= src <= IGNORE and 0 <= dst <= IGNORE):
                raise ValueError(f"class map entry {src}->{dst} outside 16 bits")
            table[src] = dst
        table[IGNORE] = IGNORE
        table.flags.writeable = False
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "_table", table)

    def __getitem__(self, src: int) -> int:
        return self.entries[int(src)]

    def __len__(self) -> int:
        return len(self.entries)

    def then(self, other: "ClassMap") -> "ClassMap":
        """The map ``other(self(x))``. Targets missing from ``other`` raise."""
        out = {}
        for src, mid in self.entries.items():
            if mid == IGNORE:
                out[src] = IGNORE
            elif mid in other.entries:
                out[src] = other.entries[mid]
            else:
                raise UnmappedClass(f"{mid} (from {src}) not in {other.name or 'map'}")
        return ClassMap(out, name=f"{self.name}+{other.name}".strip("+"))

    def check(self, source: ClassSet | None = None, target: ClassSet | None = None) -> None:
        if source is not None:
            missing = [c for c in source.ids if c not in self.entries]
            if missing:
                raise IncompleteMap(f"no target for source classes {missing}")
        if target is not None:
            bad = sorted(
                {d for d in self.entries.values() if d != IGNORE and d not in target}
            )
            if bad:
                raise UnknownClassId(f"targets {bad} not in the target class set")

    def to_text(self) -> str:
        lines = [f"# {self.name}"] if self.name else []
        for src in sorted(self.entries):
            dst = self.entries[src]
            lines.append(f"{src} {'ignore' if dst == IGNORE else dst}")
        return "\n".join(lines) + "\n"


def _parse_id(token: str, lineno: int) -> int:
    if token.lower() == "ignore":
        return IGNORE
    try:
        value = int(token)
    except ValueError:
        raise MalformedLine(f"line {lineno}: {token!r} is not an integer") from None
    if not 0 <= value <= IGNORE:
        raise MalformedLine(f"line {lineno}: id {value} outside [0, 65535]")
    return value


def parse_class_map(text: str, name: str = "", source: ClassSet | None = None) -> ClassMap:
    """Parse ``src dst`` lines. ``dst`` may be ``ignore``."""
    entries: dict[int, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 2:
            raise MalformedLine(f"line {lineno}: expected '<src> <dst>', got {line!r}")
        src, dst = (_parse_id(p, lineno) for p in parts)
        if src in entries:
            raise DuplicateSource(f"line {lineno}: source id {src} mapped twice")
        entries[src] = dst
    cmap = ClassMap(entries, name=name)
    if source is not None:
        cmap.check(source=source)
    return cmap


def load_class_map(path, source: ClassSet | None = None) -> ClassMap:
    text = _read_bytes(path).decode("utf-8")
    return parse_class_map(text, name=Path(path).stem, source=source)


def apply_class_map(labels, cmap: ClassMap) -> np.ndarray:
    labels = as_labels(labels)
    if labels.size and (labels.min() < 0 or labels.max() > IGNORE):
        raise UnmappedClass("label outside the 16-bit range")
    out = cmap._table[labels]
    if np.any(out < 0):
        bad = np.unique(labels[out < 0])
        raise UnmappedClass(f"labels {bad.tolist()} have no mapping")
    return out.copy()


# --------------------------------------------------------------------------
# PLY


def export_ply(cloud: PointCloud, labels, palette: Mapping[int, tuple], path) -> None:
    """ASCII PLY with xyz floats and per-point uchar colours from ``palette``."""
    labels = as_labels(labels)
    if labels.shape[0] != cloud.count:
        raise CountMismatch(f"{cloud.count} points but {labels.shape[0]} labels")
    present = np.unique(labels)
    missing = [int(c) for c in present if int(c) not in palette]
    if missing:
        raise MissingPaletteEntry(f"no colour for classes {missing}")
    colors = np.zeros((labels.shape[0], 3), dtype=np.int64)
    for c in present:
        colors[labels == c] = np.clip(np.asarray(palette[int(c)], dtype=np.int64), 0, 255)
    header = (
        "ply\n"
        "format ascii 1.0\n"
        f"element vertex {cloud.count}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    xyz = cloud.xyz.astype(np.float32)
    rows = [
        f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}\n"
        for (x, y, z), (r, g, b) in zip(xyz.tolist(), colors.tolist())
    ]
    _write_bytes(path, (header + "".join(rows)).encode("ascii"))


def default_palette(classes: ClassSet) -> dict[int, tuple]:
    base = [
        (128, 64, 128), (70, 70, 70), (255, 200, 0), (0, 0, 230), (107, 142, 35),
        (220, 20, 60), (0, 255, 255), (255, 0, 255), (250, 170, 30), (152, 251, 152),
    ]
    palette = {cid: base[k % len(base)] for k, cid in enumerate(classes.ids)}
    palette[IGNORE] = (0, 0, 0)
    return palette


# --------------------------------------------------------------------------
# checkpoints and histograms


def save_params(params, path) -> None:
    params = np.asarray(params, dtype=np.float64).ravel()
    header = np.array([params.size], dtype="<u8").tobytes()
    _write_bytes(path, header + params.astype("<f4").tobytes())


def load_params(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise TruncatedFile(f"{path}: missing checkpoint header")
    (n,) = np.frombuffer(raw[:8], dtype="<u8")
    if len(raw) != 8 + 4 * int(n):
        raise TruncatedFile(f"{path}: header says {n} values, body has {len(raw) - 8} bytes")
    return np.frombuffer(raw[8:], dtype="<f4").astype(np.float64)


def write_histogram(counts: Mapping[int, int], path) -> None:
    text = "".join(f"{c} {int(n)}\n" for c, n in sorted(counts.items()))
    _write_bytes(path, text.encode("utf-8"))


def read_histogram(path) -> dict[int, int]:
    out = {}
    for lineno, line in enumerate(_read_bytes(path).decode("utf-8").splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 2:
            raise MalformedLine(f"line {lineno}: expected '<class-id> <count>'")
        out[int(parts[0])] = int(parts[1])
    return out


# --------------------------------------------------------------------------
# datasets on disk (velodyne/*.bin + labels/*.label)


def scan_paths(root) -> list[Path]:
    root = Path(root)
    scan_dir = root / "velodyne"
    if not scan_dir.is_dir():
        return []
    return sorted(scan_dir.glob("*.bin"))


def load_dataset(
    root,
    unlabeled_id: int | None = 0,
    class_map: ClassMap | None = None,
    with_labels: bool = True,
) -> list[tuple[PointCloud, np.ndarray | None]]:
    """Load every ``velodyne/NNNNNN.bin`` (and matching ``labels/NNNNNN.label``)."""
    paths = scan_paths(root)
    if not paths:
        raise EmptyDataset(f"no scans under {os.fspath(root)}/velodyne")
    out = []
    for scan_path in paths:
        cloud = read_scan(scan_path)
        labels = None
        if with_labels:
            label_path = Path(root) / "labels" / (scan_path.stem + ".label")
            labels = read_labels(label_path, cloud.count, unlabeled_id=unlabeled_id)
            if class_map is not None:
                labels = apply_class_map(labels, class_map)
        out.append((cloud, labels))
    return out


def save_dataset(root, samples, unlabeled_id: int = 0) -> None:
    root = Path(root)
    try:
        (root / "velodyne").mkdir(parents=True, exist_ok=True)
        (root / "labels").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create dataset under {root}: {exc}") from exc
    for k, (cloud, labels) in enumerate(samples):
        write_scan(cloud, root / "velodyne" / f"{k:06d}.bin")
        if labels is not None:
            write_labels(labels, root / "labels" / f"{k:06d}.label", unlabeled_id)
