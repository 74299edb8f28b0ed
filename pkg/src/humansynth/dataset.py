"""On-disk dataset: sharded sample files plus line-delimited JSON manifests.

Manifest layout (UTF-8, one JSON object per line)::

    {"kind": "header", "format_version": 1, "global_seed": 0,
     "config_hash": "<sha256 hex>", "stage": "conditions"}
    {"kind": "record", "sample_id": "3fa2...", "index": 0, ...}
    ...

The header is always the first line. Records are appended and flushed one
line at a time, so a crash can only leave a truncated last line, which
readers skip. Sample files live under ``<kind>/<sample_id[:2]>/`` (256
shards) and manifests store paths relative to the dataset root.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body_model import PoseParams, ShapeParams
from .camera import CameraSample, Extrinsics
from .denoise_filter import FilterVerdict
from .scene import Placement

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
HIST_BINS = 10
FOV_EDGES = (25.0, 120.0)

STATUS_CONDITIONED = "conditioned"
STATUS_GENERATED = "generated"
STATUS_FILTERED = "filtered"
STATUS_FAILED = "failed"


class ManifestError(ValueError):
    pass


class DuplicateRecordError(ManifestError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def make_sample_id(global_seed: int, index: int) -> str:
    return hashlib.sha256(f"{global_seed}:{index}".encode()).hexdigest()[:16]


def shard_path(kind: str, sample_id: str, suffix: str) -> str:
    """Relative path ``kind/ab/<id><suffix>`` with ``ab`` the id's first two hex digits."""
    return f"{kind}/{sample_id[:2]}/{sample_id}{suffix}"


def _floats(a):
    return None if a is None else np.asarray(a, dtype=np.float64).tolist()


@dataclass
class SampleRecord:
    sample_id: str
    index: int
    seed: int
    status: str = STATUS_CONDITIONED
    error: str | None = None
    image_path: str | None = None
    normal_path: str | None = None
    mask_path: str | None = None
    depth_path: str | None = None
    shape: ShapeParams | None = None
    pose: PoseParams | None = None
    camera: CameraSample | None = None
    extrinsics: Extrinsics | None = None
    joints3d: np.ndarray | None = None
    keypoints2d: np.ndarray | None = None
    visible: np.ndarray | None = None
    gender: str | None = None
    pose_class: str | None = None
    environment: str | None = None
    caption: str = ""
    negative: list = field(default_factory=list)
    placement: Placement | None = None
    verdict: FilterVerdict | None = None
    generate_ms: float = 0.0

    def validate(self):
        if not self.sample_id:
            raise ManifestError("sample_id is empty")
        if self.joints3d is not None or self.keypoints2d is not None:
            if self.joints3d is None or self.keypoints2d is None:
                raise ManifestError(f"{self.sample_id}: joints3d and keypoints2d must come together")
            if len(self.joints3d) != len(self.keypoints2d):
                raise ManifestError(f"{self.sample_id}: {len(self.keypoints2d)} keypoints for "
                                    f"{len(self.joints3d)} joints")

    @property
    def kept(self) -> bool:
        return self.verdict is not None and self.verdict.kept

    def paths(self) -> list:
        return [p for p in (self.image_path, self.normal_path, self.mask_path, self.depth_path) if p]

    def to_dict(self) -> dict:
        return {
            "kind": "record",
            "sample_id": self.sample_id, "index": self.index, "seed": self.seed,
            "status": self.status, "error": self.error,
            "image_path": self.image_path, "normal_path": self.normal_path,
            "mask_path": self.mask_path, "depth_path": self.depth_path,
            "shape": None if self.shape is None else {"betas": _floats(self.shape.betas),
                                                     "psi": _floats(self.shape.psi)},
            "pose": None if self.pose is None else {"thetas": _floats(self.pose.thetas),
                                                   "root_translation": _floats(self.pose.root_translation)},
            "camera": None if self.camera is None else self.camera.to_dict(),
            "extrinsics": None if self.extrinsics is None else self.extrinsics.to_dict(),
            "joints3d": _floats(self.joints3d),
            "keypoints2d": _floats(self.keypoints2d),
            "visible": None if self.visible is None else [bool(v) for v in self.visible],
            "gender": self.gender, "pose_class": self.pose_class,
            "environment": self.environment,
            "caption": self.caption, "negative": list(self.negative),
            "placement": None if self.placement is None else self.placement.to_dict(),
            "verdict": None if self.verdict is None else self.verdict.to_dict(),
            "generate_ms": self.generate_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        arr = lambda v: None if v is None else np.asarray(v, dtype=np.float64)
        shape = d.get("shape")
        pose = d.get("pose")
        return cls(
            sample_id=d["sample_id"], index=int(d["index"]), seed=int(d["seed"]),
            status=d.get("status", STATUS_CONDITIONED), error=d.get("error"),
            image_path=d.get("image_path"), normal_path=d.get("normal_path"),
            mask_path=d.get("mask_path"), depth_path=d.get("depth_path"),
            shape=None if shape is None else ShapeParams(shape["betas"], shape["psi"]),
            pose=None if pose is None else PoseParams(pose["thetas"], pose["root_translation"]),
            camera=None if d.get("camera") is None else CameraSample.from_dict(d["camera"]),
            extrinsics=None if d.get("extrinsics") is None else Extrinsics.from_dict(d["extrinsics"]),
            joints3d=arr(d.get("joints3d")),
            keypoints2d=arr(d.get("keypoints2d")),
            visible=None if d.get("visible") is None else np.asarray(d["visible"], dtype=bool),
            gender=d.get("gender"), pose_class=d.get("pose_class"),
            environment=d.get("environment"),
            caption=d.get("caption", ""), negative=list(d.get("negative", [])),
            placement=None if d.get("placement") is None else Placement.from_dict(d["placement"]),
            verdict=None if d.get("verdict") is None else FilterVerdict.from_dict(d["verdict"]),
            generate_ms=float(d.get("generate_ms", 0.0)),
        )


@dataclass
class ManifestHeader:
    global_seed: int
    config_hash: str
    stage: str = "conditions"
    format_version: int = FORMAT_VERSION
    joint_names: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": "header", "format_version": self.format_version,
                "global_seed": self.global_seed, "config_hash": self.config_hash,
                "stage": self.stage, "joint_names": list(self.joint_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestHeader":
        if d.get("kind") != "header":
            raise ManifestError("first line is not a manifest header")
        version = int(d.get("format_version", -1))
        if version != FORMAT_VERSION:
            raise ManifestError(f"unsupported manifest format version {version}")
        return cls(int(d["global_seed"]), str(d["config_hash"]), d.get("stage", "conditions"),
                   version, list(d.get("joint_names", [])))


@dataclass
class CorruptLine:
    line_no: int
    reason: str


def _parse_lines(path, on_error):
    """Yield (line_no, dict) for each record line; the header is line 1."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise ManifestError(f"{path}: missing header")
        try:
            header = ManifestHeader.from_dict(json.loads(first))
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: unreadable header: {exc}") from exc
        yield 1, header
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                if d.get("kind") != "record":
                    raise ValueError("not a record line")
            except ValueError as exc:
                on_error(CorruptLine(line_no, str(exc)))
                continue
            yield line_no, d


def read_header(path) -> ManifestHeader:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise ManifestError(f"{path}: missing header")
    return ManifestHeader.from_dict(json.loads(first))


def iter_records(path, errors: list | None = None):
    """Stream records in file order. Corrupt lines (for instance a line cut
    short by a crash) are skipped and collected in ``errors``."""
    def on_error(c):
        log.warning("%s:%d: skipping corrupt line (%s)", path, c.line_no, c.reason)
        if errors is not None:
            errors.append(c)

    gen = _parse_lines(path, on_error)
    next(gen)
    for line_no, d in gen:
        try:
            yield SampleRecord.from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            on_error(CorruptLine(line_no, f"bad record: {exc}"))


def read_all(path):
    """(header, records, corrupt_lines) for a whole manifest."""
    errors = []
    records = list(iter_records(path, errors))
    return read_header(path), records, errors


class Manifest:
    """Single-writer append handle."""

    def __init__(self, path, header: ManifestHeader, fsync=False):
        self.path = Path(path)
        self.header = header
        self.fsync = fsync
        self._ids = set()
        self._count = 0
        self._fh = None

    @classmethod
    def create(cls, path, header: ManifestHeader, overwrite=False, fsync=False) -> "Manifest":
        path = Path(path)
        if path.exists() and not overwrite:
            raise FileExistsError(f"manifest {path} already exists")
        path.parent.mkdir(parents=True, exist_ok=True)
        m = cls(path, header, fsync)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(header.to_dict()) + "\n")
        m._fh = open(path, "a", encoding="utf-8")
        return m

    @classmethod
    def open(cls, path, fsync=False) -> "Manifest":
        """Reopen for appending. A truncated last line is cut off first."""
        path = Path(path)
        header = read_header(path)
        m = cls(path, header, fsync)
        _drop_partial_tail(path)
        for rec in iter_records(path):
            m._ids.add(rec.sample_id)
            m._count += 1
        m._fh = open(path, "a", encoding="utf-8")
        return m

    def __len__(self):
        return self._count

    def __contains__(self, sample_id):
        return sample_id in self._ids

    def append(self, record: SampleRecord) -> None:
        if self._fh is None:
            raise ManifestError("manifest is closed")
        record.validate()
        if record.sample_id in self._ids:
            raise DuplicateRecordError(f"sample id {record.sample_id} already in {self.path}")
        line = canonical_json(record.to_dict()) + "\n"
        self._fh.write(line)
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())
        self._ids.add(record.sample_id)
        self._count += 1

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _drop_partial_tail(path):
    with open(path, "rb+") as fh:
        data = fh.read()
        if data and not data.endswith(b"\n"):
            cut = data.rfind(b"\n") + 1
            log.warning("%s: dropping %d bytes of a partial last line", path, len(data) - cut)
            fh.truncate(cut)


def append(manifest: Manifest, record: SampleRecord) -> None:
    manifest.append(record)


def _histogram(values, lo, hi, bins=HIST_BINS):
    counts = [0] * bins
    for v in values:
        k = int(math.floor((v - lo) / (hi - lo) * bins))
        counts[min(max(k, 0), bins - 1)] += 1
    edges = [lo + (hi - lo) * i / bins for i in range(bins + 1)]
    return {"edges": edges, "counts": counts}


def stats(path) -> dict:
    errors = []
    total = kept = dropped = failed = 0
    ious, fovs, env = [], [], {}
    for rec in iter_records(path, errors):
        total += 1
        if rec.verdict is not None:
            if rec.verdict.kept:
                kept += 1
            else:
                dropped += 1
            ious.append(rec.verdict.iou)
        if rec.status == STATUS_FAILED:
            failed += 1
        if rec.camera is not None:
            fovs.append(rec.camera.fov_deg)
        if rec.environment:
            env[rec.environment] = env.get(rec.environment, 0) + 1
    return {
        "total": total, "kept": kept, "dropped": dropped, "failed": failed,
        "iou_histogram": _histogram(ious, 0.0, 1.0),
        "fov_histogram": _histogram(fovs, *FOV_EDGES),
        "environments": dict(sorted(env.items())),
        "corrupt_lines": [{"line": c.line_no, "reason": c.reason} for c in errors],
    }


def merge(part_paths, out_path, overwrite=False) -> int:
    """Combine per-worker manifests into one, ordered by sample index.

    All parts must share the global seed and config hash. Returns the
    record count.
    """
    part_paths = [Path(p) for p in part_paths]
    if not part_paths:
        raise ManifestError("nothing to merge")
    headers = [read_header(p) for p in part_paths]
    h0 = headers[0]
    for p, h in zip(part_paths, headers):
        if (h.global_seed, h.config_hash, h.stage) != (h0.global_seed, h0.config_hash, h0.stage):
            raise ManifestError(f"{p}: header does not match {part_paths[0]}")
    # (index, part, line offset) keys keep memory proportional to record count, not size
    keys = []
    for k, p in enumerate(part_paths):
        with open(p, "rb") as fh:
            fh.readline()
            while True:
                pos = fh.tell()
                line = fh.readline()
                if not line:
                    break
                try:
                    d = json.loads(line)
                except ValueError:
                    log.warning("%s: skipping corrupt line at byte %d", p, pos)
                    continue
                if d.get("kind") == "record":
                    keys.append((int(d["index"]), d["sample_id"], k, pos))
    keys.sort()
    handles = [open(p, "rb") for p in part_paths]
    try:
        with Manifest.create(out_path, h0, overwrite=overwrite) as out:
            for _, _, k, pos in keys:
                handles[k].seek(pos)
                out.append(SampleRecord.from_dict(json.loads(handles[k].readline())))
            return len(out)
    finally:
        for fh in handles:
            fh.close()


def verify(path, root=None, kept_only=True) -> list:
    """Referential integrity: missing files and inconsistent records, as messages."""
    root = Path(root) if root is not None else Path(path).parent
    problems = []
    errors = []
    seen = set()
    for rec in iter_records(path, errors):
        if rec.sample_id in seen:
            problems.append(f"{rec.sample_id}: duplicate sample id")
        seen.add(rec.sample_id)
        try:
            rec.validate()
        except ManifestError as exc:
            problems.append(str(exc))
        if kept_only and not rec.kept:
            continue
        for rel in rec.paths():
            if not (root / rel).is_file():
                problems.append(f"{rec.sample_id}: missing file {rel}")
    problems.extend(f"line {c.line_no}: {c.reason}" for c in errors)
    return problems
