"""Pipeline stages: render conditions, generate images, filter by mask IoU.

Every stage streams an input manifest (or the sample index range) into an
output manifest under the run's output directory::

    conditions.jsonl -> generated.jsonl -> filtered.jsonl

Sample ``i`` draws all of its randomness from streams seeded with
``[global_seed, i, k]``, so outputs do not depend on the worker count or
on processing order. With several workers each one writes a part manifest
for the indices ``i % workers == k``; the parts are merged in index order.
"""
from __future__ import annotations

import json
import logging
import multiprocessing as mp
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import body_model as bm
from .camera import frontal_extrinsics, project, sample_camera
from .config import ConfigError, RunConfig
from .dataset import (STATUS_FAILED, STATUS_FILTERED, STATUS_GENERATED,
                      Manifest, ManifestHeader, SampleRecord, iter_records, make_sample_id,
                      merge, read_header, shard_path)
from .denoise_filter import FilterVerdict, filter_sample
from .prompting import ActionTable, EnvironmentTable, PromptSpec, default_negative, render_prompt
from .rasterizer import (depth_bytes, encode_normal_image, mask_png, normal_png, rasterize,
                         read_mask_png)
from .scene import PlacementError, load_scene, place_human, sample_scene_camera, voxelize
from .services import GenerateRequest, make_client
from . import toy

log = logging.getLogger(__name__)

STAGES = ("conditions", "generated", "filtered")
STAGE_INPUT = {"conditions": None, "generated": "conditions", "filtered": "generated"}


@dataclass
class StageReport:
    stage: str
    total: int = 0
    processed: int = 0
    failed: int = 0
    kept: int = 0
    dropped: int = 0
    skipped: bool = False
    seconds: float = 0.0

    def summary(self) -> str:
        if self.skipped:
            return f"{self.stage}: up to date ({self.total} records), use --force to redo"
        text = f"{self.stage}: {self.total} records, {self.processed} processed, {self.failed} failed"
        if self.stage == "filtered":
            text += f", kept={self.kept} dropped={self.dropped}"
        return text + f" ({self.seconds:.1f}s)"


def stream_seed(global_seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(global_seed), int(index), int(stream)])


def request_seed(global_seed: int, index: int) -> int:
    return int(stream_seed(global_seed, index, 1).integers(0, 2**31 - 1))


# --- per-process resources ---------------------------------------------------

def load_body(spec: str) -> bm.BodyModel:
    if spec == "toy":
        return toy.build_toy_body()
    try:
        return bm.load_model(spec)
    except FileNotFoundError as exc:
        raise ConfigError(f"body model not found: {spec}") from exc
    except bm.ModelFormatError as exc:
        raise ConfigError(f"body model {spec}: {exc}") from exc


def load_motions(spec: str):
    """None for procedural sources, else the list of motion dicts from a JSONL file."""
    if spec in ("procedural", "procedural:asymmetric"):
        return None
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"motion file not found: {spec}")
    motions = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                motions.append({
                    "thetas": np.asarray(d["thetas"], dtype=np.float64).reshape(-1, 3),
                    "betas": np.asarray(d.get("betas", []), dtype=np.float64),
                    "psi": np.asarray(d.get("psi", []), dtype=np.float64),
                    "gender": d.get("gender", "man"),
                    "pose_class": d.get("pose_class", "standing"),
                })
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"{spec}:{line_no}: bad motion line ({exc})") from exc
    if not motions:
        raise ConfigError(f"motion file {spec} is empty")
    return motions


def procedural_motion(model: bm.BodyModel, rng, asymmetric=False) -> dict:
    if tuple(model.joint_names) == toy.JOINT_NAMES and model.num_betas == 4 and model.num_expr == 2:
        return toy.random_motion(rng, asymmetric)
    thetas = rng.normal(0.0, 0.12, (model.num_joints, 3))
    thetas[0] = [0.0, rng.uniform(-0.6, 0.6), 0.0]
    if asymmetric:
        thetas[0, 2] = rng.choice([-1.0, 1.0]) * rng.uniform(0.45, 0.8)
    return {
        "gender": "man" if rng.random() < 0.5 else "woman",
        "pose_class": toy.POSE_CLASSES[int(rng.integers(0, len(toy.POSE_CLASSES)))],
        "thetas": thetas,
        "betas": rng.normal(0.0, 0.5, model.num_betas),
        "psi": rng.normal(0.0, 0.5, model.num_expr),
    }


class Context:
    """Resources shared by all samples a worker processes, built lazily."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.root = Path(config.output)
        self.model = load_body(config.model)
        self.motions = load_motions(config.motion)
        self.scene = None
        self.vox = None
        if config.scene:
            try:
                self.scene = load_scene(config.scene)
            except FileNotFoundError as exc:
                raise ConfigError(f"scene not found: {config.scene}") from exc
            self.vox = voxelize(self.scene, config.leaf_size)
        self.actions = ActionTable()
        self._environments = None
        self._gen = None
        self._seg = None

    def _client(self, endpoint):
        c = self.config
        return make_client(endpoint, retries=c.retries, timeout=c.timeout, max_in_flight=c.max_in_flight)

    @property
    def environments(self) -> EnvironmentTable:
        if self._environments is None:
            text = self._client(self.config.text) if self.config.text else None
            self._environments = EnvironmentTable(client=text)
        return self._environments

    @property
    def generator(self):
        if self._gen is None:
            self._gen = self._client(self.config.generator)
        return self._gen

    @property
    def segmenter(self):
        if self._seg is None:
            self._seg = self._client(self.config.segmenter)
        return self._seg

    def write(self, rel: str, data: bytes):
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)

    def read(self, rel: str) -> bytes:
        with open(self.root / rel, "rb") as fh:
            return fh.read()


# --- stage bodies --------------------------------------------------------------

def render_one(ctx: Context, index: int) -> SampleRecord:
    c = ctx.config
    sid = make_sample_id(c.seed, index)
    rec = SampleRecord(sid, index, request_seed(c.seed, index))
    rng = np.random.default_rng([c.seed, index])
    if ctx.motions is None:
        motion = procedural_motion(ctx.model, rng, asymmetric=c.motion.endswith(":asymmetric"))
    else:
        motion = ctx.motions[index % len(ctx.motions)]
    rec.gender, rec.pose_class = motion["gender"], motion["pose_class"]
    shape = bm.ShapeParams(motion["betas"], motion["psi"])
    pose = bm.PoseParams(motion["thetas"], np.zeros(3))
    body = bm.forward(ctx.model, shape, pose)

    scene_mesh = None
    if ctx.vox is not None:
        try:
            placement = place_human(body, ctx.vox, rng)
        except PlacementError as exc:
            rec.status, rec.error = STATUS_FAILED, f"placement: {exc}"
            rec.shape, rec.pose = shape, pose
            return rec
        rec.placement = placement
        pose = bm.PoseParams(pose.thetas, placement.translation)
        body = bm.forward(ctx.model, shape, pose)
        if not placement.collision_free:
            rec.status, rec.error = STATUS_FAILED, "placement: no collision-free position"
            rec.shape, rec.pose = shape, pose
            return rec
        cam, extr = sample_scene_camera(body, rng, c.width, c.height, c.ranges, scene=ctx.vox)
        scene_mesh = (ctx.scene.vertices, ctx.scene.faces)
        indoor = True
    else:
        cam = sample_camera(rng, c.width, c.height, c.ranges)
        extr = frontal_extrinsics(cam, body.joint("pelvis"))
        indoor = bool(rng.random() < 0.5)
    rec.shape, rec.pose, rec.camera, rec.extrinsics = shape, pose, cam, extr

    fb = rasterize(body, cam, extr, scene=scene_mesh)
    joints_cam = extr.world_to_camera(body.joints)
    pix, front = project(joints_cam, cam)
    inside = (pix[:, 0] >= 0) & (pix[:, 0] < c.width) & (pix[:, 1] >= 0) & (pix[:, 1] < c.height)
    rec.joints3d, rec.keypoints2d, rec.visible = joints_cam, pix, front & inside

    rec.environment = ctx.environments.pick(rng, indoor)
    action = ctx.actions.pick(rng, rec.pose_class)
    rec.caption = render_prompt(PromptSpec(rec.gender, action, rec.environment))
    rec.negative = default_negative(c.negative_extra)

    if not fb.mask.any():
        rec.status, rec.error = STATUS_FAILED, "body not visible in the frame"
        return rec
    rec.normal_path = shard_path("normal", sid, ".png")
    rec.mask_path = shard_path("mask", sid, ".png")
    rec.depth_path = shard_path("depth", sid, ".depth")
    region = None if c.background_normals else fb.mask
    ctx.write(rec.normal_path, normal_png(encode_normal_image(fb, region)))
    ctx.write(rec.mask_path, mask_png(fb.mask))
    ctx.write(rec.depth_path, depth_bytes(fb.depth))
    return rec


def generate_one(ctx: Context, rec: SampleRecord) -> SampleRecord:
    if rec.status == STATUS_FAILED:
        return rec
    c = ctx.config
    start = time.perf_counter()
    try:
        req = GenerateRequest(ctx.read(rec.normal_path), rec.caption, ", ".join(rec.negative),
                              steps=c.steps, width=c.width, height=c.height,
                              control_scale=c.control_scale, seed=rec.seed)
        image = ctx.generator.generate(req)
    except Exception as exc:
        rec.status, rec.error = STATUS_FAILED, f"generate: {type(exc).__name__}: {exc}"
        rec.generate_ms = (time.perf_counter() - start) * 1e3
        return rec
    rec.generate_ms = (time.perf_counter() - start) * 1e3
    rec.image_path = shard_path("image", rec.sample_id, ".png")
    ctx.write(rec.image_path, image)
    rec.status = STATUS_GENERATED
    return rec


def filter_one(ctx: Context, rec: SampleRecord) -> SampleRecord:
    if rec.status == STATUS_FAILED:
        return rec
    c = ctx.config
    try:
        gt = read_mask_png(ctx.root / rec.mask_path)
        image = ctx.read(rec.image_path)
    except (OSError, ValueError, TypeError) as exc:
        rec.status, rec.error = STATUS_FAILED, f"filter: {exc}"
        rec.verdict = FilterVerdict(0.0, False, None, c.threshold, str(exc))
        return rec
    rng = stream_seed(c.seed, rec.index, 2)
    rec.verdict = filter_sample(gt, image, ctx.segmenter, c.threshold, rng, c.erosion_radius)
    rec.status = STATUS_FILTERED
    if rec.verdict.error:
        rec.error = f"filter: {rec.verdict.error}"
    return rec


# --- stage driver --------------------------------------------------------------

def manifest_path(config: RunConfig, stage: str) -> Path:
    return Path(config.output) / f"{stage}.jsonl"


def _work_items(config: RunConfig, stage: str, worker: int, workers: int):
    if stage == "conditions":
        for i in range(worker, config.samples, workers):
            yield i, make_sample_id(config.seed, i)
    else:
        src = manifest_path(config, STAGE_INPUT[stage])
        for rec in iter_records(src):
            if rec.index % workers == worker:
                yield rec, rec.sample_id


def _process(ctx: Context, stage: str, item):
    if stage == "conditions":
        try:
            return render_one(ctx, item)
        except Exception as exc:  # per-sample failures never stop the batch
            log.exception("sample %d failed to render", item)
            c = ctx.config
            return SampleRecord(make_sample_id(c.seed, item), item, request_seed(c.seed, item),
                                status=STATUS_FAILED, error=f"render: {type(exc).__name__}: {exc}")
    if stage == "generated":
        return generate_one(ctx, item)
    return filter_one(ctx, item)


def _run_worker(config: RunConfig, stage: str, header: ManifestHeader, out_path, worker, workers,
                ctx: Context | None = None) -> int:
    out_path = Path(out_path)
    if out_path.exists():
        manifest = Manifest.open(out_path)
    else:
        manifest = Manifest.create(out_path, header)
    ctx = ctx or Context(config)
    n = 0
    with manifest:
        for item, sid in _work_items(config, stage, worker, workers):
            if sid in manifest:
                continue
            manifest.append(_process(ctx, stage, item))
            n += 1
    return n


def _worker_entry(args):
    config, stage, header, part, k, workers = args
    return _run_worker(config, stage, header, part, k, workers)


def _expected_ids(config: RunConfig, stage: str) -> set:
    if stage == "conditions":
        return {make_sample_id(config.seed, i) for i in range(config.samples)}
    return {rec.sample_id for rec in iter_records(manifest_path(config, STAGE_INPUT[stage]))}


def _is_complete(config: RunConfig, stage: str, out: Path) -> bool:
    if not out.exists():
        return False
    have = {rec.sample_id for rec in iter_records(out)}
    return have == _expected_ids(config, stage)


def run_stage(config: RunConfig, stage: str, force=False, ctx: Context | None = None) -> StageReport:
    """Run one stage. A stage whose output is complete for the same config is
    left alone unless ``force``; a partial output is resumed."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    config.validate()
    start = time.perf_counter()
    root = Path(config.output)
    out = manifest_path(config, stage)
    src = STAGE_INPUT[stage]
    if src is not None and not manifest_path(config, src).exists():
        raise FileNotFoundError(f"stage {stage} needs {manifest_path(config, src)}; run the previous stage first")

    chash = config.content_hash()
    if out.exists():
        h = read_header(out)
        if (h.config_hash != chash or h.global_seed != config.seed) and not force:
            raise ConfigError(f"{out} was produced with a different config; rerun with --force")
        if force:
            out.unlink()
        elif _is_complete(config, stage, out):
            report = StageReport(stage, skipped=True)
            report.total = sum(1 for _ in iter_records(out))
            return report

    ctx = ctx if ctx is not None else Context(config)  # fails fast on a bad model or scene path
    root.mkdir(parents=True, exist_ok=True)
    header = ManifestHeader(config.seed, chash, stage, joint_names=list(ctx.model.joint_names))
    if config.workers == 1:
        processed = _run_worker(config, stage, header, out, 0, 1, ctx)
    else:
        parts_dir = root / "parts"
        parts_dir.mkdir(exist_ok=True)
        parts = [parts_dir / f"{stage}.part{k:03d}.jsonl" for k in range(config.workers)]
        if force:
            for p in parts:
                p.unlink(missing_ok=True)
        jobs = [(config, stage, header, parts[k], k, config.workers) for k in range(config.workers)]
        with mp.get_context("fork").Pool(config.workers) as pool:
            processed = sum(pool.map(_worker_entry, jobs))
        merge(parts, out, overwrite=True)
        for p in parts:
            p.unlink()
        if not any(parts_dir.iterdir()):
            parts_dir.rmdir()

    report = StageReport(stage, processed=processed)
    for rec in iter_records(out):
        report.total += 1
        report.failed += rec.status == STATUS_FAILED
        if rec.verdict is not None:
            report.kept += rec.verdict.kept
            report.dropped += not rec.verdict.kept
    report.seconds = time.perf_counter() - start
    return report


def run_all(config: RunConfig, force=False) -> list:
    ctx = Context(config.validate())
    return [run_stage(config, stage, force, ctx) for stage in STAGES]
