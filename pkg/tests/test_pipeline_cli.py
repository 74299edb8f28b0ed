import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from humansynth import cli
from humansynth import dataset as ds
from humansynth.rasterizer import read_depth, read_mask_png

from conftest import FIXTURES

SMALL = ["--width", "64", "--height", "64"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def strip_latency(path):
    """Manifest lines with the timing fields removed."""
    out = []
    for line in Path(path).read_text().splitlines():
        d = json.loads(line)
        d.pop("generate_ms", None)
        if d.get("verdict"):
            d["verdict"].pop("latency_ms", None)
        out.append(json.dumps(d, sort_keys=True))
    return out


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "a"
    assert run("run-all", "-o", out, "-n", 12, "--seed", 5, *SMALL) == 0
    return out


def test_run_all_outputs(small_run):
    for stage in ("conditions", "generated", "filtered"):
        assert (small_run / f"{stage}.jsonl").exists()
    s = ds.stats(small_run / "filtered.jsonl")
    assert s["total"] == 12 and s["kept"] == 12 and s["failed"] == 0
    assert ds.verify(small_run / "filtered.jsonl") == []
    h, recs, _ = ds.read_all(small_run / "filtered.jsonl")
    assert h.global_seed == 5 and h.stage == "filtered"
    assert [r.index for r in recs] == list(range(12))
    r = recs[0]
    mask = read_mask_png(small_run / r.mask_path)
    depth = read_depth(small_run / r.depth_path)
    assert mask.shape == depth.shape == (64, 64)
    np.testing.assert_array_equal(np.isfinite(depth), mask)
    assert r.caption.startswith(f"A {r.gender} ")
    assert 25.0 <= r.camera.fov_deg <= 120.0


def test_deterministic_modulo_latency(small_run, tmp_path):
    assert run("run-all", "-o", tmp_path / "b", "-n", 12, "--seed", 5, *SMALL) == 0
    for stage in ("conditions", "generated", "filtered"):
        assert strip_latency(small_run / f"{stage}.jsonl") == strip_latency(tmp_path / "b" / f"{stage}.jsonl")
    rec = next(ds.iter_records(small_run / "filtered.jsonl"))
    assert (small_run / rec.image_path).read_bytes() == (tmp_path / "b" / rec.image_path).read_bytes()


def test_workers_match_single_worker(small_run, tmp_path):
    assert run("run-all", "-o", tmp_path / "w", "-n", 12, "--seed", 5, "-j", 2, *SMALL) == 0
    assert strip_latency(small_run / "filtered.jsonl") == strip_latency(tmp_path / "w" / "filtered.jsonl")
    assert not (tmp_path / "w" / "parts").exists()


def test_idempotent_and_force(tmp_path, capsys):
    out = tmp_path / "r"
    assert run("render-conditions", "-o", out, "-n", 3, *SMALL) == 0
    first = (out / "conditions.jsonl").read_bytes()
    capsys.readouterr()
    assert run("render-conditions", "-o", out, "-n", 3, *SMALL) == 0
    assert "up to date" in capsys.readouterr().out
    assert (out / "conditions.jsonl").read_bytes() == first
    # a different config must not silently reuse the output
    assert run("render-conditions", "-o", out, "-n", 3, "--seed", 9, *SMALL) == 2
    assert run("render-conditions", "-o", out, "-n", 3, "--seed", 9, "--force", *SMALL) == 0
    assert ds.read_header(out / "conditions.jsonl").global_seed == 9


def test_resume_after_crash(tmp_path):
    out = tmp_path / "r"
    assert run("render-conditions", "-o", out, "-n", 6, *SMALL) == 0
    full = strip_latency(out / "conditions.jsonl")
    p = out / "conditions.jsonl"
    lines = p.read_bytes().split(b"\n")
    # keep two records and half of the third, as a crash would
    p.write_bytes(b"\n".join(lines[:3]) + b"\n" + lines[3][:30])
    assert run("render-conditions", "-o", out, "-n", 6, *SMALL) == 0
    assert strip_latency(p) == full


def test_stage_order_enforced(tmp_path):
    assert run("generate", "-o", tmp_path / "x", "-n", 2, *SMALL) == 3


@pytest.mark.parametrize("extra", [
    ["--threshold", "1.01"],
    ["--steps", "0"],
    ["--model", "/nonexistent/body.npz"],
    ["--scale-bad"],
])
def test_config_errors_exit_2(tmp_path, extra):
    if extra == ["--scale-bad"]:
        cfg = tmp_path / "c.toml"
        cfg.write_text("[camera]\nfov_deg = [10.0, 150.0]\n")
        extra = ["--config", cfg]
    assert run("run-all", "-o", tmp_path / "x", "-n", 1, *SMALL, *extra) == 2


def test_allow_deviation_flag(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[camera]\nfov_deg = [10.0, 150.0]\n")
    assert run("render-conditions", "--config", cfg, "--allow-deviation", "-o", tmp_path / "x",
               "-n", 1, *SMALL) == 0


def test_steps_override_reaches_requests(tmp_path):
    assert run("run-all", "-o", tmp_path / "s", "-n", 2, "--steps", 1, *SMALL) == 0
    assert ds.stats(tmp_path / "s" / "filtered.jsonl")["kept"] == 2


def test_unreachable_endpoint_is_per_sample_failure(tmp_path):
    code = run("run-all", "-o", tmp_path / "u", "-n", 3, "--generator", "http://127.0.0.1:9",
               "--retries", 0, "--timeout", 0.5, *SMALL)
    assert code == 0
    s = ds.stats(tmp_path / "u" / "filtered.jsonl")
    assert s["failed"] == 3 and s["kept"] == 0
    rec = next(ds.iter_records(tmp_path / "u" / "filtered.jsonl"))
    assert rec.error.startswith("generate:")


def test_mirror_on_asymmetric_motion_drops(tmp_path):
    code = run("run-all", "-o", tmp_path / "m", "-n", 10, "--motion", FIXTURES / "asymmetric_motion.jsonl",
               "--generator", "mock:mirror", *SMALL)
    assert code == 0
    s = ds.stats(tmp_path / "m" / "filtered.jsonl")
    assert s["dropped"] >= 8


def test_scene_run(tmp_path):
    code = run("run-all", "-o", tmp_path / "s", "-n", 3, "--scene", FIXTURES / "room.obj", *SMALL)
    assert code == 0
    for r in ds.iter_records(tmp_path / "s" / "filtered.jsonl"):
        assert r.placement is not None and r.placement.collision_free
        assert r.kept


def test_stats_verify_merge_cli(small_run, tmp_path, capsys):
    assert run("stats", small_run / "filtered.jsonl") == 0
    assert "kept=12" in capsys.readouterr().out
    assert run("stats", "--json", small_run / "filtered.jsonl") == 0
    assert json.loads(capsys.readouterr().out)["kept"] == 12
    assert run("verify", small_run / "filtered.jsonl") == 0
    broken = tmp_path / "copy"
    shutil.copytree(small_run, broken)
    rec = next(ds.iter_records(broken / "filtered.jsonl"))
    (broken / rec.image_path).unlink()
    assert run("verify", broken / "filtered.jsonl") == 1
    assert run("merge", small_run / "filtered.jsonl", "-o", tmp_path / "m.jsonl") == 0
    assert run("merge", small_run / "filtered.jsonl", "-o", tmp_path / "m.jsonl") == 3
    assert run("stats", tmp_path / "missing.jsonl") == 3


def test_evaluate_identity_and_similarity(small_run, tmp_path, capsys):
    gt = small_run / "filtered.jsonl"
    out = tmp_path / "metrics.json"
    assert run("evaluate", "--pred", gt, "--gt", gt, "--out", out) == 0
    res = json.loads(out.read_text())
    for key in ("mpjpe", "pa_mpjpe", "pve", "pve_t_sc", "normal_mean"):
        assert res[key] == pytest.approx(0.0, abs=1e-9)
    assert res["miou"] == 1.0 and res["samples"] == 12
    assert "PA-MPJPE" in capsys.readouterr().out

    # predictions that differ from gt by a similarity transform
    rng = np.random.default_rng(0)
    h, recs, _ = ds.read_all(gt)
    pred = tmp_path / "pred.jsonl"
    with ds.Manifest.create(pred, h) as m:
        for r in recs:
            R = Rotation.random(random_state=rng).as_matrix()
            r.joints3d = 1.3 * r.joints3d @ R.T + rng.normal(size=3)
            r.mask_path = r.normal_path = None
            m.append(r)
    assert run("evaluate", "--pred", pred, "--gt", gt, "--out", out) == 0
    res = json.loads(out.read_text())
    assert res["pa_mpjpe"] == pytest.approx(0.0, abs=1e-9)
    assert res["mpjpe"] > 1.0


def test_print_config_and_serve_parser(capsys):
    assert run("print-config") == 0
    assert "[services]" in capsys.readouterr().out
    args = cli.build_parser().parse_args(["serve-mock", "--port", "0"])
    assert args.generator == "echo"


def test_convert_smplx(tmp_path):
    from conftest import two_joint_cylinder
    from humansynth import body_model as bm
    m = two_joint_cylinder()
    n = m.num_vertices
    shapedirs = np.random.default_rng(0).normal(size=(n, 3, 12))
    np.savez(tmp_path / "in.npz", v_template=m.template_vertices, f=m.faces,
             weights=m.skin_weights, J_regressor=m.joint_regressor.toarray(),
             kintree_table=np.array([[2 ** 32 - 1, 0], [0, 1]], dtype=np.int64), shapedirs=shapedirs)
    argv = ["convert-smplx", tmp_path / "in.npz", tmp_path / "out.npz",
            "--num-betas", 2, "--num-expr", 2, "--expr-offset", 10]
    # the default SMPL-X names for two joints give no torso joint
    assert run(*argv) == 2
    assert run(*argv, "--joint-names", "pelvis,spine") == 0
    out = bm.load_model(tmp_path / "out.npz")
    assert out.joint_names == ("pelvis", "spine") and out.num_expr == 2
    np.testing.assert_array_equal(out.expr_dirs[0], shapedirs[:, :, 10])
    assert run("convert-smplx", tmp_path / "nope.npz", tmp_path / "o.npz") == 3
