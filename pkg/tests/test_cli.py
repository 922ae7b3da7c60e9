import json
import math

import numpy as np
import pytest
import yaml

from orbitalsplat import gaussians as gs
from orbitalsplat import imageops
from orbitalsplat.cli import ConfigError, DEFAULTS, load_config, main, _merge_config

from conftest import CUBE_OBJ, make_textured_cube


@pytest.fixture(scope="module")
def models_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("models")
    (root / "cube_a.obj").write_text(CUBE_OBJ)
    (root / "cube_b.obj").write_text(CUBE_OBJ)
    make_textured_cube(root)
    return root


def run(argv):
    return main(argv)


class TestHelp:
    @pytest.mark.parametrize("cmd", ["dataset", "reconstruct", "mesh",
                                     "render-views", "evaluate"])
    def test_subcommand_help_exits_zero(self, cmd, capsys):
        with pytest.raises(SystemExit) as exc:
            run([cmd, "--help"])
        assert exc.value.code == 0
        assert "usage" in capsys.readouterr().out

    def test_invalid_flag_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["dataset", "--definitely-not-a-flag"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err


class TestConfig:
    def test_defaults_load(self):
        cfg = load_config(None)
        assert cfg["render"]["radius"] == 2.0

    def test_unknown_key_rejected_with_location(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("render:\n  radiu: 3\n")
        with pytest.raises(ConfigError) as exc:
            load_config(path)
        assert "render.radiu" in str(exc.value)

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("render:\n  size: 128\n")
        cfg = load_config(path)
        assert cfg["render"]["size"] == 128
        assert cfg["render"]["radius"] == DEFAULTS["render"]["radius"]

    def test_flag_overrides_file(self, tmp_path, models_dir):
        path = tmp_path / "c.yaml"
        path.write_text("render:\n  size: 128\n")
        out = tmp_path / "out"
        assert run(["--config", str(path), "dataset", str(models_dir), str(out),
                    "--size", "48"]) == 0
        resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
        assert resolved["render"]["size"] == 48

    def test_merge_rejects_scalar_for_section(self):
        with pytest.raises(ConfigError):
            _merge_config(DEFAULTS, {"render": 5})


class TestDataset:
    def test_three_models_144_images(self, models_dir, tmp_path):
        out = tmp_path / "ds"
        code = run(["dataset", str(models_dir), str(out), "--size", "48"])
        assert code == 0
        assert len(list(out.glob("*/??_*.png"))) == 144
        assert (out / "corpus_index.json").exists()

    def test_corrupt_model_fails_run_continues(self, tmp_path):
        models = tmp_path / "models"
        models.mkdir()
        (models / "good.obj").write_text(CUBE_OBJ)
        (models / "bad.obj").write_text("v 0 0 0\nf 1 2 3\n")
        out = tmp_path / "ds"
        code = run(["dataset", str(models), str(out), "--size", "48"])
        assert code == 1
        assert len(list((out / "good").glob("*.png"))) == 48
        assert not (out / "bad").exists() or not list((out / "bad").glob("*.png"))

    def test_chunk_indices_within_range(self, models_dir, tmp_path):
        out = tmp_path / "ds"
        code = run(["dataset", str(models_dir), str(out), "--size", "48",
                    "--n-chunks", "48"])
        assert code == 0
        index = json.loads((out / "corpus_index.json").read_text())
        assert all(0 <= m["chunk_index"] < 48 for m in index["models"])

    def test_rerun_from_resolved_config_is_bit_identical(self, models_dir, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(["dataset", str(models_dir), str(out1), "--size", "48"]) == 0
        resolved = out1 / "resolved_config.yaml"
        assert run(["--config", str(resolved), "dataset", str(models_dir), str(out2)]) == 0
        for p in sorted(out1.glob("*/*.png")):
            rel = p.relative_to(out1)
            assert p.read_bytes() == (out2 / rel).read_bytes(), rel

    def test_empty_models_dir_exit_two(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert run(["dataset", str(empty), str(tmp_path / "o")]) == 2


@pytest.fixture(scope="module")
def small_dataset(models_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cube_ds")
    code = run(["dataset", str(models_dir), str(out), "--size", "64",
                "--shading", "flat"])
    assert code == 0
    return out / "cube_tex"


class TestReconstruct:
    def test_ground_truth_smoke(self, small_dataset, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("reconstruct:\n  n_init: 128\n  snapshots: false\n")
        out = tmp_path / "rec"
        code = run(["--config", str(cfg), "reconstruct",
                    str(small_dataset / "xy_00.png"), str(out),
                    "--guidance", "ground-truth", str(small_dataset),
                    "--iterations", "3", "--no-preprocess"])
        assert code == 0
        assert (out / "cloud.bin").exists()
        trace = (out / "trace.csv").read_text().strip().splitlines()
        assert len(trace) == 4  # header + 3 rows

    def test_single_iteration_single_trace_row(self, small_dataset, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("reconstruct:\n  n_init: 64\n  snapshots: false\n")
        out = tmp_path / "rec1"
        code = run(["--config", str(cfg), "reconstruct",
                    str(small_dataset / "xy_00.png"), str(out),
                    "--guidance", "ground-truth", str(small_dataset),
                    "--iterations", "1", "--no-preprocess"])
        assert code == 0
        assert len((out / "trace.csv").read_text().strip().splitlines()) == 2

    def test_unreachable_remote_exits_three(self, small_dataset, tmp_path):
        out = tmp_path / "rec2"
        code = run(["reconstruct", str(small_dataset / "xy_00.png"), str(out),
                    "--guidance", "remote", "http://127.0.0.1:1",
                    "--iterations", "1"])
        assert code == 3


@pytest.fixture(scope="module")
def single_gaussian_cloud(tmp_path_factory):
    path = tmp_path_factory.mktemp("cloud") / "one.bin"
    cloud = gs.GaussianCloud(
        positions=np.zeros((1, 3)),
        log_scales=np.full((1, 3), math.log(0.2)),
        rotations=np.array([[1.0, 0, 0, 0]]),
        opacity_logits=np.array([math.log(0.9 / 0.1)]),
        colors=np.array([[0.8, 0.3, 0.2]]))
    gs.save_cloud(cloud, path)
    return path


class TestMeshAndRenderViews:
    def test_mesh_from_single_gaussian_is_sphere_like(self, single_gaussian_cloud, tmp_path):
        out = tmp_path / "mesh"
        code = run(["mesh", str(single_gaussian_cloud), str(out),
                    "--resolution", "48", "--iso", "0.3"])
        assert code == 0
        text = (out / "mesh.obj").read_text()
        assert "v " in text and "f " in text
        from orbitalsplat.meshio import parse_obj
        mesh = parse_obj(text)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert radii.std() / radii.mean() < 0.1  # sphere-like

    def test_render_views_cloud_48_pngs(self, single_gaussian_cloud, tmp_path):
        out = tmp_path / "views"
        code = run(["render-views", str(single_gaussian_cloud), str(out),
                    "--size", "48"])
        assert code == 0
        assert len(list(out.glob("*.png"))) == 48

    def test_render_views_mesh_input(self, models_dir, tmp_path):
        out = tmp_path / "views_mesh"
        code = run(["render-views", str(models_dir / "cube_a.obj"), str(out),
                    "--size", "48"])
        assert code == 0
        assert len(list(out.glob("*.png"))) == 48


class TestEvaluate:
    def test_report_and_exit_codes(self, tmp_path):
        rng = np.random.default_rng(0)
        pred, gt = tmp_path / "pred", tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        for i in range(3):
            img = rng.random((32, 32, 4))
            img[:, :, 3] = 1
            imageops.save_png(imageops.ImageRGBA(img), gt / f"v{i}.png")
            noisy = np.clip(img + rng.normal(0, 0.03, img.shape), 0, 1)
            noisy[:, :, 3] = 1
            imageops.save_png(imageops.ImageRGBA(noisy), pred / f"v{i}.png")
        out = tmp_path / "report.csv"
        code = run(["evaluate", str(pred), str(gt), "--out", str(out)])
        assert code == 0
        assert out.exists()
        (pred / "v1.png").write_bytes(b"broken")
        assert run(["evaluate", str(pred), str(gt), "--out", str(out)]) == 1


class TestEndpointEnv:
    def test_env_var_supplies_endpoint_default(self, monkeypatch):
        from orbitalsplat.cli import _endpoint_from, load_config
        cfg = load_config(None)
        monkeypatch.setenv("ORBITALSPLAT_ENDPOINT", "http://env.example:9")
        ep = _endpoint_from(cfg, None)
        assert ep is not None and ep.base_url == "http://env.example:9"
        # explicit URL wins over the environment
        ep = _endpoint_from(cfg, "http://flag.example:1")
        assert ep.base_url == "http://flag.example:1"
        monkeypatch.delenv("ORBITALSPLAT_ENDPOINT")
        assert _endpoint_from(cfg, None) is None
