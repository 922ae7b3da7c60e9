"""Command-line pipeline: dataset, reconstruct, mesh, render-views, evaluate.

Configuration precedence is CLI flags > config file (YAML) > built-in
defaults. Every run writes a resolved-config file with all effective values
so it can be reproduced exactly. Logs go to stderr; data to files.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import imageops, meshio, metrics, raster, reconstruct
from . import gaussians as gs
from .geometry import (CameraIntrinsics, DEFAULT_FOV_Y_DEG, DEFAULT_ORBIT_RADIUS,
                       generate_paper_poses, orbit_view_labels, pose_from_record)
from .guidance import GuidanceClient, ServiceEndpoint, TransportError
from .meshextract import bake_texture, extract_mesh, refine_texture
from .raster import RenderSettings, Shading

log = logging.getLogger("orbitalsplat")

ENDPOINT_ENV = "ORBITALSPLAT_ENDPOINT"

DEFAULTS = {
    "seed": 0,
    "jobs": 0,  # 0 = leave the worker count to the runtime
    "render": {
        "radius": DEFAULT_ORBIT_RADIUS,
        "size": raster.DEFAULT_RENDER_SIZE,
        "fov_y_deg": DEFAULT_FOV_Y_DEG,
        "shading": "textured",
        "n_validation": 0,
        "n_chunks": 1,
    },
    "preprocess": {
        "target_size": imageops.DEFAULT_TARGET_SIZE,
        "matte_threshold": imageops.DEFAULT_MATTE_THRESHOLD,
        "border_ratio": imageops.DEFAULT_BORDER_RATIO,
    },
    "reconstruct": {
        "iterations_ground_truth": 2000,
        "iterations_remote": 500,
        "n_init": 5000,
        "init_radius": 0.5,
        "lambda_rgb": 1.0,
        "lambda_mask": 0.5,
        "snapshots": True,
    },
    "mesh": {
        "resolution": 128,
        "iso": 1.0,
        "atlas_size": 1024,
        "refine_rounds": 0,
    },
    "evaluate": {
        "report_name": "report.csv",
    },
    "service": {
        "endpoint": "",
        "timeout": 30.0,
        "max_retries": 3,
    },
}


class ConfigError(ValueError):
    pass


def _merge_config(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} must be a section")
            out[key] = _merge_config(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path=None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    return _merge_config(DEFAULTS, raw)


def write_resolved_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(
        yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False))


def _apply_jobs(cfg: dict) -> None:
    jobs = int(cfg.get("jobs", 0))
    if jobs > 0:
        import numba

        numba.set_num_threads(jobs)


def _endpoint_from(cfg: dict, url: str | None) -> ServiceEndpoint | None:
    url = url or cfg["service"]["endpoint"] or os.environ.get(ENDPOINT_ENV, "")
    if not url:
        return None
    return ServiceEndpoint(base_url=url, timeout=float(cfg["service"]["timeout"]),
                           max_retries=int(cfg["service"]["max_retries"]))


def _intrinsics(cfg: dict, size: int | None = None) -> CameraIntrinsics:
    s = size or int(cfg["render"]["size"])
    return CameraIntrinsics(fov_y_deg=float(cfg["render"]["fov_y_deg"]), width=s, height=s)


def cmd_dataset(args, cfg) -> int:
    models_dir = Path(args.models_dir)
    out_dir = Path(args.out_dir)
    models = sorted(models_dir.glob("*.obj"))
    if not models:
        log.error("no .obj models found in %s", models_dir)
        return 2
    write_resolved_config(cfg, out_dir)

    intr = _intrinsics(cfg)
    settings = RenderSettings(shading=Shading(cfg["render"]["shading"]))
    manifests, failures = [], []
    for model in models:
        try:
            m = raster.render_dataset(model, out_dir / model.stem,
                                      radius=float(cfg["render"]["radius"]),
                                      intr=intr, settings=settings)
            manifests.append(m)
            log.info("rendered %s: %d views", model.stem, len(m.views))
            print(f"{model.stem}: ok ({len(m.views)} views)")
        except Exception as exc:
            failures.append((model.stem, str(exc)))
            log.error("model %s failed: %s", model.stem, exc)
            print(f"{model.stem}: FAILED ({exc})")

    n_validation = int(cfg["render"]["n_validation"])
    if manifests and n_validation < len(manifests):
        split = raster.assign_splits([m.model_id for m in manifests],
                                     n_validation, int(cfg["seed"]))
        for m in manifests:
            m.split = split[m.model_id]
    manifests = raster.chunk_manifests(manifests, int(cfg["render"]["n_chunks"]))
    for m in manifests:
        m.save(out_dir / m.model_id / "manifest.json")
    raster.write_corpus_index(out_dir / "corpus_index.json", manifests,
                              int(cfg["render"]["n_chunks"]), int(cfg["seed"]))
    print(f"models: {len(manifests)} ok, {len(failures)} failed")
    return 1 if failures else 0


def cmd_reconstruct(args, cfg) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)

    image = imageops.load_png(args.image)
    if args.no_preprocess:
        reference = imageops.alpha_matte(image, float(cfg["preprocess"]["matte_threshold"]))
    else:
        reference = imageops.standardize(
            image, int(cfg["preprocess"]["target_size"]),
            float(cfg["preprocess"]["matte_threshold"]),
            float(cfg["preprocess"]["border_ratio"]))

    mode, value = args.guidance
    radius = float(cfg["render"]["radius"])
    ref_pose = reconstruct.axis_view_poses(radius)[4][1]  # +Z view by convention
    rcfg = cfg["reconstruct"]

    if mode == "ground-truth":
        manifest = raster.DatasetManifest.load(Path(value) / "manifest.json")
        ref_pose = pose_from_record(manifest.views[0])
        provider = reconstruct.GroundTruthGuidance(manifest, value, ref_pose)
        iterations = args.iterations or int(rcfg["iterations_ground_truth"])
    elif mode == "remote":
        endpoint = _endpoint_from(cfg, value)
        client = GuidanceClient(endpoint)
        try:
            client.health()
        except TransportError as exc:
            log.error("remote guidance unreachable: %s", exc)
            return 3
        provider = reconstruct.RemoteGuidance(client)
        iterations = args.iterations or int(rcfg["iterations_remote"])
    else:
        log.error("unknown guidance mode %r", mode)
        return 2

    config = reconstruct.ReconstructionConfig(
        reference_pose=ref_pose,
        iterations=iterations,
        seed=int(cfg["seed"]),
        n_init=int(rcfg["n_init"]),
        init_radius=float(rcfg["init_radius"]),
        fov_y_deg=float(cfg["render"]["fov_y_deg"]),
        lambda_rgb=float(rcfg["lambda_rgb"]),
        lambda_mask=float(rcfg["lambda_mask"]),
        snapshot_dir=str(out_dir / "snapshots") if rcfg["snapshots"] else None,
    )
    try:
        cloud, trace = reconstruct.optimize(reference, provider, config)
    except reconstruct.ReconstructionError as exc:
        log.error("optimization aborted: %s", exc)
        (out_dir / "abort_diagnostics.json").write_text(
            json.dumps(exc.diagnostics, indent=2))
        return 1
    except TransportError as exc:
        log.error("remote guidance failed: %s", exc)
        return 3

    gs.save_cloud(cloud, out_dir / "cloud.bin")
    reconstruct.write_trace(out_dir / "trace.csv", trace)
    print(f"reconstructed {len(cloud)} gaussians over {iterations} iterations")
    return 0


def cmd_mesh(args, cfg) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    cloud = gs.load_cloud(args.cloud_file)
    mcfg = cfg["mesh"]
    mesh = extract_mesh(cloud, resolution=int(mcfg["resolution"]), iso=float(mcfg["iso"]))
    if mesh.n_triangles == 0:
        log.error("no isosurface at iso=%s", mcfg["iso"])
        return 1
    radius = float(cfg["render"]["radius"])
    size = int(cfg["render"]["size"])
    intr = _intrinsics(cfg, min(size, 256))
    views = [(intr, p) for _n, p in reconstruct.axis_view_poses(radius)]
    tm = bake_texture(cloud, mesh, views, atlas_size=int(mcfg["atlas_size"]))
    if int(mcfg["refine_rounds"]) > 0:
        tm = refine_texture(tm, cloud, views, rounds=int(mcfg["refine_rounds"]))

    tex_name = "texture.png"
    (out_dir / "mesh.obj").write_text("mtllib mesh.mtl\n" + meshio.write_obj(tm.mesh))
    (out_dir / "mesh.mtl").write_text(
        meshio.write_mtl(tm.mesh.materials, {"baked": tex_name}))
    imageops.save_png(imageops.ImageRGBA(tm.texture.rgba), out_dir / tex_name)
    print(f"mesh: {tm.mesh.n_vertices} vertices, {tm.mesh.n_triangles} triangles")
    return 0


def cmd_render_views(args, cfg) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    src = Path(args.input)
    radius = float(cfg["render"]["radius"])
    intr = _intrinsics(cfg)
    poses = generate_paper_poses(radius)
    labels = orbit_view_labels()

    if src.suffix.lower() == ".obj":
        mesh, _stats = meshio.parse_obj_file(src)
        mesh, _c, _s = meshio.normalize_to_unit_sphere(mesh)
        if mesh.normals is None:
            mesh = meshio.compute_vertex_normals(mesh)
        settings = RenderSettings(shading=Shading(cfg["render"]["shading"]))
        for pose, (plane, idx, _a) in zip(poses, labels):
            fb = raster.render_mesh(mesh, intr, pose, settings)
            imageops.save_png(fb.color, out_dir / f"{plane.value}_{idx:02d}.png")
    else:
        cloud = gs.load_cloud(src)
        for pose, (plane, idx, _a) in zip(poses, labels):
            out = gs.render(cloud, intr, pose)
            imageops.save_png(out.color, out_dir / f"{plane.value}_{idx:02d}.png")
    print(f"rendered {len(poses)} views to {out_dir}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    endpoint = _endpoint_from(cfg, args.endpoint)
    out_path = Path(args.out) if args.out else Path(args.pred_dir) / cfg["evaluate"]["report_name"]
    write_resolved_config(cfg, out_path.parent)
    try:
        report = metrics.evaluate_pairs(args.pred_dir, args.gt_dir,
                                        endpoint=endpoint, out_path=out_path)
    except metrics.MetricError as exc:
        log.error("evaluation failed: %s", exc)
        return 1
    print(report.summary_text())
    return 1 if report.errors else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orbitalsplat",
        description="Orbit-view dataset generation, gaussian-splat reconstruction, "
                    "mesh extraction and metric evaluation.")
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--jobs", type=int, help="cap worker threads")
    parser.add_argument("--seed", type=int, help="global seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="render 48-view datasets for a model directory")
    p.add_argument("models_dir")
    p.add_argument("out_dir")
    p.add_argument("--radius", type=float)
    p.add_argument("--size", type=int)
    p.add_argument("--shading", choices=[s.value for s in Shading])
    p.add_argument("--n-validation", type=int)
    p.add_argument("--n-chunks", type=int)
    p.set_defaults(func=cmd_dataset, overrides=lambda a: {
        "render": {k: v for k, v in {
            "radius": a.radius, "size": a.size, "shading": a.shading,
            "n_validation": a.n_validation, "n_chunks": a.n_chunks}.items()
            if v is not None}})

    p = sub.add_parser("reconstruct", help="single-image reconstruction")
    p.add_argument("image")
    p.add_argument("out_dir")
    p.add_argument("--guidance", nargs=2, metavar=("MODE", "ARG"), required=True,
                   help="'ground-truth <dataset_dir>' or 'remote <url>'")
    p.add_argument("--iterations", type=int)
    p.add_argument("--no-preprocess", action="store_true",
                   help="only matte the input instead of full standardization")
    p.set_defaults(func=cmd_reconstruct, overrides=lambda a: {})

    p = sub.add_parser("mesh", help="extract a textured mesh from a cloud file")
    p.add_argument("cloud_file")
    p.add_argument("out_dir")
    p.add_argument("--resolution", type=int)
    p.add_argument("--iso", type=float)
    p.add_argument("--refine-rounds", type=int, dest="refine_rounds",
                   help="texel refinement passes against splat re-renders (default off)")
    p.set_defaults(func=cmd_mesh, overrides=lambda a: {
        "mesh": {k: v for k, v in {"resolution": a.resolution, "iso": a.iso,
                                   "refine_rounds": a.refine_rounds}.items()
                 if v is not None}})

    p = sub.add_parser("render-views", help="render the 48 orbit views of a cloud or mesh")
    p.add_argument("input", help=".obj mesh or cloud binary")
    p.add_argument("out_dir")
    p.add_argument("--radius", type=float)
    p.add_argument("--size", type=int)
    p.set_defaults(func=cmd_render_views, overrides=lambda a: {
        "render": {k: v for k, v in {"radius": a.radius, "size": a.size}.items()
                   if v is not None}})

    p = sub.add_parser("evaluate", help="PSNR/SSIM (and remote LPIPS/CLIP) over image pairs")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--endpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate, overrides=lambda a: {})

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = _merge_config(cfg, args.overrides(args))
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.jobs is not None:
            cfg["jobs"] = args.jobs
        _apply_jobs(cfg)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        log.error("configuration error: %s", exc)
        return 2
    return args.func(args, cfg)


if __name__ == "__main__":
    sys.exit(main())
