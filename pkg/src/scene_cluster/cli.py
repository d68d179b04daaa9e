"""Pipeline driver: synth, preprocess, extract, cluster, evaluate, sweep.

Each stage fingerprints its config slice plus input content and skips work
when its stamp already matches (``--force`` overrides).  Artifacts live
under the config's cache directory; the ``SCENE_CLUSTER_CACHE`` environment
variable overrides that location.  Expected failures exit nonzero with one
JSON error line on stderr.
"""

import argparse
import dataclasses
import io
import json
import os
import sys
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import cache, imgio
from .clustering import (
    Clustering,
    ParticipantFeatures,
    cluster_participant,
)
from .config import ConfigError, PipelineConfig, load_config
from .evaluation import (
    default_sweep_alphas,
    report_to_csv,
    save_heatmap,
    score_dataset,
    sweep,
    sweep_grid_csv,
)
from .features import (
    ExtractorSpec,
    TensorFormatError,
    baseline_pixel_features,
    compute_features,
    make_extractor,
    tensor_filename,
    write_standin_tensors,
)
from .model import (
    Dataset,
    ManifestError,
    load_manifest,
    split_by_participants,
    validate_dataset,
)
from .network import NetworkFormatError, UnsupportedOperatorError
from .preprocess import (
    FiducialNotFoundError,
    connected_components,
    crop_local_region,
    locate_fiducial,
    mask_salient,
)
from .synthgen import generate_dataset, make_study_specs


class StageError(RuntimeError):
    """Expected stage failure: bad inputs, missing upstream artifacts."""


# ---------------------------------------------------------------------------
# shared plumbing


def _load_dataset(cfg: PipelineConfig) -> Dataset:
    if not cfg.manifest.is_file():
        raise StageError(
            f"manifest {cfg.manifest} not found; run 'scene-cluster synth'"
            " or point [dataset] manifest at your data"
        )
    return load_manifest(cfg.manifest)


def _data_digest(ds: Dataset, manifest: Path) -> str:
    parts = [cache.file_digest(manifest)]
    for rec in ds.records:
        parts.append(cache.file_digest(rec.image_path))
        parts.append(cache.file_digest(rec.mask_path))
    return cache.hash64(parts)


def _preprocess_key(cfg: PipelineConfig, ds: Dataset) -> str:
    return cache.hash64(
        [
            cache.config_bytes(dataclasses.asdict(cfg.preprocess)),
            _data_digest(ds, cfg.manifest),
        ]
    )


def _extract_key(cfg: PipelineConfig, ds: Dataset, layer: int, pre_key: str) -> str:
    feat = dataclasses.asdict(cfg.features)
    feat["layer"] = layer
    parts = [pre_key, cache.config_bytes(feat)]
    if cfg.features.backend == "inference":
        if cfg.features.network is None or not Path(cfg.features.network).is_file():
            raise StageError(f"network file {cfg.features.network} not found")
        parts.append(cache.file_digest(cfg.features.network))
    elif not cfg.features.standin:
        tdir = cfg.tensor_dir()
        for rec in ds.records:
            for scope in ("global", "local"):
                p = tdir / tensor_filename(rec.image_id, scope, layer)
                if p.is_file():
                    parts.append(str(p.name))
                    parts.append(cache.file_digest(p))
    return cache.hash64(parts)


def _pmap(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


# ---------------------------------------------------------------------------
# synth


def cmd_synth(cfg: PipelineConfig, args) -> None:
    s = cfg.synth
    key = cache.hash64([cache.config_bytes(dataclasses.asdict(s))])
    stamp = s.out_dir / ".stamp.json"
    manifest = s.out_dir / "manifest.csv"
    if not args.force and manifest.is_file() and cache.stage_current(stamp, key):
        print(f"skip synth (cached): {manifest}")
        return
    specs = make_study_specs(
        n_participants=s.participants,
        seed=s.seed,
        min_images=s.min_images,
        max_images=s.max_images,
        min_environments=s.min_environments,
        max_environments=s.max_environments,
    )
    ds, truths = generate_dataset(specs, s.out_dir, size=s.size)
    cache.write_json(
        s.out_dir / "fiducials.json",
        {iid: list(t.bbox) for iid, t in truths.items()},
    )
    cache.write_stamp(stamp, key, {"images": len(ds)})
    print(f"synth: {len(specs)} participants, {len(ds)} images -> {s.out_dir}")
    if manifest != cfg.manifest:
        print(
            f"note: config manifest is {cfg.manifest}; generated {manifest}",
            file=sys.stderr,
        )


# ---------------------------------------------------------------------------
# preprocess


def _preprocess_participant(task) -> int:
    pid, records, settings, out_root, dump = task
    out_dir = Path(out_root) / pid
    for rec in records:
        img = imgio.load_image(rec.image_path)
        mask = imgio.load_mask(rec.mask_path)
        if mask.shape != img.shape[:2]:
            raise StageError(
                f"{rec.image_id}: mask {mask.shape} does not match image"
                f" {img.shape[:2]}"
            )
        masked = mask_salient(img, mask)
        comps = connected_components(
            mask, min_component_area=settings.min_component_fraction * mask.size
        )
        meta = {
            "image_id": rec.image_id,
            "n_components": len(comps),
            "fm_found": False,
            "fm_bbox": None,
            "fm_interest_points": 0,
        }
        imgio.save_image_float(masked, out_dir / f"{rec.image_id}.masked.png")
        try:
            fid = locate_fiducial(img, comps, settings.corner_threshold)
            local = crop_local_region(masked, fid, settings.expansion)
            imgio.save_image_float(local, out_dir / f"{rec.image_id}.local.png")
            meta.update(
                fm_found=True,
                fm_bbox=list(fid.bbox),
                fm_interest_points=fid.interest_point_count,
            )
        except FiducialNotFoundError:
            pass
        cache.write_json(out_dir / f"{rec.image_id}.meta.json", meta)
        if dump:
            table = [
                {
                    "id": c.id,
                    "pixel_count": c.pixel_count,
                    "bbox": list(c.bbox),
                }
                for c in comps
            ]
            cache.write_json(
                out_dir / f"{rec.image_id}.components.json",
                {"components": table, "fm_bbox": meta["fm_bbox"]},
            )
    return len(records)


def cmd_preprocess(cfg: PipelineConfig, args) -> None:
    ds = _load_dataset(cfg)
    problems = validate_dataset(ds)
    if problems:
        head = "; ".join(
            f"{v.participant_id}/{v.image_id}: {v.kind} ({v.message})"
            for v in problems[:5]
        )
        raise StageError(f"{len(problems)} dataset violation(s): {head}")
    out_root = cfg.cache_dir / "preprocess"
    key = _preprocess_key(cfg, ds)
    stamp = out_root / "stamp.json"
    if not args.force and cache.stage_current(stamp, key):
        print("skip preprocess (cached)")
        return
    tasks = [
        (pid, ds.participant_records(pid), cfg.preprocess, str(out_root),
         args.dump_intermediates)
        for pid in ds.participant_ids()
    ]
    counts = _pmap(_preprocess_participant, tasks, args.jobs)
    cache.write_stamp(stamp, key, {"images": int(sum(counts))})
    print(f"preprocess: {sum(counts)} images -> {out_root}")


# ---------------------------------------------------------------------------
# extract


@lru_cache(maxsize=2)
def _cached_extractor(backend, layer, tensor_dir, network, input_size):
    spec = ExtractorSpec(
        backend=backend,
        layer=layer,
        tensor_dir=Path(tensor_dir) if tensor_dir else None,
        network_path=Path(network) if network else None,
        input_size=input_size,
    )
    return make_extractor(spec)


def _extract_participant(task) -> int:
    pid, image_metas, feat, layer, tensor_dir, pre_root, out_path = task
    pre_dir = Path(pre_root) / pid
    images = []
    for image_id, fm_found in image_metas:
        masked_path = pre_dir / f"{image_id}.masked.png"
        if not masked_path.is_file():
            raise StageError(
                f"missing preprocess output {masked_path}; run"
                " 'scene-cluster preprocess' first"
            )
        masked = imgio.load_image(masked_path)
        local = (
            imgio.load_image(pre_dir / f"{image_id}.local.png") if fm_found else None
        )
        images.append((image_id, masked, local))
    if feat.standin:
        items = []
        for image_id, masked, local in images:
            items.append((image_id, "global", masked))
            if local is not None:
                items.append((image_id, "local", local))
        write_standin_tensors(items, tensor_dir, [layer], seed=feat.standin_seed)
    extractor = _cached_extractor(
        feat.backend,
        layer,
        str(tensor_dir) if feat.backend == "precomputed" else None,
        str(feat.network) if feat.network else None,
        feat.input_size,
    )
    ids, gs, ls, base = [], [], [], []
    for image_id, masked, local in images:
        g, l = compute_features(masked, local, extractor, image_id)
        ids.append(image_id)
        gs.append(g)
        ls.append(l)
        base.append(baseline_pixel_features(masked))
    buf = io.BytesIO()
    np.savez(
        buf,
        image_ids=np.asarray(ids),
        g=np.stack(gs),
        l=np.stack(ls),
        baseline=np.stack(base),
    )
    cache.atomic_write_bytes(out_path, buf.getvalue())
    return len(ids)


def _read_meta(pre_root: Path, pid: str, image_id: str) -> dict:
    p = pre_root / pid / f"{image_id}.meta.json"
    if not p.is_file():
        raise StageError(
            f"missing preprocess output {p}; run 'scene-cluster preprocess' first"
        )
    return cache.read_json(p)


def _run_extract(cfg: PipelineConfig, ds: Dataset, layer: int, args) -> str:
    pre_root = cfg.cache_dir / "preprocess"
    pre_stamp = pre_root / "stamp.json"
    if not pre_stamp.is_file():
        raise StageError("no preprocess cache; run 'scene-cluster preprocess' first")
    pre_key = cache.read_json(pre_stamp)["key"]
    out_root = cfg.cache_dir / "extract"
    key = _extract_key(cfg, ds, layer, pre_key)
    stamp = out_root / f"stamp.layer{layer}.json"
    if not args.force and cache.stage_current(stamp, key):
        print(f"skip extract layer {layer} (cached)")
        return key
    tasks = []
    for pid in ds.participant_ids():
        metas = [
            (rec.image_id, bool(_read_meta(pre_root, pid, rec.image_id)["fm_found"]))
            for rec in ds.participant_records(pid)
        ]
        tasks.append(
            (
                pid,
                metas,
                cfg.features,
                layer,
                cfg.tensor_dir(),
                str(pre_root),
                out_root / f"{pid}.layer{layer}.npz",
            )
        )
    counts = _pmap(_extract_participant, tasks, args.jobs)
    cache.write_stamp(stamp, key, {"images": int(sum(counts))})
    print(f"extract: layer {layer}, {sum(counts)} images -> {out_root}")
    return key


def cmd_extract(cfg: PipelineConfig, args) -> None:
    ds = _load_dataset(cfg)
    _run_extract(cfg, ds, cfg.features.layer, args)


# ---------------------------------------------------------------------------
# cluster


def _load_features(cfg: PipelineConfig, pid: str, layer: int) -> ParticipantFeatures:
    path = cfg.cache_dir / "extract" / f"{pid}.layer{layer}.npz"
    if not path.is_file():
        raise StageError(
            f"missing extract output {path}; run 'scene-cluster extract' first"
        )
    with np.load(path, allow_pickle=False) as z:
        return ParticipantFeatures(
            image_ids=[str(s) for s in z["image_ids"]],
            g=z["g"].astype(np.float64),
            l=z["l"].astype(np.float64),
            baseline=z["baseline"].astype(np.float64),
        )


def _cluster_params(cfg: PipelineConfig) -> dict:
    c = cfg.cluster
    if c.method in ("proposed", "ap"):
        params = {
            "damping": c.ap.damping,
            "max_iterations": c.ap.max_iterations,
            "convergence_window": c.ap.convergence_window,
            "preference": c.ap.preference,
        }
        if c.method == "proposed":
            params["alpha"] = c.alpha
        else:
            params["features"] = c.baseline_source
        return params
    if c.method == "dbscan":
        return {
            "eps": c.baselines.dbscan_eps,
            "min_pts": c.baselines.dbscan_min_pts,
            "features": c.baseline_source,
        }
    if c.method == "meanshift":
        return {"bandwidth": c.baselines.meanshift_bandwidth}
    return {
        "min_samples": c.baselines.optics_min_samples,
        "xi": c.baselines.optics_xi,
    }


def cmd_cluster(cfg: PipelineConfig, args) -> None:
    ds = _load_dataset(cfg)
    layer = cfg.features.layer
    extract_stamp = cfg.cache_dir / "extract" / f"stamp.layer{layer}.json"
    if not extract_stamp.is_file():
        raise StageError("no extract cache; run 'scene-cluster extract' first")
    extract_key = cache.read_json(extract_stamp)["key"]
    out_dir = cfg.cache_dir / "cluster"
    key = cache.hash64(
        [extract_key, cache.config_bytes(dataclasses.asdict(cfg.cluster))]
    )
    stamp = out_dir / "stamp.json"
    if not args.force and cache.stage_current(stamp, key):
        print("skip cluster (cached)")
        return
    for pid in ds.participant_ids():
        feats = _load_features(cfg, pid, layer)
        got = cluster_participant(
            feats,
            cfg.cluster.method,
            alpha=cfg.cluster.alpha,
            ap_config=cfg.cluster.ap,
            baseline_config=cfg.cluster.baselines,
            baseline_source=cfg.cluster.baseline_source,
        )
        cache.write_json(
            out_dir / f"{pid}.json",
            {
                "participant_id": pid,
                "method": cfg.cluster.method,
                "params": _cluster_params(cfg),
                "labels": [int(v) for v in got.labels],
                "exemplars": got.exemplars,
                "converged": bool(got.converged),
            },
        )
    cache.write_stamp(stamp, key, {"participants": len(ds.participant_ids())})
    print(f"cluster: {len(ds.participant_ids())} participants -> {out_dir}")


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(cfg: PipelineConfig, args) -> None:
    ds = _load_dataset(cfg)
    cluster_dir = cfg.cache_dir / "cluster"
    cluster_stamp = cluster_dir / "stamp.json"
    if not cluster_stamp.is_file():
        raise StageError("no cluster cache; run 'scene-cluster cluster' first")
    cluster_key = cache.read_json(cluster_stamp)["key"]
    reports = cfg.cache_dir / "reports"
    key = cache.hash64([cluster_key, cache.file_digest(cfg.manifest)])
    stamp = reports / "stamp.evaluate.json"
    if not args.force and cache.stage_current(stamp, key):
        print("skip evaluate (cached)")
        return
    clusterings = {}
    for pid in ds.participant_ids():
        p = cluster_dir / f"{pid}.json"
        if not p.is_file():
            raise StageError(f"missing cluster output {p}")
        obj = cache.read_json(p)
        clusterings[pid] = Clustering(
            labels=np.asarray(obj["labels"], np.int32),
            exemplars=obj.get("exemplars"),
            converged=bool(obj.get("converged", True)),
        )
    report = score_dataset(ds, clusterings)
    cache.atomic_write_text(reports / "scores.csv", report_to_csv(report))
    cache.write_json(
        reports / "summary.json",
        {
            "mean_ari": report.mean_ari,
            "mean_nmi": report.mean_nmi,
            "n_participants": len(report.per_participant),
            "method": cfg.cluster.method,
            "params": _cluster_params(cfg),
        },
    )
    cache.write_stamp(stamp, key)
    print(
        f"evaluate: mean ARI {report.mean_ari:.4f}, mean NMI"
        f" {report.mean_nmi:.4f} -> {reports / 'scores.csv'}"
    )


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(cfg: PipelineConfig, args) -> None:
    ds_all = _load_dataset(cfg)
    if cfg.validation_participants:
        ds = split_by_participants(ds_all, cfg.validation_participants).validation
    else:
        ds = ds_all
    layers = list(cfg.sweep.layers)
    extract_keys = [_run_extract(cfg, ds_all, m, args) for m in layers]
    reports = cfg.cache_dir / "reports"
    key = cache.hash64(
        extract_keys
        + [
            cache.config_bytes(
                {
                    "alphas": cfg.sweep.alphas,
                    "layers": cfg.sweep.layers,
                    "ap": dataclasses.asdict(cfg.cluster.ap),
                    "validation": cfg.validation_participants,
                }
            )
        ]
    )
    stamp = reports / "stamp.sweep.json"
    if not args.force and cache.stage_current(stamp, key):
        print("skip sweep (cached)")
        return
    features_by_layer = {
        m: {pid: _load_features(cfg, pid, m) for pid in ds.participant_ids()}
        for m in layers
    }
    alphas = (
        list(cfg.sweep.alphas) if cfg.sweep.alphas is not None
        else default_sweep_alphas()
    )
    result = sweep(
        ds,
        features_by_layer,
        alphas=alphas,
        layers=layers,
        ap_config=cfg.cluster.ap,
    )
    cache.atomic_write_text(reports / "sweep.csv", sweep_grid_csv(result, "ari"))
    cache.atomic_write_text(
        reports / "sweep_nmi.csv", sweep_grid_csv(result, "nmi")
    )
    cache.write_json(
        reports / "sweep.json",
        {
            "best_alpha": result.best_alpha,
            "best_layer": result.best_layer,
            "alphas": result.alphas,
            "layers": result.layers,
        },
    )
    if cfg.sweep.heatmap:
        save_heatmap(result, reports / "sweep.png")
    cache.write_stamp(stamp, key)
    print(
        f"sweep: best alpha {result.best_alpha} at layer {result.best_layer}"
        f" -> {reports / 'sweep.csv'}"
    )


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "extract": cmd_extract,
    "cluster": cmd_cluster,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="scene-cluster",
        description="Cluster per-participant eating-scene images by environment.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage, fn in _COMMANDS.items():
        p = sub.add_parser(stage, help=fn.__doc__)
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument(
            "--jobs", type=int, default=1, help="parallel workers (default 1)"
        )
        p.add_argument(
            "--force", action="store_true", help="rebuild even when cached"
        )
        p.add_argument(
            "--dump-intermediates",
            action="store_true",
            help="write per-image debug JSON during preprocess",
        )
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        cfg = load_config(args.config)
        env_cache = os.environ.get("SCENE_CLUSTER_CACHE")
        if env_cache:
            cfg = dataclasses.replace(cfg, cache_dir=Path(env_cache))
        _COMMANDS[args.stage](cfg, args)
        return 0
    except (
        StageError,
        ConfigError,
        ManifestError,
        TensorFormatError,
        NetworkFormatError,
        UnsupportedOperatorError,
        FileNotFoundError,
        ValueError,
        OSError,
    ) as exc:
        print(json.dumps({"stage": args.stage, "error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
