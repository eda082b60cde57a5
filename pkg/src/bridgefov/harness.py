"""Experiment orchestration: dataset generation, training, sampling,
sweeps, timing and uncertainty analysis.

Every command is deterministic given (config, flags, master seed); dataset
items derive independent seeds so generation may run in parallel workers
without changing the output bytes.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bridge, config as config_mod, io as io_mod, metrics
from .denoiser import (
    DenoiserParams, forward, init_params, load_checkpoint, save_checkpoint, train,
)
from .bridge import BridgePair, SamplerConfig
from .io import DatasetManifest, PairEntry
from .phantom import Image, hu_to_mu, rasterize, sample_phantom
from .projector import Sinogram, add_noise, forward_project, truncate
from .recon import fbp, fov_mask, reconstruct_wce

WORKERS_ENV = "BRIDGEFOV_WORKERS"


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def item_seeds(master_seed: int, index: int) -> tuple[int, int]:
    """(phantom_seed, noise_seed) for one dataset item; stable derivation."""
    state = np.random.SeedSequence((master_seed, index)).generate_state(2)
    return int(state[0]), int(state[1])


def make_pair(cfg: config_mod.ExperimentConfig, index: int):
    """Simulate one dataset item: ground truth, measurement, bridge input.

    Returns (x0 HU image, x1 HU image, truncated noisy sinogram).
    """
    geom = cfg.scan_geometry()
    phantom_seed, noise_seed = item_seeds(cfg.master_seed, index)
    ph = sample_phantom(phantom_seed, cfg.phantom_config())
    x0 = rasterize(ph, geom.grid_width, geom.grid_height, geom.grid_spacing)
    mu = Image(values=hu_to_mu(x0.values, cfg.wce.mu_water), spacing=x0.spacing)
    sino = truncate(forward_project(mu, geom), geom.fov_radius)
    sino = add_noise(sino, cfg.noise_model(), noise_seed)
    x1 = reconstruct_wce(sino, geom, cfg.wce_params())
    return x0, x1, sino


def _generate_item(args):
    cfg, index, split, data_dir = args
    x0, x1, sino = make_pair(cfg, index)
    pair_id = f"{split}_{index:04d}"
    paths = {n: os.path.join("data", f"{pair_id}_{n}.bfov") for n in ("x0", "x1", "sino")}
    io_mod.write_image(os.path.join(data_dir, f"{pair_id}_x0.bfov"), x0)
    io_mod.write_image(os.path.join(data_dir, f"{pair_id}_x1.bfov"), x1)
    io_mod.write_array(os.path.join(data_dir, f"{pair_id}_sino.bfov"),
                       sino.values, sino.geometry.channel_spacing)
    phantom_seed, _ = item_seeds(cfg.master_seed, index)
    return PairEntry(pair_id=pair_id, seed=phantom_seed, split=split,
                     x0_path=paths["x0"], x1_path=paths["x1"], sino_path=paths["sino"])


def cmd_generate(cfg: config_mod.ExperimentConfig, out_dir: str,
                 n_train: int | None = None, n_val: int | None = None,
                 n_test: int | None = None) -> DatasetManifest:
    """Simulate the dataset and write x0/x1/sinogram files plus a manifest."""
    counts = {
        "train": cfg.dataset.n_train if n_train is None else n_train,
        "val": cfg.dataset.n_val if n_val is None else n_val,
        "test": cfg.dataset.n_test if n_test is None else n_test,
    }
    data_dir = os.path.join(out_dir, "data")
    os.makedirs(data_dir, exist_ok=True)
    jobs = []
    index = 0
    for split in ("train", "val", "test"):
        for _ in range(counts[split]):
            jobs.append((cfg, index, split, out_dir))
            index += 1
    workers = n_workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_generate_item, jobs, chunksize=4))
    else:
        entries = [_generate_item(j) for j in jobs]
    manifest = DatasetManifest(root=out_dir, entries=entries)
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest


def load_pairs(manifest: DatasetManifest, split: str) -> list[BridgePair]:
    """Load a split as model-unit bridge pairs."""
    pairs = []
    for e in manifest.split(split):
        x0 = io_mod.read_image(manifest.resolve(e.x0_path))
        x1 = io_mod.read_image(manifest.resolve(e.x1_path))
        pairs.append(BridgePair(x0=bridge.hu_to_model(x0.values),
                                x1=bridge.hu_to_model(x1.values)))
    return pairs


def cmd_train(cfg: config_mod.ExperimentConfig, manifest: DatasetManifest,
              out_dir: str, resume: bool = True, log=print) -> str:
    """Train the bridge denoiser on the train split; returns checkpoint path."""
    ck_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ck_dir, exist_ok=True)
    latest = os.path.join(ck_dir, "latest.ckpt")
    final = os.path.join(ck_dir, "final.ckpt")

    pairs = load_pairs(manifest, "train")
    sched = bridge.make_schedule(cfg.schedule.steps, cfg.schedule.beta_max,
                                 cfg.schedule.beta_min)
    tcfg = cfg.train_config()
    params = opt_state = None
    start = 0
    if resume and os.path.exists(latest):
        params, ck_K, opt_state = load_checkpoint(latest)
        if ck_K != sched.K:
            raise config_mod.ConfigError("checkpoint schedule does not match config")
        start = opt_state.step
        log(f"resuming from iteration {start}")

    def on_log(it, loss):
        log(f"iter {it:6d}  loss {loss:.5f}")

    def on_checkpoint(it, p, state, ema):
        save_checkpoint(latest, p, K=sched.K, opt_state=state)

    result = train(pairs, sched, tcfg, arch=cfg.arch_descriptor(),
                   params=params, opt_state=opt_state, start_iteration=start,
                   on_log=on_log, on_checkpoint=on_checkpoint,
                   checkpoint_every=cfg.training.checkpoint_every)
    save_checkpoint(final, result.ema_params or result.params, K=sched.K)

    mode = "a" if (resume and start > 0) else "w"
    with open(os.path.join(out_dir, "loss.csv"), mode) as f:
        w = csv.writer(f)
        if mode == "w":
            w.writerow(["iteration", "loss"])
        w.writerows(result.loss_curve)
    return final


def make_denoise_fn(params: DenoiserParams):
    """Single-image closure over the batched network forward."""
    def denoise(x, k):
        return forward(params, x[None, None, :, :], np.array([k]))[0, 0].astype(np.float64)
    return denoise


def make_cddpm_denoise_fn(params: DenoiserParams):
    def denoise(x, cond, t):
        stacked = np.stack([x, cond])[None]
        return forward(params, stacked, np.array([t]))[0, 0].astype(np.float64)
    return denoise


def sample_split(cfg, params, manifest: DatasetManifest, split: str, nfe: int,
                 seed: int, out_images_dir: str | None = None):
    """Sample every pair in a split; returns (per-image reports, seconds/image).

    Reports come in (full, inside_fov, outside_fov) triples per image.
    """
    sched = bridge.make_schedule(cfg.schedule.steps, cfg.schedule.beta_max,
                                 cfg.schedule.beta_min)
    geom = cfg.scan_geometry()
    mask_in = fov_mask(geom)
    denoise = make_denoise_fn(params)
    entries = manifest.split(split)
    reports = []
    elapsed = 0.0
    for i, e in enumerate(entries):
        x0 = io_mod.read_image(manifest.resolve(e.x0_path))
        x1 = io_mod.read_image(manifest.resolve(e.x1_path))
        t0 = time.perf_counter()
        out = bridge.sample(denoise, bridge.hu_to_model(x1.values), sched,
                            SamplerConfig(nfe=nfe, seed=seed + i))
        elapsed += time.perf_counter() - t0
        out_hu = bridge.model_to_hu(out)
        if out_images_dir is not None:
            os.makedirs(out_images_dir, exist_ok=True)
            io_mod.write_array(os.path.join(out_images_dir, f"{e.pair_id}_i2sb.bfov"),
                               out_hu, x1.spacing)
        truth = x0.values
        reports.append(metrics.report("i2sb", out_hu, truth, "full", seed=seed + i))
        reports.append(metrics.report("i2sb", out_hu, truth, "inside_fov", mask_in, seed=seed + i))
        reports.append(metrics.report("i2sb", out_hu, truth, "outside_fov", ~mask_in, seed=seed + i))
    return reports, elapsed / max(1, len(entries))


def write_reports(path, reports):
    with open(path, "w") as f:
        f.write(metrics.MetricReport.CSV_HEADER + "\n")
        for r in reports:
            f.write(r.csv_row() + "\n")


def aggregate(reports, region: str, attr: str = "rmse_hu") -> float:
    vals = [getattr(r, attr) for r in reports if r.region == region]
    return float(np.mean(vals))


def cmd_sample(cfg, checkpoint_path: str, manifest: DatasetManifest, out_dir: str,
               split: str = "test", nfe: int | None = None, seed: int | None = None):
    params, _, _ = load_checkpoint(checkpoint_path)
    nfe = cfg.sampling.nfe if nfe is None else nfe
    seed = cfg.master_seed if seed is None else seed
    reports, per_image = sample_split(cfg, params, manifest, split, nfe, seed,
                                      out_images_dir=os.path.join(out_dir, "samples"))
    write_reports(os.path.join(out_dir, f"metrics_{split}_nfe{nfe}.csv"), reports)
    return reports, per_image


def cmd_nfe_sweep(cfg, checkpoint_path: str, manifest: DatasetManifest, out_dir: str,
                  nfe_list=None, seed: int | None = None, split: str = "test"):
    """Aggregate quality and timing per NFE; one CSV row per NFE."""
    params, _, _ = load_checkpoint(checkpoint_path)
    nfe_list = cfg.nfe_list() if nfe_list is None else nfe_list
    seed = cfg.master_seed if seed is None else seed
    rows = []
    for nfe in nfe_list:
        reports, per_image = sample_split(cfg, params, manifest, split, nfe, seed)
        rows.append({
            "nfe": nfe,
            "rmse_hu": aggregate(reports, "full"),
            "psnr_db": aggregate(reports, "full", "psnr_db"),
            "ssim": aggregate(reports, "full", "ssim"),
            "rmse_outside_hu": aggregate(reports, "outside_fov"),
            "seconds_per_image": per_image,
        })
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "nfe_sweep.csv"), "w") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    return rows


def cmd_bench(cfg, checkpoint_path: str, manifest: DatasetManifest, out_dir: str,
              repeats: int = 20):
    """Median per-image inference time: one-step vs many-step vs cDDPM.

    The cDDPM row times an architecture-matched two-channel network over its
    full step count; at desk scale the baseline is benchmarked, not trained.
    """
    params, _, _ = load_checkpoint(checkpoint_path)
    sched = bridge.make_schedule(cfg.schedule.steps, cfg.schedule.beta_max,
                                 cfg.schedule.beta_min)
    entry = manifest.split("test")[0]
    x1 = bridge.hu_to_model(io_mod.read_image(manifest.resolve(entry.x1_path)).values)
    denoise = make_denoise_fn(params)

    cddpm_params = init_params(cfg.arch_descriptor(in_channels=2), seed=cfg.master_seed)
    cddpm_denoise = make_cddpm_denoise_fn(cddpm_params)
    csched = bridge.cddpm_schedule(cfg.sampling.cddpm_steps, cfg.sampling.cddpm_beta1,
                                   cfg.sampling.cddpm_beta_max)

    def timed(fn):
        times = []
        for r in range(repeats):
            t0 = time.perf_counter()
            fn(r)
            times.append(time.perf_counter() - t0)
        return float(np.median(times))

    t_nfe1 = timed(lambda r: bridge.sample(denoise, x1, sched, SamplerConfig(nfe=1, seed=r)))
    t_nfe25 = timed(lambda r: bridge.sample(denoise, x1, sched, SamplerConfig(nfe=25, seed=r)))
    t_cddpm = timed(lambda r: bridge.cddpm_sample(cddpm_denoise, x1, csched, seed=r))

    rows = [
        {"method": "i2sb_nfe1", "seconds_per_image": t_nfe1, "ratio_vs_nfe1": 1.0},
        {"method": "i2sb_nfe25", "seconds_per_image": t_nfe25, "ratio_vs_nfe1": t_nfe25 / t_nfe1},
        {"method": f"cddpm_{csched.T}steps", "seconds_per_image": t_cddpm,
         "ratio_vs_nfe1": t_cddpm / t_nfe1},
    ]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "bench.csv"), "w") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    return rows


def cmd_uncertainty(cfg, checkpoint_path: str, manifest: DatasetManifest, out_dir: str,
                    n_seeds: int = 8, nfe: int | None = None):
    """Pixelwise mean/std over repeated sampling of one fixed test input."""
    params, _, _ = load_checkpoint(checkpoint_path)
    sched = bridge.make_schedule(cfg.schedule.steps, cfg.schedule.beta_max,
                                 cfg.schedule.beta_min)
    nfe = cfg.sampling.nfe if nfe is None else nfe
    entry = manifest.split("test")[0]
    x1_img = io_mod.read_image(manifest.resolve(entry.x1_path))
    x1 = bridge.hu_to_model(x1_img.values)
    denoise = make_denoise_fn(params)
    samples = []
    for s in range(n_seeds):
        out = bridge.sample(denoise, x1, sched, SamplerConfig(nfe=nfe, seed=s))
        samples.append(bridge.model_to_hu(out))
    stack = np.stack(samples)
    mean_img = stack.mean(axis=0)
    std_img = stack.std(axis=0)
    os.makedirs(out_dir, exist_ok=True)
    io_mod.write_array(os.path.join(out_dir, f"uncertainty_mean_nfe{nfe}.bfov"),
                       mean_img, x1_img.spacing)
    io_mod.write_array(os.path.join(out_dir, f"uncertainty_std_nfe{nfe}.bfov"),
                       std_img, x1_img.spacing)
    stats = {"nfe": nfe, "n_seeds": n_seeds,
             "mean_std_hu": float(std_img.mean()), "max_std_hu": float(std_img.max())}
    with open(os.path.join(out_dir, f"uncertainty_nfe{nfe}.csv"), "w") as f:
        w = csv.DictWriter(f, fieldnames=list(stats.keys()))
        w.writeheader()
        w.writerow(stats)
    return stats, std_img


def cmd_eval_baselines(cfg, manifest: DatasetManifest, out_dir: str, split: str = "test"):
    """Metrics for the non-learned reconstructions (plain FBP and WCE input)."""
    geom = cfg.scan_geometry()
    mask_in = fov_mask(geom)
    reports = []
    for e in manifest.split(split):
        x0 = io_mod.read_image(manifest.resolve(e.x0_path))
        x1 = io_mod.read_image(manifest.resolve(e.x1_path))
        sino_vals, _ = io_mod.read_array(manifest.resolve(e.sino_path))
        measured = np.abs(geom.channel_positions) <= geom.fov_radius
        sino = Sinogram(values=sino_vals, geometry=geom, measured=measured)
        fbp_img = fbp(sino, geom, mu_water=cfg.wce.mu_water)
        for method, img in (("fbp", fbp_img.values), ("wce", x1.values)):
            reports.append(metrics.report(method, img, x0.values, "full"))
            reports.append(metrics.report(method, img, x0.values, "inside_fov", mask_in))
            reports.append(metrics.report(method, img, x0.values, "outside_fov", ~mask_in))
    os.makedirs(out_dir, exist_ok=True)
    write_reports(os.path.join(out_dir, f"baselines_{split}.csv"), reports)
    return reports
