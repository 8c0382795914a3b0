"""Command-line front door wiring all modules into reproducible experiments.

Every command writes a manifest (config hash, seed, artifact list) next to
its outputs, CSV files as the machine-readable results, and matplotlib
figures alongside them unless --no-plots is given.

Exit codes: 0 ok; 2 configuration or artifact error; 3 numerical failure
(infeasible layout, encoding fit failure, diverged training); 4/5/6 check
failure for gradcheck / analyze-covis / toy2d respectively.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .container import ContainerError
from .covis_analysis import (
    compute_pair_stats,
    covis_rate_given_distance,
    distance_histogram_given_covis,
    save_curve_csv,
    save_histogram_csv,
    scaled_covis_thresholds,
)
from .encodings import DimensionMismatch
from .localizer import save_point_list, split_cameras
from .regressor import (
    Diverged,
    load_checkpoint,
    run_gradcheck,
    save_checkpoint,
    train,
)
from .scene_sim import FitFailure, InfeasibleLayout, load_scene, save_scene
from .toy2d import (
    build_toy2d,
    sample_decoder_prior,
    save_mae_csv,
    save_prior_samples,
    train_toy2d,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_GRADCHECK = 4
EXIT_COVIS = 5
EXIT_TOY2D = 6


def _write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig | None,
                    seed: int, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "config_hash": config_hash(cfg) if cfg is not None else None,
        "seed": seed,
        "outputs": sorted(outputs),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        return ExperimentConfig()
    return load_config(args.config)


def _effective_seed(cfg: ExperimentConfig, args) -> int:
    return args.seed if args.seed is not None else cfg.seed


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .pipeline import simulate_from_config

    cfg = _load_config(args)
    seed = _effective_seed(cfg, args)
    out = _out_dir(args)
    scene, encodings = simulate_from_config(cfg, seed=seed)
    scene_path = out / "scene.bin"
    save_scene(scene_path, scene, encodings)

    groups = np.unique(scene.group_ids)
    multi = sum(
        1 for g in groups if (scene.group_ids == g).sum() > 1
    )
    print(f"scene: {scene.layout_kind}, {scene.n_landmarks} landmarks, "
          f"{scene.n_cameras} cameras")
    print(f"ambiguity groups with >1 member: {multi}")
    print(f"wrote {scene_path}")
    _write_manifest(out, "simulate", cfg, seed, ["scene.bin"])
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import derive_seed, train_from_config

    cfg = _load_config(args)
    seed = _effective_seed(cfg, args)
    out = _out_dir(args)
    scene, encodings = load_scene(args.scene)
    if encodings is None:
        raise ConfigError("scene file has no global encodings; rerun simulate")

    outputs = ["checkpoint.bin", "loss_trace.csv"]
    if args.resume:
        head, decoder, sched, train_cfg, start_it, opt_state, rng_state, extra = (
            load_checkpoint(args.resume)
        )
        from .regressor import fill_buffer

        train_cams = extra.get("train_cams", list(range(scene.n_cameras)))
        table = np.asarray(encodings)[:, : head.input_width - scene.descriptors.shape[1]]
        buffer = fill_buffer(
            scene, cfg.train.samples_per_image, seed=derive_seed(seed, "buffer"),
            camera_indices=train_cams, encodings=encodings,
            descriptor_noise_sigma=cfg.ambiguity.descriptor_noise_sigma,
            pixel_jitter_sigma=cfg.scene.pixel_jitter_sigma,
        )
        result = train(
            buffer, head, decoder, train_cfg, sched=sched,
            start_iteration=start_it, opt_state=opt_state, rng_state=rng_state,
        )
        model_head, model_decoder = head, decoder
        sched_used, cfg_used = sched, train_cfg
        train_cams_used = train_cams
    else:
        model = train_from_config(scene, encodings, cfg, seed=seed, variant=args.variant)
        result = model.result
        model_head, model_decoder = model.head, model.decoder
        sched_used = cfg.loss.to_schedule()
        cfg_used = cfg.train.to_train_config(seed=derive_seed(seed, "train"))
        train_cams_used = model.train_cams

    ckpt = out / "checkpoint.bin"
    save_checkpoint(
        ckpt, model_head, model_decoder, sched_used, cfg_used,
        iteration=result.iterations_completed,
        opt_state=result.opt_state, rng_state=result.rng_state,
        extra_meta={"train_cams": list(map(int, train_cams_used)),
                    "variant": args.variant},
    )
    trace_path = out / "loss_trace.csv"
    result.trace.to_csv(trace_path)
    if not args.no_plots:
        from .plots import save_loss_trace

        save_loss_trace(out / "loss_trace.png", result.trace.iteration,
                        result.trace.mean_loss, result.trace.lr, result.trace.tau)
        outputs.append("loss_trace.png")
    print(f"trained {result.iterations_completed} iterations; "
          f"final mean loss {result.trace.mean_loss[-1]:.6g}")
    print(f"wrote {ckpt}")
    _write_manifest(out, "train", cfg, seed, outputs)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pipeline import TrainedModel, evaluate_split, oracle_model

    cfg = _load_config(args)
    seed = _effective_seed(cfg, args)
    out = _out_dir(args)
    scene, encodings = load_scene(args.scene)
    train_cams, heldout_cams = split_cameras(scene.n_cameras, cfg.eval.heldout_fraction)
    cams = train_cams if args.split == "train" else heldout_cams
    if not cams:
        raise ConfigError(f"split {args.split!r} has no cameras at "
                          f"heldout_fraction={cfg.eval.heldout_fraction}")

    if args.oracle:
        model = oracle_model(scene)
    else:
        head, decoder, _, _, _, _, _, extra = load_checkpoint(args.checkpoint)
        expected = scene.descriptors.shape[1]
        table = np.asarray(encodings) if encodings is not None else np.zeros(
            (scene.n_cameras, 0)
        )
        variant = extra.get("variant", "diffusion")
        from .pipeline import variant_encoding_table, derive_seed

        table = variant_encoding_table(table, variant, train_cams,
                                       derive_seed(seed, "enc-cluster"))
        if head.input_width != expected + table.shape[1]:
            raise DimensionMismatch(
                f"checkpoint expects input width {head.input_width}, scene provides "
                f"{expected}+{table.shape[1]}"
            )
        model = TrainedModel(
            head=head, decoder=decoder, buffer=None, result=None,
            encoding_table=table, train_cams=train_cams, heldout_cams=heldout_cams,
        )

    report = evaluate_split(scene, model, cams, cfg, seed=seed)
    csv_path = out / f"eval_{args.split}.csv"
    report.to_csv(csv_path)
    summary = report.summary_text()
    (out / f"eval_{args.split}_summary.txt").write_text(summary + "\n")
    print(summary)
    outputs = [csv_path.name, f"eval_{args.split}_summary.txt"]
    if not args.no_plots:
        from .plots import save_eval_errors

        save_eval_errors(
            out / f"eval_{args.split}.png",
            [r.translation_error_m if r.status == "ok" else np.inf for r in report.per_frame],
            [r.rotation_error_deg if r.status == "ok" else np.inf for r in report.per_frame],
        )
        outputs.append(f"eval_{args.split}.png")
    _write_manifest(out, "evaluate", cfg, seed, outputs)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .pipeline import run_ablation, simulate_from_config

    cfg = _load_config(args)
    seed = _effective_seed(cfg, args)
    out = _out_dir(args)
    if args.scene:
        scene, encodings = load_scene(args.scene)
    else:
        scene, encodings = simulate_from_config(cfg, seed=seed)
    rows = run_ablation(scene, encodings, cfg)
    csv_path = out / "ablation.csv"
    with open(csv_path, "w") as fh:
        fh.write("variant,seed,train_median_t_m,train_median_r_deg,"
                 "heldout_median_t_m,heldout_median_r_deg\n")
        for row in rows:
            fh.write(f"{row[0]},{row[1]},{float(row[2])!r},{float(row[3])!r},"
                     f"{float(row[4])!r},{float(row[5])!r}\n")
    outputs = ["ablation.csv"]
    if not args.no_plots:
        from .plots import save_ablation

        save_ablation(out / "ablation.png", [(r[0], r[1], r[2], r[4]) for r in rows])
        outputs.append("ablation.png")
    for row in rows:
        print(f"{row[0]:>12} seed {row[1]}: train {row[2]:.4g} m, heldout {row[4]:.4g} m")
    _write_manifest(out, "ablate", cfg, seed, outputs)
    return EXIT_OK


def cmd_analyze_covis(args) -> int:
    from .covis_analysis import EmptyClass, spearman_rank_correlation
    from .pipeline import simulate_from_config

    cfg = _load_config(args)
    seed = _effective_seed(cfg, args)
    out = _out_dir(args)
    if args.scene:
        scene, encodings = load_scene(args.scene)
        if encodings is None:
            raise ConfigError("scene file has no global encodings")
    else:
        scene, encodings = simulate_from_config(cfg, seed=seed)

    stats = compute_pair_stats(scene, encodings)
    thresholds = scaled_covis_thresholds(
        scene.n_landmarks, reference_landmarks=cfg.covis.reference_landmarks
    )
    outputs = []
    checks_ok = True
    for n_thr in dict.fromkeys(thresholds):  # dedupe, keep order
        try:
            edges, hist_c, hist_n, counts_c, counts_n = distance_histogram_given_covis(
                stats, N=n_thr, bins=cfg.covis.bins
            )
        except EmptyClass as exc:
            print(f"N={n_thr}: {exc}", file=sys.stderr)
            checks_ok = False
            continue
        save_histogram_csv(out / f"dist_hist_covis_N{n_thr}.csv", edges, hist_c, counts_c)
        save_histogram_csv(out / f"dist_hist_noncovis_N{n_thr}.csv", edges, hist_n, counts_n)
        outputs += [f"dist_hist_covis_N{n_thr}.csv", f"dist_hist_noncovis_N{n_thr}.csv"]

        lows, highs, rates, counts = covis_rate_given_distance(
            stats, N=n_thr, bins=cfg.covis.bins
        )
        save_curve_csv(out / f"covis_rate_N{n_thr}.csv", lows, highs, rates, counts)
        outputs.append(f"covis_rate_N{n_thr}.csv")

        mids = (edges[:-1] + edges[1:]) / 2
        mean_c = float((hist_c * mids).sum())
        mean_n = float((hist_n * mids).sum())
        rho = (
            spearman_rank_correlation((lows + highs) / 2, rates)
            if len(rates) >= 2
            else 0.0
        )
        print(f"N={n_thr}: mean distance covis {mean_c:.1f} deg vs "
              f"non-covis {mean_n:.1f} deg; rate-curve spearman {rho:.3f}")
        if not (mean_c < mean_n and rho < -0.8):
            checks_ok = False
        if not args.no_plots:
            from .plots import save_covis_curve, save_covis_histograms

            save_covis_histograms(out / f"dist_hist_N{n_thr}.png", edges, hist_c,
                                  hist_n, n_thr)
            save_covis_curve(out / f"covis_rate_N{n_thr}.png", lows, highs, rates, n_thr)
            outputs += [f"dist_hist_N{n_thr}.png", f"covis_rate_N{n_thr}.png"]

    _write_manifest(out, "analyze-covis", cfg, seed, outputs)
    if not checks_ok:
        print("check failed: covisibility/distance shape not reproduced",
              file=sys.stderr)
        return EXIT_COVIS
    return EXIT_OK


def cmd_toy2d(args) -> int:
    from .regressor import TrainConfig

    cfg = _load_config(args)
    seed = _effective_seed(cfg, args)
    out = _out_dir(args)
    t = cfg.toy2d
    rows = []
    for s in t.seeds:
        data = build_toy2d(
            t.grid, t.samples_per_tile, seed=int(s), encoding_dim=t.encoding_dim,
            alias_fraction=t.alias_fraction, tile_size=t.tile_size,
        )
        for k in (1, t.grid):
            train_cfg = TrainConfig(
                batch_size=t.batch_size, iterations=t.iterations,
                sigma=0.0, seed=int(s),
            )
            rows.append((int(s), k, train_toy2d(data, k, train_cfg)))
    csv_path = out / "toy2d_mae.csv"
    save_mae_csv(csv_path, rows)
    outputs = ["toy2d_mae.csv"]

    # decoder prior sampling comparison
    rng = np.random.default_rng(seed)
    data = build_toy2d(t.grid, 4, seed=seed, tile_size=t.tile_size)
    from .regressor import DecoderParams

    dec_multi = DecoderParams(centers=data.cluster_centers)
    dec_one = DecoderParams(centers=data.cluster_centers.mean(axis=0, keepdims=True))
    for name, dec in (("k1", dec_one), ("kg", dec_multi)):
        samples = sample_decoder_prior(dec, t.prior_samples, seed=seed)
        save_prior_samples(out / f"prior_samples_{name}.xy", samples)
        outputs.append(f"prior_samples_{name}.xy")
        if not args.no_plots:
            from .plots import save_prior_scatter

            save_prior_scatter(out / f"prior_samples_{name}.png", samples, dec.centers)
            outputs.append(f"prior_samples_{name}.png")
    if not args.no_plots:
        from .plots import save_mae_comparison

        save_mae_comparison(out / "toy2d_mae.png", rows)
        outputs.append("toy2d_mae.png")

    mae1 = np.median([m for s, k, m in rows if k == 1])
    maeg = np.median([m for s, k, m in rows if k == t.grid])
    print(f"median MAE k=1: {mae1:.4g}; k={t.grid}: {maeg:.4g}")
    _write_manifest(out, "toy2d", cfg, seed, outputs)
    if not (maeg < mae1 or t.grid == 1):
        print("check failed: multi-cluster decoder did not improve MAE", file=sys.stderr)
        return EXIT_TOY2D
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args)
    seed = _effective_seed(cfg, args)
    out = _out_dir(args)
    worst = run_gradcheck(n_seeds=args.gradcheck_seeds)
    (out / "gradcheck.txt").write_text(f"max_relative_error {worst!r}\n")
    print(f"max relative gradient error over {args.gradcheck_seeds} seeds: {worst:.3e}")
    _write_manifest(out, "gradcheck", cfg, seed, ["gradcheck.txt"])
    if worst >= 1e-4:
        print("check failed: gradient error above 1e-4", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_export_recon(args) -> int:
    from .pipeline import derive_seed, variant_encoding_table
    from .localizer import export_reconstruction
    from .regressor import fill_buffer

    cfg = _load_config(args)
    seed = _effective_seed(cfg, args)
    out = _out_dir(args)
    scene, encodings = load_scene(args.scene)
    head, decoder, _, _, _, _, _, extra = load_checkpoint(args.checkpoint)
    train_cams = extra.get("train_cams", list(range(scene.n_cameras)))
    variant = extra.get("variant", "diffusion")
    table = variant_encoding_table(
        np.asarray(encodings), variant, train_cams, derive_seed(seed, "enc-cluster")
    )
    buffer = fill_buffer(
        scene, cfg.train.samples_per_image, seed=derive_seed(seed, "buffer"),
        camera_indices=train_cams, encodings=table,
        descriptor_noise_sigma=cfg.ambiguity.descriptor_noise_sigma,
        pixel_jitter_sigma=cfg.scene.pixel_jitter_sigma,
    )
    points, ids = export_reconstruction(head, decoder, buffer, args.threshold)
    path = out / "reconstruction.xyz"
    save_point_list(path, points, ids)
    outputs = ["reconstruction.xyz"]
    if not args.no_plots:
        from .plots import save_reconstruction

        save_reconstruction(out / "reconstruction.png", points, ids)
        outputs.append("reconstruction.png")
    print(f"{len(points)} of {len(buffer)} predictions within {args.threshold} px")
    _write_manifest(out, "export-recon", cfg, seed, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="screloc",
        description="Scene-coordinate-regression experiments on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="force sequential reductions (default behavior)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (implementation is single-threaded)")
        p.add_argument("--no-plots", action="store_true",
                       help="skip matplotlib figure rendering")

    p = sub.add_parser("simulate", help="generate scene + encodings")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fill buffer and train a model")
    common(p)
    p.add_argument("--scene", required=True, help="scene file from simulate")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--variant", default="diffusion",
                   help="encoding variant: diffusion|identity|no_global|cluster<K>")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="localize a camera split and report errors")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", choices=("train", "heldout"), default="heldout")
    p.add_argument("--oracle", action="store_true",
                   help="bypass the head; use simulator ground-truth coordinates")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train/evaluate every encoding variant")
    common(p)
    p.add_argument("--scene", default=None, help="reuse a simulated scene")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze-covis", help="pairwise covisibility statistics")
    common(p)
    p.add_argument("--scene", default=None)
    p.set_defaults(func=cmd_analyze_covis)

    p = sub.add_parser("toy2d", help="2D decoder comparison task")
    common(p)
    p.set_defaults(func=cmd_toy2d)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(p)
    p.add_argument("--gradcheck-seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-recon", help="export surviving predicted points")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=5.0,
                   help="reprojection survival threshold (px)")
    p.set_defaults(func=cmd_export_recon)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContainerError, DimensionMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleLayout, FitFailure, Diverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
