"""Command-line entry point.

Subcommands cover the full experiment cycle on one YAML config:

    synth          write synthetic train/test radar archives
    prepare-data   archives -> QC'd, cropped, normalized sample container
    train MODEL    MODEL in {unet, gnet, gan, aleatoric}
    evaluate       verification metrics for a checkpoint or persistence
    predict        one sample's predicted hour as arrays + panel figure
    uncertainty    epistemic (test-time dropout) or aleatoric summaries
    gradcam        per-layer importance heatmaps for one sample
    report         collect metrics/uncertainty artifacts into tables + figures

Exit codes: 0 success, 1 runtime failure, 2 configuration error (the message
names the offending key or flag).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .container import read_container
from .masks import accumulate_hour
from .pipeline import prepare_split
from .train import TensorData, train_gan, train_supervised, train_val_split

log = logging.getLogger("gnetcast")


def _out_dir(cfg, *parts):
    d = Path(cfg.run.output_dir).joinpath(*parts)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_provenance(cfg, out_dir):
    from .models import _git_hash

    (out_dir / "resolved_config.yaml").write_text(cfg.to_yaml())
    (out_dir / "version.txt").write_text(f"gnetcast {__version__} {_git_hash()}\n")


def _load_model(path):
    from .models import load_checkpoint

    if path is None:
        raise ConfigError("this command needs --checkpoint PATH (or --persistence where supported)")
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    return load_checkpoint(path)


def _pick_generator_cfg(cfg, variant):
    g = cfg.generator
    if variant == "unet":
        return dataclasses.replace(g, dual_encoder=False, aleatoric_head=False)
    if variant == "gnet" or variant == "gan":
        return dataclasses.replace(g, dual_encoder=True, aleatoric_head=False)
    if variant == "aleatoric":
        return dataclasses.replace(g, dual_encoder=True, aleatoric_head=True)
    raise ConfigError(f"unknown train model '{variant}'")


# ------------------------------------------------------------------ commands

def cmd_synth(cfg, args):
    from .synthetic import synth_archive

    out = _out_dir(cfg, "synth")
    _write_provenance(cfg, out)
    for name, storm, path in (("train", cfg.storm_train, cfg.data.train_archive),
                              ("test", cfg.storm_test, cfg.data.test_archive)):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        n = synth_archive(path, storm)
        print(f"{name} archive: {path} ({n} frames)")
    return 0


def cmd_prepare_data(cfg, args):
    from .container import write_container

    out = _out_dir(cfg)
    d = cfg.data
    crop = None if d.crop_origin is None else _crop_from(d.crop_origin)
    train_samples, landmask64, norm_max, crop, qc_train = prepare_split(
        d.train_archive, d.schema, crop,
        rain_fraction_threshold=d.rain_fraction_threshold, per_frame=d.per_frame_rain_rule)
    test_samples, _, _, _, qc_test = prepare_split(
        d.test_archive, d.schema, crop, norm_max=norm_max,
        rain_fraction_threshold=d.rain_fraction_threshold, per_frame=d.per_frame_rain_rule)
    _attach_masks(train_samples, norm_max, d.mask_inclusive)
    _attach_masks(test_samples, norm_max, d.mask_inclusive)

    Path(d.dataset).parent.mkdir(parents=True, exist_ok=True)
    write_container(d.dataset, {"train": train_samples, "test": test_samples},
                    norm_max, crop, landmask64,
                    provenance={"config": cfg.to_dict(),
                                "counts": {"train": len(train_samples), "test": len(test_samples)}})
    (out / "qc_report.json").write_text(json.dumps(
        {"train": qc_train.to_dict(), "test": qc_test.to_dict()}, indent=2))
    _write_provenance(cfg, out)
    print(f"container: {d.dataset} (train {len(train_samples)}, test {len(test_samples)}, "
          f"norm_max {norm_max:g}, crop ({crop.origin_row}, {crop.origin_col}))")
    return 0


def _crop_from(origin):
    from .pipeline import CropSpec

    return CropSpec(int(origin[0]), int(origin[1]))


def _attach_masks(samples, norm_max, inclusive):
    from .masks import masks_for_sample

    for s in samples:
        s.m = masks_for_sample(s.x, norm_max, inclusive=inclusive)


def cmd_train(cfg, args):
    from .discriminator import PatchDiscriminator
    from .models import build_generator

    variant = args.model
    out = _out_dir(cfg, f"train_{variant}")
    _write_provenance(cfg, out)
    c = read_container(cfg.data.dataset, "train")
    data = TensorData.from_container(c)
    train_data, val_data = train_val_split(data, cfg.data.validation_fraction)
    gen_cfg = _pick_generator_cfg(cfg, variant)
    model = build_generator(gen_cfg)
    resume = str(out / "last.pt") if args.resume else None
    if variant == "gan":
        D = PatchDiscriminator(cfg.discriminator)
        result = train_gan(model, D, train_data, val_data, cfg.train, out_dir=out,
                           resume_from=resume, norm_max=c.norm_max, log_cb=_print_row)
    else:
        loss_kind = "aleatoric" if variant == "aleatoric" else "mse"
        result = train_supervised(model, train_data, val_data, cfg.train,
                                  loss_kind=loss_kind, out_dir=out, resume_from=resume,
                                  norm_max=c.norm_max, log_cb=_print_row)
    print(f"done: best epoch {result.best_epoch} val MSE {result.best_val_mse:.6g} "
          f"(stopped after epoch {result.final_epoch}); checkpoints in {out}")
    return 0


def _print_row(row):
    bits = [f"epoch {row['epoch']}"]
    for key in ("train_loss", "train_g_total", "val_mse", "val_loss", "val_d_loss"):
        if row.get(key) is not None:
            bits.append(f"{key}={row[key]:.6g}")
    print("  ".join(bits))


def cmd_evaluate(cfg, args):
    from .metrics import evaluate_model
    from .models import PersistenceModel
    from .plots import plot_leadtime_series

    out = _out_dir(cfg, "evaluate")
    data = read_container(cfg.data.dataset, args.split)
    if args.persistence:
        model, name = PersistenceModel(), "persistence"
    else:
        model, sidecar = _load_model(args.checkpoint)
        name = args.name or Path(args.checkpoint).parent.name or type(model).__name__
        if sidecar.get("norm_max") not in (None, data.norm_max):
            log.warning("checkpoint norm_max %s differs from container %s",
                        sidecar["norm_max"], data.norm_max)
    report = evaluate_model(model, data, runs=args.runs, per_season=args.per_season,
                            seed=cfg.run.seed, model_name=name)
    stem = out / f"metrics_{name}"
    Path(f"{stem}.json").write_text(report.to_json())
    Path(f"{stem}.csv").write_text(report.to_csv())
    plot_leadtime_series({name: report.per_leadtime_mse},
                         "MSE (mm$^2$)", out / f"mse_per_leadtime_{name}.png")
    _write_provenance(cfg, out)
    print(f"{name}: mse {report.mse:.6g}")
    for thr, block in sorted(report.thresholds.items(), key=lambda kv: float(kv[0])):
        print(f"  > {thr} mm: f1 {block['f1']:.5f}  csi {block['csi']:.5f}  "
              f"hss {block['hss']:.5f}  mcc {block['mcc']:.5f}")
    return 0


def cmd_predict(cfg, args):
    from .metrics import predict_mean
    from .plots import plot_prediction_panel
    import torch

    out = _out_dir(cfg, "predict")
    data = read_container(cfg.data.dataset, args.split)
    if not 0 <= args.index < data.n:
        raise ConfigError(f"--index {args.index} outside split of {data.n} samples")
    model, _ = _load_model(args.checkpoint)
    x = torch.as_tensor(data.x[args.index:args.index + 1])
    m = torch.as_tensor(data.m[args.index:args.index + 1], dtype=torch.float32)
    pred = predict_mean(model, x, m, args.runs, seed=cfg.run.seed)[0].numpy()
    np.savez_compressed(out / f"prediction_{args.index}.npz",
                        x=data.x[args.index], y=data.y[args.index], y_hat=pred)
    plot_prediction_panel(accumulate_hour(data.x[args.index], data.norm_max),
                          accumulate_hour(data.y[args.index], data.norm_max),
                          accumulate_hour(pred, data.norm_max),
                          out / f"prediction_{args.index}.png")
    _write_provenance(cfg, out)
    print(f"prediction for sample {args.index} written to {out}")
    return 0


def cmd_uncertainty(cfg, args):
    from .plots import plot_leadtime_series, plot_season_bars, plot_uncertainty_maps
    from .uncertainty import (aleatoric_infer, save_maps, summarize_uncertainty,
                              ttd_predict)

    out = _out_dir(cfg, f"uncertainty_{args.kind}")
    data = read_container(cfg.data.dataset, args.split)
    model, _ = _load_model(args.checkpoint)
    series = summarize_uncertainty(model, data, kind=args.kind,
                                   group_by=args.group_by, k=args.k, seed=cfg.run.seed)
    series.write(out, f"{args.kind}_{args.group_by}")
    if args.group_by == "leadtime":
        plot_leadtime_series({args.kind: series.values},
                             "mean variance (normalized$^2$)",
                             out / f"{args.kind}_leadtime.png")
    else:
        plot_season_bars({args.kind: dict(zip(series.labels, series.values))},
                         "mean variance (normalized$^2$)",
                         out / f"{args.kind}_season.png")
    if not 0 <= args.index < data.n:
        raise ConfigError(f"--index {args.index} outside split of {data.n} samples")
    if args.kind == "epistemic":
        maps = ttd_predict(model, data.x[args.index], data.m[args.index],
                           k=args.k, seed=cfg.run.seed)
    else:
        maps = aleatoric_infer(model, data.x[args.index], data.m[args.index])
    save_maps(maps, out / f"maps_{args.index}.npz")
    plot_uncertainty_maps(maps.variance, out / f"maps_{args.index}.png",
                          title=f"{args.kind} variance, sample {args.index}")
    _write_provenance(cfg, out)
    print(f"{args.kind} uncertainty: overall mean variance {series.overall:.6g}")
    return 0


def cmd_gradcam(cfg, args):
    from .gradcam import heatmap_grid, list_layers

    out = _out_dir(cfg, "gradcam")
    data = read_container(cfg.data.dataset, args.split)
    model, _ = _load_model(args.checkpoint)
    if args.list_layers:
        for name in list_layers(model):
            print(name)
        return 0
    if not 0 <= args.index < data.n:
        raise ConfigError(f"--index {args.index} outside split of {data.n} samples")
    layers = None
    if args.layers:
        known = set(list_layers(model))
        layers = [s.strip() for s in args.layers.split(",") if s.strip()]
        for name in layers:
            if name not in known:
                raise ConfigError(f"--layers names unknown site '{name}'; "
                                  f"try --list-layers")
    results = heatmap_grid(model, data.x[args.index], data.m[args.index],
                           data.norm_max, out / f"gradcam_{args.index}.png",
                           layers=layers, binarize_threshold_mm=args.threshold)
    np.savez_compressed(out / f"gradcam_{args.index}.npz",
                        **{name.replace("/", "__"): r.heatmap for name, r in results.items()})
    _write_provenance(cfg, out)
    empty = [name for name, r in results.items() if r.empty]
    note = f" ({len(empty)} sites flagged empty)" if empty else ""
    print(f"gradcam: {len(results)} heatmaps for sample {args.index}{note}")
    return 0


def cmd_report(cfg, args):
    from .metrics import MetricsReport
    from .plots import (plot_leadtime_series, plot_metric_table, plot_season_bars)

    out = _out_dir(cfg, "report")
    eval_dir = _out_dir(cfg, "evaluate")
    reports = []
    for path in sorted(eval_dir.glob("metrics_*.json")):
        reports.append(MetricsReport.from_json(path.read_text()))
    if not reports:
        raise FileNotFoundError(f"no metrics_*.json under {eval_dir}; run evaluate first")

    # Table-2-shaped summary
    rows = ["model,threshold_mm,mse,f1,csi,hss,mcc"]
    for rep in reports:
        for thr in sorted(rep.thresholds, key=float):
            b = rep.thresholds[thr]
            rows.append(f"{rep.model},{thr},{rep.mse!r},{b['f1']!r},{b['csi']!r},"
                        f"{b['hss']!r},{b['mcc']!r}")
    (out / "table_metrics.csv").write_text("\n".join(rows) + "\n")
    plot_metric_table(reports, out / "table_metrics.png")
    plot_leadtime_series({r.model: r.per_leadtime_mse for r in reports},
                         "MSE (mm$^2$)", out / "mse_per_leadtime.png")
    seasonal = {r.model: {s: blk["mse"] for s, blk in (r.seasons or {}).items()}
                for r in reports if r.seasons}
    if seasonal:
        plot_season_bars(seasonal, "MSE (mm$^2$)", out / "mse_per_season.png")

    for kind in ("epistemic", "aleatoric"):
        sdir = Path(cfg.run.output_dir) / f"uncertainty_{kind}"
        sfile = sdir / f"{kind}_season.json"
        if sfile.exists():
            doc = json.loads(sfile.read_text())
            plot_season_bars({kind: dict(zip(doc["labels"], doc["values"]))},
                             "mean variance", out / f"{kind}_season.png")
    _write_provenance(cfg, out)
    print(f"report written to {out} ({len(reports)} model(s))")
    return 0


# -------------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="gnetcast",
                                description="Extreme-precipitation nowcasting toolkit")
    p.add_argument("--version", action="version", version=f"gnetcast {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="YAML run config")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("synth", help="write synthetic radar archives")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("prepare-data", help="archives -> dataset container")
    common(sp)
    sp.set_defaults(func=cmd_prepare_data)

    sp = sub.add_parser("train", help="train a model variant")
    common(sp)
    sp.add_argument("model", choices=["unet", "gnet", "gan", "aleatoric"])
    sp.add_argument("--resume", action="store_true", help="resume from last.pt")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="verification metrics for a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--persistence", action="store_true")
    sp.add_argument("--split", default="test", choices=["train", "test"])
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--per-season", action="store_true")
    sp.add_argument("--name", default=None, help="label used in report artifacts")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("predict", help="predict one sample")
    common(sp)
    sp.add_argument("--checkpoint", required=False)
    sp.add_argument("--split", default="test", choices=["train", "test"])
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--runs", type=int, default=10)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("uncertainty", help="uncertainty maps and summaries")
    common(sp)
    sp.add_argument("kind", choices=["epistemic", "aleatoric"])
    sp.add_argument("--checkpoint")
    sp.add_argument("--split", default="test", choices=["train", "test"])
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--group-by", default="leadtime", choices=["leadtime", "season"])
    sp.add_argument("--index", type=int, default=0)
    sp.set_defaults(func=cmd_uncertainty)

    sp = sub.add_parser("gradcam", help="layer importance heatmaps")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--split", default="test", choices=["train", "test"])
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--layers", default=None,
                    help="comma-separated site ids, e.g. enc_map/d1/cbam")
    sp.add_argument("--threshold", type=float, default=0.5,
                    help="binarization threshold, mm per hour")
    sp.add_argument("--list-layers", action="store_true")
    sp.set_defaults(func=cmd_gradcam)

    sp = sub.add_parser("report", help="tables and figures from saved artifacts")
    common(sp)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(getattr(args, "config", None))
        return args.func(cfg, args) or 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures exit 1 with a one-line reason
        if getattr(args, "verbose", False):
            raise
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
