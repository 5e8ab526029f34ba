"""Command-line entry point: ``halftone-pid <subcommand>``.

Every subcommand reads the same flat configuration (``--config`` file plus
``--set key=value`` overrides); network widths in the configuration must match
the ones a checkpoint was trained with.
"""

from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
from pathlib import Path


from . import datasets
from .decompose import evaluate_decomposition, train_hcd
from .nn import hcd_spec, load_checkpoint, refiner_spec, save_checkpoint
from .pipeline import (
    RunConfig,
    document_crops,
    document_split,
    evaluate_identification,
    identification_sets,
    parse_overrides,
    render_documents,
    render_patches,
    robustness_sweep,
    run_experiment,
    source_size,
    write_robustness_tsv,
)
from .printer_id import identify_image, train_phase1, train_phase2, transfer_init
from .refiner import refine, train_refiner

log = logging.getLogger("halftone_pid")


def load_config(args) -> RunConfig:
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig().updated(overrides)


def _write_tsv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


# -- subcommands ------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args):
    out = Path(args.out)
    if args.kind == "documents":
        printers = cfg.real_printers()
        docs = render_documents(printers, cfg.images_per_printer, source_size(cfg.image_size), cfg.seed * 7 + 4)
        datasets.write_dataset(out, docs.images, None, docs.labels, docs.seeds)
        print(f"wrote {len(docs.labels)} documents to {out}")
        return
    printers = cfg.real_printers() if args.kind == "real" else cfg.printers()
    rgb, cmyk, keys = render_patches(printers, args.count, cfg.seed * 7 + (1 if args.kind == "real" else 2))
    seeds = [tuple(int(v) for v in k.split(":")[1:]) for k in keys]
    ids = [int(k.split(":")[0]) for k in keys]
    datasets.write_dataset(out, rgb, cmyk, ids, seeds)
    print(f"wrote {args.count} {args.kind} samples to {out}")


def cmd_train_refiner(cfg: RunConfig, args):
    synth = datasets.read_dataset(args.synth, with_cmyk=False).rgb
    real = datasets.read_dataset(args.real, with_cmyk=False).rgb
    res = train_refiner(cfg.gan_config(), synth, real, cfg.seed,
                        progress=lambda t, h: t % 50 == 0 and log.info("iteration %d: %s", t, h[-1].loss))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.refiner, out / "refiner.ckpt")
    save_checkpoint(res.discriminator, out / "discriminator.ckpt")
    _write_tsv(out / "gan_losses.tsv", ["iteration", "network", "loss"],
               [(r.iteration, r.kind, f"{r.loss:.6f}") for r in res.history])
    print(f"wrote refiner and discriminator checkpoints to {out}")


def cmd_refine(cfg: RunConfig, args):
    src, out = Path(args.data), Path(args.out)
    data = datasets.read_dataset(src, with_cmyk=False)
    refined = refine(refiner_spec(cfg.gan_width), load_checkpoint(args.model), data.rgb)
    out.mkdir(parents=True, exist_ok=True)
    rows = datasets.read_manifest(src)
    for row, img in zip(rows, refined):
        (out / row["path"]).parent.mkdir(parents=True, exist_ok=True)
        datasets.write_png(out / row["path"], img)
        if row["cmyk_path"]:
            shutil.copyfile(src / row["cmyk_path"], out / row["cmyk_path"])
    shutil.copyfile(src / datasets.MANIFEST, out / datasets.MANIFEST)
    print(f"refined {len(refined)} samples into {out}")


def cmd_train_hcd(cfg: RunConfig, args):
    data = datasets.read_dataset(args.data)
    res = train_hcd(cfg.hcd_config(), data.rgb, data.cmyk, cfg.seed, keys=data.paths,
                    progress=lambda e, r: log.info("epoch %d: val %.4f", e, r.val_loss[-1]))
    save_checkpoint(res.params, args.out)
    _write_tsv(Path(args.out).with_suffix(".curve.tsv"), ["epoch", "train_loss", "val_loss"],
               [(i + 1, f"{a:.6f}", f"{b:.6f}") for i, (a, b) in enumerate(zip(res.train_loss, res.val_loss))])
    print(f"best epoch {res.best_epoch}; wrote {args.out}")


def cmd_eval_decompose(cfg: RunConfig, args):
    data = datasets.read_dataset(args.data)
    rep = evaluate_decomposition(hcd_spec(cfg.hcd_width), load_checkpoint(args.model), data.rgb, data.cmyk)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    rep.write_tsv(args.out)
    for row in rep.rows():
        print("\t".join(row))


def _documents(path):
    docs = datasets.read_dataset(path, with_cmyk=False)
    return docs.rgb, docs.printer_ids


def cmd_train_pi(cfg: RunConfig, args):
    images, labels = _documents(args.docs)
    split = document_split(cfg, labels)
    sets = identification_sets(cfg, images, labels, split)
    pc = cfg.pi_config(args.phase)
    init = load_checkpoint(args.init)
    if args.phase == 1:
        init = transfer_init(init, hcd_spec(cfg.hcd_width), pc.spec(), cfg.seed)
        res = train_phase1(pc, *sets, init, cfg.seed)
    else:
        res = train_phase2(pc, *sets, init, cfg.seed + 1, cfg.policy())
    save_checkpoint(res.params, args.out)
    _write_tsv(Path(args.out).with_suffix(".curve.tsv"), ["epoch", "train_loss", "val_accuracy"],
               [(i + 1, f"{a:.6f}", f"{b:.6f}") for i, (a, b) in enumerate(zip(res.train_loss, res.val_accuracy))])
    print(f"phase {args.phase}: best validation accuracy {max(res.val_accuracy):.4f} at epoch {res.best_epoch}")


def cmd_identify(cfg: RunConfig, args):
    spec = cfg.pi_config().spec()
    params = load_checkpoint(args.model)
    for path in args.images:
        img = datasets.read_png(path)[:3][None]
        pred, scores = identify_image(spec, params, img)
        print("\t".join([str(path), str(pred)] + [f"{v:.6f}" for v in scores]))


def cmd_evaluate(cfg: RunConfig, args):
    images, labels = _documents(args.docs)
    _, _, te = document_split(cfg, labels)
    spec = cfg.pi_config().spec()
    cm = evaluate_identification(spec, load_checkpoint(args.model), document_crops(cfg, images[te]), labels[te],
                                 cfg.n_printers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cm.write_tsv(out / "confusion.tsv")
    cm.write_image(out / "confusion.png")
    print(f"accuracy {cm.accuracy:.4f} on {int(cm.counts.sum())} images; wrote {out}")


def cmd_robustness(cfg: RunConfig, args):
    images, labels = _documents(args.docs)
    _, _, te = document_split(cfg, labels)
    spec = cfg.pi_config().spec()
    p1, p2 = load_checkpoint(args.phase1), load_checkpoint(args.phase2)
    curves = {}
    for axis in ("rotation", "scaling"):
        c1, c2 = robustness_sweep(spec, p1, p2, images[te], labels[te], axis, cfg.n_printers, cfg.image_size)
        curves[f"phase1:{axis}"], curves[f"phase2:{axis}"] = c1, c2
    write_robustness_tsv(args.out, curves)
    for key, curve in curves.items():
        print(key, " ".join(f"{v:g}:{a:.3f}" for v, a, _ in curve.points))


def cmd_run_all(cfg: RunConfig, args):
    res = run_experiment(cfg, run_dir=args.run_dir, progress=print)
    print(f"run directory: {res.run_dir}")
    print(f"image accuracy: {res.accuracy:.6f}")
    print(f"block accuracy: {res.block_accuracy:.6f}")


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="halftone-pid", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="UTF-8 key=value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
    parser.add_argument("--seed", type=int, help="global seed (overrides the config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("samples", "real", "documents"), default="samples",
                   help="annotated 64x64 samples, real-domain 64x64 samples, or full documents")
    p.add_argument("--count", type=int, default=256)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-refiner", help="adversarially train the refiner")
    p.add_argument("--synth", required=True)
    p.add_argument("--real", required=True)
    p.add_argument("--out", required=True, help="output directory for both checkpoints")
    p.set_defaults(func=cmd_train_refiner)

    p = sub.add_parser("refine", help="refine a dataset, carrying CMYK ground truth over")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("train-hcd", help="train the decomposition network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_hcd)

    p = sub.add_parser("eval-decompose", help="per-channel PSNR/SSIM against the profile baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_decompose)

    p = sub.add_parser("train-pi", help="train the printer classifier")
    p.add_argument("--phase", type=int, choices=(1, 2), required=True)
    p.add_argument("--docs", required=True)
    p.add_argument("--init", required=True, help="HCD checkpoint (phase 1) or phase-1 checkpoint (phase 2)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_pi)

    p = sub.add_parser("identify", help="identify the source printer of document images")
    p.add_argument("images", nargs="+")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("evaluate", help="confusion matrix on the held-out documents")
    p.add_argument("--docs", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("robustness", help="rotation and scaling sweeps for both phases")
    p.add_argument("--docs", required=True)
    p.add_argument("--phase1", required=True)
    p.add_argument("--phase2", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("run-all", help="the whole pipeline into a timestamped run directory")
    p.add_argument("--run-dir", help="use this directory instead of a new timestamped one")
    p.set_defaults(func=cmd_run_all)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
    except (KeyError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    args.func(cfg, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
