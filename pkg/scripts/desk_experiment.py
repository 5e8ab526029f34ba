"""Full desk-scale run with the default configuration, then a digest of its reports.

    python scripts/desk_experiment.py --out runs --set seed=1
"""

import argparse

from halftone_pid.pipeline import RunConfig, parse_overrides, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="key=value configuration file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out", default="runs", help="parent directory for the run")
    args = ap.parse_args()

    overrides = {"out_dir": args.out, **parse_overrides(args.set)}
    cfg = RunConfig.from_file(args.config, overrides) if args.config else RunConfig().updated(overrides)
    res = run_experiment(cfg, progress=print)

    print(f"\nrun directory: {res.run_dir}")
    if res.refinement is not None:
        r = res.refinement
        print(f"refinement: drift {r.drift:.4f}, probe raw {r.raw_probe:.3f} -> refined {r.refined_probe:.3f}")
    print("decomposition (PSNR dB / SSIM):")
    for ch in "CMYK":
        d = res.decomposition
        print(f"  {ch}: hcd {d.psnr['hcd'][ch]:6.2f} / {d.ssim['hcd'][ch]:.3f}   "
              f"baseline {d.psnr['baseline'][ch]:6.2f} / {d.ssim['baseline'][ch]:.3f}")
    print(f"phase 1: image {res.confusion_phase1.accuracy:.4f}, block {res.block_accuracy_phase1:.4f}")
    print(f"phase 2: image {res.accuracy:.4f}, block {res.block_accuracy:.4f}")
    for key, curve in res.robustness.items():
        print(f"  {key:16s} " + "  ".join(f"{v:g}:{a:.3f}" for v, a, _ in curve.points))
    print("stage seconds: " + ", ".join(f"{k} {v:.0f}" for k, v in res.timings.items()))


if __name__ == "__main__":
    main()
