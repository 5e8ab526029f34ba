"""Upper bound for refinement: probe an exact extra blur against the real domain.

The real domain differs from the synthetic one by a heavier camera blur, so
blurring synthetic samples by sqrt(real^2 - synthetic^2) is the ideal refiner.
"""

import argparse

import numpy as np
from scipy.ndimage import gaussian_filter

from halftone_pid.pipeline import RunConfig, render_patches
from halftone_pid.refiner import probe_separability


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = RunConfig(seed=args.seed)
    synth = render_patches(cfg.printers(), args.count, args.seed * 7 + 8)[0]
    real = render_patches(cfg.real_printers(), args.count, args.seed * 7 + 9)[0]
    extra = float(np.sqrt(cfg.real_blur ** 2 - cfg.printer_blur ** 2))
    print("sigma\tdrift\tprobe")
    print(f"raw\t0.0000\t{probe_separability(synth, real, args.seed, cfg.gan_disc_width, cfg.probe_steps):.3f}")
    for sigma in (extra / 2, extra):
        blurred = gaussian_filter(synth, (0, 0, sigma, sigma), mode="nearest").astype(np.float32)
        drift = float(np.abs(blurred - synth).mean())
        acc = probe_separability(blurred, real, args.seed, cfg.gan_disc_width, cfg.probe_steps)
        print(f"{sigma:.3f}\t{drift:.4f}\t{acc:.3f}")


if __name__ == "__main__":
    main()
