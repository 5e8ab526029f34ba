"""Decomposition quality with and without adversarial refinement of the training set.

Both arms are evaluated on the same held-out samples, which are refined in the
refined arm and raw in the other (each arm evaluates in its own input domain).
"""

import argparse

from halftone_pid.pipeline import RunConfig, hcd_data, gan_data
from halftone_pid.decompose import evaluate_decomposition, train_hcd
from halftone_pid.refiner import refine, train_refiner


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = RunConfig(seed=args.seed)
    rgb, cmyk, keys = hcd_data(cfg, cfg.hcd_train, args.seed * 7 + 2)
    ev_rgb, ev_cmyk, _ = hcd_data(cfg, cfg.hcd_eval, args.seed * 7 + 3)
    gan = train_refiner(cfg.gan_config(), *gan_data(cfg, args.seed * 7 + 1), args.seed)
    arms = {
        "raw": (rgb, ev_rgb),
        "refined": (refine(gan.refiner_spec, gan.refiner, rgb), refine(gan.refiner_spec, gan.refiner, ev_rgb)),
    }
    print("arm\tchannel\thcd_psnr\thcd_ssim\tbaseline_psnr\tbaseline_ssim")
    for name, (train_rgb, eval_rgb) in arms.items():
        res = train_hcd(cfg.hcd_config(), train_rgb, cmyk, args.seed, keys)
        rep = evaluate_decomposition(res.spec, res.params, eval_rgb, ev_cmyk)
        for row in rep.rows()[1:]:
            print(name + "\t" + "\t".join(row), flush=True)


if __name__ == "__main__":
    main()
