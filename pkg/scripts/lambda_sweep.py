"""Refiner self-regularization sweep: drift and probe separability per lambda.

    python scripts/lambda_sweep.py --lambdas 0.05,0.3,1.0 --iters 300
"""

import argparse
import time

from halftone_pid.pipeline import RunConfig, gan_data, render_patches
from halftone_pid.refiner import evaluate_refinement, train_refiner


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lambdas", default="0.05,0.3,1.0")
    ap.add_argument("--iters", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    base = RunConfig(seed=args.seed, gan_iters=args.iters)
    synth, real = gan_data(base, args.seed * 7 + 1)
    held_synth = render_patches(base.printers(), base.gan_holdout, args.seed * 7 + 8)[0]
    held_real = render_patches(base.real_printers(), base.gan_holdout, args.seed * 7 + 9)[0]
    print("lambda\tdrift\traw_probe\trefined_probe\tseconds")
    for lam in (float(v) for v in args.lambdas.split(",")):
        cfg = base.updated({"gan_lambda": str(lam)})
        t0 = time.perf_counter()
        res = train_refiner(cfg.gan_config(), synth, real, args.seed)
        rep = evaluate_refinement(res.refiner_spec, res.refiner, held_synth, held_real, args.seed,
                                  cfg.gan_disc_width, cfg.probe_steps)
        print(f"{lam:g}\t{rep.drift:.4f}\t{rep.raw_probe:.3f}\t{rep.refined_probe:.3f}\t"
              f"{time.perf_counter() - t0:.0f}", flush=True)


if __name__ == "__main__":
    main()
