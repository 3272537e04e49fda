"""Sweep the generator's signal strength or user-noise level.

For each setting a single depth-3 GBDT is trained on lookup-enhanced
features and compared with the user-entered surrogate on a 30% hold-out.

    python scripts/sweep.py --param signal --values 0 0.5 1 2 3 4
    python scripts/sweep.py --param noise --values 0.05 0.1 0.25 0.5
"""

import argparse

import numpy as np

from oppforecast import enhance, gbdt, ingest, synth
from oppforecast.calibrate import optimal_boundary
from oppforecast.gbdt import Hyperparams
from oppforecast.metrics import roc_auc


def run(cfg: synth.SynthConfig, hp: Hyperparams, seed: int) -> dict:
    clean, _ = ingest.drop_missing(synth.generate(cfg))
    train, test = ingest.split_train_test(clean, 0.7, seed)
    lookups = enhance.build_lookups(train)
    ftr, fte = enhance.enhance_records(train, lookups), enhance.enhance_records(test, lookups)
    model = gbdt.train(ftr, ftr.label, hp)
    t = optimal_boundary(gbdt.predict_proba(model, ftr.values), ftr.label)
    p = gbdt.predict_proba(model, fte.values)
    y = fte.label == 1
    up = np.array([r.user_probability for r in test])
    return {
        "auc": roc_auc(p, y),
        "accuracy": float(np.mean((p > t) == y)),
        "user_auc": roc_auc(up, y),
        "user_accuracy": float(np.mean((up > 0.5) == y)),
    }


def main():
    ap = argparse.ArgumentParser(description="generator sweep")
    ap.add_argument("--param", choices=("signal", "noise"), default="signal")
    ap.add_argument("--values", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0, 3.0, 4.0])
    ap.add_argument("--n", type=int, default=25000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--depth", type=int, default=3)
    args = ap.parse_args()

    hp = Hyperparams(n_trees=50, max_depth=args.depth)
    print(f"{args.param:>8} {'auc':>7} {'acc':>7} {'user_auc':>9} {'user_acc':>9}")
    for v in args.values:
        key = "signal_strength" if args.param == "signal" else "noise_user_prediction"
        r = run(synth.SynthConfig(n_records=args.n, seed=args.seed, **{key: v}), hp, args.seed)
        print(f"{v:>8.2f} {r['auc']:>7.4f} {r['accuracy']:>7.4f} {r['user_auc']:>9.4f} {r['user_accuracy']:>9.4f}")


if __name__ == "__main__":
    main()
