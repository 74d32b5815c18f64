"""Compare contrastive, triplet and lifted-smooth embeddings on synthetic blobs.

Trains each loss on the train half of a class-disjoint split for several seeds
and prints per-run and median test Recall@1 / NMI / F1.

    python3 scripts/compare_losses.py                 # the acceptance setup
    python3 scripts/compare_losses.py --sigma 0.4 --lr 0.003 --seeds 0 1 2
"""

import argparse
import dataclasses
import json

from liftedstruct.experiments import ACCEPTANCE_SETUP, as_dict, raw_feature_baseline, run_comparison, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--sigma", type=float, help="blob noise standard deviation")
    p.add_argument("--lr", type=float, help="learning rate shared by all losses (skips per-loss selection)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--losses", nargs="+")
    p.add_argument("--json", help="write the outcomes here")
    args = p.parse_args()

    changes = {k: v for k, v in {"noise_sigma": args.sigma, "learning_rate": args.lr,
                                 "max_iterations": args.iterations,
                                 "seeds": tuple(args.seeds) if args.seeds else None,
                                 "losses": tuple(args.losses) if args.losses else None}.items() if v is not None}
    if args.lr is not None:
        changes["lr_grid"] = ()  # a fixed rate replaces per-loss selection
    setup = dataclasses.replace(ACCEPTANCE_SETUP, **changes)
    print("setup:", json.dumps(as_dict(setup), sort_keys=True))
    print("raw input features:", raw_feature_baseline(setup))

    def progress(o):
        print(f"  {o.loss:15s} seed {o.seed}: R@1 {o.recall_at_1:.3f}  NMI {o.nmi:.3f}  F1 {o.f1:.3f}  "
              f"final loss {o.final_loss:.4g}  ({o.seconds:.1f}s)", flush=True)

    outcomes = run_comparison(setup, progress)
    print("medians:")
    for loss, row in summarize(outcomes).items():
        print(f"  {loss:15s} R@1 {row['recall_at_1']:.3f}  NMI {row['nmi']:.3f}  F1 {row['f1']:.3f}  "
              f"({row['seconds']:.0f}s total)")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"setup": as_dict(setup), "runs": [dataclasses.asdict(o) for o in outcomes]}, fh, indent=2)


if __name__ == "__main__":
    main()
