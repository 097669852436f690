"""Train on a small synthetic dataset and print per-epoch progress plus held-out metrics."""

import argparse

from vaca.circuit import SynthSpec, synth_dataset
from vaca.losses import LossConfig
from vaca.trainer import TrainConfig, evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--designs", type=int, default=28)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--mode", choices=["placement", "logic_synthesis"], default="placement")
    ap.add_argument("--lam", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    dataset = synth_dataset(args.designs, SynthSpec(), seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed, mode=args.mode, loss=LossConfig(lam=args.lam))

    def log(entry):
        val = entry["val_spearman_grid"]
        val = "n/a" if val is None else f"{val:.4f}"
        print(f"epoch {entry['epoch']:3d}  risk {entry['risk']:10.2f}  vi_loss {entry['vi_loss']:12.2f}  val spearman {val}")

    state = train(dataset, cfg, log=log)
    rec = evaluate(state.model, dataset.split("test"), cfg.logic)
    for level in ("grid", "cell"):
        print(f"test {level}: " + "  ".join(f"{m} {rec[f'{m}_{level}']:.4f}" for m in ("pearson", "spearman", "kendall")))


if __name__ == "__main__":
    main()
