#!/usr/bin/env python3
"""Fraction of exactly-zero subspace entries under proximal l1 training, per weight."""

import argparse

import numpy as np

from eldkit.baysmm import SmmTrainConfig, train
from eldkit.confnet import accumulate_bow
from eldkit.corpus import build_vocabulary, vectorize
from eldkit.synth import SynthConfig, generate


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--weights", default="1e-2,1e-1,1,10")
    p.add_argument("--K", type=int, default=64)
    p.add_argument("--iters", type=int, default=100)
    args = p.parse_args()

    cns, _ = generate(SynthConfig())
    bows = [accumulate_bow(cn) for cn in cns]
    matrix, _ = vectorize(bows, build_vocabulary(bows))
    print("lambda\tzero_fraction\tfinal_elbo")
    for lam in (float(w) for w in args.weights.split(",")):
        res = train(matrix, SmmTrainConfig(K=args.K, iters=args.iters, reg_type="l1", reg_weight=lam))
        print(f"{lam:g}\t{np.mean(res.params.T == 0):.4f}\t{res.elbo_trace[-1]:.1f}")


if __name__ == "__main__":
    main()
