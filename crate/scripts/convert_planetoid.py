#!/usr/bin/env python3
"""Convert a Planetoid citation dataset (ind.<name>.* pickles) into the
edges.tsv / labels.csv / features.csv.gz / split.json directory layout.

The public split is reproduced: the first 20 labelled nodes per class form
the training set, the next 500 nodes the validation set, and test.index
lists the 1000 test nodes.

usage: convert_planetoid.py <planetoid_dir> <name> <out_dir>
"""
import gzip
import json
import os
import pickle
import sys

import numpy as np
import scipy.sparse as sp


def load(path, name, suffix):
    with open(os.path.join(path, f"ind.{name}.{suffix}"), "rb") as f:
        return pickle.load(f, encoding="latin1")


def main():
    src, name, out = sys.argv[1], sys.argv[2], sys.argv[3]
    x, y, tx, ty, allx, ally, graph = (
        load(src, name, s) for s in ["x", "y", "tx", "ty", "allx", "ally", "graph"]
    )
    with open(os.path.join(src, f"ind.{name}.test.index")) as f:
        test_idx = [int(line) for line in f if line.strip()]
    test_sorted = np.sort(test_idx)

    n = max(max(graph.keys()) + 1, allx.shape[0] + tx.shape[0])
    if name == "citeseer":
        # Isolated nodes are missing from tx/ty; pad them as unlabeled rows.
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    features = sp.vstack((allx, tx)).tolil()
    features[test_idx, :] = features[test_sorted, :]
    onehot = np.vstack((ally, ty))
    onehot[test_idx, :] = onehot[test_sorted, :]
    labels = np.where(onehot.sum(1) > 0, onehot.argmax(1), -1)
    n = features.shape[0]

    os.makedirs(out, exist_ok=True)
    edges = set()
    for i, nbrs in graph.items():
        for j in nbrs:
            if i != j and i < n and j < n:
                edges.add((min(i, j), max(i, j)))
    with open(os.path.join(out, "edges.tsv"), "w") as f:
        for i, j in sorted(edges):
            f.write(f"{i}\t{j}\n")
    with open(os.path.join(out, "labels.csv"), "w") as f:
        for l in labels:
            f.write(f"{int(l)}\n")
    dense = features.toarray()
    with gzip.open(os.path.join(out, "features.csv.gz"), "wt") as f:
        for row in dense:
            f.write(",".join("%g" % v for v in row) + "\n")
    split = {
        "train": list(range(y.shape[0])),
        "val": list(range(y.shape[0], y.shape[0] + 500)),
        "test": sorted(int(i) for i in test_idx),
    }
    with open(os.path.join(out, "split.json"), "w") as f:
        json.dump(split, f)
    print(f"{name}: n={n} undirected_edges={len(edges)} d={dense.shape[1]} c={onehot.shape[1]}")


if __name__ == "__main__":
    main()
