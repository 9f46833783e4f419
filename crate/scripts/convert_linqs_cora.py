#!/usr/bin/env python3
"""Convert the LINQS Cora release (cora.content / cora.cites) into the
edges.tsv / labels.csv / features.csv.gz / split.json directory layout.

Node ids follow the order of cora.content. Classes are numbered by sorted
class name. The split mirrors the Planetoid protocol: 20 training nodes per
class, 500 validation and 1000 test nodes, drawn from a seeded permutation.

usage: convert_linqs_cora.py <linqs_dir> <out_dir> [seed]
"""
import gzip
import json
import os
import sys

import numpy as np


def main():
    src, out = sys.argv[1], sys.argv[2]
    seed = int(sys.argv[3]) if len(sys.argv) > 3 else 0
    ids, feats, names = [], [], []
    with open(os.path.join(src, "cora.content")) as f:
        for line in f:
            parts = line.split()
            ids.append(parts[0])
            feats.append(parts[1:-1])
            names.append(parts[-1])
    index = {p: i for i, p in enumerate(ids)}
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names])
    edges = set()
    with open(os.path.join(src, "cora.cites")) as f:
        for line in f:
            a, b = line.split()
            i, j = index[a], index[b]
            if i != j:
                edges.add((min(i, j), max(i, j)))

    rng = np.random.RandomState(seed)
    perm = rng.permutation(len(ids))
    train = []
    for c in range(len(classes)):
        train.extend(int(i) for i in perm if labels[i] == c)
        del train[len(train) - (sum(labels[perm] == c) - 20):]
    rest = [int(i) for i in perm if int(i) not in set(train)]
    split = {"train": sorted(train), "val": sorted(rest[:500]), "test": sorted(rest[500:1500])}

    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "edges.tsv"), "w") as f:
        for i, j in sorted(edges):
            f.write(f"{i}\t{j}\n")
    with open(os.path.join(out, "labels.csv"), "w") as f:
        for l in labels:
            f.write(f"{l}\n")
    with gzip.open(os.path.join(out, "features.csv.gz"), "wt") as f:
        for row in feats:
            f.write(",".join(row) + "\n")
    with open(os.path.join(out, "split.json"), "w") as f:
        json.dump(split, f)
    print(f"cora: n={len(ids)} undirected_edges={len(edges)} d={len(feats[0])} c={len(classes)}")


if __name__ == "__main__":
    main()
