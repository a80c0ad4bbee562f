"""Rebuild the bundled IDX samples from the `mnist` / `fashion-mnist` npm packages.

    npm pack mnist fashion-mnist && tar xzf mnist-1.1.0.tgz -C mnist ...
    python scripts/build_bundled_data.py --mnist mnist/package/src/digits \
        --fmnist fmnist/package/src/clothes
"""

import argparse
from pathlib import Path

from qunnbench.data import read_npm_json, split_pool, write_idx

OUT = Path(__file__).resolve().parents[1] / "src" / "qunnbench" / "datasets"


def build(src, name, scale, n_test, n_train):
    images, labels = read_npm_json(src, scale)
    (xtr, ytr), (xte, yte) = split_pool(images, labels, n_test, n_train, seed=0)
    root = OUT / name
    write_idx(root / "train-images-idx3-ubyte.gz", root / "train-labels-idx1-ubyte.gz", xtr, ytr)
    write_idx(root / "t10k-images-idx3-ubyte.gz", root / "t10k-labels-idx1-ubyte.gz", xte, yte)
    print(f"{name}: {len(ytr)} train / {len(yte)} test")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist", type=Path)
    ap.add_argument("--fmnist", type=Path)
    args = ap.parse_args()
    if args.mnist:
        build(args.mnist, "mnist-sample", 255.0, 100, None)
    if args.fmnist:
        build(args.fmnist, "fmnist-sample", 1.0, 100, 400)


if __name__ == "__main__":
    main()
