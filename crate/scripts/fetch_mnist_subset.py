#!/usr/bin/env python3
"""Write a 2000-sample MNIST subset as IDX files.

Source: the 5000-sample MNIST extract bundled in the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz; 784 pixel columns then the label,
500 rows per digit, sorted by digit). The first 200 rows of each digit are
kept and interleaved digit by digit, so contiguous folds are stratified.

usage: fetch_mnist_subset.py WHEEL OUT_DIR [--per-class 200]
"""
import argparse
import gzip
import os
import struct
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wheel")
    ap.add_argument("out_dir")
    ap.add_argument("--per-class", type=int, default=200)
    args = ap.parse_args()

    text = gzip.decompress(zipfile.ZipFile(args.wheel).read(MEMBER)).decode()
    by_class = {}
    for line in text.splitlines():
        vals = line.split(",")
        label = int(float(vals[-1]))
        by_class.setdefault(label, []).append([int(float(v)) for v in vals[:-1]])
    classes = sorted(by_class)
    rows, labels = [], []
    for i in range(args.per_class):
        for c in classes:
            rows.append(by_class[c][i])
            labels.append(c)

    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "train-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for r in rows:
            f.write(bytes(r))
    with open(os.path.join(args.out_dir, "train-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(rows)} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
