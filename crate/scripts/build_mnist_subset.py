#!/usr/bin/env python3
"""Build gzipped MNIST IDX files from the digits bundled in the npm `mnist` package.

Usage: build_mnist_subset.py <path to unpacked npm package dir> <output dir>

The package ships 10,000 MNIST digits as per-class JSON arrays of intensities
scaled to [0, 1] and rounded to three decimals; the rounding is invertible, so
round(v * 255) recovers the original 8-bit pixels. Digits are shuffled with a
fixed seed and split into 8,000 training and 2,000 test images.
"""
import gzip
import json
import os
import struct
import sys

import numpy as np

N_TRAIN = 8000


def write_idx(path, array, magic):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in array.shape:
            f.write(struct.pack(">I", d))
        f.write(array.astype(np.uint8).tobytes())


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            data = np.array(json.load(f)["data"]).reshape(-1, 28, 28)
        images.append(np.rint(data * 255))
        labels += [digit] * len(data)
    images = np.concatenate(images)
    labels = np.array(labels)
    order = np.random.RandomState(20230611).permutation(len(labels))
    images, labels = images[order], labels[order]
    os.makedirs(out, exist_ok=True)
    write_idx(os.path.join(out, "train-images-idx3-ubyte.gz"), images[:N_TRAIN], 0x803)
    write_idx(os.path.join(out, "train-labels-idx1-ubyte.gz"), labels[:N_TRAIN], 0x801)
    write_idx(os.path.join(out, "t10k-images-idx3-ubyte.gz"), images[N_TRAIN:], 0x803)
    write_idx(os.path.join(out, "t10k-labels-idx1-ubyte.gz"), labels[N_TRAIN:], 0x801)


if __name__ == "__main__":
    main()
