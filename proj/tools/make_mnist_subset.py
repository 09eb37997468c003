#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert the 5000-digit MNIST sample shipped inside the mlxtend wheel into
IDX files (4000 reference digits, 1000 evaluation digits).

Usage: make_mnist_subset.py <mlxtend wheel or mnist_5k.csv.gz> <out dir>
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def read_rows(path):
    if path.endswith(".whl"):
        with zipfile.ZipFile(path) as z:
            raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        with open(path, "rb") as f:
            raw = f.read()
    data = np.loadtxt(io.StringIO(gzip.decompress(raw).decode()), delimiter=",")
    return data[:, :-1].astype(np.uint8), data[:, -1].astype(np.uint8)


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    images, labels = read_rows(sys.argv[1])
    order = np.random.RandomState(20180301).permutation(len(labels))
    images, labels = images[order], labels[order]
    out = sys.argv[2]
    write_images(f"{out}/mnist-ref-images-idx3-ubyte", images[:4000])
    write_labels(f"{out}/mnist-ref-labels-idx1-ubyte", labels[:4000])
    write_images(f"{out}/mnist-eval-images-idx3-ubyte", images[4000:])
    write_labels(f"{out}/mnist-eval-labels-idx1-ubyte", labels[4000:])


if __name__ == "__main__":
    main()
