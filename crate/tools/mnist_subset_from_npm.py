#!/usr/bin/env python3
"""Regenerate data/mnist/ from the npm "mnist" package.

The npm package (https://www.npmjs.com/package/mnist) bundles 10,000 real
MNIST digits as JSON, one file per class, with pixels stored as
round(byte / 255, 3).  This script recovers the original bytes, applies a
fixed shuffle so class blocks are interleaved, and writes standard IDX
files (big-endian magic 2051 / 2049).

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_subset_from_npm.py package/src/digits data/mnist
"""
import json
import os
import random
import struct
import sys


def main(digits_dir: str, out_dir: str) -> None:
    images = []
    for k in range(10):
        with open(os.path.join(digits_dir, f"{k}.json")) as f:
            flat = json.load(f)["data"]
        n = len(flat) // 784
        for i in range(n):
            px = flat[i * 784 : (i + 1) * 784]
            b = bytes(min(255, max(0, round(v * 255))) for v in px)
            images.append((k, b))

    if len(images) != 10000:
        raise SystemExit(f"expected 10000 images, found {len(images)}")

    rng = random.Random(20240614)
    rng.shuffle(images)

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "mnist-subset-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for _, b in images:
            f.write(b)
    with open(os.path.join(out_dir, "mnist-subset-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 2049, len(images)))
        f.write(bytes(lbl for lbl, _ in images))
    print(f"wrote {len(images)} images to {out_dir}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        raise SystemExit(__doc__)
    main(sys.argv[1], sys.argv[2])
