#!/usr/bin/env python3
"""Build a 10,000-digit MNIST subset in IDX format from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, v1.1.0) ships 10,000
MNIST digits as JSON arrays of pixel/255 rounded to three decimals, which is
enough resolution to recover the original bytes exactly.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_subset_from_npm.py package data/mnist

Writes a 6,000-example training split and a 4,000-example test split after a
fixed-seed shuffle.
"""
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28
PIXELS = SIDE * SIDE
TRAIN = 6000


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main(pkg, out):
    pkg, out = Path(pkg), Path(out)
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for digit in range(10):
        raw = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        assert len(raw) % PIXELS == 0
        for k in range(len(raw) // PIXELS):
            px = [int(round(v * 255)) for v in raw[k * PIXELS:(k + 1) * PIXELS]]
            assert all(0 <= p <= 255 for p in px)
            samples.append((px, digit))
    random.Random(0).shuffle(samples)
    train, test = samples[:TRAIN], samples[TRAIN:]
    write_images(out / "train-images-idx3-ubyte", [s[0] for s in train])
    write_labels(out / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_images(out / "test-images-idx3-ubyte", [s[0] for s in test])
    write_labels(out / "test-labels-idx1-ubyte", [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test examples to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
