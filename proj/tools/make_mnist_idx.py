#!/usr/bin/env python3
"""Convert the digit JSON files of the `mnist` npm package into gzipped IDX files.

Each JSON file holds one class as a flat list of 28*28 pixel intensities in
[0, 1] per image. Pixels are mapped back to bytes with round(255 * v), the
images are shuffled with a fixed seed and split into train and validation.
"""

import argparse
import gzip
import json
import random
import struct
from pathlib import Path

SIDE = 28
PIXELS = SIDE * SIDE


def load_digits(src):
    items = []
    for label in range(10):
        data = json.loads((src / f"{label}.json").read_text())["data"]
        if len(data) % PIXELS:
            raise SystemExit(f"{label}.json: {len(data)} values is not a multiple of {PIXELS}")
        for i in range(0, len(data), PIXELS):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in data[i:i + PIXELS])
            items.append((pixels, label))
    return items


def write_idx(path, items):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, len(items), SIDE, SIDE))
        for pixels, _ in items:
            f.write(pixels)
    label_path = path.with_name(path.name.replace("images-idx3", "labels-idx1"))
    with gzip.GzipFile(label_path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, len(items)))
        f.write(bytes(label for _, label in items))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("src", type=Path, help="directory with 0.json .. 9.json")
    ap.add_argument("out", type=Path)
    ap.add_argument("--val", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=2018)
    args = ap.parse_args()

    items = load_digits(args.src)
    random.Random(args.seed).shuffle(items)
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "mnist-train-images-idx3-ubyte.gz", items[args.val:])
    write_idx(args.out / "mnist-val-images-idx3-ubyte.gz", items[:args.val])
    print(f"{len(items) - args.val} train, {args.val} val images written to {args.out}")


if __name__ == "__main__":
    main()
