#!/usr/bin/env python3
"""Rebuild gzipped IDX files from the digit JSON shipped in the npm `mnist` package.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/

Each JSON file holds one digit class as a flat list of 784-float images
(pixel/255 rounded to three decimals), so round(v * 255) recovers the
original byte exactly. Rows are interleaved round-robin over the ten classes.
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    per_digit = []
    for d in range(10):
        flat = json.loads((src / f"{d}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        imgs = [flat[i : i + 784] for i in range(0, len(flat), 784)]
        per_digit.append(imgs)

    images, labels = [], []
    longest = max(len(v) for v in per_digit)
    for i in range(longest):
        for d in range(10):
            if i < len(per_digit[d]):
                img = per_digit[d][i]
                raw = bytes(int(round(v * 255)) for v in img)
                assert all(abs(b / 255 - v) < 6e-4 for b, v in zip(raw, img))
                images.append(raw)
                labels.append(d)

    n = len(images)
    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "mnist10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(b"".join(images))
    with gzip.GzipFile(dst / "mnist10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))
    print(f"wrote {n} images to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
