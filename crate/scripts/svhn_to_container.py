#!/usr/bin/env python3
"""Convert an SVHN cropped-digit MAT file into an ATDLDS01 dataset container.

Usage:
    python3 scripts/svhn_to_container.py train_32x32.mat data/svhn_train.atdlds

The MAT file holds X with shape (32, 32, 3, N) as uint8 and y with shape
(N, 1) where label 10 stands for digit 0. Rows are written in file order with
planar RGB channels, matching the CIFAR-10 reader, and pixels are scaled as
float32(b) / 255 like every 8-bit loader in the crate.
"""
import struct
import sys
from pathlib import Path

import numpy as np
from scipy.io import loadmat


def encode(x: np.ndarray, labels: np.ndarray, h: int, w: int, c: int, vocab: int) -> bytes:
    rows, feats = x.shape
    head = b"ATDLDS01" + struct.pack("<7I", 1, rows, feats, h, w, c, vocab)
    body = head + x.astype("<f4").tobytes() + labels.astype("<u4").tobytes()
    checksum = int(np.frombuffer(body, dtype=np.uint8).sum(dtype=np.uint64))
    return body + struct.pack("<Q", checksum & 0xFFFFFFFFFFFFFFFF)


def main(src: Path, dst: Path) -> None:
    mat = loadmat(src)
    images = mat["X"]
    assert images.shape[:3] == (32, 32, 3), images.shape
    n = images.shape[3]
    planar = np.transpose(images, (3, 2, 0, 1)).reshape(n, 3 * 32 * 32)
    x = planar.astype(np.float32) / np.float32(255.0)
    labels = mat["y"].reshape(n).astype(np.int64) % 10
    dst.parent.mkdir(parents=True, exist_ok=True)
    dst.write_bytes(encode(x, labels, 32, 32, 3, 10))
    print(f"wrote {n} images to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
