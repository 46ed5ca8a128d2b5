#!/usr/bin/env python3
"""Export scikit-learn's bundled handwritten-digits dataset to the packed
ARCD binary this project consumes (see README "Packed dataset format").

The 1797 8x8 grayscale images are deterministically split into train/test
(stratified, fixed permutation) and written as data/digits_train.bin and
data/digits_test.bin. Pixel values 0..16 are rescaled to 0..255.
"""

import argparse
import struct
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def write_arcd(path: Path, images: np.ndarray, labels: np.ndarray, num_classes: int):
    n, h, w = images.shape
    payload = bytearray()
    payload += b"ARCD"
    payload += struct.pack("<IIIIII", 1, n, h, w, 1, num_classes)
    payload += images.astype(np.uint8).tobytes()
    payload += labels.astype("<u4").tobytes()
    path.write_bytes(bytes(payload))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data", help="output directory")
    parser.add_argument("--test-fraction", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    digits = load_digits()
    images = np.round(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.int64)

    rng = np.random.RandomState(args.seed)
    test_idx = []
    train_idx = []
    for c in range(10):
        idx = np.where(labels == c)[0]
        idx = idx[rng.permutation(len(idx))]
        k = int(round(args.test_fraction * len(idx)))
        test_idx.extend(idx[:k])
        train_idx.extend(idx[k:])
    train_idx = np.sort(np.array(train_idx))
    test_idx = np.sort(np.array(test_idx))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_arcd(out / "digits_train.bin", images[train_idx], labels[train_idx], 10)
    write_arcd(out / "digits_test.bin", images[test_idx], labels[test_idx], 10)
    print(f"digits_train.bin: {len(train_idx)} images")
    print(f"digits_test.bin: {len(test_idx)} images")


if __name__ == "__main__":
    main()
