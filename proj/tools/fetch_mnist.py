#!/usr/bin/env python3
"""Materialize MNIST IDX files for the experiments.

Offline-friendly fetch: the npm package `mnist` ships 10,000 real MNIST
digits (~1,000 per class) as JSON, with pixel values stored as byte/255
rounded to three decimals -- losslessly invertible back to the original
bytes since adjacent byte values differ by ~0.0039 > 0.001.

Writes standard big-endian IDX files (8,000 train / 2,000 test, per-digit
80/20 split, deterministic shuffle):
    train-images-idx3-ubyte  train-labels-idx1-ubyte
    t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte

If you have the official 60k/10k files, point the experiments at them
instead; the loader reads whatever counts the headers declare.
"""

import argparse
import json
import pathlib
import struct
import subprocess
import sys
import tempfile


def xorshift64(state: int):
    while True:
        state ^= (state << 13) & 0xFFFFFFFFFFFFFFFF
        state ^= state >> 7
        state ^= (state << 17) & 0xFFFFFFFFFFFFFFFF
        yield state


def shuffle(items, seed):
    rng = xorshift64(seed)
    for i in range(len(items) - 1, 0, -1):
        j = next(rng) % (i + 1)
        items[i], items[j] = items[j], items[i]


def npm_install_mnist(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(
        ["npm", "install", "--no-audit", "--no-fund", "mnist"],
        cwd=workdir,
        check=True,
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
    )
    digits = workdir / "node_modules" / "mnist" / "src" / "digits"
    if not digits.is_dir():
        raise RuntimeError("npm mnist package layout unexpected: no src/digits")
    return digits


def load_samples(digits_dir: pathlib.Path):
    """Returns (label, bytes(784)) pairs, per-digit order preserved."""
    samples = []
    for digit in range(10):
        data = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
        if len(data) % 784:
            raise RuntimeError(f"digit {digit}: payload not a multiple of 784")
        for off in range(0, len(data), 784):
            px = bytes(round(v * 255) for v in data[off : off + 784])
            samples.append((digit, px))
    return samples


def write_idx(out_dir: pathlib.Path, stem: str, samples):
    images = out_dir / f"{stem}-images-idx3-ubyte"
    labels = out_dir / f"{stem}-labels-idx1-ubyte"
    with open(images, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
        for _, px in samples:
            f.write(px)
    with open(labels, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for label, _ in samples))
    print(f"wrote {images.name} / {labels.name}: {len(samples)} samples")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/mnist", help="output directory")
    parser.add_argument("--train-fraction", type=float, default=0.8)
    parser.add_argument("--seed", type=int, default=0x5EED)
    args = parser.parse_args()

    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if all(
        (out_dir / f"{stem}-{kind}").exists()
        for stem in ("train", "t10k")
        for kind in ("images-idx3-ubyte", "labels-idx1-ubyte")
    ):
        print(f"{out_dir} already populated; nothing to do")
        return 0

    with tempfile.TemporaryDirectory(prefix="fedmil_mnist_") as tmp:
        digits_dir = npm_install_mnist(pathlib.Path(tmp))
        samples = load_samples(digits_dir)

    train, test = [], []
    for digit in range(10):
        of_digit = [s for s in samples if s[0] == digit]
        cut = int(len(of_digit) * args.train_fraction)
        train.extend(of_digit[:cut])
        test.extend(of_digit[cut:])
    shuffle(train, args.seed)
    shuffle(test, args.seed + 1)

    write_idx(out_dir, "train", train)
    write_idx(out_dir, "t10k", test)
    return 0


if __name__ == "__main__":
    sys.exit(main())
