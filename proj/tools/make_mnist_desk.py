#!/usr/bin/env python3
"""Build the desk-scale MNIST split (IDX files) from the `mnist` npm package.

The npm package ships 10,000 MNIST digits as JSON arrays of intensities
scaled to [0, 1]. This script restores 8-bit intensities, shuffles with a
fixed seed and writes a 5000-image train split and a 1000-image test split
in the standard IDX container.

    python3 tools/make_mnist_desk.py --out data/mnist-desk
    python3 tools/make_mnist_desk.py --package /path/to/unpacked/package --out ...
"""
import argparse
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile


def fetch_package(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = next(workdir.glob("mnist-*.tgz"))
    with tarfile.open(tgz) as tf:
        tf.extractall(workdir)
    return workdir / "package"


def write_idx(prefix: pathlib.Path, items):
    with open(str(prefix) + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(items), 28, 28))
        for pixels, _ in items:
            f.write(bytes(pixels))
    with open(str(prefix) + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(items)))
        f.write(bytes(label for _, label in items))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--package", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, required=True)
    ap.add_argument("--train", type=int, default=5000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20201)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        pkg = args.package or fetch_package(pathlib.Path(tmp))
        items = []
        for digit in range(10):
            flat = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
            for i in range(0, len(flat), 784):
                pixels = [min(255, max(0, round(v * 255))) for v in flat[i:i + 784]]
                items.append((pixels, digit))

    random.Random(args.seed).shuffle(items)
    if args.train + args.test > len(items):
        raise SystemExit(f"only {len(items)} digits available")
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "train", items[:args.train])
    write_idx(args.out / "test", items[args.train:args.train + args.test])
    print(f"wrote {args.train} train / {args.test} test digits to {args.out}")


if __name__ == "__main__":
    main()
