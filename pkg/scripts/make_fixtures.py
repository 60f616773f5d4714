"""Rebuild the vendored datasets under tests/data.

Spambase: the UCI table (58 comma-separated columns, class last) as shipped
in the ``keel-ds`` wheel (keel_ds/data/balanced/raw/spambase.dat; that copy
has 4597 of the 4601 rows). Written as gzip CSV in the UCI layout.

MNIST: the 5000-image subset shipped in the ``mlxtend`` wheel
(mlxtend/data/data/mnist_5k.csv.gz, 500 images per digit, label in the last
column). All 1s and 7s plus 10 images of every other digit are written as
gzip IDX files.

    python scripts/make_fixtures.py --spambase spambase.dat --mnist mnist_5k.csv.gz
"""
import argparse
import gzip
from pathlib import Path

import numpy as np

from poisonfilter.dataset import write_idx

OUT = Path(__file__).resolve().parent.parent / "tests" / "data"


def spambase(src: Path):
    lines = []
    for line in src.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("@"):
            lines.append(",".join(f.strip() for f in line.split(",")))
    blob = ("\n".join(lines) + "\n").encode()
    (OUT / "spambase.data.gz").write_bytes(gzip.compress(blob, mtime=0))
    print(f"spambase: {len(lines)} rows")


def mnist(src: Path):
    if src.suffix == ".npy":
        table = np.load(src)
    else:
        table = np.loadtxt(src, delimiter=",")
    images = table[:, :-1].astype(np.uint8)
    digits = table[:, -1].astype(np.uint8)
    keep = []
    for dgt in range(10):
        idx = np.flatnonzero(digits == dgt)
        keep.extend(idx if dgt in (1, 7) else idx[:10])
    keep = np.sort(np.asarray(keep))
    write_idx(OUT / "mnist-subset-images-idx3-ubyte.gz", OUT / "mnist-subset-labels-idx1-ubyte.gz",
              images[keep], digits[keep])
    print(f"mnist: {keep.size} images")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spambase", type=Path)
    ap.add_argument("--mnist", type=Path)
    args = ap.parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    if args.spambase:
        spambase(args.spambase)
    if args.mnist:
        mnist(args.mnist)


if __name__ == "__main__":
    main()
