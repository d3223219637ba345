#!/usr/bin/env python3
"""Write the 5000-digit MNIST sample shipped with mlxtend as an IDX file pair.

Usage: make_mnist_subset.py <mnist_5k.csv.gz> <out_dir>

The CSV holds 5000 rows of 784 pixel values followed by the label. Output files
use the standard MNIST IDX layout (magic 2051 / 2049, big-endian dimensions).
"""
import gzip
import struct
import sys
from pathlib import Path


def main(src: str, out_dir: str) -> None:
    rows = []
    with gzip.open(src, "rt") as fh:
        for line in fh:
            vals = [int(float(v)) for v in line.strip().split(",")]
            rows.append(vals)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(rows)
    with open(out / "images-idx3-ubyte", "wb") as fh:
        fh.write(struct.pack(">IIII", 2051, n, 28, 28))
        for r in rows:
            fh.write(bytes(r[:784]))
    with open(out / "labels-idx1-ubyte", "wb") as fh:
        fh.write(struct.pack(">II", 2049, n))
        fh.write(bytes(r[784] for r in rows))


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
