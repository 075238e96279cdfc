"""Download the four MNIST IDX files into a directory (default ./data/mnist).

Usage: python tools/fetch_mnist.py [target_dir] [--mirror URL]

The library itself never touches the network; point ``DATA_DIR`` (or
``--data-dir``) at the target directory afterwards.
"""

import argparse
import gzip
import sys
import urllib.request
from pathlib import Path

MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)
FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def fetch(name, target, mirrors):
    for base in mirrors:
        try:
            with urllib.request.urlopen(base + name + ".gz", timeout=60) as resp:
                raw = gzip.decompress(resp.read())
        except OSError as exc:
            print(f"  {base}: {exc}", file=sys.stderr)
            continue
        (target / name).write_bytes(raw)
        return True
    return False


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("target", nargs="?", default="data/mnist")
    p.add_argument("--mirror", action="append", help="base URL holding <file>.gz")
    args = p.parse_args(argv)
    target = Path(args.target)
    target.mkdir(parents=True, exist_ok=True)
    mirrors = tuple(args.mirror) if args.mirror else MIRRORS
    for name in FILES:
        if (target / name).exists():
            print(f"{name}: present")
            continue
        print(f"{name}: downloading")
        if not fetch(name, target, mirrors):
            print(f"{name}: all mirrors failed", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
