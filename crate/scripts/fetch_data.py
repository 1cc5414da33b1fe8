#!/usr/bin/env python3
"""Fetch the public UCI datasets used by the experiment configs into ./data.

German Credit (numeric variant):
    https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/german.data-numeric
    sha256 of the expected file is printed after download.
Bank Marketing (bank-full.csv inside bank.zip):
    https://archive.ics.uci.edu/ml/machine-learning-databases/00222/bank.zip

When archive.ics.uci.edu is unreachable, the German file is recovered from the
`imbalanced_databases` wheel on PyPI, which ships an unmodified copy. No PyPI
package is known to ship bank-full.csv; place it in data/ by hand.
"""

import hashlib
import io
import pathlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

DATA = pathlib.Path(__file__).resolve().parent.parent / "data"

GERMAN_URL = (
    "https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/german.data-numeric"
)
BANK_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/00222/bank.zip"


def fetch(url, timeout=30):
    with urllib.request.urlopen(url, timeout=timeout) as r:
        return r.read()


def german():
    target = DATA / "german.data-numeric"
    if target.exists():
        return target
    try:
        target.write_bytes(fetch(GERMAN_URL))
        return target
    except Exception as exc:  # network blocked
        print(f"direct download failed ({exc}); trying PyPI wheel", file=sys.stderr)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
             "imbalanced_databases==0.1.1", "-d", tmp],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as z:
            target.write_bytes(z.read("imbalanced_databases/data/german/german.data-numeric.txt"))
    return target


def bank():
    target = DATA / "bank-full.csv"
    if target.exists():
        return target
    try:
        with zipfile.ZipFile(io.BytesIO(fetch(BANK_URL))) as z:
            target.write_bytes(z.read("bank-full.csv"))
        return target
    except Exception as exc:
        print(f"bank-full.csv unavailable ({exc}); download bank.zip manually", file=sys.stderr)
        return None


def main():
    DATA.mkdir(exist_ok=True)
    for path in (german(), bank()):
        if path is not None:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            print(f"{path.name}: sha256 {digest}")


if __name__ == "__main__":
    main()
