"""Regenerate tests/data/toy.ckpt: tiny preset, synthetic beats, seed 0.

    python scripts/make_toy_checkpoint.py
"""
import shutil
import sys
import tempfile
from pathlib import Path

from mambacapsule.cli import main

DEST = Path(__file__).resolve().parent.parent / "tests" / "data" / "toy.ckpt"


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        code = main(["train", "--preset", "tiny", "--synthetic", "--seed", "0", "--out-dir", tmp])
        if code:
            sys.exit(code)
        DEST.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(Path(tmp) / "model.ckpt", DEST)
    print(f"wrote {DEST}")
