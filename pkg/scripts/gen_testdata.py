#!/usr/bin/env python3
"""Regenerate the committed desk-scale artifacts.

Writes models/tiny.qmodel (seed-fixed 8-filter classifier, so CI never
needs audio data or a training run) and testdata/tiny.qtest (200 golden
inputs with full per-layer oracle traces).  Both files are byte-stable:
rerunning this script must reproduce them exactly.
"""

import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from obliv1d import model_io
from obliv1d.cli import main

TINY_SPEC = "in:40,conv:8x5,pool:4,conv:8x5,dense:8"
TINY_SEED = 8
VECTOR_SEED = 1
VECTOR_COUNT = 200
LABELS = ("neutral", "calm", "happy", "sad", "angry", "fearful",
          "disgust", "surprised")


def run():
    model_path = ROOT / "models" / "tiny.qmodel"
    vec_path = ROOT / "testdata" / "tiny.qtest"
    model_path.parent.mkdir(exist_ok=True)
    vec_path.parent.mkdir(exist_ok=True)

    model = model_io.gen_random_model(TINY_SPEC, seed=TINY_SEED)
    model.name = "tiny"
    model.labels = LABELS
    digest = model_io.write_model(model, model_path)
    print("%s  %s" % (digest, model_path.relative_to(ROOT)))

    code = main(["gen-vectors", "--model", str(model_path),
                 "--out", str(vec_path), "--count", str(VECTOR_COUNT),
                 "--seed", str(VECTOR_SEED)])
    if code != 0:
        return code
    cases = model_io.load_test_vectors(vec_path, model)
    spread = sorted({c.expected_class for c in cases})
    print("%d cases, classes seen: %s" % (len(cases), spread))
    return 0


if __name__ == "__main__":
    sys.exit(run())
