"""Command line for the clear-side pipeline.

Four stages, each writing a file the next one reads: dataset (audio to
feature vectors), train (vectors to float weights), export (weights to a
quantized model file), vectors (model plus held-out vectors to golden
test cases).  The exported files feed the engine; nothing here calls it.
"""

import argparse
import sys
from pathlib import Path

from .features import FeatureDataset, extract_features
from .intref import gen_test_vectors
from .qformat import dump_input_text, load_qmodel
from .quant import ExportError, quantize_export
from .train import BATCH_SIZE, EPOCHS, load_weights, train_model


def _cmd_dataset(args):
    ds = extract_features(args.audio, split_seed=args.split_seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ds.save(args.out)
    print("%d vectors (%d skipped) -> %s"
          % (len(ds.files), ds.skipped, args.out))
    print("train %d, test %d" % (ds.train_idx.size, ds.test_idx.size))
    return 0


def _cmd_train(args):
    ds = FeatureDataset.load(args.features)
    model, report = train_model(ds, seed=args.seed, epochs=args.epochs,
                                batch_size=args.batch, verbose=args.verbose)
    Path(args.weights).parent.mkdir(parents=True, exist_ok=True)
    model.save_weights(args.weights)
    print("train accuracy %.4f" % report["train_accuracy"])
    if report["test_accuracy"] is not None:
        print("test accuracy %.4f" % report["test_accuracy"])
    print("weights -> %s" % args.weights)
    return 0


def _cmd_export(args):
    ds = FeatureDataset.load(args.features)
    model = load_weights(args.weights, input_len=ds.vectors.shape[1],
                         classes=len(ds.label_names), filters=args.filters,
                         kernel=args.kernel, pool=args.pool)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report = quantize_export(model, ds, args.out, calib=args.calib,
                             name=args.name)
    print("%s -> %s" % (report["digest"], args.out))
    if report["quantized_accuracy"] is not None:
        print("quantized accuracy %.4f (%d held-out)"
              % (report["quantized_accuracy"], report["held_out"]))
    return 0


def _cmd_vectors(args):
    ds = FeatureDataset.load(args.features)
    qnet, digest = load_qmodel(args.model)
    te = ds.test_idx
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    classes = gen_test_vectors(qnet, digest, ds.vectors[te], args.out)
    print("%d cases -> %s" % (len(classes), args.out))
    if len(classes):
        hits = sum(int(c == int(w)) for c, w in zip(classes, ds.labels[te]))
        print("agreement with labels: %.4f (%d/%d)"
              % (hits / len(classes), hits, len(classes)))
    if args.sample_input is not None:
        x = ds.vectors[te[0] if te.size else ds.train_idx[0]]
        from .intref import quantize_input
        with open(args.sample_input, "w") as fh:
            fh.write(dump_input_text(quantize_input(x, qnet["input_qp"])))
        print("sample input -> %s" % args.sample_input)
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="obliv1d-trainer",
        description="MFCC features, CNN training, int8 export and golden "
                    "vectors for the obliv1d engine")
    sub = ap.add_subparsers(dest="cmd", required=True)

    d = sub.add_parser("dataset", help="audio directory to feature vectors")
    d.add_argument("--audio", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--split-seed", type=int, default=13)

    t = sub.add_parser("train", help="fit the float CNN on the train split")
    t.add_argument("--features", required=True)
    t.add_argument("--weights", required=True)
    t.add_argument("--seed", type=int, default=1)
    t.add_argument("--epochs", type=int, default=EPOCHS)
    t.add_argument("--batch", type=int, default=BATCH_SIZE)
    t.add_argument("--verbose", type=int, default=0)

    e = sub.add_parser("export", help="quantize and write the qmodel")
    e.add_argument("--features", required=True)
    e.add_argument("--weights", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--calib", type=int, default=100)
    e.add_argument("--name", default="ravdess-cnn")
    e.add_argument("--filters", type=int, default=128)
    e.add_argument("--kernel", type=int, default=5)
    e.add_argument("--pool", type=int, default=4)

    v = sub.add_parser("vectors", help="golden test vectors for the "
                                       "held-out split")
    v.add_argument("--features", required=True)
    v.add_argument("--model", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--sample-input", default=None)

    args = ap.parse_args(argv)
    handler = {"dataset": _cmd_dataset, "train": _cmd_train,
               "export": _cmd_export, "vectors": _cmd_vectors}[args.cmd]
    try:
        return handler(args)
    except (ExportError, ValueError, OSError) as exc:
        print("trainer: error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
