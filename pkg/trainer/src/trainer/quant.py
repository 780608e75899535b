"""Post-training 8-bit quantization of the trained float CNN.

Every tensor gets an affine uint8 encoding (scale, zero point) with real
zero exactly representable.  Activation ranges come from a calibration
set of training vectors.  Biases are stored as int32 at scale
in_scale * w_scale with zero point 0.  Each requantization collapses the
scale ratio in_scale * w_scale / out_scale into the integer normal form
m0 * 2**-(31+n) with m0 in [2**30, 2**31).

Export refuses models the engine would reject: a scale ratio at or above
one, a shift outside [0, 31], a bias outside int32, or a worst-case
accumulator that cannot fit 32 signed bits.  Refusals name the tensor and
carry its numbers, because the fix is always on the float side.
"""

import json
from pathlib import Path

import numpy as np

from .features import LABELS
from .qformat import dump_model_text

FRAC_BITS = 16
ACT_MAX = 255
M0_LOW = 1 << 30
M0_HIGH = 1 << 31


class ExportError(Exception):
    """The float model cannot be represented for the engine."""


def qparams_from_range(lo, hi):
    """Affine uint8 parameters covering [lo, hi] and exact zero."""
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    scale = max(hi - lo, 1e-6) / ACT_MAX
    zp = int(round(-lo / scale))
    return scale, min(max(zp, 0), ACT_MAX)


def quantize_tensor(w):
    """uint8 values plus their (scale, zero point)."""
    qp = qparams_from_range(np.min(w), np.max(w))
    scale, zp = qp
    q = np.clip(np.rint(np.asarray(w, dtype=np.float64) / scale) + zp,
                0, ACT_MAX).astype(np.int64)
    return q, qp


def quantize_bias(b, in_scale, w_scale, where):
    scale = in_scale * w_scale
    q = np.rint(np.asarray(b, dtype=np.float64) / scale)
    worst = q[np.argmax(np.abs(q))] if q.size else 0.0
    if not -(1 << 31) <= worst < (1 << 31):
        raise ExportError(
            "%s: bias %d outside int32 after quantization (float range "
            "[%.6g, %.6g], bias scale %.6g); shrink the bias or widen the "
            "input/weight scales" % (where, int(worst), float(np.min(b)),
                                     float(np.max(b)), scale))
    return q.astype(np.int64)


def requant_decompose(m, where):
    """(m0, n) with m0 * 2**-(31+n) ~ m; the engine's normal form."""
    if not 0 < m < 1:
        raise ExportError("%s: scale ratio %.6g not below 1; the output "
                          "range is too narrow for its inputs" % (where, m))
    n = 0
    while m * (1 << (n + 1)) < 1.0:
        n += 1
        if n > 31:
            raise ExportError("%s: scale ratio %.3g needs shift n > 31; "
                              "the output range is too wide" % (where, m))
    m0 = round(m * (1 << (31 + n)))
    if m0 >= M0_HIGH:
        if n == 0:
            m0 = M0_HIGH - 1
        else:
            m0, n = m0 // 2, n - 1
    return m0, n


def _interval_bound(wc, cc, xlo, xhi):
    """Worst-case accumulator interval over inputs in [xlo, xhi]."""
    pos = np.maximum(wc, 0).sum(axis=1)
    neg = np.minimum(wc, 0).sum(axis=1)
    lo = pos * xlo + neg * xhi + cc
    hi = pos * xhi + neg * xlo + cc
    return int(lo.min()), int(hi.max())


def _check_accumulator(where, wc, cc, xlo, xhi, fin, pad=None):
    if pad is not None:
        xlo, xhi = min(xlo, pad), max(xhi, pad)
    lo, hi = _interval_bound(wc, cc, xlo, xhi)
    bound = max(abs(lo), abs(hi), 1)
    if bound >= (1 << 31) << fin:
        raise ExportError(
            "%s: worst-case accumulator bound 2^%.1f exceeds 32 signed bits "
            "(weight sum magnitude %d, bias extremes [%d, %d]); shrink the "
            "weights or bias" % (where, np.log2(bound) - fin,
                                 int(np.abs(wc).sum(axis=1).max()),
                                 int(cc.min()), int(cc.max())))
    return lo, hi


# ------------------------------------------------------- the keras walk

def _layer_blocks(model):
    """Flatten a Sequential into export blocks, folding relu activations
    into the linear layer before them and dropping training-only layers."""
    blocks = []
    for lay in model.layers:
        cls = type(lay).__name__
        if cls == "Conv1D":
            blocks.append({"kind": "conv", "lay": lay, "relu": False,
                           "out_ref": lay})
        elif cls == "Dense":
            blocks.append({"kind": "dense", "lay": lay, "relu": False,
                           "out_ref": lay})
        elif cls == "AveragePooling1D":
            blocks.append({"kind": "pool", "lay": lay})
        elif cls == "Flatten":
            blocks.append({"kind": "flatten"})
        elif cls == "Dropout":
            continue
        elif cls == "Activation":
            act = lay.get_config().get("activation")
            if act == "relu":
                if not blocks or blocks[-1]["kind"] not in ("conv", "dense"):
                    raise ExportError("relu activation without a linear "
                                      "layer before it")
                blocks[-1]["relu"] = True
                blocks[-1]["out_ref"] = lay
            elif act == "softmax":
                continue  # argmax replaces it at inference
            else:
                raise ExportError("unsupported activation %r" % act)
        else:
            raise ExportError("unsupported layer type %s" % cls)
    return blocks


def _conv_fields(lay, where):
    cfg = lay.get_config()
    if cfg.get("padding") != "same":
        raise ExportError("%s: only 'same' padding exports" % where)
    if tuple(cfg.get("strides", (1,))) != (1,):
        raise ExportError("%s: only stride 1 exports" % where)
    if tuple(cfg.get("dilation_rate", (1,))) != (1,):
        raise ExportError("%s: only dilation 1 exports" % where)
    kernel, bias = _weights_of(lay)
    return kernel, bias


def _weights_of(lay):
    ws = lay.get_weights()
    if len(ws) == 2:
        return ws[0], ws[1]
    return ws[0], np.zeros(ws[0].shape[-1], dtype=np.float64)


def quantize_model(model, calib_x, name="model", labels=LABELS):
    """Quantize a trained Sequential into a qnet layer tree.

    calib_x: float vectors (C, input_len) sampled from the training set;
    they set the input and activation ranges.
    """
    calib_x = np.asarray(calib_x, dtype=np.float32)
    if calib_x.ndim != 2 or calib_x.shape[0] == 0:
        raise ExportError("calibration needs at least one vector")
    blocks = _layer_blocks(model)
    linear = [b for b in blocks if b["kind"] in ("conv", "dense")]
    if not linear:
        raise ExportError("nothing to export: no conv or dense layer")

    import keras
    probe = keras.Model(model.inputs,
                        [b["out_ref"].output for b in linear])
    acts = probe.predict(calib_x[:, :, None], verbose=0)
    if not isinstance(acts, list):
        acts = [acts]

    input_len = int(calib_x.shape[1])
    input_qp = qparams_from_range(calib_x.min(), calib_x.max())
    qnet = {"name": name, "version": "1", "input_len": input_len,
            "input_depth": 1, "input_qp": input_qp,
            "labels": tuple(labels), "layers": []}

    depth, width, fin = 1, input_len, 0
    scale, zp = input_qp
    vlo, vhi = 0, ACT_MAX
    seen = {"conv": 0, "dense": 0}
    li = 0
    for b in blocks:
        kind = b["kind"]
        if kind in ("conv", "dense"):
            seen[kind] += 1
            where = "%s%d" % (kind, seen[kind])
            out_qp = qparams_from_range(acts[li].min(), acts[li].max())
            li += 1
            if kind == "conv":
                kernel, bias = _conv_fields(b["lay"], where)
                w = np.transpose(kernel, (2, 1, 0))  # (F, D, L)
                if w.shape[1] != depth:
                    raise ExportError("%s: depth %d does not compose with "
                                      "%d" % (where, w.shape[1], depth))
            else:
                kernel, bias = _weights_of(b["lay"])
                if kernel.shape[0] != depth * width:
                    raise ExportError("%s: %d inputs do not compose with "
                                      "%d" % (where, kernel.shape[0],
                                              depth * width))
                w = kernel
                if depth > 1:
                    # keras flattens step-major; the engine channel-major
                    w = (w.reshape(width, depth, -1).transpose(1, 0, 2)
                         .reshape(depth * width, -1))
            qw, w_qp = quantize_tensor(w)
            qb = quantize_bias(bias, scale, w_qp[0], where)
            m0, n = requant_decompose(scale * w_qp[0] / out_qp[0], where)
            if kind == "conv":
                f, _, l = qw.shape
                wc = qw.reshape(f, -1) - w_qp[1]
            else:
                wc = qw.T - w_qp[1]
            cc = (qb - zp * wc.sum(axis=1)) << fin
            pad = (zp << fin) if kind == "conv" and qw.shape[2] > 1 else None
            _check_accumulator(where, wc, cc, vlo, vhi, fin, pad=pad)
            lay = {"kind": kind, "relu": bool(b["relu"]), "w_qp": w_qp,
                   "out_qp": out_qp, "m0": m0, "n": n, "weights": qw,
                   "bias": qb}
            if kind == "conv":
                lay.update(filters=int(qw.shape[0]), width=int(qw.shape[2]),
                           depth=int(qw.shape[1]), padding="same_centered")
                depth = int(qw.shape[0])
            else:
                depth, width = 1, int(qw.shape[1])
            qnet["layers"].append(lay)
            scale, zp = out_qp
            fin, vlo, vhi = 0, 0, ACT_MAX
        elif kind == "pool":
            cfg = b["lay"].get_config()
            p = int(cfg["pool_size"][0])
            if tuple(cfg.get("strides") or (p,)) != (p,):
                raise ExportError("pool: stride must equal the window")
            qnet["layers"].append({"kind": "pool", "window": p,
                                   "secret_divisor": False})
            width //= p
            lift = 1 << (FRAC_BITS - fin)
            bound = max(abs(vlo), abs(vhi), 1) * p * lift
            margin = (bound >> 8) + 16
            vlo, vhi = vlo * lift - margin, vhi * lift + margin
            fin = FRAC_BITS
        elif kind == "flatten":
            qnet["layers"].append({"kind": "flatten"})
    qnet["layers"].append({"kind": "argmax"})
    return qnet


# ------------------------------------------------------------- the export

def quantized_accuracy(qnet, vectors, labels):
    from .intref import forward, quantize_input
    hits = 0
    for x, want in zip(vectors, labels):
        cls, _ = forward(qnet, quantize_input(x, qnet["input_qp"]))
        hits += int(cls == int(want))
    return hits / len(labels) if len(labels) else None


def quantize_export(model, dataset, out_path, calib=100, name="ravdess-cnn",
                    float_accuracy=None):
    """Quantize, write the qmodel, and record held-out accuracy.

    Calibration uses the first `calib` training vectors.  Returns a report
    dict; a metadata json lands next to the model file.
    """
    tr = dataset.train_idx
    if tr.size == 0:
        raise ExportError("calibration needs at least one training vector")
    calib_x = dataset.vectors[tr[:calib]]
    qnet = quantize_model(model, calib_x, name=name,
                          labels=dataset.label_names)
    text, digest = dump_model_text(qnet)
    out_path = Path(out_path)
    out_path.write_text(text)
    te = dataset.test_idx
    quant_acc = (quantized_accuracy(qnet, dataset.vectors[te],
                                    dataset.labels[te]) if te.size else None)
    meta = {"digest": digest, "calibration_vectors": int(min(calib, tr.size)),
            "held_out": int(te.size), "quantized_accuracy": quant_acc,
            "float_accuracy": float_accuracy}
    Path(str(out_path) + ".meta.json").write_text(
        json.dumps(meta, indent=2) + "\n")
    report = dict(meta)
    report["qnet"] = qnet
    report["path"] = str(out_path)
    return report
