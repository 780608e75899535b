"""Integer-only reference inference over an exported qnet.

This is the trainer's own forward pass on quantized tensors: every value
an integer, every rounding step explicit.  It exists so golden test
vectors are generated by code independent of the engine; the engine's
oracle must then reproduce each per-layer output bit for bit.

Conventions match the exported format: activations are uint8 values;
average pooling lifts values by 2**16 fractional bits and the next
requantization shift absorbs the lift; requantization computes
((acc * m0) >> (31 + n + fin)) + zero_point with a floor shift, clamping
to [zero_point, 255] after relu and [0, 255] otherwise.
"""

import numpy as np

from .qformat import dump_test_vectors_text

FRAC_BITS = 16
ACT_MAX = 255


def conv_gather(depth, width, filt_width, padding):
    """Flat gather indices into concat(x.ravel(), [pad]); out-of-range
    columns hit the pad slot."""
    pad_left = (filt_width - 1) // 2 if padding == "same_centered" else 0
    idx = np.empty((depth * filt_width, width), dtype=np.int64)
    for d in range(depth):
        for l in range(filt_width):
            c = np.arange(width) + l - pad_left
            row = np.where((c >= 0) & (c < width), d * width + c,
                           depth * width)
            idx[d * filt_width + l] = row
    return idx


def pool_numer(window, frac_bits=FRAC_BITS):
    """Fixed-point factor for 1/window, rounded half-up."""
    return ((1 << (frac_bits + 1)) + window) // (2 * window)


def quantize_input(x, qp):
    """Float vector to uint8 codes; nearest value, ties break low."""
    scale, zp = qp
    t = np.asarray(x, dtype=np.float64) / scale + zp
    q = np.ceil(t - 0.5).astype(np.int64)
    return np.clip(q, 0, ACT_MAX).astype(np.uint8)


def _requant(acc, m0, n, z_out, fin, relu):
    q = (acc.astype(object) * int(m0)) >> (31 + n + fin)
    q = q + z_out
    lo = z_out if relu else 0
    return np.minimum(np.maximum(q, lo), ACT_MAX).astype(np.int64)


def forward(qnet, values, trace=False):
    """Class index of one uint8 input; with trace, also the per-layer
    integer outputs as (kind, frac_bits, [int, ...]) tuples."""
    values = np.asarray(values)
    if values.shape != (qnet["input_len"],):
        raise ValueError("input length %d, model wants %d"
                         % (values.size, qnet["input_len"]))
    vals = values.astype(np.int64)
    depth = qnet["input_depth"]
    width = qnet["input_len"] // depth
    fin = 0
    zp = qnet["input_qp"][1]
    steps = []
    for lay in qnet["layers"]:
        kind = lay["kind"]
        if kind == "conv":
            f, d, l = lay["weights"].shape
            wc = lay["weights"].reshape(f, d * l) - lay["w_qp"][1]
            cc = (lay["bias"] - zp * wc.sum(axis=1)) << fin
            idx = conv_gather(d, width, l, lay["padding"])
            ext = np.concatenate([vals.ravel(),
                                  np.array([zp << fin], dtype=np.int64)])
            acc = wc @ ext[idx] + cc[:, None]
            vals = _requant(acc, lay["m0"], lay["n"], lay["out_qp"][1],
                            fin, lay["relu"])
            depth, fin, zp = f, 0, lay["out_qp"][1]
        elif kind == "pool":
            p = lay["window"]
            blocks = width // p
            v = vals.reshape(depth, -1)[:, :blocks * p]
            sums = v.reshape(depth, blocks, p).sum(axis=2)
            lift = 1 << (FRAC_BITS - fin)
            if lift % p == 0:
                vals = sums * (lift // p)
            else:
                vals = (sums * lift * pool_numer(p)) >> FRAC_BITS
            width, fin = blocks, FRAC_BITS
        elif kind == "flatten":
            vals = vals.ravel()
        elif kind == "dense":
            wc = lay["weights"].T - lay["w_qp"][1]
            cc = (lay["bias"] - zp * wc.sum(axis=1)) << fin
            acc = wc @ vals.ravel() + cc
            vals = _requant(acc, lay["m0"], lay["n"], lay["out_qp"][1],
                            fin, lay["relu"])
            depth, width, fin, zp = 1, vals.size, 0, lay["out_qp"][1]
        elif kind == "argmax":
            break
        else:
            raise ValueError("unknown layer kind %r" % kind)
        if trace:
            fout = FRAC_BITS if kind == "pool" else \
                (fin if kind == "flatten" else 0)
            steps.append((kind, fout, [int(v) for v in vals.ravel()]))
    flat = vals.ravel()
    cls = int(np.argmax(flat))
    return cls, steps


def gen_test_vectors(qnet, digest, vectors, out_path):
    """Golden cases for float vectors: quantized input, expected class,
    per-layer expected integers, bound to the model digest.

    Returns the predicted class list; an empty vector set still writes a
    valid (zero-case) file.
    """
    cases, classes = [], []
    for x in vectors:
        q = quantize_input(x, qnet["input_qp"])
        cls, steps = forward(qnet, q, trace=True)
        cases.append((q, cls, steps))
        classes.append(cls)
    text = dump_test_vectors_text(digest, cases)
    with open(out_path, "w") as fh:
        fh.write(text)
    return classes
