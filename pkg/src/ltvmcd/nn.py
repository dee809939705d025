"""Layer primitives and network topologies.

Layers: dense (affine), relu, inverted dropout, and the cross layer used
by DCNv2-style models. A Network is either a plain sequential stack
("mlp") or the two-branch cross/deep topology ("dcnv2"): cross stack and
deep stack run in parallel on the input, their outputs are concatenated
and fed to a final dense head.

Forward modes:
    "eval"      dropout layers are identity; no RNG is consumed
    "train"     dropout active, tape kept for backward
    "mc_sample" dropout active at inference time (Monte Carlo sampling)

Dropout samples one mask per layer per forward pass, shared across every
row of the batch, and scales surviving units by 1/(1-p) at sample time so
eval mode needs no rescaling.
"""

import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import numcore
from .numcore import NumericError, RngStream, ShapeError

MODES = ("train", "mc_sample", "eval")


class Dense:
    """Affine layer y = x W^T + b with weight shape (out_dim, in_dim)."""

    kind = "dense"

    def __init__(self, w, b):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ShapeError("dense expects w (out, in) and b (out,)")

    @property
    def in_dim(self):
        return self.w.shape[1]

    @property
    def out_dim(self):
        return self.w.shape[0]

    def params(self):
        return [self.w, self.b]

    def forward(self, x, mode="eval", rng=None):
        return numcore.matmul(x, self.w.T) + self.b, x

    def backward(self, cache, g):
        x = cache
        gw = numcore.matmul(g.T, x)
        gb = g.sum(axis=0)
        gx = numcore.matmul(g, self.w)
        return [gw, gb], gx


class Relu:
    kind = "relu"

    def params(self):
        return []

    def forward(self, x, mode="eval", rng=None):
        return np.maximum(x, 0.0), x

    def backward(self, cache, g):
        return [], g * (cache > 0.0)


class Dropout:
    """Inverted dropout: multipliers are 0 or 1/(1-p), expectation 1.

    With p == 0 the layer is identity in every mode and consumes no RNG.
    """

    kind = "dropout"

    def __init__(self, p):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = float(p)

    def params(self):
        return []

    def sample_mask(self, width, rng: RngStream):
        """One mask vector: entry j is 0 with probability p, else 1/(1-p)."""
        u = rng.uniform(width)
        return (u >= self.p).astype(np.float64) / (1.0 - self.p)

    def forward(self, x, mode="eval", rng=None):
        if mode == "eval" or self.p == 0.0:
            return x, None
        if rng is None:
            raise ValueError("dropout needs an RngStream in train/mc_sample mode")
        mask = self.sample_mask(x.shape[1], rng)
        return x * mask, mask

    def backward(self, cache, g):
        if cache is None:
            return [], g
        return [], g * cache


class Cross:
    """Cross layer y = x0 * (xl W^T + b) + xl with square weight (d, d)."""

    kind = "cross"

    def __init__(self, w, b):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.w.ndim != 2 or self.w.shape[0] != self.w.shape[1]:
            raise ShapeError("cross weight must be square (d, d)")
        if self.b.shape != (self.w.shape[0],):
            raise ShapeError("cross bias must have width d")

    def params(self):
        return [self.w, self.b]

    def forward(self, x0, xl):
        if x0.shape != xl.shape or x0.shape[1] != self.w.shape[0]:
            raise ShapeError("cross layer operand widths must all equal d")
        u = numcore.matmul(xl, self.w.T) + self.b
        return x0 * u + xl, (x0, xl, u)

    def backward(self, cache, g):
        x0, xl, u = cache
        gu = g * x0
        gw = numcore.matmul(gu.T, xl)
        gb = gu.sum(axis=0)
        gxl = numcore.matmul(gu, self.w) + g
        gx0 = g * u
        return [gw, gb], gx0, gxl


def cross_layer_forward(x0, xl, w, b):
    """Functional form of the cross layer (output only)."""
    out, _ = Cross(w, b).forward(numcore.as_matrix(x0), numcore.as_matrix(xl))
    return out


class Network:
    """Ordered layer container; see the module docstring for topologies.

    In eval/mc_sample mode a Network is read-only and may be shared across
    threads as long as each caller passes its own RngStream.
    """

    def __init__(self, arch, input_dim, stack=(), cross=(), deep=(), head=None):
        if arch not in ("mlp", "dcnv2"):
            raise ValueError(f"unknown architecture {arch!r}")
        self.arch = arch
        self.input_dim = int(input_dim)
        self.stack = list(stack)
        self.cross = list(cross)
        self.deep = list(deep)
        self.head = head

    def stochastic(self):
        """True if any layer draws randomness in mc_sample mode."""
        layers = self.stack + self.deep
        return any(l.kind == "dropout" and l.p > 0.0 for l in layers)

    @property
    def output_dim(self):
        if self.arch == "mlp":
            dense = [l for l in self.stack if l.kind == "dense"]
            return dense[-1].out_dim
        return self.head.out_dim

    def params(self):
        """Parameter matrices in fixed traversal order (cross, deep, head)."""
        out = []
        for layer in self.stack + self.cross + self.deep:
            out.extend(layer.params())
        if self.head is not None:
            out.extend(self.head.params())
        return out

    def named_params(self):
        names = []
        for group, layers in (("stack", self.stack), ("cross", self.cross), ("deep", self.deep)):
            for i, layer in enumerate(layers):
                for j, p in enumerate(layer.params()):
                    names.append((f"{group}[{i}].{'wb'[j]}", p))
        if self.head is not None:
            for j, p in enumerate(self.head.params()):
                names.append((f"head.{'wb'[j]}", p))
        return names

    def forward(self, x, mode="eval", rng=None):
        """Run the network; returns (output, tape) where the tape holds the
        intermediates backward() needs. Identical (x, mode, rng stream)
        always reproduce the identical output."""
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        x = numcore.as_matrix(x)
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"batch width {x.shape[1]} != network input width {self.input_dim}")
        if self.arch == "mlp":
            h = x
            caches = []
            for layer in self.stack:
                h, c = layer.forward(h, mode, rng)
                caches.append(c)
            numcore.ensure_finite(h, "network output")
            return h, {"mode": mode, "out_shape": h.shape, "caches": caches}
        # dcnv2: cross and deep branches in parallel, concat, dense head
        xl = x
        cross_caches = []
        for layer in self.cross:
            xl, c = layer.forward(x, xl)
            cross_caches.append(c)
        h = x
        deep_caches = []
        for layer in self.deep:
            h, c = layer.forward(h, mode, rng)
            deep_caches.append(c)
        z = np.concatenate([xl, h], axis=1)
        y, head_cache = self.head.forward(z, mode, rng)
        numcore.ensure_finite(y, "network output")
        tape = {
            "mode": mode,
            "out_shape": y.shape,
            "cross": cross_caches,
            "deep": deep_caches,
            "head": head_cache,
        }
        return y, tape

    def backward(self, tape, grad_out):
        """Reverse-mode gradients. Returns (param_grads, input_grad) with
        param_grads aligned to params(). Dropout masks are reused from the
        tape, so forward and backward see the same mask."""
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != tape["out_shape"]:
            raise ShapeError(
                f"upstream grad shape {grad_out.shape} != output shape {tape['out_shape']}"
            )
        if self.arch == "mlp":
            g = grad_out
            rev = []
            for layer, cache in zip(reversed(self.stack), reversed(tape["caches"])):
                pg, g = layer.backward(cache, g)
                rev.append(pg)
            param_grads = [p for pg in reversed(rev) for p in pg]
            return param_grads, g
        head_pg, gz = self.head.backward(tape["head"], grad_out)
        d = self.input_dim
        gxl = gz[:, :d]
        gh = gz[:, d:]
        deep_rev = []
        for layer, cache in zip(reversed(self.deep), reversed(tape["deep"])):
            pg, gh = layer.backward(cache, gh)
            deep_rev.append(pg)
        gx0 = np.zeros_like(gxl)
        cross_rev = []
        for layer, cache in zip(reversed(self.cross), reversed(tape["cross"])):
            pg, gx0_c, gxl = layer.backward(cache, gxl)
            gx0 += gx0_c
            cross_rev.append(pg)
        param_grads = [p for pg in reversed(cross_rev) for p in pg]
        param_grads += [p for pg in reversed(deep_rev) for p in pg]
        param_grads += head_pg
        # initial xl and the deep branch input are both the raw input
        return param_grads, gx0 + gxl + gh


def _he_uniform(out_dim, in_dim, rng: RngStream):
    limit = math.sqrt(6.0 / in_dim)
    u = rng.uniform(out_dim * in_dim).reshape(out_dim, in_dim)
    return (2.0 * u - 1.0) * limit


def _check_dims(dims):
    for d in dims:
        if int(d) < 1:
            raise ValueError(f"layer dims must be positive, got {dims}")


def build_mlp(input_dim, hidden_dims, dropout_p, out_dim=1, seed=0):
    """[dense -> relu -> dropout] per hidden dim, then a final dense.

    Weights are He-uniform from labeled streams of `seed`, biases zero;
    builds from the same seed are bit-identical.
    """
    _check_dims([input_dim, out_dim, *hidden_dims])
    root = RngStream(seed, "init")
    stack = []
    prev = int(input_dim)
    for i, h in enumerate(hidden_dims):
        h = int(h)
        stack.append(Dense(_he_uniform(h, prev, root.child(f"dense{i}")), np.zeros(h)))
        stack.append(Relu())
        stack.append(Dropout(dropout_p))
        prev = h
    stack.append(Dense(_he_uniform(out_dim, prev, root.child(f"dense{len(hidden_dims)}")), np.zeros(out_dim)))
    return Network("mlp", input_dim, stack=stack)


def build_dcnv2(input_dim, n_cross, deep_dims, dropout_p, out_dim=1, seed=0):
    """n_cross stacked cross layers alongside a deep branch, concatenated
    into a dense head. Dropout sits after each deep activation only; with
    n_cross == 0 the cross branch passes the input through unchanged.
    """
    _check_dims([input_dim, out_dim, *deep_dims])
    if n_cross < 0:
        raise ValueError("n_cross must be >= 0")
    d = int(input_dim)
    root = RngStream(seed, "init")
    cross = [
        Cross(_he_uniform(d, d, root.child(f"cross{i}")), np.zeros(d))
        for i in range(n_cross)
    ]
    deep = []
    prev = d
    for i, h in enumerate(deep_dims):
        h = int(h)
        deep.append(Dense(_he_uniform(h, prev, root.child(f"deep{i}")), np.zeros(h)))
        deep.append(Relu())
        deep.append(Dropout(dropout_p))
        prev = h
    head_in = d + prev
    head = Dense(_he_uniform(out_dim, head_in, root.child("head")), np.zeros(out_dim))
    return Network("dcnv2", input_dim, cross=cross, deep=deep, head=head)


CHECKPOINT_FORMAT = "ltvmcd-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """A trained network plus what the pipeline needs to use it: the loss
    kind it was trained with and the feature standardization fitted on the
    training split (None if features were used raw)."""

    network: Network
    loss_kind: str = "log_mse"
    norm: tuple | None = None  # (mean, std) per feature


def _layer_doc(layer):
    if layer.kind == "dense":
        return {"kind": "dense", "w": layer.w.tolist(), "b": layer.b.tolist()}
    if layer.kind == "relu":
        return {"kind": "relu"}
    if layer.kind == "dropout":
        return {"kind": "dropout", "p": layer.p}
    if layer.kind == "cross":
        return {"kind": "cross", "w": layer.w.tolist(), "b": layer.b.tolist()}
    raise ValueError(f"unknown layer kind {layer.kind!r}")


def _layer_from_doc(doc):
    kind = doc["kind"]
    if kind == "dense":
        return Dense(doc["w"], doc["b"])
    if kind == "relu":
        return Relu()
    if kind == "dropout":
        return Dropout(doc["p"])
    if kind == "cross":
        return Cross(doc["w"], doc["b"])
    raise ValueError(f"unknown layer kind {kind!r}")


def save_checkpoint(path, ckpt: Checkpoint):
    """Write the JSON checkpoint atomically (temp file + rename).

    Floats are serialized with repr, which round-trips IEEE doubles
    exactly: save -> load -> forward is bit-identical.
    """
    net = ckpt.network
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": net.arch,
        "input_dim": net.input_dim,
        "loss": ckpt.loss_kind,
        "norm": None
        if ckpt.norm is None
        else {"mean": np.asarray(ckpt.norm[0]).tolist(), "std": np.asarray(ckpt.norm[1]).tolist()},
    }
    if net.arch == "mlp":
        doc["stack"] = [_layer_doc(l) for l in net.stack]
    else:
        doc["cross"] = [_layer_doc(l) for l in net.cross]
        doc["deep"] = [_layer_doc(l) for l in net.deep]
        doc["head"] = _layer_doc(net.head)
    text = json.dumps(doc, indent=1)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arch = doc["arch"]
    if arch == "mlp":
        net = Network("mlp", doc["input_dim"], stack=[_layer_from_doc(d) for d in doc["stack"]])
    else:
        net = Network(
            "dcnv2",
            doc["input_dim"],
            cross=[_layer_from_doc(d) for d in doc["cross"]],
            deep=[_layer_from_doc(d) for d in doc["deep"]],
            head=_layer_from_doc(doc["head"]),
        )
    norm = doc.get("norm")
    if norm is not None:
        norm = (np.asarray(norm["mean"], dtype=np.float64), np.asarray(norm["std"], dtype=np.float64))
    return Checkpoint(network=net, loss_kind=doc.get("loss", "log_mse"), norm=norm)
