"""Group-convolution layers, the paired classifier architectures, checkpoints.

A group layer never owns filters, only rotation-invariant coefficients; the
filter bank for all orientations is synthesized per forward pass from the
frozen basis, with the orientation roll realized as an index gather, and the
whole bank applied as one standard correlation.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from . import tensor as T
from .basis import Basis
from .tensor import Tensor


class FingerprintMismatch(ValueError):
    """Checkpoint and basis do not belong together."""


class CheckpointFormatError(ValueError):
    """Raised for unreadable or corrupt checkpoint files."""


def _elements_array(basis) -> np.ndarray:
    if isinstance(basis, Basis):
        return basis.elements
    arr = np.asarray(basis)
    if arr.ndim != 4:
        raise ValueError("basis elements must have shape [order, n, k, k]")
    return arr


def _elements_matrix(elements: np.ndarray, dtype) -> np.ndarray:
    """[order, n, k, k] -> [n, order*k*k] for one-shot synthesis of all orientations."""
    order, n, k, _ = elements.shape
    return np.ascontiguousarray(
        elements.transpose(1, 0, 2, 3).reshape(n, order * k * k).astype(dtype))


def gconv_input(x: Tensor, coefficients: Tensor, basis) -> Tensor:
    """Lift an image stack [B,C,H,W] to orientation maps [B,O,order,H,W].

    Output slice r is the correlation of the input with the coefficients
    expanded in the basis at orientation r.
    """
    elements = _elements_array(basis)
    order, n, k, _ = elements.shape
    out_ch, in_ch, n_coeff = coefficients.data.shape
    if n_coeff != n:
        raise ValueError(f"coefficients carry {n_coeff} weights per filter, "
                         f"basis has {n} elements")
    if x.data.shape[1] != in_ch:
        raise ValueError(f"input has {x.data.shape[1]} channels, expected {in_ch}")
    emat = Tensor(_elements_matrix(elements, x.data.dtype))
    bank = T.matmul(T.reshape(coefficients, (out_ch * in_ch, n)), emat)
    bank = T.reshape(bank, (out_ch, in_ch, order, k, k))
    bank = T.reshape(T.transpose(bank, (0, 2, 1, 3, 4)), (out_ch * order, in_ch, k, k))
    out = T.correlate2d(x, bank, padding="same")
    b, _, h, w = out.data.shape
    return T.reshape(out, (b, out_ch, order, h, w))


def _rolled_bank(f: Tensor) -> Tensor:
    """Weight-tying gather: [O,C,m,order,k,k] -> [O,order,C,s,k,k].

    out[o, r, c, s] = f[o, c, (s - r) % order, r]; slot s - r is the
    coefficient block that lands on input orientation s when the filter sits
    at orientation r.
    """
    o, c, m, order, k, _ = f.data.shape
    out_data = np.empty((o, order, c, order, k, k), dtype=f.data.dtype)
    for r in range(order):
        idx = (np.arange(order) - r) % order
        out_data[:, r] = f.data[:, :, idx, r]

    def backward(g):
        gf = np.empty_like(f.data)
        for r in range(order):
            inv = (np.arange(order) + r) % order
            gf[:, :, :, r] = g[:, r][:, :, inv]
        T.accumulate_grad(f, gf)

    return Tensor.from_op(out_data, (f,), backward, "rolled_bank")


def gconv_intermediate(x: Tensor, coefficients: Tensor, basis) -> Tensor:
    """Group convolution on orientation maps [B,C,order,H,W].

    Output slice r sums, over input slices s, correlations with the filter at
    coefficient slot (s - r) mod order synthesized in the orientation-r basis.
    """
    elements = _elements_array(basis)
    order, n, k, _ = elements.shape
    out_ch, in_ch, n_slots, n_coeff = coefficients.data.shape
    if n_coeff != n:
        raise ValueError(f"coefficients carry {n_coeff} weights per filter, "
                         f"basis has {n} elements")
    if n_slots != order:
        raise ValueError(f"coefficients expect {n_slots} orientations, basis has {order}")
    if x.data.ndim != 5 or x.data.shape[2] != order:
        raise ValueError(f"input orientation axis must have extent {order}, "
                         f"got {x.data.shape}")
    if x.data.shape[1] != in_ch:
        raise ValueError(f"input has {x.data.shape[1]} channels, expected {in_ch}")
    emat = Tensor(_elements_matrix(elements, x.data.dtype))
    bank = T.matmul(T.reshape(coefficients, (out_ch * in_ch * order, n)), emat)
    bank = T.reshape(bank, (out_ch, in_ch, order, order, k, k))
    bank = T.reshape(_rolled_bank(bank), (out_ch * order, in_ch * order, k, k))
    b, _, _, h, w = x.data.shape
    flat = T.reshape(x, (b, in_ch * order, h, w))
    out = T.correlate2d(flat, bank, padding="same")
    return T.reshape(out, (b, out_ch, order, h, w))


def global_group_maxpool(x: Tensor) -> Tensor:
    """Max over orientation and space: [B,C,order,H,W] -> [B,C]."""
    return T.global_maxpool(x, keep_axes=2)


# -- layers --------------------------------------------------------------------


class Conv2d:
    def __init__(self, in_channels, out_channels, kernel_size, rng, dtype, name):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        bound = 1.0 / np.sqrt(in_channels * kernel_size ** 2)
        self.weight = Tensor(rng.uniform(-bound, bound,
                                         (out_channels, in_channels,
                                          kernel_size, kernel_size)).astype(dtype),
                             requires_grad=True)

    def params(self):
        return [("weight", self.weight)]

    def out_kind(self, kind):
        return "spatial"

    def spec(self):
        return {"type": "conv", "name": self.name, "in": self.in_channels,
                "out": self.out_channels, "k": self.kernel_size}

    def forward(self, x, training):
        return T.correlate2d(x, self.weight, padding="same")


class GConvInput:
    def __init__(self, in_channels, out_channels, elements, rng, dtype, name):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.elements = elements.astype(dtype)
        n = elements.shape[1]
        bound = 1.0 / np.sqrt(in_channels * n)
        self.coefficients = Tensor(rng.uniform(-bound, bound,
                                               (out_channels, in_channels, n)).astype(dtype),
                                   requires_grad=True)

    def params(self):
        return [("coefficients", self.coefficients)]

    def out_kind(self, kind):
        return "group"

    def spec(self):
        return {"type": "gconv_input", "name": self.name, "in": self.in_channels,
                "out": self.out_channels}

    def forward(self, x, training):
        return gconv_input(x, self.coefficients, self.elements)


class GConvIntermediate:
    def __init__(self, in_channels, out_channels, elements, rng, dtype, name):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.elements = elements.astype(dtype)
        order, n = elements.shape[0], elements.shape[1]
        bound = 1.0 / np.sqrt(in_channels * order * n)
        self.coefficients = Tensor(rng.uniform(-bound, bound,
                                               (out_channels, in_channels,
                                                order, n)).astype(dtype),
                                   requires_grad=True)

    def params(self):
        return [("coefficients", self.coefficients)]

    def out_kind(self, kind):
        return "group"

    def spec(self):
        one_by_one = self.elements.shape[1] == 1 and self.elements.shape[2] == 1
        return {"type": "gconv", "name": self.name, "in": self.in_channels,
                "out": self.out_channels,
                "elements": "ones" if one_by_one else "basis"}

    def forward(self, x, training):
        return gconv_intermediate(x, self.coefficients, self.elements)


class BatchNorm:
    """Per-channel normalization; group maps reduce over orientation too."""

    def __init__(self, channels, map_kind, dtype, name, momentum: float = 0.1):
        self.name = name
        self.map_kind = map_kind
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def out_kind(self, kind):
        return kind

    def spec(self):
        return {"type": "batchnorm", "name": self.name,
                "channels": int(self.gamma.data.shape[0]), "kind": self.map_kind}

    def _axes(self, x):
        return (0, 2, 3, 4) if x.data.ndim == 5 else (0, 2, 3)

    def forward(self, x, training):
        axes = self._axes(x)
        if training:
            out, mean, var = T.batchnorm_train(x, self.gamma, self.beta, axes)
            self.running_mean += self.momentum * (mean.astype(np.float64) - self.running_mean)
            self.running_var += self.momentum * (var.astype(np.float64) - self.running_var)
            return out
        return T.batchnorm_eval(x, self.gamma, self.beta, axes,
                                self.running_mean, self.running_var)


class ReLU:
    def __init__(self, name):
        self.name = name

    def params(self):
        return []

    def out_kind(self, kind):
        return kind

    def spec(self):
        return {"type": "relu", "name": self.name}

    def forward(self, x, training):
        return T.relu(x)


class MaxPool2x2:
    def __init__(self, name):
        self.name = name

    def params(self):
        return []

    def out_kind(self, kind):
        return kind

    def spec(self):
        return {"type": "maxpool", "name": self.name}

    def forward(self, x, training):
        return T.maxpool2x2(x)


class GlobalMaxPool:
    """Collapses everything past (batch, channel); covers both map kinds."""

    def __init__(self, name):
        self.name = name

    def params(self):
        return []

    def out_kind(self, kind):
        return "vector"

    def spec(self):
        return {"type": "global_maxpool", "name": self.name}

    def forward(self, x, training):
        return T.global_maxpool(x, keep_axes=2)


class Dense:
    def __init__(self, in_features, out_features, rng, dtype, name):
        self.name = name
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Tensor(rng.uniform(-bound, bound,
                                         (in_features, out_features)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def out_kind(self, kind):
        return "vector"

    def spec(self):
        return {"type": "dense", "name": self.name, "in": self.in_features,
                "out": self.out_features}

    def forward(self, x, training):
        return T.matmul(x, self.weight) + self.bias


# -- the model ------------------------------------------------------------------


class Model:
    def __init__(self, layers, kind, variant, in_channels, classes, dtype,
                 group_order, basis_fingerprint=None):
        self.layers = layers
        self.kind = kind
        self.variant = variant
        self.in_channels = in_channels
        self.classes = classes
        self.dtype = np.dtype(dtype)
        self.group_order = group_order
        self.basis_fingerprint = basis_fingerprint
        self.input_stats = None  # optional (mean[C], std[C]) for normalization

    def parameters(self):
        return [p for layer in self.layers for _, p in layer.params()]

    def named_parameters(self):
        return [(f"{i:02d}.{layer.name}.{pname}", p)
                for i, layer in enumerate(self.layers) for pname, p in layer.params()]

    def named_buffers(self):
        out = []
        for i, layer in enumerate(self.layers):
            if hasattr(layer, "buffers"):
                for bname, b in layer.buffers():
                    out.append((f"{i:02d}.{layer.name}.{bname}", b))
        return out

    def forward(self, x, training: bool = False) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def forward_with_activations(self, x):
        """Eval-mode forward returning [(layer_name, map_kind, array), ...]."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        kind = "spatial"
        records = []
        for layer in self.layers:
            x = layer.forward(x, False)
            kind = layer.out_kind(kind)
            records.append((layer.name, kind, x.data))
        return records

    def arch_description(self) -> dict:
        return {
            "kind": self.kind,
            "variant": self.variant,
            "in_channels": self.in_channels,
            "classes": self.classes,
            "dtype": self.dtype.name,
            "group_order": self.group_order,
            "layers": [layer.spec() for layer in self.layers],
        }

    def arch_hash(self) -> str:
        payload = json.dumps(self.arch_description(), sort_keys=True).encode("ascii")
        return hashlib.sha256(payload).hexdigest()


def count_parameters(model: Model) -> int:
    return sum(p.data.size for p in model.parameters())


GROUP_CHANNELS = (33, 33, 33, 67, 67, 67, 67, 67, 67)
TRANSLATIONAL_CHANNELS = (96, 96, 96, 192, 192, 192, 192, 192, 192)
_POOL_AFTER = (2, 5)  # max pooling after the third and sixth conv blocks
_ONE_BY_ONE = (7, 8)  # the last two conv blocks use 1x1 filters

GROUP_VARIANTS = ("full", "partial", "overcomplete", "random", "gaussian", "bilinear")


def _ones_elements(order: int, dtype) -> np.ndarray:
    return np.ones((order, 1, 1, 1), dtype=dtype)


def build_model(kind: str, variant: str = "none", basis: Basis | None = None,
                in_channels: int = 3, classes: int = 10, seed: int = 0,
                dtype: str = "float32") -> Model:
    """The paired architectures: nine conv blocks, two poolings, global pool, classifier.

    ``kind="translational"`` uses plain correlations at 96/192 channels;
    ``kind="group"`` uses group convolutions at 33/67 channels over the given
    basis, which makes the two parameter counts land within a few percent.
    """
    rng = np.random.default_rng(seed)
    layers = []
    if kind == "translational":
        channels = TRANSLATIONAL_CHANNELS
        prev = in_channels
        for i, ch in enumerate(channels):
            k = 1 if i in _ONE_BY_ONE else 3
            layers.append(Conv2d(prev, ch, k, rng, dtype, f"conv{k}_{ch}_{i}"))
            layers.append(BatchNorm(ch, "spatial", dtype, f"bn_{i}"))
            layers.append(ReLU(f"relu_{i}"))
            if i in _POOL_AFTER:
                layers.append(MaxPool2x2(f"pool_{i}"))
            prev = ch
        layers.append(GlobalMaxPool("global_pool"))
        layers.append(Dense(prev, classes, rng, dtype, "classifier"))
        return Model(layers, kind, variant, in_channels, classes, dtype, 1)

    if kind != "group":
        raise ValueError(f"unknown model kind {kind!r}")
    if basis is None:
        raise ValueError("group models need a basis")
    if variant in GROUP_VARIANTS and basis.kind != variant:
        raise ValueError(f"variant {variant!r} does not match basis kind {basis.kind!r}")
    order = basis.order
    channels = GROUP_CHANNELS
    prev = in_channels
    for i, ch in enumerate(channels):
        if i == 0:
            layers.append(GConvInput(prev, ch, basis.elements, rng, dtype,
                                     f"gconv{basis.kernel_size}_{ch}_{i}"))
        elif i in _ONE_BY_ONE:
            layers.append(GConvIntermediate(prev, ch, _ones_elements(order, np.float64),
                                            rng, dtype, f"gconv1_{ch}_{i}"))
        else:
            layers.append(GConvIntermediate(prev, ch, basis.elements, rng, dtype,
                                            f"gconv{basis.kernel_size}_{ch}_{i}"))
        layers.append(BatchNorm(ch, "group", dtype, f"bn_{i}"))
        layers.append(ReLU(f"relu_{i}"))
        if i in _POOL_AFTER:
            layers.append(MaxPool2x2(f"pool_{i}"))
        prev = ch
    layers.append(GlobalMaxPool("global_pool"))
    layers.append(Dense(prev, classes, rng, dtype, "classifier"))
    return Model(layers, kind, variant, in_channels, classes, dtype, order,
                 basis.fingerprint())


# -- checkpoints -----------------------------------------------------------------
# magic, version u32, header-length u32, header json, raw array blobs in header
# order, sha256 of everything above.

_CKPT_MAGIC = b"RCKP"
_CKPT_VERSION = 1


def save_checkpoint(model: Model, path) -> None:
    arrays = []
    blobs = []
    for name, p in model.named_parameters():
        arrays.append({"name": name, "shape": list(p.data.shape), "dtype": p.data.dtype.name})
        blobs.append(np.ascontiguousarray(p.data).tobytes())
    for name, b in model.named_buffers():
        arrays.append({"name": name, "shape": list(b.shape), "dtype": b.dtype.name})
        blobs.append(np.ascontiguousarray(b).tobytes())
    if model.input_stats is not None:
        for name, arr in zip(("input_mean", "input_std"), model.input_stats):
            arr = np.asarray(arr, dtype=np.float64)
            arrays.append({"name": name, "shape": list(arr.shape), "dtype": "float64"})
            blobs.append(arr.tobytes())
    header = {
        "arch": model.arch_description(),
        "arch_hash": model.arch_hash(),
        "basis_fingerprint": model.basis_fingerprint,
        "seed_note": "parameters are stored verbatim; seed not required to reload",
        "arrays": arrays,
    }
    hjson = json.dumps(header, sort_keys=True).encode("ascii")
    payload = _CKPT_MAGIC + struct.pack("<II", _CKPT_VERSION, len(hjson)) + hjson
    payload += b"".join(blobs)
    payload += hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(payload)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != _CKPT_MAGIC:
        raise CheckpointFormatError("not a checkpoint file")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != _CKPT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise CheckpointFormatError("checksum mismatch")
    header = json.loads(blob[12:12 + hlen])
    header["_blob"] = blob
    header["_offset"] = 12 + hlen
    return header


def _layer_from_spec(spec: dict, basis: Basis | None, order: int, dtype, rng):
    kind = spec["type"]
    if kind == "conv":
        return Conv2d(spec["in"], spec["out"], spec["k"], rng, dtype, spec["name"])
    if kind == "gconv_input":
        return GConvInput(spec["in"], spec["out"], basis.elements, rng, dtype, spec["name"])
    if kind == "gconv":
        elements = _ones_elements(order, np.float64) if spec["elements"] == "ones" \
            else basis.elements
        return GConvIntermediate(spec["in"], spec["out"], elements, rng, dtype, spec["name"])
    if kind == "batchnorm":
        return BatchNorm(spec["channels"], spec["kind"], dtype, spec["name"])
    if kind == "relu":
        return ReLU(spec["name"])
    if kind == "maxpool":
        return MaxPool2x2(spec["name"])
    if kind == "global_maxpool":
        return GlobalMaxPool(spec["name"])
    if kind == "dense":
        return Dense(spec["in"], spec["out"], rng, dtype, spec["name"])
    raise CheckpointFormatError(f"unknown layer type {kind!r}")


def model_from_arch(arch: dict, basis: Basis | None) -> Model:
    """Reconstruct a model (fresh parameters) from its architecture description."""
    rng = np.random.default_rng(0)
    layers = [_layer_from_spec(s, basis, arch["group_order"], arch["dtype"], rng)
              for s in arch["layers"]]
    fingerprint = basis.fingerprint() if (basis is not None and arch["kind"] == "group") \
        else None
    return Model(layers, arch["kind"], arch["variant"], arch["in_channels"],
                 arch["classes"], arch["dtype"], arch["group_order"], fingerprint)


def load_checkpoint(path, basis: Basis | None = None) -> Model:
    """Rebuild a model from a checkpoint; group models re-check the basis fingerprint."""
    header = read_checkpoint_header(path)
    arch = header["arch"]
    if arch["kind"] == "group":
        if basis is None:
            raise ValueError("group checkpoints need the basis to rebuild")
        if basis.fingerprint() != header["basis_fingerprint"]:
            raise FingerprintMismatch(
                "checkpoint was trained against a different basis "
                f"({header['basis_fingerprint'][:12]}... vs {basis.fingerprint()[:12]}...)")
    model = model_from_arch(arch, basis)
    if model.arch_hash() != header["arch_hash"]:
        raise CheckpointFormatError("architecture hash mismatch")
    blob = header["_blob"]
    offset = header["_offset"]
    slots = {name: p for name, p in model.named_parameters()}
    buffers = {name: b for name, b in model.named_buffers()}
    stats = {}
    for meta in header["arrays"]:
        shape = tuple(meta["shape"])
        dtype = np.dtype(meta["dtype"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        raw = np.frombuffer(blob, dtype=dtype, count=max(int(np.prod(shape)), 1) if shape else 1,
                            offset=offset).reshape(shape)
        offset += nbytes
        name = meta["name"]
        if name in slots:
            slots[name].data = raw.copy()
        elif name in buffers:
            buffers[name][...] = raw
        elif name in ("input_mean", "input_std"):
            stats[name] = raw.copy()
        else:
            raise CheckpointFormatError(f"unexpected array {name!r}")
    if stats:
        model.input_stats = (stats["input_mean"], stats["input_std"])
    return model
