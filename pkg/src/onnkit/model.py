"""Network structure, parameters, and the operational forward pass.

Layers are numbered 0..L: layer 0 is the single input map, layers
1..n_hidden are the assignable hidden layers, and layer L is the single
output map whose operator set is fixed at construction.  Parameter lists
(kernels, biases) are indexed by operational layer, i.e. entry ``l - 1``
holds the parameters feeding network layer ``l``.
"""

from dataclasses import dataclass, field
import json
import os
import tempfile

import numpy as np

from .backend import get_backend
from .operators import (
    CNN_SET_INDEX,
    OperatorConstants,
    POOL_MEDIAN,
    act_eval,
    full_library,
    set_from_index,
)

CHECKPOINT_VERSION = 1

RESAMPLE_KINDS = ("none", "down2", "up2")


@dataclass(frozen=True)
class Architecture:
    """Static shape of a network: hidden widths, kernel size, resampling."""

    hidden: tuple = (12, 12)
    kernel: tuple = (3, 3)
    resample: tuple = ("down2", "up2")

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(n) for n in self.hidden))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "resample", tuple(self.resample))
        if not self.hidden or any(n < 1 for n in self.hidden):
            raise ValueError("hidden layer widths must be positive")
        if len(self.kernel) != 2 or any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ValueError("kernel size must be a pair of odd positive ints")
        if len(self.resample) != len(self.hidden):
            raise ValueError("need one resample kind per hidden layer")
        for kind in self.resample:
            if kind not in RESAMPLE_KINDS:
                raise ValueError(f"unknown resample kind {kind!r}")
        # map size must return to the input size at the output layer and
        # never exceed it on the way (down2 before up2)
        scale = 0
        for kind in self.resample:
            scale += {"none": 0, "down2": -1, "up2": 1}[kind]
            if scale > 0:
                raise ValueError("up2 may not precede its matching down2")
        if scale != 0:
            raise ValueError("down2 and up2 counts must balance")

    @property
    def n_hidden(self):
        return len(self.hidden)

    @property
    def layer_sizes(self):
        """Neuron counts for layers 0..L."""
        return (1,) + self.hidden + (1,)

    @property
    def output_layer(self):
        return self.n_hidden + 1

    def resample_kind(self, layer):
        """Resampling applied after layer ``layer``'s activation."""
        if 1 <= layer <= self.n_hidden:
            return self.resample[layer - 1]
        return "none"

    def to_dict(self):
        return {
            "hidden": list(self.hidden),
            "kernel": list(self.kernel),
            "resample": list(self.resample),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            hidden=tuple(d["hidden"]),
            kernel=tuple(d["kernel"]),
            resample=tuple(d["resample"]),
        )


def resample_apply(a, kind):
    """Resample a map after activation: 2x2 mean pool or 2x2 replication."""
    if kind == "none":
        return a
    H, W = a.shape
    if kind == "down2":
        if H % 2 or W % 2:
            raise ValueError("down2 needs even map dimensions")
        return a.reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))
    if kind == "up2":
        return np.repeat(np.repeat(a, 2, axis=0), 2, axis=1)
    raise ValueError(f"unknown resample kind {kind!r}")


def resample_adjoint(delta, kind):
    """Exact adjoint of resample_apply for backpropagation."""
    if kind == "none":
        return delta
    H, W = delta.shape
    if kind == "down2":
        # each source pixel contributed 1/4 of one pooled pixel
        return np.repeat(np.repeat(delta, 2, axis=0), 2, axis=1) * 0.25
    if kind == "up2":
        # each source pixel was replicated to a 2x2 block
        return delta.reshape(H // 2, 2, W // 2, 2).sum(axis=(1, 3))
    raise ValueError(f"unknown resample kind {kind!r}")


@dataclass
class ForwardTrace:
    """Intermediate maps kept for backpropagation.

    Per operational layer (index l-1): pre-activation sums ``x`` of shape
    (N_l, h, w), post-activation maps ``act``, post-resample outputs ``y``,
    and median tap indices ``argmed`` (entry per neuron: None for sum pools,
    else int32 (N_prev, h, w)).
    """

    input: np.ndarray
    x: list = field(default_factory=list)
    act: list = field(default_factory=list)
    y: list = field(default_factory=list)
    argmed: list = field(default_factory=list)

    def layer_inputs(self, layer):
        """Output maps of layer ``layer - 1`` (the input to layer ``layer``)."""
        if layer == 1:
            return self.input[None]
        return self.y[layer - 2]

    @property
    def output(self):
        return self.y[-1][0]


class OnnModel:
    """An operational network: architecture, operator choices, parameters."""

    def __init__(self, arch, constants=None, sublibrary=None,
                 output_set=CNN_SET_INDEX):
        self.arch = arch
        self.constants = constants if constants is not None else OperatorConstants()
        self.sublibrary = sublibrary if sublibrary is not None else full_library()
        self.output_set = int(output_set)
        set_from_index(self.output_set)  # range check
        sizes = arch.layer_sizes
        kx, ky = arch.kernel
        self.kernels = [
            np.zeros((sizes[l + 1], sizes[l], kx, ky)) for l in range(len(sizes) - 1)
        ]
        self.biases = [np.zeros(sizes[l + 1]) for l in range(len(sizes) - 1)]
        self.assignments = [
            np.full(n, CNN_SET_INDEX, dtype=np.int64) for n in arch.hidden
        ]

    def init_weights(self, rng, weight_range=0.1):
        """Uniform(-range, range) kernels, zero biases."""
        for k in self.kernels:
            k[...] = rng.uniform(-weight_range, weight_range, size=k.shape)
        for b in self.biases:
            b[...] = 0.0
        return self

    def kernels_into(self, layer):
        """Kernel tensor feeding network layer ``layer`` (1-based)."""
        return self.kernels[layer - 1]

    def biases_into(self, layer):
        return self.biases[layer - 1]

    def layer_sets(self, layer):
        """Operator set index per neuron of network layer ``layer``."""
        if layer == self.arch.output_layer:
            return np.full(1, self.output_set, dtype=np.int64)
        return self.assignments[layer - 1]

    def assign_operators(self, layer, indices):
        """Reassign every neuron of one hidden layer; weights are retained."""
        if not 1 <= layer <= self.arch.n_hidden:
            raise ValueError(f"layer {layer} is not an assignable hidden layer")
        indices = np.asarray(indices, dtype=np.int64)
        if indices.shape != (self.arch.hidden[layer - 1],):
            raise ValueError("need one operator set index per neuron")
        for idx in indices:
            if int(idx) not in self.sublibrary:
                raise ValueError(
                    f"operator set {int(idx)} is outside the model's sublibrary"
                )
        self.assignments[layer - 1] = indices.copy()
        return self

    def copy(self):
        other = OnnModel(self.arch, self.constants, self.sublibrary,
                         self.output_set)
        other.kernels = [k.copy() for k in self.kernels]
        other.biases = [b.copy() for b in self.biases]
        other.assignments = [a.copy() for a in self.assignments]
        return other

    def parameter_count(self):
        return sum(k.size for k in self.kernels) + sum(b.size for b in self.biases)

    def forward(self, x, backend=None):
        """Run the network on one map, returning a ForwardTrace."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("input must be a 2-D map")
        bk = get_backend(backend)
        arch = self.arch
        kx, ky = arch.kernel
        px, py = kx // 2, ky // 2
        consts = self.constants
        trace = ForwardTrace(input=x)
        prev = x[None]
        for layer in range(1, arch.output_layer + 1):
            kern = self.kernels_into(layer)
            bias = self.biases_into(layer)
            sets = self.layer_sets(layer)
            n_out, n_in = kern.shape[:2]
            ypads = [np.pad(prev[i], ((px, px), (py, py))) for i in range(n_in)]
            h, w = prev.shape[1:]
            xs = np.empty((n_out, h, w))
            ams = []
            for k in range(n_out):
                s = set_from_index(int(sets[k]))
                acc = np.full((h, w), bias[k])
                am_k = None
                if s.pool == POOL_MEDIAN:
                    am_k = np.empty((n_in, h, w), dtype=np.int32)
                for i in range(n_in):
                    out, am = bk.pair_forward(kern[k, i], ypads[i],
                                              s.nodal, s.pool, consts)
                    acc += out
                    if am_k is not None:
                        am_k[i] = am
                xs[k] = acc
                ams.append(am_k)
            acts = np.empty_like(xs)
            for k in range(n_out):
                s = set_from_index(int(sets[k]))
                acts[k] = act_eval(s.act, xs[k], consts)
            kind = arch.resample_kind(layer)
            ys = np.stack([resample_apply(acts[k], kind) for k in range(n_out)])
            trace.x.append(xs)
            trace.act.append(acts)
            trace.y.append(ys)
            trace.argmed.append(ams)
            prev = ys
        return trace

    def predict(self, x, backend=None):
        return self.forward(x, backend=backend).output

    # -- checkpoint serialization ------------------------------------------

    def to_checkpoint(self):
        return {
            "version": CHECKPOINT_VERSION,
            "architecture": self.arch.to_dict(),
            "constants": self.constants.to_dict(),
            "output_set": self.output_set,
            "assignments": [a.tolist() for a in self.assignments],
            "kernels": [k.tolist() for k in self.kernels],
            "biases": [b.tolist() for b in self.biases],
        }

    def save(self, path):
        write_json(path, self.to_checkpoint())

    @classmethod
    def from_checkpoint(cls, d, sublibrary=None):
        """Rebuild a model from a checkpoint dict.

        Checkpoints do not record the sublibrary; pass one to restore a
        restricted model (assignments are validated against it), otherwise
        the full library is assumed.
        """
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        arch = Architecture.from_dict(d["architecture"])
        model = cls(
            arch,
            constants=OperatorConstants.from_dict(d["constants"]),
            sublibrary=sublibrary,
            output_set=d["output_set"],
        )
        sizes = arch.layer_sizes
        kx, ky = arch.kernel
        for l in range(len(sizes) - 1):
            kern = np.asarray(d["kernels"][l], dtype=np.float64)
            if kern.shape != (sizes[l + 1], sizes[l], kx, ky):
                raise ValueError(f"kernel tensor {l} has shape {kern.shape}")
            bias = np.asarray(d["biases"][l], dtype=np.float64)
            if bias.shape != (sizes[l + 1],):
                raise ValueError(f"bias vector {l} has shape {bias.shape}")
            model.kernels[l] = kern
            model.biases[l] = bias
        for h, n in enumerate(arch.hidden):
            a = np.asarray(d["assignments"][h], dtype=np.int64)
            if a.shape != (n,):
                raise ValueError(f"assignment vector {h} has shape {a.shape}")
            model.assign_operators(h + 1, a)
        return model

    @classmethod
    def load(cls, path, sublibrary=None):
        with open(path, encoding="utf-8") as fh:
            return cls.from_checkpoint(json.load(fh), sublibrary=sublibrary)


def _json_sanitize(obj):
    if isinstance(obj, dict):
        return {k: _json_sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_sanitize(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if f != f:
            return "nan"
        if f == float("inf"):
            return "inf"
        if f == float("-inf"):
            return "-inf"
        return f
    if isinstance(obj, np.ndarray):
        return _json_sanitize(obj.tolist())
    return obj


def write_json(path, payload):
    """Deterministic JSON writer: sorted keys, repr floats, atomic rename."""
    text = json.dumps(_json_sanitize(payload), sort_keys=True, indent=1,
                      allow_nan=False)
    write_text(path, text + "\n")


def write_text(path, text):
    """Atomic text write: temp file in the target directory, then rename."""
    path = str(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
