"""Batch gradient descent over operational networks.

Backpropagation runs in four stages per pair: the output delta from the
mean-squared error, the pair-wise adjoint of the operational correlation
(kernel gradients plus padded-input gradients), the resampling adjoint,
and the activation derivative that produces the next layer's delta.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backend import get_backend
from .model import resample_adjoint
from .operators import act_grad, set_from_index


class DivergenceError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 240
    lr0: float = 0.01
    lr_up: float = 1.05
    lr_down: float = 0.7
    lr_max: float = 0.5
    lr_min: float = 5e-5
    batch: int = 0  # 0 = full batch
    weight_range: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0 < self.lr_min <= self.lr0 <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr0 <= lr_max")
        if self.lr_up <= 1.0 or not 0.0 < self.lr_down < 1.0:
            raise ValueError("lr factors must bracket 1")
        if self.batch < 0:
            raise ValueError("batch must be >= 0")


@dataclass
class TrainState:
    """Schedule state carried across chained train calls."""

    lr: float
    last_loss: Optional[float] = None
    iteration: int = 0

    @classmethod
    def fresh(cls, cfg):
        return cls(lr=cfg.lr0)


@dataclass
class LossTrace:
    """Per-iteration training record."""

    iterations: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    extras: list = field(default_factory=list)  # optional per-iteration dicts

    def append(self, iteration, loss, lr, extra=None):
        self.iterations.append(int(iteration))
        self.losses.append(float(loss))
        self.lrs.append(float(lr))
        self.extras.append(extra)

    def csv_rows(self):
        extra_keys = sorted({k for e in self.extras if e for k in e})
        header = ["iter", "E", "lr"] + extra_keys
        yield ",".join(header)
        for t, e, lr, ex in zip(self.iterations, self.losses, self.lrs,
                                self.extras):
            row = [str(t), repr(e), repr(lr)]
            for k in extra_keys:
                v = (ex or {}).get(k)
                row.append("" if v is None else repr(float(v)))
            yield ",".join(row)

    def to_csv(self, path):
        from .model import write_text

        write_text(path, "\n".join(self.csv_rows()) + "\n")


def mse(output, target):
    diff = np.asarray(output) - np.asarray(target)
    return float(np.mean(diff * diff))


def adapt_lr(loss_now, loss_prev, lr, cfg):
    """Grow the step while the loss falls, shrink it when the loss rises.

    Either move is skipped when it would leave the [lr_min, lr_max] band.
    """
    if loss_now < loss_prev:
        if cfg.lr_up * lr <= cfg.lr_max:
            return cfg.lr_up * lr
    elif loss_now > loss_prev:
        if cfg.lr_down * lr >= cfg.lr_min:
            return cfg.lr_down * lr
    return lr


class GradientSet:
    """Kernel and bias gradients shaped like a model's parameters."""

    def __init__(self, kernels, biases):
        self.kernels = kernels
        self.biases = biases

    @classmethod
    def zeros_like(cls, model):
        return cls([np.zeros_like(k) for k in model.kernels],
                   [np.zeros_like(b) for b in model.biases])

    def add_(self, other):
        for a, b in zip(self.kernels, other.kernels):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b
        return self

    def scale_(self, factor):
        for a in self.kernels:
            a *= factor
        for a in self.biases:
            a *= factor
        return self

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.kernels) and all(
            np.all(np.isfinite(a)) for a in self.biases
        )


def output_delta(model, trace, target):
    """Stage one: delta at the output layer's pre-activation sums."""
    out = trace.output
    n_pix = out.size
    s = set_from_index(model.output_set)
    x_out = trace.x[-1][0]
    d = (2.0 / n_pix) * (out - np.asarray(target)) * act_grad(
        s.act, x_out, model.constants, fx=trace.act[-1][0]
    )
    return d[None]


def backward(model, trace, delta_out, backend=None):
    """Stages two to four: pair adjoints, resample adjoints, activation.

    ``delta_out`` is the delta at the output layer's pre-activation sums,
    shape (1, H, W).  Returns a GradientSet for one pair.
    """
    bk = get_backend(backend)
    arch = model.arch
    kx, ky = arch.kernel
    px, py = kx // 2, ky // 2
    consts = model.constants
    grads = GradientSet.zeros_like(model)
    delta = delta_out
    for layer in range(arch.output_layer, 0, -1):
        kern = model.kernels_into(layer)
        sets = model.layer_sets(layer)
        n_out, n_in = kern.shape[:2]
        prev = trace.layer_inputs(layer)
        ypads = [np.pad(prev[i], ((px, px), (py, py))) for i in range(n_in)]
        need_dy = layer > 1
        dprev = np.zeros_like(prev) if need_dy else None
        gl = grads.kernels[layer - 1]
        for k in range(n_out):
            s = set_from_index(int(sets[k]))
            am_k = trace.argmed[layer - 1][k]
            for i in range(n_in):
                am = None if am_k is None else am_k[i]
                dw, dyp = bk.pair_backward(kern[k, i], ypads[i], delta[k], am,
                                           s.nodal, s.pool, consts,
                                           need_input_grad=need_dy)
                gl[k, i] = dw
                if need_dy:
                    h, w = prev.shape[1:]
                    dprev[i] += dyp[px:px + h, py:py + w]
            grads.biases[layer - 1][k] = delta[k].sum()
        if need_dy:
            below = layer - 1
            kind = arch.resample_kind(below)
            bsets = model.layer_sets(below)
            nxt = np.empty_like(trace.x[below - 1])
            for i in range(dprev.shape[0]):
                s = set_from_index(int(bsets[i]))
                da = resample_adjoint(dprev[i], kind)
                nxt[i] = da * act_grad(s.act, trace.x[below - 1][i], consts,
                                       fx=trace.act[below - 1][i])
            delta = nxt
    return grads


def batch_gradient(model, pairs, backend=None):
    """Mean loss and mean gradients over a list of (input, target) pairs."""
    grads = GradientSet.zeros_like(model)
    total = 0.0
    for x, target in pairs:
        trace = model.forward(x, backend=backend)
        total += mse(trace.output, target)
        grads.add_(backward(model, trace, output_delta(model, trace, target),
                            backend=backend))
    n = len(pairs)
    grads.scale_(1.0 / n)
    return total / n, grads


def sgd_step(model, grads, lr):
    for k, g in zip(model.kernels, grads.kernels):
        k -= lr * g
    for b, g in zip(model.biases, grads.biases):
        b -= lr * g


def train(model, pairs, cfg, state=None, backend=None, hook=None,
          hook_every=1, trace=None):
    """Run cfg.iterations of batch gradient descent, mutating the model.

    ``state`` chains the adaptive schedule across calls (fresh if None).
    Each iteration: evaluate the batch loss, adapt the step from the
    previous loss, take one descent step.  Non-finite losses or gradients
    raise DivergenceError with the offending iteration.
    """
    if not pairs:
        raise ValueError("no training pairs")
    if state is None:
        state = TrainState.fresh(cfg)
    if trace is None:
        trace = LossTrace()
    rng = np.random.default_rng(cfg.seed) if cfg.batch else None
    for _ in range(cfg.iterations):
        batch = pairs
        if cfg.batch and cfg.batch < len(pairs):
            pick = rng.choice(len(pairs), size=cfg.batch, replace=False)
            batch = [pairs[j] for j in sorted(pick)]
        loss, grads = batch_gradient(model, batch, backend=backend)
        if not np.isfinite(loss):
            raise DivergenceError("non-finite loss", state.iteration)
        if not grads.is_finite():
            raise DivergenceError("non-finite gradient", state.iteration)
        if state.last_loss is not None:
            state.lr = adapt_lr(loss, state.last_loss, state.lr, cfg)
        sgd_step(model, grads, state.lr)
        extra = None
        if hook is not None and state.iteration % hook_every == 0:
            extra = hook(state.iteration, model, loss, state.lr)
        trace.append(state.iteration, loss, state.lr, extra)
        state.last_loss = loss
        state.iteration += 1
    return trace, state
