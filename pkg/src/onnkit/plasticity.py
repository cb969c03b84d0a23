"""Synaptic plasticity monitoring.

During a prior training run the outgoing-weight power of every hidden
neuron is snapshotted at session boundaries; the relative change over a
session is that neuron's health sample, credited to the operator set the
neuron held during the session.  Accumulated per-set means drive both the
reassignment sampler and the final elite/worst network assembly.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import OnnModel, write_json, write_text
from .operators import CNN_SET_INDEX, OperatorConstants, OperatorSubLibrary
from .train import DivergenceError, TrainConfig, TrainState, train

POWER_EPS = 1e-12  # below this, the previous power carries no signal


@dataclass(frozen=True)
class SpmConfig:
    sessions: int = 30
    window: int = 80  # training iterations per session
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.sessions < 1 or self.window < 1:
            raise ValueError("sessions and window must be positive")


def powers_from_kernels(kern_next):
    """Per source-neuron mean outgoing kernel variance.

    ``kern_next`` has shape (N_next, N_l, kx, ky); the population variance
    over each kernel's elements is averaged over the next layer's neurons.
    """
    kern_next = np.asarray(kern_next, dtype=np.float64)
    return kern_next.var(axis=(2, 3)).mean(axis=0)


def weight_power(model, layer, k):
    """Mean outgoing kernel variance of neuron ``k`` at hidden layer ``layer``."""
    if not 1 <= layer <= model.arch.n_hidden:
        raise ValueError(f"layer {layer} has no monitored outgoing kernels")
    powers = powers_from_kernels(model.kernels_into(layer + 1))
    if not 0 <= k < powers.shape[0]:
        raise IndexError(f"neuron index out of range: {k}")
    return float(powers[k])


def layer_powers(model):
    """Power vectors for all hidden layers, keyed by layer number."""
    return {
        l: powers_from_kernels(model.kernels_into(l + 1))
        for l in range(1, model.arch.n_hidden + 1)
    }


def instantaneous_hf(prev, now):
    """Relative power change over one session; None when prev is degenerate."""
    if prev < POWER_EPS:
        return None
    return abs(prev - now) / prev


class HealthLedger:
    """Per-layer, per-operator-set health statistics from one prior run."""

    def __init__(self, layers, sublibrary, metadata=None):
        self.layers = tuple(int(l) for l in layers)
        self.sublibrary = sublibrary
        self.metadata = dict(metadata or {})
        self.stats = {
            l: {theta: [0, 0.0] for theta in sublibrary.indices}
            for l in self.layers
        }
        self.skipped = {l: 0 for l in self.layers}
        self.sessions_recorded = 0
        self.diverged_sessions = 0
        self.snapshots = []  # optional per-session kernel records

    def record(self, layer, theta, prev, now):
        """Record one neuron's session sample; returns the HF or None."""
        hf = instantaneous_hf(prev, now)
        if hf is None:
            self.skipped[layer] += 1
            return None
        cell = self.stats[layer][int(theta)]
        cell[0] += 1
        cell[1] += hf
        return hf

    def count(self, layer, theta):
        return self.stats[layer][int(theta)][0]

    def mean_hf(self, layer, theta):
        """Mean recorded HF for one set; 0.0 while unsampled."""
        n, s = self.stats[layer][int(theta)]
        return s / n if n else 0.0

    def is_warm(self, layer):
        """Proportional sampling needs every set sampled at least twice."""
        return all(n >= 2 for n, _ in self.stats[layer].values())

    def total_count(self, layer):
        return sum(n for n, _ in self.stats[layer].values())

    def __eq__(self, other):
        if not isinstance(other, HealthLedger):
            return NotImplemented
        if self.layers != other.layers:
            return False
        if self.sublibrary.indices != other.sublibrary.indices:
            return False
        for l in self.layers:
            for theta in self.sublibrary.indices:
                if self.count(l, theta) != other.count(l, theta):
                    return False
                if not math.isclose(self.mean_hf(l, theta),
                                    other.mean_hf(l, theta),
                                    rel_tol=1e-15, abs_tol=0.0):
                    return False
        return True

    # -- export ------------------------------------------------------------

    def to_dict(self):
        return {
            "layers": {
                str(l): {
                    str(theta): {
                        "count": self.count(l, theta),
                        "mean_hf": self.mean_hf(l, theta),
                    }
                    for theta in self.sublibrary.indices
                }
                for l in self.layers
            },
            "metadata": {
                **self.metadata,
                "sublibrary": self.sublibrary.to_dict(),
                "sessions_recorded": self.sessions_recorded,
                "diverged_sessions": self.diverged_sessions,
                "skipped_samples": {str(l): self.skipped[l] for l in self.layers},
            },
        }

    def save_json(self, path):
        write_json(path, self.to_dict())

    def csv_rows(self):
        yield "layer,theta,count,hf"
        for l in self.layers:
            for theta in self.sublibrary.indices:
                yield f"{l},{theta},{self.count(l, theta)},{repr(self.mean_hf(l, theta))}"

    def save_csv(self, path):
        write_text(path, "\n".join(self.csv_rows()) + "\n")

    @classmethod
    def from_dict(cls, d):
        meta = dict(d["metadata"])
        sublib = OperatorSubLibrary.from_dict(meta.pop("sublibrary"))
        sessions = meta.pop("sessions_recorded", 0)
        diverged = meta.pop("diverged_sessions", 0)
        skipped = meta.pop("skipped_samples", {})
        layers = sorted(int(l) for l in d["layers"])
        ledger = cls(layers, sublib, metadata=meta)
        for l_key, per_set in d["layers"].items():
            l = int(l_key)
            for t_key, cell in per_set.items():
                n = int(cell["count"])
                ledger.stats[l][int(t_key)] = [n, float(cell["mean_hf"]) * n]
        ledger.sessions_recorded = int(sessions)
        ledger.diverged_sessions = int(diverged)
        for l_key, n in skipped.items():
            ledger.skipped[int(l_key)] = int(n)
        return ledger

    @classmethod
    def load_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def sample_operator(ledger, layer, sublibrary, rng, pending=None):
    """Draw one operator set index for a neuron of ``layer``.

    While any set has fewer than two samples, coverage comes first: the
    least-sampled set wins, random among ties, where ``pending`` (a dict the
    caller shares across one batch of draws) counts same-batch picks so a
    layer's draws spread over distinct sets.  Once warm, sets are drawn with
    probability proportional to their mean HF; zero-HF sets are never drawn
    unless every set is at zero, which falls back to uniform.
    """
    indices = sublibrary.indices
    if not ledger.is_warm(layer):
        load = [
            ledger.count(layer, t) + (pending or {}).get(t, 0) for t in indices
        ]
        tiebreak = rng.permutation(len(indices))
        pick = min(range(len(indices)), key=lambda j: (load[j], tiebreak[j]))
        theta = indices[pick]
    else:
        hfs = np.array([ledger.mean_hf(layer, t) for t in indices])
        total = hfs.sum()
        if total <= 0.0:
            theta = indices[rng.integers(len(indices))]
        else:
            theta = indices[rng.choice(len(indices), p=hfs / total)]
    if pending is not None:
        pending[theta] = pending.get(theta, 0) + 1
    return int(theta)


def assign_layer(ledger, layer, sublibrary, n, rng):
    """Draw a full layer's assignment (one set index per neuron)."""
    pending = {}
    return np.array(
        [sample_operator(ledger, layer, sublibrary, rng, pending) for _ in range(n)],
        dtype=np.int64,
    )


def spm_session(model, pairs, cfg, ledger, rng, state=None, backend=None,
                record_snapshots=False):
    """One monitoring session: snapshot, train ``window`` iterations,
    snapshot, credit one sample per hidden neuron, reassign every layer.

    Training divergence propagates to the caller with the ledger untouched
    by this session.  Returns the updated (model, ledger, state).
    """
    held = [a.copy() for a in model.assignments]
    start = layer_powers(model)
    snap = None
    if record_snapshots:
        snap = {
            "session": ledger.sessions_recorded,
            "assignments": [a.tolist() for a in held],
            "start_kernels": {
                l: model.kernels_into(l + 1).copy()
                for l in range(1, model.arch.n_hidden + 1)
            },
        }
    tcfg = replace(cfg.train, iterations=cfg.window)
    _, state = train(model, pairs, tcfg, state=state, backend=backend)
    end = layer_powers(model)
    for h, l in enumerate(range(1, model.arch.n_hidden + 1)):
        for k in range(model.arch.hidden[h]):
            ledger.record(l, int(held[h][k]), float(start[l][k]),
                          float(end[l][k]))
    if snap is not None:
        snap["end_kernels"] = {
            l: model.kernels_into(l + 1).copy()
            for l in range(1, model.arch.n_hidden + 1)
        }
        ledger.snapshots.append(snap)
    ledger.sessions_recorded += 1
    for l in range(1, model.arch.n_hidden + 1):
        model.assign_operators(
            l, assign_layer(ledger, l, model.sublibrary, model.arch.hidden[l - 1], rng)
        )
    return model, ledger, state


def prior_bp(pairs, sublibrary, cfg, arch, rng, constants=None,
             output_set=CNN_SET_INDEX, backend=None, record_snapshots=False):
    """Run the full monitoring schedule and return the health ledger.

    A fresh model with coverage-first random assignments runs
    ``cfg.sessions`` back-to-back sessions sharing one adaptive-lr
    schedule.  A diverged session is discarded: the model and schedule are
    re-initialized, the event is counted, and monitoring continues.
    """
    if not pairs:
        raise ValueError("no training pairs")
    layers = list(range(1, arch.n_hidden + 1))
    ledger = HealthLedger(
        layers,
        sublibrary,
        metadata={"sessions": cfg.sessions, "window": cfg.window,
                  "seed": cfg.seed},
    )

    def fresh_model():
        m = OnnModel(arch, constants, sublibrary, output_set)
        m.init_weights(rng, cfg.train.weight_range)
        for l in layers:
            m.assign_operators(
                l, assign_layer(ledger, l, sublibrary, arch.hidden[l - 1], rng)
            )
        return m

    model = fresh_model()
    state = TrainState.fresh(cfg.train)
    for _ in range(cfg.sessions):
        try:
            model, ledger, state = spm_session(
                model, pairs, cfg, ledger, rng, state=state, backend=backend,
                record_snapshots=record_snapshots,
            )
        except DivergenceError:
            ledger.diverged_sessions += 1
            model = fresh_model()
            state = TrainState.fresh(cfg.train)
    return ledger


def rank_operators(ledger, layer):
    """Sets of the ledger's sublibrary ordered best-first.

    Descending mean HF, ties by ascending set index; unsampled sets count
    as zero and therefore land at the bottom.
    """
    return sorted(
        ((t, ledger.mean_hf(layer, t)) for t in ledger.sublibrary.indices),
        key=lambda pair: (-pair[1], pair[0]),
    )


def allocate(hfs, n_neurons):
    """Split a layer's neurons over the top sets, densest first.

    Every set after the first gets the floor of its proportional share; the
    first (highest-HF) set absorbs the remainder.  Non-positive HFs make
    shares meaningless, so those fall back to a uniform split with the
    remainder on the first set.
    """
    hfs = [float(h) for h in hfs]
    s = len(hfs)
    if s < 1:
        raise ValueError("need at least one HF value")
    if s > n_neurons:
        raise ValueError(f"cannot spread {s} sets over {n_neurons} neurons")
    if min(hfs) <= 0.0:
        counts = [n_neurons // s] * s
        counts[0] += n_neurons - sum(counts)
        return counts
    total = sum(hfs)
    counts = [0] * s
    for i in range(1, s):
        counts[i] = int(math.floor(n_neurons * hfs[i] / total))
    counts[0] = n_neurons - sum(counts[1:])
    return counts


def _assemble(ledger, arch, picks_per_layer, constants, output_set, rng,
              weight_range):
    model = OnnModel(arch, constants, ledger.sublibrary, output_set)
    model.init_weights(rng, weight_range)
    for l in range(1, arch.n_hidden + 1):
        sets, counts = picks_per_layer[l]
        assignment = []
        for theta, c in zip(sets, counts):
            assignment.extend([theta] * c)
        model.assign_operators(l, np.array(assignment, dtype=np.int64))
    return model


def build_elite(ledger, s_top, arch, rng, constants=None,
                output_set=CNN_SET_INDEX, weight_range=0.1):
    """Assemble a fresh network from the ``s_top`` best sets per layer."""
    if s_top > len(ledger.sublibrary):
        raise ValueError("more top sets requested than the sublibrary holds")
    picks = {}
    for l in range(1, arch.n_hidden + 1):
        top = rank_operators(ledger, l)[:s_top]
        sets = [t for t, _ in top]
        counts = allocate([hf for _, hf in top], arch.hidden[l - 1])
        picks[l] = (sets, counts)
    return _assemble(ledger, arch, picks, constants, output_set, rng,
                     weight_range)


def build_worst(ledger, s_bottom, arch, rng, constants=None,
                output_set=CNN_SET_INDEX, weight_range=0.1):
    """Assemble a fresh network from the ``s_bottom`` worst sets per layer.

    Bottom HFs are routinely zero, so neurons split uniformly with the
    remainder going to the very worst set.
    """
    if s_bottom > len(ledger.sublibrary):
        raise ValueError("more bottom sets requested than the sublibrary holds")
    picks = {}
    for l in range(1, arch.n_hidden + 1):
        bottom = rank_operators(ledger, l)[-s_bottom:]
        n = arch.hidden[l - 1]
        sets = [t for t, _ in bottom]
        counts = [n // s_bottom] * s_bottom
        counts[-1] += n - sum(counts)
        picks[l] = (sets, counts)
    return _assemble(ledger, arch, picks, constants, output_set, rng,
                     weight_range)
