"""Experiment harnesses: folds, image pairs, and the search pipeline.

A full run is, per fold: one prior monitoring pass that yields a health
ledger, five candidate networks assembled from it (elite S=1/S=3, a plain
CNN, worst S=3/S=1), and a handful of fresh training runs per candidate
keeping the best train-SNR network.  Fold artifacts land in per-fold
directories so an interrupted run resumes at the first incomplete fold.
"""

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .imaging import normalize, salt_pepper, snr, wgn
from .model import OnnModel, write_json, write_text
from .operators import CNN_SET_INDEX, make_sublibrary
from .plasticity import HealthLedger, build_elite, build_worst, prior_bp
from .train import DivergenceError, LossTrace, mse, train

# seed-stream tags: every rng is seeded [root_seed, TAG, ...context ints]
TAG_FOLDS = 1
TAG_NOISE = 2
TAG_SPM = 3
TAG_BUILD = 4
TAG_RUN = 5

TASK_KINDS = ("denoise", "synth", "transform")
CANDIDATES = ("elite1", "elite3", "cnn", "worst3", "worst1")
DENOISE_BLOCKS = 10


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    noise_p: float = 0.4
    pairs_per_fold: int = 8  # synth/transform group size

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if not 0.0 <= self.noise_p <= 1.0:
            raise ValueError("noise_p must be in [0, 1]")
        if self.pairs_per_fold < 1:
            raise ValueError("pairs_per_fold must be positive")


def default_sublibrary(kind):
    """Task-appropriate 14-set libraries.

    Denoising swaps in the median pool and keeps tanh only; synthesis and
    transformation keep the sum pool and add the linear-cut activation.
    """
    if kind == "denoise":
        return make_sublibrary([0, 1], [0], range(7))
    if kind in ("synth", "transform"):
        return make_sublibrary([0], [0, 1], range(7))
    raise ValueError(f"unknown task kind {kind!r}")


@dataclass(frozen=True)
class ImagePair:
    id: str
    input: np.ndarray
    target: np.ndarray

    def __iter__(self):
        # unpacks like a plain (input, target) pair for the train loop
        yield self.input
        yield self.target


@dataclass(frozen=True)
class FoldPlan:
    index: int  # 1-based
    train_ids: tuple
    test_ids: tuple


def build_folds(ids, kind, seed, group=8):
    """Deterministic fold plans over a corpus.

    Denoising always partitions the shuffled corpus into ten blocks; fold i
    trains on block i and tests on the rest.  Synthesis and transformation
    carve disjoint groups of ``group`` images per fold (no test split) for
    as many folds as the corpus affords, at most ten.
    """
    ids = sorted(ids)
    rng = np.random.default_rng(np.random.SeedSequence([seed, TAG_FOLDS]))
    order = [ids[i] for i in rng.permutation(len(ids))]
    if kind == "denoise":
        if len(ids) < DENOISE_BLOCKS:
            raise ValueError(
                f"denoise needs at least {DENOISE_BLOCKS} images, got {len(ids)}")
        blocks = [list(b) for b in np.array_split(np.array(order), DENOISE_BLOCKS)]
        plans = []
        for i, block in enumerate(blocks):
            rest = [x for b in blocks[:i] + blocks[i + 1:] for x in b]
            plans.append(FoldPlan(i + 1, tuple(block), tuple(rest)))
        return plans
    if kind in ("synth", "transform"):
        n_folds = min(DENOISE_BLOCKS, len(ids) // group)
        if n_folds < 1:
            raise ValueError(
                f"{kind} needs at least {group} images, got {len(ids)}")
        return [
            FoldPlan(i + 1, tuple(order[i * group:(i + 1) * group]), ())
            for i in range(n_folds)
        ]
    raise ValueError(f"unknown task kind {kind!r}")


def transform_pairs(images):
    """Four pairs from one fold's images, two forming an inverse problem.

    ``images`` is an ordered list of (id, normalized map); the first six
    are used as A..F to make A->B, B->A, C->D, E->F (trailing spares are
    ignored).
    """
    if len(images) < 6:
        raise ValueError("transformation needs at least 6 images per fold")
    (ia, a), (ib, b), (ic, c), (id_, d), (ie, e), (if_, f) = images[:6]
    return [
        ImagePair(f"{ia}->{ib}", a, b),
        ImagePair(f"{ib}->{ia}", b, a),
        ImagePair(f"{ic}->{id_}", c, d),
        ImagePair(f"{ie}->{if_}", e, f),
    ]


def _noise_rng(seed, stable_idx):
    return np.random.default_rng(np.random.SeedSequence([seed, TAG_NOISE, stable_idx]))


def make_pairs(task, corpus, plan, seed):
    """Materialize a fold's (train_pairs, test_pairs).

    Inputs are generated with per-image rngs keyed by the image's position
    in the sorted corpus, so a pair's pixels do not depend on fold layout.
    """
    stable = {img_id: i for i, img_id in enumerate(sorted(corpus))}

    def denoise_pair(img_id):
        target = normalize(corpus[img_id])
        noisy = salt_pepper(target, task.noise_p, _noise_rng(seed, stable[img_id]))
        return ImagePair(img_id, noisy, target)

    if task.kind == "denoise":
        return ([denoise_pair(i) for i in plan.train_ids],
                [denoise_pair(i) for i in plan.test_ids])
    if task.kind == "synth":
        pairs = []
        for img_id in plan.train_ids:
            target = normalize(corpus[img_id])
            noise = wgn(target.shape, _noise_rng(seed, stable[img_id]))
            pairs.append(ImagePair(img_id, noise, target))
        return pairs, []
    if task.kind == "transform":
        images = [(i, normalize(corpus[i])) for i in plan.train_ids]
        return transform_pairs(images), []
    raise ValueError(f"unknown task kind {task.kind!r}")


def evaluate_model(model, pairs, backend=None):
    """Per-pair and mean SNR/MSE of a model on a list of pairs."""
    per_pair = []
    for pair in pairs:
        out = model.predict(pair.input, backend=backend)
        per_pair.append({
            "id": pair.id,
            "snr": snr(pair.target, out),
            "mse": mse(out, pair.target),
        })
    n = len(per_pair)
    return {
        "mean_snr": sum(p["snr"] for p in per_pair) / n if n else None,
        "mean_mse": sum(p["mse"] for p in per_pair) / n if n else None,
        "per_pair": per_pair,
    }


def candidate_assignments(ledger, name, arch, seed, fold_index):
    """Assemble one named candidate's model from a fold ledger."""
    c_idx = CANDIDATES.index(name)
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, TAG_BUILD, fold_index, c_idx]))
    if name == "elite1":
        return build_elite(ledger, 1, arch, rng)
    if name == "elite3":
        return build_elite(ledger, min(3, len(ledger.sublibrary)), arch, rng)
    if name == "worst3":
        return build_worst(ledger, min(3, len(ledger.sublibrary)), arch, rng)
    if name == "worst1":
        return build_worst(ledger, 1, arch, rng)
    model = OnnModel(arch, sublibrary=ledger.sublibrary)
    model.init_weights(rng)
    for l in range(1, arch.n_hidden + 1):
        model.assign_operators(
            l, np.full(arch.hidden[l - 1], CNN_SET_INDEX, dtype=np.int64))
    return model


def _run_unit(payload):
    """One training run of one candidate (executed possibly in a pool)."""
    (template, train_pairs, test_pairs, train_cfg, seed, fold_index, c_idx,
     run_idx, backend) = payload
    model = OnnModel.from_checkpoint(template)
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, TAG_RUN, fold_index, c_idx, run_idx]))
    model.init_weights(rng, train_cfg.weight_range)
    trace = LossTrace()
    result = {"run": run_idx, "diverged": False}
    try:
        train(model, train_pairs, train_cfg, backend=backend, trace=trace)
    except DivergenceError as err:
        result["diverged"] = True
        result["diverged_at"] = err.iteration
        return result, trace, None
    ev_train = evaluate_model(model, train_pairs, backend=backend)
    result["train_snr"] = ev_train["mean_snr"]
    result["train_mse"] = ev_train["mean_mse"]
    if test_pairs:
        ev_test = evaluate_model(model, test_pairs, backend=backend)
        result["test_snr"] = ev_test["mean_snr"]
        result["test_mse"] = ev_test["mean_mse"]
    return result, trace, model.to_checkpoint()


def _better(a, b):
    """Is run summary ``a`` strictly better than ``b`` (train SNR, then
    earlier run index for reproducible ties)?"""
    if b is None:
        return True
    if a["train_snr"] != b["train_snr"]:
        return a["train_snr"] > b["train_snr"]
    return a["run"] < b["run"]


def run_fold(task, corpus, plan, arch, spm_cfg, train_cfg, runs, seed,
             fold_dir, jobs=1, backend=None, sublibrary=None, log=None):
    """Execute one fold end to end, writing its artifacts into fold_dir."""
    os.makedirs(fold_dir, exist_ok=True)
    result_path = os.path.join(fold_dir, "result.json")
    if os.path.exists(result_path):
        with open(result_path, encoding="utf-8") as fh:
            return json.load(fh)

    sublib = sublibrary or default_sublibrary(task.kind)
    train_pairs, test_pairs = make_pairs(task, corpus, plan, seed)

    hf_path = os.path.join(fold_dir, "hf.json")
    if os.path.exists(hf_path):
        with open(hf_path, encoding="utf-8") as fh:
            ledger = HealthLedger.from_dict(json.load(fh))
    else:
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, TAG_SPM, plan.index]))
        ledger = prior_bp(train_pairs, sublib, spm_cfg, arch, rng,
                          backend=backend)
        ledger.save_json(hf_path)
        ledger.save_csv(os.path.join(fold_dir, "hf.csv"))

    templates = {}
    for name in CANDIDATES:
        model = candidate_assignments(ledger, name, arch, seed, plan.index)
        templates[name] = model.to_checkpoint()
        write_json(os.path.join(fold_dir, f"{name}.json"), templates[name])

    units = []
    for c_idx, name in enumerate(CANDIDATES):
        for r in range(runs):
            units.append((templates[name], train_pairs, test_pairs, train_cfg,
                          seed, plan.index, c_idx, r, backend))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_unit, units))
    else:
        outcomes = [_run_unit(u) for u in units]

    fold_result = {"fold": plan.index, "task": task.kind, "candidates": {}}
    for c_idx, name in enumerate(CANDIDATES):
        runs_out = []
        best = None
        best_ckpt = None
        trace_rows = ["run,iter,E,lr"]
        for r in range(runs):
            summary, trace, ckpt = outcomes[c_idx * runs + r]
            runs_out.append(summary)
            for t, e, lr in zip(trace.iterations, trace.losses, trace.lrs):
                trace_rows.append(f"{r},{t},{repr(e)},{repr(lr)}")
            if not summary["diverged"] and _better(summary, best):
                best = summary
                best_ckpt = ckpt
        write_text(os.path.join(fold_dir, f"{name}_metrics.csv"),
                   "\n".join(trace_rows) + "\n")
        cand = {"runs": runs_out, "survivors": sum(
            1 for s in runs_out if not s["diverged"])}
        if best is not None:
            cand["best"] = best
            write_json(os.path.join(fold_dir, f"{name}_best.json"), best_ckpt)
        fold_result["candidates"][name] = cand
        if log:
            log(f"fold {plan.index} {name}: "
                + (f"best train snr {best['train_snr']:.2f} dB"
                   if best else "no surviving run"))
    write_json(result_path, fold_result)
    return fold_result


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    if any(math.isinf(v) for v in vals):
        return math.inf
    return sum(vals) / len(vals)


def aggregate_report(task, fold_results):
    """Cross-fold mean train/test SNR and MSE per candidate."""
    report = {"task": task.kind, "candidates": list(CANDIDATES),
              "folds": fold_results, "mean": {}}
    for name in CANDIDATES:
        rows = [f["candidates"][name].get("best") for f in fold_results]
        report["mean"][name] = {
            "train_snr": _mean_or_none([r.get("train_snr") if r else None
                                        for r in rows]),
            "train_mse": _mean_or_none([r.get("train_mse") if r else None
                                        for r in rows]),
            "test_snr": _mean_or_none([r.get("test_snr") if r else None
                                       for r in rows]),
            "test_mse": _mean_or_none([r.get("test_mse") if r else None
                                       for r in rows]),
            "folds_counted": sum(1 for r in rows if r is not None),
        }
    return report


def report_csv_rows(report):
    yield "metric," + ",".join(CANDIDATES)
    for metric in ("train_snr", "test_snr", "train_mse", "test_mse"):
        vals = []
        for name in CANDIDATES:
            v = report["mean"][name][metric]
            vals.append("" if v is None else repr(v))
        yield metric + "," + ",".join(vals)


def run_experiment(task, corpus, arch, spm_cfg, train_cfg, folds, runs, seed,
                   out_dir, jobs=1, backend=None, sublibrary=None, log=None):
    """The full pipeline over ``folds`` folds; returns the report dict.

    Completed folds (their result.json) are reused, so interrupting and
    rerunning continues at the first unfinished fold.
    """
    plans = build_folds(sorted(corpus), task.kind, seed,
                        group=task.pairs_per_fold)
    if folds > len(plans):
        raise ValueError(
            f"{folds} folds requested but the corpus supports {len(plans)}")
    os.makedirs(out_dir, exist_ok=True)
    results = []
    for plan in plans[:folds]:
        fold_dir = os.path.join(out_dir, f"fold{plan.index:02d}")
        results.append(run_fold(task, corpus, plan, arch, spm_cfg, train_cfg,
                                runs, seed, fold_dir, jobs=jobs,
                                backend=backend, sublibrary=sublibrary,
                                log=log))
    report = aggregate_report(task, results)
    write_json(os.path.join(out_dir, "report.json"), report)
    write_text(os.path.join(out_dir, "report.csv"),
               "\n".join(report_csv_rows(report)) + "\n")
    return report
