"""Command-line front end.

Exit codes: 0 success, 2 usage or config errors, 3 data errors, 4 total
numerical divergence (an operation finished with no surviving runs).
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .backend import available_backends
from .config import ConfigError, load as load_config
from .experiments import (
    CANDIDATES,
    TAG_RUN,
    TAG_SPM,
    build_folds,
    evaluate_model,
    make_pairs,
    run_experiment,
)
from .imaging import read_pgm, to_thumbnail, write_pgm
from .model import Architecture, OnnModel, write_json, write_text
from .operators import OperatorConstants
from .plasticity import HealthLedger, build_elite, build_worst, prior_bp
from .train import DivergenceError, LossTrace, train

TAG_CLI_TRAIN = 6


class DataError(RuntimeError):
    """Unusable input data (missing, corrupt, or too small)."""


class TotalDivergenceError(RuntimeError):
    """Every training run of an operation diverged."""


def _say(msg):
    print(msg, flush=True)


# -- corpus handling --------------------------------------------------------

def load_corpus(path):
    """Read a corpus directory into {id: uint8 image}.

    A manifest.json written by the import command names the files;
    otherwise every *.pgm in the directory is taken, ids from filenames.
    """
    if not os.path.isdir(path):
        raise DataError(f"corpus directory not found: {path}")
    manifest_path = os.path.join(path, "manifest.json")
    corpus = {}
    if os.path.exists(manifest_path):
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        for img_id, entry in manifest["images"].items():
            corpus[img_id] = read_pgm(os.path.join(path, entry["file"]))
    else:
        for name in sorted(os.listdir(path)):
            if name.endswith(".pgm"):
                corpus[os.path.splitext(name)[0]] = read_pgm(
                    os.path.join(path, name))
    if not corpus:
        raise DataError(f"no images in corpus: {path}")
    return corpus


def _read_any_image(path):
    if path.lower().endswith(".pgm"):
        return read_pgm(path)
    try:
        from PIL import Image
    except ImportError:
        raise DataError(
            f"{path}: only PGM supported without the pillow extra") from None
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def _plans_for(cfg, corpus):
    try:
        plans = build_folds(sorted(corpus), cfg.task.kind, cfg.seed,
                            group=cfg.task.pairs_per_fold)
    except ValueError as err:
        raise DataError(str(err)) from None
    n = cfg.folds or len(plans)
    if n > len(plans):
        raise DataError(
            f"{n} folds requested but the corpus supports {len(plans)}")
    return plans[:n]


# -- subcommands ------------------------------------------------------------

def cmd_import(args):
    exts = (".pgm", ".png", ".jpg", ".jpeg", ".bmp")
    try:
        names = sorted(os.listdir(args.src))
    except OSError as err:
        raise DataError(f"cannot read source directory: {err}") from None
    sources = [n for n in names if n.lower().endswith(exts)]
    if not sources:
        _say(f"no importable images in {args.src}")
        return 2
    os.makedirs(args.dst, exist_ok=True)
    images = {}
    failures = []
    for name in sources:
        src_path = os.path.join(args.src, name)
        try:
            raw = _read_any_image(src_path)
            thumb = to_thumbnail(raw, args.size)
        except (DataError, ValueError, OSError) as err:
            failures.append(f"{name}: {err}")
            continue
        img_id = os.path.splitext(name)[0]
        out_name = f"{img_id}.pgm"
        write_pgm(os.path.join(args.dst, out_name), thumb)
        digest = hashlib.sha256(thumb.tobytes()).hexdigest()
        images[img_id] = {"file": out_name, "sha256": digest}
    for line in failures:
        _say(f"skipped {line}")
    if not images:
        raise DataError("every source image failed to import")
    write_json(os.path.join(args.dst, "manifest.json"),
               {"size": args.size, "images": images})
    _say(f"imported {len(images)} image(s) into {args.dst}")
    return 0


def cmd_spm(args):
    cfg = load_config(args.config)
    corpus = load_corpus(cfg.corpus)
    plans = _plans_for(cfg, corpus)
    sublib = cfg.resolved_sublibrary()
    os.makedirs(cfg.output, exist_ok=True)
    for plan in plans:
        fold_dir = os.path.join(cfg.output, f"fold{plan.index:02d}")
        os.makedirs(fold_dir, exist_ok=True)
        hf_path = os.path.join(fold_dir, "hf.json")
        if os.path.exists(hf_path):
            _say(f"fold {plan.index}: hf.json present, skipping")
            continue
        train_pairs, _ = make_pairs(cfg.task, corpus, plan, cfg.seed)
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, TAG_SPM, plan.index]))
        ledger = prior_bp(train_pairs, sublib, cfg.spm, cfg.arch, rng,
                          constants=cfg.constants, backend=cfg.backend)
        ledger.save_json(hf_path)
        ledger.save_csv(os.path.join(fold_dir, "hf.csv"))
        _say(f"fold {plan.index}: wrote {hf_path}")
    return 0


def cmd_build(args):
    try:
        ledger = HealthLedger.load_json(args.hf)
    except (OSError, ValueError, KeyError) as err:
        raise DataError(f"cannot load ledger: {err}") from None
    if args.config:
        cfg = load_config(args.config)
        arch, constants = cfg.arch, cfg.constants
        seed = args.seed if args.seed is not None else cfg.seed
    else:
        arch, constants = Architecture(), OperatorConstants()
        seed = args.seed if args.seed is not None else 0
    if tuple(ledger.layers) != tuple(range(1, arch.n_hidden + 1)):
        raise DataError("ledger layers do not match the architecture")
    rng = np.random.default_rng(np.random.SeedSequence([seed, TAG_RUN, 0]))
    if args.top is not None:
        model = build_elite(ledger, args.top, arch, rng, constants=constants)
    else:
        model = build_worst(ledger, args.bottom, arch, rng,
                            constants=constants)
    model.save(args.out)
    _say(f"wrote {args.out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    corpus = load_corpus(cfg.corpus)
    plans = _plans_for(cfg, corpus)
    plan = next((p for p in plans if p.index == args.fold), None)
    if plan is None:
        raise DataError(f"fold {args.fold} not in plan")
    try:
        template = OnnModel.load(args.model)
    except (OSError, ValueError, KeyError) as err:
        raise DataError(f"cannot load model: {err}") from None
    train_pairs, test_pairs = make_pairs(cfg.task, corpus, plan, cfg.seed)
    runs = args.runs if args.runs is not None else cfg.runs
    iters = args.iters if args.iters is not None else cfg.train.iterations
    tcfg = replace(cfg.train, iterations=iters)
    os.makedirs(args.out, exist_ok=True)

    best = None
    best_model = None
    rows = ["run,iter,E,lr"]
    survivors = 0
    for r in range(runs):
        model = template.copy()
        if iters > 0:
            rng = np.random.default_rng(np.random.SeedSequence(
                [cfg.seed, TAG_CLI_TRAIN, plan.index, r]))
            model.init_weights(rng, tcfg.weight_range)
        trace = LossTrace()
        try:
            train(model, train_pairs, tcfg, backend=cfg.backend, trace=trace)
        except DivergenceError as err:
            _say(f"run {r}: diverged at iteration {err.iteration}")
            for t, e, lr in zip(trace.iterations, trace.losses, trace.lrs):
                rows.append(f"{r},{t},{repr(e)},{repr(lr)}")
            continue
        survivors += 1
        for t, e, lr in zip(trace.iterations, trace.losses, trace.lrs):
            rows.append(f"{r},{t},{repr(e)},{repr(lr)}")
        ev = evaluate_model(model, train_pairs, backend=cfg.backend)
        summary = {"run": r, "train_snr": ev["mean_snr"],
                   "train_mse": ev["mean_mse"]}
        if best is None or summary["train_snr"] > best["train_snr"]:
            best = summary
            best_model = model
        _say(f"run {r}: train snr {ev['mean_snr']:.2f} dB")
    write_text(os.path.join(args.out, "metrics.csv"), "\n".join(rows) + "\n")
    if best_model is None:
        raise TotalDivergenceError("all training runs diverged")
    best_model.save(os.path.join(args.out, "best_model.json"))
    result = {"fold": plan.index, "runs": runs, "survivors": survivors,
              "best": best}
    if test_pairs:
        ev = evaluate_model(best_model, test_pairs, backend=cfg.backend)
        result["best"]["test_snr"] = ev["mean_snr"]
        result["best"]["test_mse"] = ev["mean_mse"]
    write_json(os.path.join(args.out, "train_result.json"), result)
    _say(f"best run {best['run']}: train snr {best['train_snr']:.2f} dB")
    return 0


def cmd_eval(args):
    cfg = load_config(args.config)
    corpus = load_corpus(cfg.corpus)
    plans = _plans_for(cfg, corpus)
    plan = next((p for p in plans if p.index == args.fold), None)
    if plan is None:
        raise DataError(f"fold {args.fold} not in plan")
    try:
        model = OnnModel.load(args.model)
    except (OSError, ValueError, KeyError) as err:
        raise DataError(f"cannot load model: {err}") from None
    train_pairs, test_pairs = make_pairs(cfg.task, corpus, plan, cfg.seed)
    report = {"fold": plan.index,
              "train": evaluate_model(model, train_pairs, backend=cfg.backend)}
    rows = ["split,id,snr,mse"]
    for p in report["train"]["per_pair"]:
        rows.append(f"train,{p['id']},{repr(p['snr'])},{repr(p['mse'])}")
    if test_pairs:
        report["test"] = evaluate_model(model, test_pairs, backend=cfg.backend)
        for p in report["test"]["per_pair"]:
            rows.append(f"test,{p['id']},{repr(p['snr'])},{repr(p['mse'])}")
    write_json(args.out + ".json", report)
    write_text(args.out + ".csv", "\n".join(rows) + "\n")
    snr_txt = report["train"]["mean_snr"]
    _say(f"mean train snr {snr_txt:.2f} dB" if snr_txt is not None else "no pairs")
    return 0


def cmd_experiment(args):
    cfg = load_config(args.config)
    corpus = load_corpus(cfg.corpus)
    plans = _plans_for(cfg, corpus)
    report = run_experiment(
        cfg.task, corpus, cfg.arch, cfg.spm, cfg.train,
        folds=len(plans), runs=cfg.runs, seed=cfg.seed, out_dir=cfg.output,
        jobs=cfg.jobs, backend=cfg.backend,
        sublibrary=cfg.sublibrary, log=_say,
    )
    dead = [name for name in CANDIDATES
            if report["mean"][name]["folds_counted"] == 0]
    for name in CANDIDATES:
        m = report["mean"][name]
        snr_txt = ("-" if m["train_snr"] is None else f"{m['train_snr']:.2f}")
        _say(f"{name}: mean train snr {snr_txt} dB over "
             f"{m['folds_counted']} fold(s)")
    if dead:
        raise TotalDivergenceError(
            f"no surviving runs for: {', '.join(dead)}")
    return 0


# -- entry point ------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="onn",
        description="Operational networks with operator-set search")
    p.add_argument("--version", action="version",
                   version=f"%(prog)s (backends: {', '.join(available_backends())})")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("import", help="transcode images into a 60x60 PGM corpus")
    sp.add_argument("src")
    sp.add_argument("dst")
    sp.add_argument("--size", type=int, default=60)
    sp.set_defaults(func=cmd_import)

    sp = sub.add_parser("spm", help="run the prior monitoring pass per fold")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_spm)

    sp = sub.add_parser("build", help="assemble an elite or worst network from a ledger")
    sp.add_argument("--hf", required=True, help="hf.json from the spm step")
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--top", type=int)
    grp.add_argument("--bottom", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("train", help="train a model, keeping the best of N runs")
    sp.add_argument("--model", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--fold", type=int, default=1)
    sp.add_argument("--runs", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a fold")
    sp.add_argument("--model", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--fold", type=int, default=1)
    sp.add_argument("--out", required=True, help="report path stem")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("experiment", help="full search pipeline over all folds")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_experiment)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except TotalDivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
