"""TOML run configuration: schema strictness, overrides, round trips."""

import pytest

from onnkit import make_sublibrary
from onnkit.config import (
    SEED_ENV,
    ConfigError,
    from_dict,
    load,
    parse,
    serialize,
)

MINIMAL = """
[run]
task = "denoise"
corpus = "corpus/"
output = "out/"
"""


def test_minimal_config_fills_defaults():
    cfg = parse(MINIMAL, env={})
    assert cfg.task.kind == "denoise"
    assert cfg.corpus == "corpus/"
    assert cfg.seed == 0
    assert cfg.folds == 0 and cfg.runs == 10 and cfg.jobs == 1
    assert cfg.backend is None
    assert cfg.arch.hidden == (12, 12)
    assert cfg.arch.resample == ("down2", "up2")
    assert cfg.train.iterations == 240
    assert cfg.train.lr0 == pytest.approx(0.01)
    assert cfg.spm.sessions == 30 and cfg.spm.window == 80
    assert cfg.spm.train == cfg.train
    assert cfg.task.noise_p == pytest.approx(0.4)
    assert cfg.sublibrary is None


def test_default_sublibrary_follows_task():
    cfg = parse(MINIMAL, env={})
    lib = cfg.resolved_sublibrary()
    assert lib.pools == (0, 1) and lib.acts == (0,)
    cfg2 = parse(MINIMAL.replace("denoise", "transform"), env={})
    lib2 = cfg2.resolved_sublibrary()
    assert lib2.pools == (0,) and lib2.acts == (0, 1)


def test_missing_required_key_is_named():
    broken = MINIMAL.replace('corpus = "corpus/"\n', "")
    with pytest.raises(ConfigError, match="run.corpus"):
        parse(broken, env={})


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match=r"unknown section \[extra\]"):
        parse(MINIMAL + "\n[extra]\nx = 1\n", env={})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="train.learning_rate"):
        parse(MINIMAL + "\n[train]\nlearning_rate = 0.1\n", env={})


def test_toml_syntax_error_wrapped():
    with pytest.raises(ConfigError, match="TOML"):
        parse("[run\ntask=", env={})


def test_type_errors_are_config_errors():
    with pytest.raises(ConfigError, match="run.seed"):
        parse(MINIMAL.replace('output = "out/"',
                              'output = "out/"\nseed = "zero"'), env={})
    with pytest.raises(ConfigError, match="architecture.hidden"):
        parse(MINIMAL + '\n[architecture]\nhidden = ["a", "b"]\n', env={})
    with pytest.raises(ConfigError, match="train.iterations"):
        parse(MINIMAL + "\n[train]\niterations = true\n", env={})
    with pytest.raises(ConfigError, match="spm.window"):
        parse(MINIMAL + '\n[spm]\nwindow = "80"\n', env={})


def test_unknown_task_kind_rejected():
    with pytest.raises(ConfigError, match="run.task"):
        parse(MINIMAL.replace("denoise", "sharpen"), env={})


def test_backend_names_validated():
    with pytest.raises(ConfigError, match="run.backend"):
        parse(MINIMAL.replace('output = "out/"',
                              'output = "out/"\nbackend = "fortran"'), env={})
    # the two real names pass
    ok = MINIMAL.replace('output = "out/"', 'output = "out/"\nbackend = "python"')
    assert parse(ok, env={}).backend == "python"


def test_run_counts_must_be_positive():
    with pytest.raises(ConfigError, match="run.runs"):
        parse(MINIMAL.replace('output = "out/"',
                              'output = "out/"\nruns = 0'), env={})
    with pytest.raises(ConfigError, match="run.folds"):
        parse(MINIMAL.replace('output = "out/"',
                              'output = "out/"\nfolds = -1'), env={})


def test_downstream_validation_becomes_config_error():
    # Architecture rejects the resample kind, TrainConfig the lr bounds;
    # both surface as ConfigError instead of a bare ValueError
    with pytest.raises(ConfigError):
        parse(MINIMAL + '\n[architecture]\nresample = ["down3", "up2"]\n',
              env={})
    with pytest.raises(ConfigError):
        parse(MINIMAL + "\n[train]\nlr0 = 0.9\n", env={})


def test_sublibrary_keys_come_together():
    with pytest.raises(ConfigError, match="together"):
        parse(MINIMAL + "\n[operators]\npools = [0]\n", env={})
    cfg = parse(MINIMAL + "\n[operators]\npools = [0]\nacts = [0]\n"
                "nodals = [0, 6]\n", env={})
    assert cfg.sublibrary == make_sublibrary([0], [0], [0, 6])
    assert cfg.resolved_sublibrary() is cfg.sublibrary


def test_seed_env_override():
    base = parse(MINIMAL, env={})
    assert base.seed == 0
    cfg = parse(MINIMAL, env={SEED_ENV: "42"})
    assert cfg.seed == 42
    # the override reaches the nested training and monitoring configs
    assert cfg.train.seed == 42 and cfg.spm.seed == 42
    assert parse(MINIMAL, env={SEED_ENV: ""}).seed == 0
    with pytest.raises(ConfigError, match=SEED_ENV):
        parse(MINIMAL, env={SEED_ENV: "not-a-number"})


def test_explicit_seed_loses_to_env():
    text = MINIMAL.replace('output = "out/"', 'output = "out/"\nseed = 7')
    assert parse(text, env={}).seed == 7
    assert parse(text, env={SEED_ENV: "9"}).seed == 9


def test_from_dict_matches_parse():
    doc = {"run": {"task": "synth", "corpus": "c", "output": "o"}}
    cfg = from_dict(doc, env={})
    assert cfg.task.kind == "synth"


def test_serialize_round_trip_minimal():
    cfg = parse(MINIMAL, env={})
    assert parse(serialize(cfg), env={}) == cfg


def test_serialize_round_trip_full():
    text = """
[run]
task = "transform"
corpus = "data/waves"
output = "runs/t1"
seed = 5
folds = 2
runs = 3
jobs = 2
backend = "compiled"

[architecture]
hidden = [6, 6]
kernel = [3, 3]
resample = ["none", "none"]

[operators]
pools = [0]
acts = [0, 1]
nodals = [0, 2, 6]
k_chirp = 2.0

[train]
iterations = 100
lr0 = 0.2
batch = 2

[spm]
sessions = 4
window = 25

[task]
pairs_per_fold = 6
"""
    cfg = parse(text, env={})
    assert cfg.constants.k_chirp == pytest.approx(2.0)
    assert cfg.arch.resample == ("none", "none")
    again = parse(serialize(cfg), env={})
    assert again == cfg


def test_load_reports_path(tmp_path):
    missing = tmp_path / "nope.toml"
    with pytest.raises(ConfigError, match="cannot read"):
        load(str(missing), env={})
    bad = tmp_path / "bad.toml"
    bad.write_text(MINIMAL + "\n[mystery]\nx = 1\n")
    with pytest.raises(ConfigError, match="bad.toml"):
        load(str(bad), env={})
    good = tmp_path / "good.toml"
    good.write_text(MINIMAL)
    assert load(str(good), env={}).task.kind == "denoise"
