import dataclasses
import json
import subprocess
import sys

import pytest

from concordia import cli
from concordia.config import ConfigError, PipelineConfig, config_hash, dumps, load, loads, validate
from concordia.pipeline import STAGES, RunRecord, StageError, run_pipeline

SMALL = """\
# tiny smoke configuration
gen.n_specimens = 12
gen.n_sites = 2
gen.slide.width = 512
gen.slide.height = 512
pretrain.contrastive.epochs = 1
pretrain.contrastive.batch_size = 8
pretrain.contrastive.probe_size = 32
train.epochs = 3
eval.resamples = 50
"""


def small_config(out):
    cfg = loads(SMALL)
    cfg.out_dir = str(out)
    return cfg


# -- config ----------------------------------------------------------------

def test_default_round_trip():
    c = PipelineConfig()
    assert loads(dumps(c)) == c
    assert dumps(loads(dumps(c))) == dumps(c)


def test_round_trip_with_overrides():
    c = loads(SMALL + "eval.gt_threshold = 0.85\ngen.fractions = 0.6, 0.2, 0.2\nmanifest = data/m.jsonl\n")
    assert c.eval.gt_threshold == 0.85 and c.gen.fractions == (0.6, 0.2, 0.2)
    assert loads(dumps(c)) == c
    assert config_hash(c) != config_hash(PipelineConfig())


@pytest.mark.parametrize("text,line", [("nope = 1\n", 1), ("seed = 1\nseed = 2\n", 2), ("# c\nseed = x\n", 2),
                                       ("\ngarbage\n", 2)])
def test_bad_config_names_line(text, line):
    with pytest.raises(ConfigError, match=f"line {line}"):
        loads(text)


def test_validate_rejects():
    c = PipelineConfig()
    c.gen = dataclasses.replace(c.gen, n_specimens=0)
    with pytest.raises(ConfigError):
        validate(c)


def test_load_file(tmp_path):
    (tmp_path / "c.cfg").write_text(SMALL)
    assert load(tmp_path / "c.cfg").gen.n_specimens == 12


# -- cli -------------------------------------------------------------------

SUBCOMMANDS = ["gen", "qc", "pretrain", "embed", "train", "predict", "eval", "run", "config"]


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help(sub, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main([sub, "--help"])
    assert e.value.code == 0
    assert "--seed" in capsys.readouterr().out


def test_invalid_seed_exits_nonzero():
    r = subprocess.run([sys.executable, "-m", "concordia.cli", "config", "--seed", "abc"], capture_output=True,
                       text=True)
    assert r.returncode == 2 and "invalid int value" in r.stderr


def test_config_subcommand_prints_effective(capsys):
    assert cli.main(["config", "--seed", "9"]) == 0
    assert loads(capsys.readouterr().out).seed == 9


def test_missing_manifest_is_config_error(tmp_path):
    cfg = small_config(tmp_path / "run")
    cfg.manifest = str(tmp_path / "absent.jsonl")
    with pytest.raises(ConfigError):
        run_pipeline(cfg)
    assert not (tmp_path / "run").exists()
    assert cli.main(["run", "--manifest", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path / "r2")]) == 2


def test_stage_failure_exit_code(tmp_path, monkeypatch):
    from concordia import pipeline

    def boom(cfg, p):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(pipeline.BODIES, "gen", boom)
    with pytest.raises(StageError, match="gen"):
        run_pipeline(small_config(tmp_path / "x"))
    (tmp_path / "c.cfg").write_text(SMALL)
    assert cli.main(["run", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "y")]) == 3


# -- pipeline resumability and determinism ---------------------------------

@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rec = run_pipeline(small_config(out))
    return out, rec


def test_first_run_executes_every_stage(small_run):
    out, rec = small_run
    assert list(rec.stages) == list(STAGES)
    assert not any(s.skipped for s in rec.stages.values())
    for name in ("eval/metrics.csv", "predictions.csv", "embeddings.emb", "run.json", "data/manifest.jsonl"):
        assert (out / name).exists(), name
    assert RunRecord.from_json((out / "run.json").read_text()).stages.keys() == rec.stages.keys()


def test_rerun_skips_every_stage(small_run):
    out, _ = small_run
    before = (out / "eval" / "metrics.csv").read_bytes()
    rec = run_pipeline(small_config(out))
    assert all(s.skipped for s in rec.stages.values())
    assert (out / "eval" / "metrics.csv").read_bytes() == before


def test_changed_section_reruns_downstream_only(small_run, tmp_path):
    import shutil

    out = tmp_path / "copy"
    shutil.copytree(small_run[0], out)
    cfg = small_config(out)
    cfg.train = dataclasses.replace(cfg.train, lr=cfg.train.lr * 0.5)
    rec = run_pipeline(cfg)
    ran = [s for s, r in rec.stages.items() if not r.skipped]
    assert ran == ["train", "predict", "eval"]


def test_damaged_output_is_recomputed(small_run, tmp_path):
    import shutil

    out = tmp_path / "copy"
    shutil.copytree(small_run[0], out)
    (out / "predictions.csv").write_text("specimen_id,prediction,label,split\n")
    rec = run_pipeline(small_config(out))
    ran = [s for s, r in rec.stages.items() if not r.skipped]
    assert ran[0] == "predict"
    assert (out / "predictions.csv").read_bytes() == (small_run[0] / "predictions.csv").read_bytes()


def test_two_runs_byte_identical(small_run, tmp_path):
    out, _ = small_run
    run_pipeline(small_config(tmp_path / "again"))
    for name in ("eval/metrics.csv", "embeddings.emb", "predictions.csv", "data/manifest.jsonl"):
        assert (tmp_path / "again" / name).read_bytes() == (out / name).read_bytes(), name


def test_external_manifest(small_run, tmp_path):
    out, _ = small_run
    cfg = small_config(tmp_path / "ext")
    cfg.manifest = str(out / "data" / "manifest.jsonl")
    rec = run_pipeline(cfg)
    assert rec.stages["gen"].key == "external"
    assert (tmp_path / "ext" / "eval" / "metrics.csv").exists()
    json.loads((tmp_path / "ext" / "run.json").read_text())
