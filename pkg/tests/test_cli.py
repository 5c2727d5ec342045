import hashlib
import json

import pytest
import yaml

from w2vlid.cli import main
from w2vlid.config import load_config, parse_config
from w2vlid.lid import read_rows
from w2vlid.numerics import ConfigurationError

TINY_MODEL = dict(preset="toy", n_layers=2, z_dim=32, c_dim=32, ffn_dim=64, proj_dim=16, num_entries=8)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rc = main(["gen-data", "--out", str(out), "--num-languages", "2", "--utterances-per-language", "6",
               "--duration-seconds", "1.0", "--seed", "3"])
    assert rc == 0
    return out


def write_config(path, corpus_dir, **sections):
    cfg = {
        "seed": 1,
        "paths": {"manifest": str(corpus_dir / "manifest.tsv")},
        "data": {"heldout_per_language": 2},
        "model": TINY_MODEL,
        "pretrain": {"total_updates": 3, "warmup_updates": 1, "batch_size": 2, "crop_frames": 48,
                     "num_distractors": 4},
        "finetune": {"total_updates": 2, "batch_size": 2, "crop_seconds": 0.5},
    }
    for k, v in sections.items():
        cfg[k] = v
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.fixture(scope="module")
def pretrained(corpus_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("pt")
    cfg = write_config(d / "run.yaml", corpus_dir)
    assert main(["pretrain", "--config", str(cfg), "--out", str(d / "out")]) == 0
    return cfg, d / "out"


# -- config ------------------------------------------------------------------

def test_config_defaults_and_rejection(tmp_path):
    cfg = parse_config({})
    assert cfg.model.n_layers == 4 and cfg.pretrain.total_updates == 2000
    assert parse_config({"model": {"preset": "full"}}).model.c_dim == 1024
    with pytest.raises(ConfigurationError, match="pretrain.bogus"):
        parse_config({"pretrain": {"bogus": 1}})
    with pytest.raises(ConfigurationError, match="top-level"):
        parse_config({"optimizer": {}})
    with pytest.raises(ConfigurationError, match="preset"):
        parse_config({"model": {"preset": "huge"}})
    with pytest.raises(ConfigurationError, match="paths.manifest"):
        cfg.require("manifest")
    (tmp_path / "bad.yaml").write_text("- a\n- b\n")
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "bad.yaml")


def test_effective_config_roundtrips(tmp_path):
    cfg = parse_config({"seed": 4, "model": {"n_layers": 2}, "finetune": {"pooling": "max"}})
    path = cfg.dump(tmp_path)
    again = load_config(path)
    assert again.effective() == cfg.effective()


# -- gen-data ------------------------------------------------------------------

def test_gen_data_counts_and_determinism(corpus_dir, tmp_path):
    rows = (corpus_dir / "manifest.tsv").read_text().splitlines()
    assert len(rows) == 12 and len(list((corpus_dir / "wav").rglob("*.wav"))) == 12
    assert main(["gen-data", "--out", str(tmp_path / "b"), "--num-languages", "2",
                 "--utterances-per-language", "6", "--duration-seconds", "1.0", "--seed", "3"]) == 0
    digest = [hashlib.sha256(p.read_bytes()).hexdigest() for p in (corpus_dir / "manifest.tsv",
                                                                   tmp_path / "b" / "manifest.tsv")]
    assert digest[0] == digest[1]


def test_gen_data_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--out", str(tmp_path), "--num-languages", "0"])
    assert exc.value.code == 2
    (tmp_path / "spec.yaml").write_text("num_languages: 2\ncolour: red\n")
    assert main(["gen-data", "--spec", str(tmp_path / "spec.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["gen-data", "--out", str(tmp_path / "o"), "--duration-seconds", "0.01"]) == 2


# -- pretrain ------------------------------------------------------------------

def test_pretrain_outputs(pretrained):
    _, out = pretrained
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(line)["step"] for line in lines] == [1, 2, 3]
    assert (out / "checkpoint.ckpt").exists()
    echoed = yaml.safe_load((out / "effective_config.yaml").read_text())
    assert echoed["model"]["n_layers"] == 2 and echoed["seed"] == 1


def test_pretrain_dry_run_and_missing_manifest(tmp_path, corpus_dir, capsys):
    cfg = write_config(tmp_path / "run.yaml", corpus_dir)
    assert main(["pretrain", "--config", str(cfg), "--dry-run"]) == 0
    assert yaml.safe_load(capsys.readouterr().out)["pretrain"]["total_updates"] == 3
    cfg = write_config(tmp_path / "nopath.yaml", corpus_dir, paths={})
    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "paths.manifest" in capsys.readouterr().err
    cfg = write_config(tmp_path / "unknown.yaml", corpus_dir, pretrain={"learning_rate": 1})
    assert main(["pretrain", "--config", str(cfg), "--dry-run"]) == 2


def test_pretrain_is_reproducible(pretrained, tmp_path):
    cfg, out = pretrained
    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "metrics.jsonl").read_bytes() == (out / "metrics.jsonl").read_bytes()
    assert (tmp_path / "again" / "checkpoint.ckpt").read_bytes() == (out / "checkpoint.ckpt").read_bytes()


# -- finetune / evaluate ---------------------------------------------------------

def test_finetune_and_evaluate(pretrained, tmp_path, capsys, caplog):
    cfg, out = pretrained
    ft = tmp_path / "ft"
    assert main(["finetune", "--config", str(cfg), "--init", str(out / "checkpoint.ckpt"),
                 "--labeled-minutes-per-lang", "0.05", "--out", str(ft)]) == 0
    rows = read_rows(ft / "result.csv")
    assert rows[0]["init_mode"] == "pretrained" and 0 <= float(rows[0]["accuracy"]) <= 1
    capsys.readouterr()
    assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(ft / "checkpoint.ckpt"),
                 "--manifest", load_config(cfg).require("manifest"), "--out", str(tmp_path / "ev")]) == 0
    assert capsys.readouterr().out.startswith("accuracy,")
    conf = read_rows(tmp_path / "ev" / "confusion.csv")
    assert sum(int(r[k]) for r in conf for k in r if k != "true\\pred") == 12
    # more minutes than available: warns and uses everything
    assert main(["finetune", "--config", str(cfg), "--init", "scratch", "--labeled-minutes-per-lang", "100",
                 "--out", str(tmp_path / "all")]) == 0
    assert "using all" in caplog.text
    assert read_rows(tmp_path / "all" / "result.csv")[0]["init_mode"] == "scratch"
    assert main(["finetune", "--config", str(cfg), "--init", "scratch", "--total-updates", "3",
                 "--out", str(tmp_path / "three")]) == 0
    assert yaml.safe_load((tmp_path / "three" / "effective_config.yaml").read_text())["finetune"]["total_updates"] == 3
    assert sum("accuracy" not in r for r in map(json.loads, (tmp_path / "three" / "metrics.jsonl")
                                                  .read_text().splitlines())) == 3


def test_finetune_errors(pretrained, tmp_path):
    cfg, _ = pretrained
    assert main(["finetune", "--config", str(cfg), "--init", str(tmp_path / "missing.ckpt"),
                 "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint at all, definitely not" * 3)
    assert main(["finetune", "--config", str(cfg), "--init", str(tmp_path / "junk.ckpt"),
                 "--out", str(tmp_path / "o")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["finetune", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert exc.value.code == 2


# -- harnesses -------------------------------------------------------------------

def test_probe_layers_rows(pretrained, tmp_path, capsys):
    cfg, out = pretrained
    assert main(["probe-layers", "--config", str(cfg), "--init", str(out / "checkpoint.ckpt"),
                 "--layers", "1,2", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "layers.csv")
    assert [r["layer"] for r in rows] == ["1", "2"]
    assert main(["probe-layers", "--config", str(cfg), "--init", str(out / "checkpoint.ckpt"),
                 "--layers", "3", "--out", str(tmp_path)]) == 2
    assert main(["probe-layers", "--config", str(cfg), "--init", str(out / "checkpoint.ckpt"),
                 "--layers", "a,b", "--out", str(tmp_path)]) == 2


def test_ablate_pooling_rows(pretrained, tmp_path):
    cfg, out = pretrained
    assert main(["ablate-pooling", "--config", str(cfg), "--init", str(out / "checkpoint.ckpt"),
                 "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "pooling.csv")
    assert [r["pooling"] for r in rows] == ["average", "max", "avg_max", "avg_max_min", "cls_token"]
    assert all(0 <= float(r["accuracy"]) <= 1 for r in rows)
