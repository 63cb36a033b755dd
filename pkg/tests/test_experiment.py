import json

import numpy as np
import pytest

from attrinf.cli import main
from attrinf.errors import ConfigError
from attrinf.experiment import (
    ExperimentConfig,
    Pipeline,
    apply_overrides,
    config_from_dict,
    derive_seed,
    load_config,
)

TINY = {
    "name": "tiny",
    "data": {"synth": {"m": 30, "k": 4, "n": 600, "flip_prob": 0.1}},
    "clustering": {"k": 6, "n_init": 2},
    "split": {"train_fraction": 0.2, "cap": None, "member_sample": 50, "nonmember_sample": 50},
    "model": {"hidden": [16, 16]},
    "train": {"batch_size": 40, "learning_rate": 0.01, "max_epochs": 15, "min_epochs": 0},
    "attack": {"iterations": 2, "r_grid": [1, 3], "strong_trials": 20, "n_unknown": 4, "aia_targets": 10,
               "distance_grid": [1, 2, 3], "variants_per_distance": 2, "synthetic_members": 40,
               "min_bucket": 5, "profile_samples": 8},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({**TINY, "out": str(tmp_path / "runs")}))
    return path


def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, "train", 1) == derive_seed(0, "train", 1)
    seeds = {derive_seed(0, s, i) for s in ("train", "split") for i in range(5)}
    assert len(seeds) == 10
    assert 0 <= derive_seed(7, "x") < 2**63


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert config_from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() == config_from_dict(json.loads(json.dumps(cfg.to_dict()))).digest()


def test_digest_ignores_output_root():
    a = ExperimentConfig()
    b = apply_overrides(a, ['out="elsewhere"'])
    c = apply_overrides(a, ["seed=1"])
    assert a.digest() == b.digest() != c.digest()


@pytest.mark.parametrize("doc,field", [
    ({"data": {"synth": {"flip_prob": 0.7}}}, "data.synth.flip_prob"),
    ({"clustering": {"k": 1}}, "clustering.k"),
    ({"attack": {"n_unknown": 25}}, "attack.n_unknown"),
    ({"train": {"learning_rate": -1}}, "train.learning_rate"),
    ({"bogus": 1}, "bogus"),
    ({"model": {"depth": 3}}, "model.depth"),
])
def test_invalid_config_names_field(doc, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict(doc)
    assert info.value.field == field


def test_synth_seed_is_derived():
    with pytest.raises(ConfigError):
        config_from_dict({"data": {"synth": {"seed": 3}}})


def test_overrides_parse_json_values():
    cfg = apply_overrides(ExperimentConfig(), ["clustering.k=20", "model.hidden=[8, 8]", "attack.alpha=1.5"])
    assert cfg.clustering.k == 20 and cfg.model.hidden == [8, 8] and cfg.attack.alpha == 1.5
    with pytest.raises(ConfigError):
        apply_overrides(ExperimentConfig(), ["clustering.nope=1"])
    with pytest.raises(ConfigError):
        apply_overrides(ExperimentConfig(), ["no-equals-sign"])


def test_load_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.json")


def test_pipeline_end_to_end(tiny_config):
    cfg = load_config(tiny_config)
    pipe = Pipeline(cfg)
    summary = pipe.run_all()
    assert json.loads((pipe.run_dir / "config.json").read_text()) == cfg.to_dict()
    for key in ("mia", "strong_mia", "aia", "approx_aia", "histogram", "dist_auc", "synthetic_auc",
                "conf_profile", "labeling"):
        assert key in summary
    assert summary["mia"]["iterations"] == 2
    assert 0.0 <= summary["mia"]["mean_auc"] <= 1.0
    hist = sum(r["count"] for r in summary["histogram"]["histogram"])
    assert hist == 2 * 50
    assert [r["r"] for r in summary["strong_mia"]["by_r"]] == [1, 3]
    assert summary["approx_aia"]["random_baseline"] == 2.0
    for i in range(2):
        d = pipe.run_dir / f"iter_{i:03d}"
        assert (d / "model.json").exists() and (d / "approx_aia_targets.csv").exists()
    assert (pipe.results / "dist_auc.csv").read_text().startswith("distance,n,auc")


def test_iterations_resample_and_retrain(tiny_config):
    pipe = Pipeline(load_config(tiny_config))
    pipe.generate()
    pipe.label()
    pipe.train()
    (m0, p0), (m1, p1) = pipe._iteration(0), pipe._iteration(1)
    assert not np.array_equal(p0["train"].bits, p1["train"].bits)
    assert not np.array_equal(m0.weights[0], m1.weights[0])


def test_cli_run_is_deterministic(tiny_config, tmp_path, capsys):
    assert main(["run", "--config", str(tiny_config), "--iterations", "1"]) == 0
    first = capsys.readouterr().out.strip()
    a = open(first, "rb").read()
    assert main(["run", "--config", str(tiny_config), "--iterations", "1",
                 "--out", str(tmp_path / "again")]) == 0
    second = capsys.readouterr().out.strip()
    assert first != second
    assert open(second, "rb").read() == a


def test_cli_stage_by_stage(tiny_config, capsys):
    base = ["--config", str(tiny_config), "--iterations", "1"]
    assert main(["generate", *base]) == 0
    assert main(["label", *base]) == 0
    assert main(["train", *base]) == 0
    assert main(["attack", "mia", *base]) == 0
    assert main(["analyze", "histogram", *base]) == 0
    capsys.readouterr()
    assert main(["report", *base]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary) >= {"mia", "histogram", "labeling"}


def test_cli_init_config(capsys):
    assert main(["init-config", "--seed", "5"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["seed"] == 5 and doc["clustering"]["k"] == 50


def test_cli_validation_error(capsys):
    assert main(["init-config", "--set", "data.synth.flip_prob=0.7"]) == 2
    assert "data.synth.flip_prob" in capsys.readouterr().err


def test_cli_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["attack", "teleport"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1


def test_cli_missing_inputs(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 3
    assert main(["attack", "mia", "--out", str(tmp_path / "empty")]) == 3
    err = capsys.readouterr().err
    assert "generate" in err or "train" in err
