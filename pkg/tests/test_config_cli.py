import json

import pytest

from acegan import cli, pipeline
from acegan.config import PipelineConfig, load_config, parse_config
from acegan.errors import ConfigError, MissingArtifact, StaleArtifact


def test_defaults_match_reference_hyperparameters():
    cfg = PipelineConfig()
    assert cfg.M == 73 and cfg.channel_index == 0
    assert (cfg.gan.lr, cfg.gan.beta1, cfg.gan.beta2, cfg.gan.batch_size, cfg.gan.iterations) == (2e-4, 0.5, 0.999, 128, 10000)
    assert (cfg.estimator.base_threshold, cfg.estimator.pool_threshold_start, cfg.estimator.max_pool) == (0.9, 0.95, 400)
    assert cfg.finetune_set.generated_per_class == 400
    assert cfg.finetune.target_accuracy == 0.99


def test_parse_and_round_trip():
    cfg = parse_config("""
        # comment
        seed = 5
        gan.iterations = 300   # trailing comment
        eval_records = 100, 103
        synth.fractions = N: 0.9, V: 0.1
        synth.rr_range = 0.6, 0.8
    """)
    assert cfg.seed == 5 and cfg.gan.seed == 5 and cfg.finetune.seed == 5
    assert cfg.gan.iterations == 300 and cfg.eval_records == ("100", "103")
    assert cfg.synth.fractions == {"N": 0.9, "V": 0.1} and cfg.synth.rr_range == (0.6, 0.8)
    again = parse_config(cfg.to_text())
    assert again.items() == cfg.items()


@pytest.mark.parametrize("text", ["nope = 1", "gan.nope = 1", "gan = 1", "gan.seed = 3", "seed = abc",
                                  "gan.batch_size = 6", "just words", "synth.rr_range = 1"])
def test_config_errors(text):
    with pytest.raises((ConfigError, ValueError)):
        parse_config(text)


def test_load_config_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("seed = 1\n")
    cfg = load_config(path, ["seed=2", "M=40"])
    assert cfg.seed == 2 and cfg.M == 40
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        load_config(None, ["seed"])


def test_stage_hash_is_scoped():
    a, b = PipelineConfig(), PipelineConfig()
    b.set("finetune_set.generated_per_class", "0")
    gan_keys = pipeline.STAGES["gan"].keys(a)
    assert a.stage_hash(gan_keys, []) == b.stage_hash(gan_keys, [])
    ft_keys = pipeline.STAGES["finetune"].keys(a)
    assert a.stage_hash(ft_keys, []) != b.stage_hash(ft_keys, [])


def run(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_synth_is_deterministic(tmp_path, capsys, tiny_overrides):
    sets = sum((["--set", o] for o in tiny_overrides), [])
    for d in ("a", "b"):
        code, _, _ = run(["synth", "--seed", "7", "--out", str(tmp_path / d)] + sets, capsys)
        assert code == 0
    for f in sorted((tmp_path / "a" / "synth" / "records").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / "synth" / "records" / f.name).read_bytes()


def test_stage_out_of_order_is_machine_readable(tmp_path, capsys):
    code, _, err = run(["evaluate", "--out", str(tmp_path)], capsys)
    assert code == 2
    line = json.loads(err.strip().splitlines()[-1])
    assert line["error"] == "MissingArtifact"


def test_unknown_key_exit_code(tmp_path, capsys):
    code, _, err = run(["show-config", "--set", "bogus=1"], capsys)
    assert code == 2 and json.loads(err.strip())["error"] == "ConfigError"


def test_show_config(capsys):
    code, out, _ = run(["show-config", "--seed", "4"], capsys)
    assert code == 0 and "seed = 4" in out and "gan.iterations = 10000" in out


def test_run_all_tiny_then_ablation_and_staleness(tmp_path, capsys, tiny_overrides):
    out = str(tmp_path / "run")
    sets = sum((["--set", o] for o in tiny_overrides), [])
    code, text, err = run(["run-all", "--synthetic", "--seed", "3", "--out", out] + sets, capsys)
    assert code == 0, err
    assert "Total" in text
    for rel in ("gan/telemetry.csv", "gan/generator.tnet", "gan/discriminator.tnet", "evaluate/report.txt",
                "evaluate/summary.json", "evaluate/pca.csv", "select_s/scores.csv", "normals/purity.csv"):
        assert (tmp_path / "run" / rel).exists(), rel
    first = (tmp_path / "run" / "evaluate" / "report.csv").read_text()

    # ablation reuses the GAN; only the downstream stages are re-run
    ablate = sets + ["--set", "finetune_set.generated_per_class=0"]
    with pytest.raises(StaleArtifact):
        ws = pipeline.Workspace(load_config(None, tiny_overrides + ["seed=3", "finetune_set.generated_per_class=0"]), out)
        ws.verified_hash("finetune")
    for cmd in ("finetune", "classify", "evaluate"):
        code, _, err = run([cmd, "--seed", "3", "--out", out] + ablate, capsys)
        assert code == 0, err
    assert (tmp_path / "run" / "evaluate" / "report.csv").read_text().startswith("record,")
    # a changed GAN setting invalidates everything downstream of it
    code, _, err = run(["classify", "--seed", "3", "--out", out, "--set", "gan.iterations=3"] + sets, capsys)
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["error"] == "StaleArtifact"
    assert first.startswith("record,")


def test_generate_subcommand(tmp_path, capsys, tiny_overrides):
    out = str(tmp_path / "run")
    sets = sum((["--set", o] for o in tiny_overrides), [])
    assert run(["run-all", "--synthetic", "--out", out] + sets, capsys)[0] == 0
    code, _, err = run(["generate", "--class", "S", "--count", "5", "--out", out] + sets, capsys)
    assert code == 0, err
    assert (tmp_path / "run" / "generate" / "S_5.csv").read_text().count("\n") == 6


def test_missing_data_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(pipeline.DATA_DIR_ENV, raising=False)
    code, _, err = run(["ingest", "--out", str(tmp_path)], capsys)
    assert code == 2 and json.loads(err.strip())["error"] == "ConfigError"


def test_data_dir_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(pipeline.DATA_DIR_ENV, str(tmp_path / "empty"))
    (tmp_path / "empty").mkdir()
    code, _, err = run(["ingest", "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and json.loads(err.strip())["error"] == "MissingArtifact"
