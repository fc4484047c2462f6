import json

import pytest

from selftransfer.cli import build_config, main
from selftransfer.framework import FrameworkConfig


def write_config(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


TINY_GEN = {
    "n_labeled": 12,
    "splits": [0.6, 0.2, 0.2],
    "n_unlabeled": 10,
    "n_unlabeled_base": 4,
    "sine": {"length": 16, "dt": 0.1, "period_range": [0.4, 1.2]},
    "master_seed": 2,
}

TINY_TRAIN = {
    "n_steps": 6, "batch_size": 4, "base_lr": 5e-3, "lr_min": 1e-3,
    "ema_alpha": 0.9, "consistency_weight_max": 0.0, "eval_interval": 3,
}

TINY_FRAMEWORK = {
    "n_inits": 1,
    "pl_per_block": 1,
    "max_iterations": 2,
    "pseudo_count_per_iter": 5,
    "master_seed": 4,
    "surrogate_arch": {"n_recurrent_layers": 1, "n_dense_layers": 2, "hidden_dim": 4},
    "dantr_arch": {
        "shared_recurrent_layers": 1, "tailored_recurrent_layers": 1,
        "tailored_dense_layers": 2, "hidden_dim": 4,
    },
    "mmd": {"layer_range": [0, 1]},
    "pl_train": TINY_TRAIN,
    "dantr_train": TINY_TRAIN,
    "final_train": TINY_TRAIN,
}


class TestConfigBuilder:
    def test_unknown_key_named(self):
        with pytest.raises(ValueError, match="framework: unknown keys \\['bogus'\\]"):
            build_config(FrameworkConfig, {"bogus": 1}, "framework")

    def test_nested_error_path(self):
        with pytest.raises(ValueError, match="framework.pl_train"):
            build_config(FrameworkConfig, {"pl_train": {"n_steps": 0}}, "framework")

    def test_lists_become_tuples(self):
        cfg = build_config(FrameworkConfig, {"mmd": {"layer_range": [0, 1]}}, "framework")
        assert cfg.mmd.layer_range == (0, 1)


class TestCli:
    def test_gen_data(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"data": {"generate": TINY_GEN}})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "cs")]) == 0
        out = capsys.readouterr().out
        assert "8 train / 2 val / 2 test / 10 pool" in out
        assert (tmp_path / "cs" / "pool" / "manifest.json").exists()

    def test_gen_data_seed_override_changes_data(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"data": {"generate": TINY_GEN}})
        main(["gen-data", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["gen-data", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
        a = (tmp_path / "a" / "train" / "manifest.json").read_text()
        b = (tmp_path / "b" / "train" / "manifest.json").read_text()
        assert a != b  # different normalization bounds from different data

    def test_iterate_and_report(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json", {"data": {"generate": TINY_GEN}, "framework": TINY_FRAMEWORK}
        )
        assert main(["iterate", "--config", cfg, "--out", str(tmp_path / "run")]) == 0
        out = capsys.readouterr().out
        assert "final test MSE" in out
        assert main(["report", "--run", str(tmp_path / "run" / "run"), "--plots"]) == 0
        out = capsys.readouterr().out
        assert "reductions.png" in out

    def test_train_and_evaluate(self, tmp_path, capsys):
        cfg_path = write_config(
            tmp_path / "c.json", {"data": {"generate": TINY_GEN}, "framework": TINY_FRAMEWORK}
        )
        main(["gen-data", "--config", cfg_path, "--out", str(tmp_path / "cs")])
        capsys.readouterr()
        assert main([
            "train", "--config", cfg_path, "--data", str(tmp_path / "cs"),
            "--out", str(tmp_path / "t"),
        ]) == 0
        assert "val MSE" in capsys.readouterr().out
        assert main([
            "evaluate", "--checkpoint", str(tmp_path / "t" / "checkpoint.pt"),
            "--dataset", str(tmp_path / "cs" / "val"),
        ]) == 0
        float(capsys.readouterr().out)  # bare number

    def test_bad_config_reports_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"data": {"generate": {"bogus": 1}}})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
        assert "unknown keys" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["gen-data", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "x")]) == 2
        assert "does not exist" in capsys.readouterr().err

    def test_missing_data_section(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"framework": {}})
        assert main(["iterate", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
        assert "data.dir or data.generate" in capsys.readouterr().err
