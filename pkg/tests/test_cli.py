import json

import pytest

from widr.cli import main
from widr.config import ConfigError, PipelineConfig, load_config


class TestConfig:
    def test_defaults_match_reference_hyperparameters(self):
        cfg = PipelineConfig()
        assert cfg.preprocess.patch_size == 256
        assert cfg.model.dropout == 0.5
        assert cfg.model.feature_dim == 2048
        assert cfg.train.momentum == 0.9
        assert (cfg.train.lr, cfg.train.lr_decay_epoch, cfg.train.lr_after) == (0.1, 45, 0.01)
        assert cfg.encode.kmeans_k == 1
        assert cfg.preprocess.ink_ratio_min == 0.02

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nlearnig_rate = 0.1\n")
        with pytest.raises(ConfigError, match="learnig_rate"):
            load_config(p)

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="optimizer"):
            load_config(None, ["optimizer.lr=1"])

    def test_override_types(self):
        cfg = load_config(None, ["eval.top_k=1,4", "loss.compare_baseline=yes", "train.lr=0.05"])
        assert cfg.eval.top_k == (1, 4)
        assert cfg.loss.compare_baseline is True
        assert cfg.train.lr == 0.05

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="train.epochs"):
            load_config(None, ["train.epochs=many"])

    def test_validation(self):
        with pytest.raises(ConfigError, match="loss.mode"):
            load_config(None, ["loss.mode=focal"])

    def test_paths_relative_to_config(self, tiny_config):
        cfg = load_config(tiny_config)
        assert cfg.workdir == tiny_config.parent / "work"


class TestMain:
    def test_unknown_key_exit_1(self, tmp_path, capsys):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nlearnig_rate = 0.1\n")
        assert main(["train", "--config", str(p)]) == 1
        assert "learnig_rate" in capsys.readouterr().err

    def test_eval_without_descriptors_exit_2(self, tiny_config, capsys):
        assert main(["synth", "--config", str(tiny_config)]) == 0
        assert main(["eval", "--config", str(tiny_config)]) == 2
        err = capsys.readouterr().err
        assert ".widf" in err and "descriptors" in err

    def test_pipeline_happy_path(self, tiny_config, capsys):
        assert main(["pipeline", "--config", str(tiny_config), "--set", "loss.compare_baseline=true"]) == 0
        reports = tiny_config.parent / "work" / "reports"
        for name in ("wlsr_mixed.csv", "wlsr_mixed.json", "real_onehot.json", "summary.csv", "summary.json"):
            assert (reports / name).is_file()
        header = (reports / "summary.csv").read_text().splitlines()[0]
        assert header.endswith("delta_vs_baseline")

    def test_stages_individually_and_eval_output(self, tiny_config, capsys):
        for cmd in ("synth", "preprocess", "train", "extract", "encode"):
            assert main([cmd, "--config", str(tiny_config)]) == 0, cmd
        assert main(["eval", "--config", str(tiny_config)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("mAP ") and "top1" in out and "top2" in out
        assert main(["report", "--config", str(tiny_config)]) == 0

    def test_seed_flag_sets_all_seeds(self, tiny_config):
        assert main(["synth", "--config", str(tiny_config), "--seed", "7"]) == 0
        assert main(["train", "--config", str(tiny_config), "--seed", "7"]) == 2  # no patches yet
        assert main(["preprocess", "--config", str(tiny_config), "--seed", "7"]) == 0
        assert main(["train", "--config", str(tiny_config), "--seed", "7"]) == 0
        info = json.loads((tiny_config.parent / "work" / "reports" / "wlsr_mixed.train.json").read_text())
        assert info["seed"] == 7
