import pytest

from seb.config import ConfigError, dump_kv, load_experiment_config, parse_kv


class TestParseKV:
    def test_comments_and_blanks(self):
        assert parse_kv("# top\n\na = 1  # trailing\n b=two \n") == {"a": "1", "b": "two"}

    def test_duplicate(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_kv("a = 1\na = 2\n")

    def test_malformed(self):
        with pytest.raises(ConfigError, match=":2:"):
            parse_kv("a = 1\njunk\n")

    def test_dump_round_trip(self):
        values = {"x": 3, "flag": True, "items": [1, 2], "s": "abc"}
        assert parse_kv(dump_kv(values)) == {"x": "3", "flag": "true", "items": "1,2", "s": "abc"}


class TestExperimentConfig:
    def write(self, tmp_path, text):
        p = tmp_path / "run.cfg"
        p.write_text(text)
        return p

    def test_paths_relative_to_file(self, tmp_path):
        cfg = load_experiment_config(self.write(tmp_path, "output_dir = out\ncorpus = data/c.csv\n"))
        assert cfg.output_dir == tmp_path / "out"
        assert cfg.corpus == tmp_path / "data" / "c.csv"

    def test_typed_fields(self, tmp_path):
        cfg = load_experiment_config(self.write(tmp_path, (
            "output_dir = o\nvariant = seb_ar\nuse_bias = yes\nprune_ratios = 0, 0.9\n"
            "rules = loose_any\nrounds = 7\ncoverage_byte_counts = 8,16\n"
        )))
        assert cfg.variant == "SEB_AR" and cfg.use_bias
        assert cfg.prune_ratios == [0.0, 0.9] and cfg.rules == ["LOOSE_ANY"]
        assert cfg.fl == {"rounds": "7"} and cfg.coverage_byte_counts == [8, 16]

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown keys: colour"):
            load_experiment_config(self.write(tmp_path, "output_dir = o\ncolour = red\n"))

    def test_missing_output_dir(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_config(self.write(tmp_path, "seed = 1\n"))

    def test_bad_number(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_config(self.write(tmp_path, "output_dir = o\nd = many\n"))

    def test_env_seed_override(self, tmp_path, monkeypatch):
        path = self.write(tmp_path, "output_dir = o\nseed = 3\n")
        base = load_experiment_config(path)
        monkeypatch.setenv("SEB_SEED", "11")
        over = load_experiment_config(path)
        assert (base.seed, over.seed) == (3, 11)
        assert base.digest != over.digest

    def test_check_inputs(self, tmp_path):
        path = self.write(tmp_path, "output_dir = o\ncorpus = nope.csv\n")
        with pytest.raises(FileNotFoundError):
            load_experiment_config(path, check_inputs=("corpus",))
        with pytest.raises(ConfigError):
            load_experiment_config(path, check_inputs=("vocab",))
