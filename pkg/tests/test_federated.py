import numpy as np
import pytest

from seb.config import ConfigError
from seb.embedding import EmbeddingDims, Variant
from seb.federated import (
    Aggregation,
    DivergenceError,
    FLConfig,
    aggregate,
    fed_round,
    fl_config_from_kv,
    load_fl_config,
    partition,
    read_round_log,
    save_fl_config,
    train,
    write_round_log,
)
from seb.mapping import build_mapping
from seb.model import init_model, loss_and_grad
from seb.rng import TAG_ROUND, Stream
from seb.text import encode_corpus, build_vocab, generate_synthetic_corpus

DIMS = EmbeddingDims(0, d_out=3, byte_vocab_size=16, n=3, d=4, h=6)


@pytest.fixture(scope="module")
def task():
    corpus = generate_synthetic_corpus(120, 2, 40, 6, seed=1)
    vocab = build_vocab(corpus)
    dims = EmbeddingDims(len(vocab), 3, 16, 3, d=4, h=6)
    return encode_corpus(corpus, vocab), dims, build_mapping(len(vocab), 16, 3, seed=2)


class TestPartition:
    def test_even(self):
        shards = partition(list(range(100)), 20, seed=0)
        assert [len(s) for s in shards] == [5] * 20

    def test_uneven(self):
        sizes = sorted(len(s) for s in partition(list(range(101)), 20, seed=0))
        assert sizes == [5] * 19 + [6]

    def test_single_client(self):
        shard, = partition(list(range(30)), 1, seed=4)
        assert sorted(shard) == list(range(30))

    def test_disjoint_cover_and_deterministic(self):
        shards = partition(list(range(57)), 7, seed=3)
        flat = [x for s in shards for x in s]
        assert sorted(flat) == list(range(57))
        assert shards == partition(list(range(57)), 7, seed=3)
        assert shards != partition(list(range(57)), 7, seed=4)

    def test_errors(self):
        with pytest.raises(ValueError):
            partition([1, 2], 0)
        with pytest.raises(ValueError):
            partition([1, 2], 3)


class TestConfig:
    def test_clients_per_round(self):
        assert FLConfig(num_clients=20, participation_ratio=0.6).clients_per_round == 12
        assert FLConfig(num_clients=20, participation_ratio=0.2).clients_per_round == 4
        assert FLConfig(num_clients=3, participation_ratio=0.01).clients_per_round == 1

    @pytest.mark.parametrize("kwargs", [
        {"learning_rate": 0.0}, {"participation_ratio": 0.0}, {"participation_ratio": 1.5},
        {"num_clients": 0}, {"batch_size": 0}, {"rounds": -1},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FLConfig(**kwargs)

    def test_kv_round_trip(self, tmp_path):
        cfg = FLConfig(7, 12, 0.25, 4, 0.5, Aggregation.SUM, 99, frozenset({0, 3}), 2)
        save_fl_config(cfg, tmp_path / "fl.cfg")
        assert load_fl_config(tmp_path / "fl.cfg") == cfg

    def test_bad_kv(self):
        with pytest.raises(ConfigError):
            fl_config_from_kv({"aggregation": "median"})
        with pytest.raises(ConfigError):
            fl_config_from_kv({"rounds": "ten"})
        assert fl_config_from_kv({"aggregation": "sum"}).aggregation is Aggregation.SUM


class TestAggregation:
    def test_sum_is_k_times_mean(self):
        rng = np.random.default_rng(0)
        grads = [{"a": rng.normal(size=(4, 3)), "b": rng.normal(size=5)} for _ in range(7)]
        s, m = aggregate(grads, Aggregation.SUM), aggregate(grads, Aggregation.MEAN)
        for k in s:
            np.testing.assert_allclose(s[k], 7 * m[k], rtol=0, atol=1e-12)

    def test_mean_of_equal_terms(self):
        g = {"a": np.arange(3.0)}
        np.testing.assert_array_equal(aggregate([g, g], Aggregation.MEAN)["a"], g["a"])

    def test_inputs_untouched(self):
        g = {"a": np.ones(2)}
        aggregate([g, g], Aggregation.SUM)
        np.testing.assert_array_equal(g["a"], np.ones(2))

    def test_two_identical_clients_match_one(self, task):
        examples, dims, mapping = task
        model = init_model(Variant.SEB_CO, dims, 2, seed=1)
        cfg = FLConfig(num_clients=2, rounds=1, learning_rate=0.5, batch_size=1)
        one_cfg = FLConfig(num_clients=1, rounds=1, learning_rate=0.5, batch_size=1)
        two, _ = fed_round(model, [[examples[0]], [examples[0]]], cfg, 0, mapping)
        one, _ = fed_round(model, [[examples[0]]], one_cfg, 0, mapping)
        for k, v in one.parameters().items():
            np.testing.assert_allclose(two.parameters()[k], v, rtol=0, atol=1e-15)


class TestTraining:
    @pytest.mark.parametrize("variant", list(Variant))
    def test_single_client_sum_is_centralized_sgd(self, task, variant):
        examples, dims, mapping = task
        mapping = mapping if variant.uses_mapping else None
        cfg = FLConfig(num_clients=1, rounds=3, learning_rate=0.7, batch_size=8,
                       aggregation=Aggregation.SUM, seed=5)
        start = init_model(variant, dims, 2, seed=3)
        fl_model, logs = train(examples, cfg, variant, mapping, dims=dims, num_classes=2, model=start)

        shard = partition(examples, 1, cfg.seed)[0]
        model = start
        for t in range(3):
            stream = Stream(cfg.seed, TAG_ROUND, t)
            assert stream.sample(1, 1) == [0]
            idx = stream.sample(len(shard), cfg.batch_size)
            assert tuple(idx) == logs[t].batch_indices[0]
            model = model.apply_gradient(loss_and_grad(model, [shard[i] for i in idx], mapping)[1].grads, 0.7)
        for k, v in model.parameters().items():
            np.testing.assert_allclose(fl_model.parameters()[k], v, rtol=0, atol=1e-12)

    def test_zero_rounds(self, task):
        examples, dims, mapping = task
        cfg = FLConfig(num_clients=4, rounds=0)
        start = init_model(Variant.SEB_CO, dims, 2)
        model, logs = train(examples, cfg, Variant.SEB_CO, mapping, dims=dims, num_classes=2, model=start)
        assert model is start and logs == []

    def test_deterministic_logs(self, task, tmp_path):
        examples, dims, mapping = task
        cfg = FLConfig(num_clients=6, rounds=4, participation_ratio=0.5, batch_size=4, seed=8)
        for name in ("a.csv", "b.csv"):
            train(examples, cfg, Variant.SEB_CO, mapping, dims=dims, num_classes=2,
                  eval_examples=examples[:30], log_path=tmp_path / name)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        rows = read_round_log(tmp_path / "a.csv")
        assert [r["round"] for r in rows] == [0, 1, 2, 3]
        assert all(len(r["client_ids"]) == 3 for r in rows)

    def test_selection_frequency(self, task):
        examples, dims, _ = task
        cfg = FLConfig(num_clients=10, rounds=600, participation_ratio=0.3, batch_size=1,
                       learning_rate=0.1, eval_every=0)
        _, logs = train(examples, cfg, Variant.SUBWORD, None, dims=dims, num_classes=2)
        counts = np.zeros(10)
        for log in logs:
            assert len(set(log.client_ids)) == 3 and all(0 <= c < 10 for c in log.client_ids)
            counts[list(log.client_ids)] += 1
        freq = counts / cfg.rounds
        sigma = np.sqrt(0.3 * 0.7 / cfg.rounds)
        assert np.all(np.abs(freq - 0.3) < 5 * sigma)

    def test_snapshots_only_for_attack_rounds(self, task):
        examples, dims, mapping = task
        cfg = FLConfig(num_clients=4, rounds=3, batch_size=4, attack_rounds=frozenset({1}))
        _, logs = train(examples, cfg, Variant.SEB_CO, mapping, dims=dims, num_classes=2)
        assert not logs[0].snapshots and not logs[2].snapshots
        assert sorted(logs[1].snapshots) == sorted(logs[1].client_ids)
        snap = logs[1].snapshots[logs[1].client_ids[0]]
        assert snap.round == 1 and snap.batch_size == 4

    def test_divergence(self, task):
        examples, dims, mapping = task
        cfg = FLConfig(num_clients=2, rounds=5, learning_rate=1e308, aggregation=Aggregation.SUM)
        with pytest.raises(DivergenceError, match=r"divergence at round \d"):
            train(examples, cfg, Variant.SEB_CO, mapping, dims=dims, num_classes=2, init_scale=1.0)

    def test_round_log_round_trip(self, tmp_path, task):
        examples, dims, mapping = task
        cfg = FLConfig(num_clients=3, rounds=2, batch_size=4)
        _, logs = train(examples, cfg, Variant.SEB_CO, mapping, dims=dims, num_classes=2, eval_examples=examples)
        write_round_log(logs, tmp_path / "r.csv")
        rows = read_round_log(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "round,client_ids,loss,accuracy,grad_norm"
        for row, log in zip(rows, logs):
            assert row["loss"] == log.loss and row["accuracy"] == log.accuracy
            assert row["client_ids"] == log.client_ids
