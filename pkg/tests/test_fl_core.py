import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import mean_oracle

from fedspectrum.errors import ConfigError
from fedspectrum.fl_core import (
    FLConfig,
    Shard,
    fedavg,
    local_seed,
    local_update,
    run_supervised_fl,
    select_clients,
    split_shards,
)
from fedspectrum.model import ArchSpec, TrainConfig, init_params, sgd_epochs
from fedspectrum.rng import derive_seed, stream

ARCH = ArchSpec.for_mode("freq", 32, 4)
vec = arrays(float, 7, elements=st.floats(-1e6, 1e6, allow_nan=False))


@pytest.fixture(scope="module")
def shards(small_data):
    return split_shards(Shard.from_dataset(small_data[:400], "freq"), 10)


@pytest.fixture(scope="module")
def test_shard(small_data):
    return Shard.from_dataset(small_data[400:], "freq")


# -- selection -------------------------------------------------------------

def test_select_counts():
    cfg = FLConfig()
    ids = select_clients(1, cfg)
    assert len(ids) == 10 and len(set(ids.tolist())) == 10
    assert ids.min() >= 0 and ids.max() < 100
    assert select_clients(1, cfg).tobytes() == ids.tobytes()
    assert select_clients(1, FLConfig(select_ratio=1.0)).tolist() == list(range(100))


def test_selection_is_binomial():
    cfg = FLConfig()
    counts = np.zeros(100, int)
    for t in range(1, 1001):
        counts[select_clients(t, cfg)] += 1
    # 3 sigma of Binomial(1000, 0.1) is about 28.5; the bound used is 35
    assert np.all(np.abs(counts - 100) <= 35)


@pytest.mark.parametrize("kw", [dict(select_ratio=0.0), dict(num_clients=5, select_ratio=0.1),
                                dict(local_epochs=0), dict(select_ratio=1.5)])
def test_flconfig_invalid(kw):
    with pytest.raises(ConfigError):
        FLConfig(**kw)


def test_derive_seed_distinct_paths():
    seeds = {derive_seed(0, "local", t, c) for t in range(20) for c in range(20)}
    assert len(seeds) == 400
    assert derive_seed(3, "x", 1) == derive_seed(3, "x", 1)
    a = stream(1, "a").random(4)
    assert a.tobytes() == stream(1, "a").random(4).tobytes()


def test_split_shards():
    pool = Shard(np.arange(23.0).reshape(23, 1, 1), np.zeros((23, 1)))
    parts = split_shards(pool, 5)
    assert [len(p) for p in parts] == [5, 5, 5, 4, 4]
    assert np.concatenate([p.x for p in parts]).ravel().tolist() == list(range(23))
    with pytest.raises(ConfigError):
        split_shards(pool, 30)


# -- local update ----------------------------------------------------------

def test_local_update(shards):
    g = init_params(ARCH, 0)
    s = shards[0]
    same = local_update(ARCH, g, s.x, s.y, TrainConfig(learning_rate=0.0, epochs=2))
    assert same.tobytes() == g.tobytes()
    tc = TrainConfig(learning_rate=0.1, epochs=2, seed=7)
    a = local_update(ARCH, g, s.x, s.y, tc)
    b = local_update(ARCH, g, s.x, s.y, tc)
    assert a.tobytes() == b.tobytes()
    assert np.any(a != g)
    with pytest.raises(ValueError):
        local_update(ARCH, g, s.x[:0], s.y[:0], tc)


# -- fedavg ----------------------------------------------------------------

def test_fedavg_examples(rng):
    w = rng.standard_normal(11)
    assert fedavg([w, w, w]).tobytes() == w.tobytes()
    assert np.all(fedavg([w, -w]) == 0)
    rows = [rng.standard_normal(11) for _ in range(3)]
    np.testing.assert_allclose(fedavg(rows), mean_oracle(rows), rtol=0, atol=1e-12)


def test_fedavg_errors():
    with pytest.raises(ValueError):
        fedavg([])
    with pytest.raises(ValueError):
        fedavg([np.zeros(3), np.zeros(4)])


@given(st.lists(vec, min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_fedavg_permutation_invariant(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    assert fedavg(rows).tobytes() == fedavg(shuffled).tobytes()


@given(vec, st.integers(1, 12))
def test_fedavg_idempotent(w, n):
    assert fedavg([w] * n).tobytes() == w.tobytes()


@given(st.lists(vec, min_size=1, max_size=8))
def test_fedavg_matches_mean(rows):
    got = fedavg(rows)
    ref = mean_oracle(rows)
    scale = max(1.0, max(abs(v) for r in rows for v in r))
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12 * scale * len(rows))


# -- full runs -------------------------------------------------------------

def test_zero_rounds_returns_initial(shards):
    init = init_params(ARCH, 4)
    res = run_supervised_fl(ARCH, FLConfig(num_clients=10, rounds=0), shards, TrainConfig(), params=init)
    assert res.params.tobytes() == init.tobytes()
    assert res.reports == []


def test_single_client_equals_centralized(shards):
    s = shards[0]
    cfg = FLConfig(num_clients=1, select_ratio=1.0, rounds=3, local_epochs=2, seed=5)
    train = TrainConfig(learning_rate=0.1, batch_size=8)
    res = run_supervised_fl(ARCH, cfg, [s], train)
    p = init_params(ARCH, derive_seed(5, "init"))
    for t in range(1, 4):
        p = sgd_epochs(ARCH, p, s.x, s.y, TrainConfig(0.1, 8, 2, local_seed(cfg, t, 0)))
    assert res.params.tobytes() == p.tobytes()


def test_run_deterministic_and_thread_safe(shards, test_shard):
    cfg = FLConfig(num_clients=10, select_ratio=0.3, rounds=3, seed=2)
    train = TrainConfig(learning_rate=0.2)
    a = run_supervised_fl(ARCH, cfg, shards, train, test=test_shard, workers=1)
    b = run_supervised_fl(ARCH, cfg, shards, train, test=test_shard, workers=3)
    assert a.params.tobytes() == b.params.tobytes()
    assert [r.to_dict() for r in a.reports] == [r.to_dict() for r in b.reports]
    r = a.reports[0].to_dict()
    assert set(r) >= {"round", "test_accuracy", "per_channel_accuracy", "selected_ids", "malicious_selected_ratio"}
    assert len(r["per_channel_accuracy"]) == 4


def test_client_isolation(shards):
    # a client's update is reproducible from (global, shard, seed) alone
    captured = {}

    def capture(g, ups, t):
        from fedspectrum.fl_core import fedavg_rule
        captured[t] = (g.copy(), {u.client_id: u.params for u in ups})
        return fedavg_rule(g, ups, t)

    cfg = FLConfig(num_clients=10, select_ratio=0.3, rounds=2, seed=8)
    train = TrainConfig(learning_rate=0.2)
    run_supervised_fl(ARCH, cfg, shards, train, aggregate=capture)
    g, ups = captured[2]
    for cid, params in ups.items():
        alone = local_update(ARCH, g, shards[cid].x, shards[cid].y,
                             TrainConfig(0.2, 32, cfg.local_epochs, local_seed(cfg, 2, cid)))
        assert alone.tobytes() == params.tobytes()


def test_malicious_ratio_reported(shards):
    cfg = FLConfig(num_clients=10, select_ratio=0.5, rounds=2)
    poisoned = {0: 1 - shards[0].y, 1: 1 - shards[1].y}
    res = run_supervised_fl(ARCH, cfg, shards, TrainConfig(), poisoned=poisoned)
    for r in res.reports:
        assert r.malicious_selected_ratio == sum(i in (0, 1) for i in r.selected_ids) / 5


def test_shard_count_mismatch(shards):
    with pytest.raises(ConfigError):
        run_supervised_fl(ARCH, FLConfig(num_clients=20), shards, TrainConfig())
