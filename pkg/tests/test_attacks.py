import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedspectrum.attacks import AttackSpec, asr, assign_attackers, assign_malicious, poison_labels
from fedspectrum.errors import ConfigError, UndefinedMetricError
from fedspectrum.fl_core import FLConfig, select_clients
from fedspectrum.model import ArchSpec, predict

ARCH = ArchSpec.for_mode("freq", 32, 4)
bits = st.lists(st.integers(0, 1), min_size=4, max_size=4)


def test_assign_malicious():
    assert assign_malicious(100, 0.0, 0).size == 0
    ids = assign_malicious(100, 0.3, 0)
    assert len(ids) == 30 and len(set(ids.tolist())) == 30
    assert assign_malicious(100, 0.7, 0).size == 70
    assert assign_malicious(100, 0.3, 0).tobytes() == ids.tobytes()


def test_majority_rounds_occur():
    # with 30% attackers and 10 of 100 sampled, some round has > 50% attackers
    mal = set(assign_malicious(100, 0.3, 0).tolist())
    cfg = FLConfig()
    fractions = [np.mean([i in mal for i in select_clients(t, cfg)]) for t in range(1, 101)]
    assert max(fractions) > 0.5


def test_assign_attackers_disjoint():
    specs = [AttackSpec("flip", None, 0.1), AttackSpec("busy", None, 0.2), AttackSpec("random", None, 0.1)]
    groups = assign_attackers(100, specs, 3)
    assert [len(g) for g in groups] == [10, 20, 10]
    assert len(set(np.concatenate(groups).tolist())) == 40
    with pytest.raises(ConfigError):
        assign_attackers(100, [AttackSpec(malicious_ratio=0.6)] * 2, 0)


def test_poison_examples():
    assert poison_labels([1, 0, 1, 0], AttackSpec("flip")).tolist() == [0, 1, 0, 1]
    assert poison_labels([0, 0], AttackSpec("set_busy", (0,))).tolist() == [1, 0]
    assert poison_labels([1, 1, 0], AttackSpec("idle", (1, 2))).tolist() == [1, 0, 0]


def test_random_attack_is_fair():
    labels = np.zeros((10_000, 2), dtype=np.uint8)
    out = poison_labels(labels, AttackSpec("random", (1,), seed=5), client_id=3)
    assert abs(out[:, 1].mean() - 0.5) <= 0.02
    assert np.all(out[:, 0] == 0)


@given(st.lists(bits, min_size=1, max_size=20), st.sets(st.integers(0, 3), min_size=1),
       st.sampled_from(["flip", "set_busy", "set_idle", "random"]))
def test_untargeted_channels_untouched(rows, chans, kind):
    y = np.array(rows)
    out = poison_labels(y, AttackSpec(kind, tuple(chans)))
    other = [k for k in range(4) if k not in chans]
    np.testing.assert_array_equal(out[:, other], y[:, other])
    assert out.shape == y.shape


@given(st.lists(bits, min_size=1, max_size=20), st.sets(st.integers(0, 3), min_size=1))
def test_flip_twice_is_identity(rows, chans):
    y = np.array(rows)
    spec = AttackSpec("flip", tuple(chans))
    assert poison_labels(poison_labels(y, spec), spec).tolist() == y.tolist()


def test_features_untouched(small_data):
    from fedspectrum.fl_core import Shard
    shard = Shard.from_dataset(small_data[:50], "freq")
    before = shard.x.tobytes()
    poison_labels(shard.y, AttackSpec("flip"))
    assert shard.x.tobytes() == before


def test_attack_spec_validation():
    with pytest.raises(ConfigError):
        AttackSpec("bogus")
    with pytest.raises(ConfigError):
        AttackSpec("flip", ())
    with pytest.raises(ConfigError):
        AttackSpec("flip", malicious_ratio=1.2)
    with pytest.raises(ConfigError):
        AttackSpec("flip", (7,)).mask(4)
    assert AttackSpec("busy").kind == "set_busy"


# -- attack success rate ---------------------------------------------------

def _bias_params(value):
    p = np.zeros(ARCH.num_params)
    p[ARCH.offsets()["dense2_b"]] = value
    return p


def test_asr_examples(small_data):
    x, y = small_data.features("freq")[:100], small_data.labels[:100]
    assert asr(ARCH, _bias_params(5.0), x, y, 0, 1, 2) == 1.0  # constant busy predictor
    assert asr(ARCH, _bias_params(-5.0), x, y, 0, 1, 2) == 0.0
    with pytest.raises(UndefinedMetricError):
        asr(ARCH, _bias_params(0.0), x, np.zeros_like(y), 1, 0, 0)


def test_asr_perfect_model():
    # labels produced by the model itself make it perfect
    rng = np.random.default_rng(1)
    x = rng.standard_normal((60, 1, 32))
    p = rng.standard_normal(ARCH.num_params) * 0.3
    y = predict(ARCH, p, x)
    for k in range(4):
        if (y[:, k] == 0).any():
            assert asr(ARCH, p, x, y, 0, 1, k) == 0.0


def test_asr_matches_count_oracle(small_data):
    rng = np.random.default_rng(2)
    x, y = small_data.features("freq")[:120], small_data.labels[:120]
    p = rng.standard_normal(ARCH.num_params) * 0.3
    pred = predict(ARCH, p, x)
    for k in range(4):
        for src, dst in ((0, 1), (1, 0)):
            hits = sum(1 for i in range(len(y)) if y[i, k] == src and pred[i, k] == dst)
            total = sum(1 for i in range(len(y)) if y[i, k] == src)
            assert asr(ARCH, p, x, y, src, dst, k) == hits / total
