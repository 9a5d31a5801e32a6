import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fedspectrum.errors import ConfigError, ShapeError
from oracles import naive_dft

from fedspectrum.signal import (
    GeneratorConfig,
    band_bins,
    band_energies,
    band_energy,
    best_energy_threshold,
    carrier,
    energy_detect,
    fft_features,
    generate_dataset,
    read_dataset,
    total_energy,
    write_dataset,
)


def random_window(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


finite = st.floats(-1e3, 1e3, allow_nan=False)


@st.composite
def windows(draw):
    n = 2 ** draw(st.integers(1, 7))
    re = draw(arrays(float, n, elements=finite))
    im = draw(arrays(float, n, elements=finite))
    return re + 1j * im


# -- fft_features ----------------------------------------------------------

def test_fft_zero_and_impulse():
    assert np.all(fft_features(np.zeros(16, complex)) == 0)
    imp = np.zeros(16, complex)
    imp[0] = 1
    np.testing.assert_allclose(fft_features(imp), np.ones(16), atol=1e-15)


@pytest.mark.parametrize("n", [2, 8, 32, 64])
def test_fft_matches_naive_dft(rng, n):
    x = random_window(rng, n)
    ref = np.abs(np.array(naive_dft(list(x))))
    np.testing.assert_allclose(fft_features(x), ref, rtol=0, atol=1e-9)


@pytest.mark.parametrize("n", [0, 1, 3, 12, 48])
def test_fft_rejects_bad_length(n):
    with pytest.raises(ShapeError):
        fft_features(np.ones(n, complex))


# -- energies --------------------------------------------------------------

def test_total_energy_trivial():
    assert total_energy(np.zeros(8, complex)) == 0
    assert total_energy(np.exp(1j * np.linspace(0, 3, 8))) == pytest.approx(8, abs=1e-12)


@given(windows())
def test_parseval(x):
    spec = np.fft.fft(x)
    spectral = np.sum(np.abs(spec) ** 2) / len(x)
    e = total_energy(x)
    assert abs(e - spectral) <= 1e-9 * max(1.0, e)


@given(windows(), st.sampled_from([1, 2, 4]))
def test_band_partition(x, k):
    if (len(x) // 2) % k:
        k = 1
    bands = band_energies(x, k)
    assert np.all(bands >= 0)
    e = total_energy(x)
    # equal-width bands tile every bin, so the partition is exact
    assert abs(bands.sum() - e) <= 1e-9 * max(1.0, e)


def test_band_energy_decomposition(rng):
    # bins of channels 1 and 3 only, plus the rest counted as out-of-band
    x = random_window(rng, 64)
    spec = np.abs(np.fft.fft(x)) ** 2 / 64
    chosen = [1, 3]
    inside = sum(band_energy(x, k, 4) for k in chosen)
    used = np.concatenate([band_bins(k, 4, 64) for k in chosen])
    outside = spec[np.setdiff1d(np.arange(64), used)].sum()
    assert inside + outside == pytest.approx(total_energy(x), abs=1e-9)


def test_band_energy_matches_batch(rng):
    x = random_window(rng, 32)
    batch = band_energies(x, 4)
    for k in range(4):
        assert band_energy(x, k, 4) == pytest.approx(batch[k], abs=1e-12)


def test_band_bins_partition():
    bins = np.concatenate([band_bins(k, 4, 32) for k in range(4)])
    assert sorted(bins.tolist()) == list(range(32))
    # DC-centred: channel 0 starts at the most negative frequency
    assert band_bins(0, 4, 32)[0] == 16


def test_band_energy_index_error():
    with pytest.raises(IndexError):
        band_energy(np.zeros(32, complex), 4, 4)


def test_pure_carrier_lands_in_its_band():
    x = carrier(2, 4, 32)
    e = total_energy(x)
    assert band_energy(x, 2, 4) == pytest.approx(e, rel=1e-6)
    for k in (0, 1, 3):
        assert band_energy(x, k, 4) < 1e-12 * e


def test_unit_carrier_band_energy_is_n():
    ds = generate_dataset(GeneratorConfig(channels=1, window=32, snr_db=math.inf, activity_prob=1.0,
                                          num_examples=5, seed=2))
    np.testing.assert_allclose(ds.band_energy[:, 0], 32.0, rtol=1e-9)


def test_noise_only_bands_balanced():
    ds = generate_dataset(GeneratorConfig(channels=4, window=32, activity_prob=0.0, num_examples=2000, seed=5))
    mean = ds.band_energy.mean(axis=0)
    assert mean.max() / mean.min() < 1.2


# -- energy detection ------------------------------------------------------

def test_energy_detect_boundary():
    z = np.zeros(8, complex)
    assert energy_detect(z, 0.1) is False
    assert energy_detect(z, 0.0) is True
    with pytest.raises(ValueError):
        energy_detect(z, -1.0)


def test_best_threshold_is_best(small_data):
    lam, acc = best_energy_threshold(small_data)
    e = small_data.band_energy.ravel()
    y = small_data.labels.ravel().astype(bool)
    for cand in np.quantile(e, np.linspace(0, 1, 41)):
        assert np.mean((e >= cand) == y) <= acc + 1e-12
    assert np.mean((e >= lam) == y) == pytest.approx(acc)


# -- generator -------------------------------------------------------------

def test_zero_noise_zero_labels_is_silent():
    ds = generate_dataset(GeneratorConfig(channels=4, snr_db=math.inf, activity_prob=0.0, num_examples=10))
    assert np.all(ds.iq == 0)
    assert np.all(ds.band_energy == 0)


def test_generator_deterministic():
    cfg = GeneratorConfig(channels=4, window=32, seed=7, num_examples=50)
    a, b = generate_dataset(cfg), generate_dataset(cfg)
    assert a.iq.tobytes() == b.iq.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_labels_follow_activity():
    ds = generate_dataset(GeneratorConfig(channels=4, activity_prob=(0.1, 0.5, 0.9, 0.0), num_examples=4000, seed=1))
    np.testing.assert_allclose(ds.labels.mean(axis=0), [0.1, 0.5, 0.9, 0.0], atol=0.03)


@pytest.mark.parametrize("k,n", [(4, 32), (16, 64)])
def test_active_bands_carry_more_energy(k, n):
    ds = generate_dataset(GeneratorConfig(channels=k, window=n, snr_db=10.0, noise_spread_db=10.0,
                                          num_examples=1500, seed=4))
    for ch in range(k):
        on = ds.band_energy[ds.labels[:, ch] == 1, ch]
        off = ds.band_energy[ds.labels[:, ch] == 0, ch]
        assert on.mean() > off.mean()


def test_band_snr_matches_config():
    # average in-band signal power over noise power in the same band
    k, n, snr = 4, 32, 5.0
    ds = generate_dataset(GeneratorConfig(channels=k, window=n, snr_db=snr, activity_prob=1.0, num_examples=3000, seed=9))
    noise = generate_dataset(GeneratorConfig(channels=k, window=n, snr_db=snr, activity_prob=0.0, num_examples=3000, seed=9))
    sig = ds.band_energy.mean() - noise.band_energy.mean()
    assert 10 * np.log10(sig / noise.band_energy.mean()) == pytest.approx(snr, abs=0.3)


@pytest.mark.parametrize("kw", [dict(window=24), dict(window=32, channels=3), dict(num_examples=0),
                                dict(activity_prob=1.5)])
def test_generator_rejects_bad_config(kw):
    with pytest.raises(ConfigError):
        generate_dataset(GeneratorConfig(**kw))


def test_dataset_invariants(small_data):
    assert np.all(small_data.band_energy >= 0)
    assert np.all(small_data.band_energy.sum(axis=1) <= total_energy(small_data.iq) + 1e-9)
    ex = small_data[3]
    np.testing.assert_array_equal(ex.freq, fft_features(ex.iq))


def test_energy_detection_below_learned_model(small_data):
    from fedspectrum.model import ArchSpec, TrainConfig, evaluate, init_params, sgd_epochs
    from fedspectrum.signal import generate_dataset as gen
    cfg = GeneratorConfig(channels=4, window=32, snr_db=7.0, noise_spread_db=10.0, num_examples=3000, seed=11)
    train, test = gen(cfg), gen(GeneratorConfig(**{**cfg.__dict__, "seed": 12, "num_examples": 1000}))
    _, ed_acc = best_energy_threshold(test)
    arch = ArchSpec.for_mode("freq", 32, 4)
    p = sgd_epochs(arch, init_params(arch, 0), train.features("freq"), train.labels,
                   TrainConfig(learning_rate=0.2, epochs=5))
    model_acc = evaluate(arch, p, test.features("freq"), test.labels).accuracy
    assert ed_acc < model_acc


# -- file format -----------------------------------------------------------

def test_dataset_file_round_trip(tmp_path, small_data):
    path = tmp_path / "d.fssd"
    write_dataset(path, small_data[:40])
    back = read_dataset(path)
    assert back.iq.tobytes() == small_data.iq[:40].tobytes()
    assert back.labels.tobytes() == small_data.labels[:40].tobytes()
    assert path.read_text().startswith("FSSD1 4 32 40\n")


def test_dataset_file_errors(tmp_path):
    bad = tmp_path / "bad.fssd"
    bad.write_text("NOPE 1 2 3\n")
    with pytest.raises(ConfigError, match="line 1"):
        read_dataset(bad)
    short = tmp_path / "short.fssd"
    short.write_text("FSSD1 1 2 2\n0.0,0.0 1.0,1.0;1\n")
    with pytest.raises(ConfigError, match="line 3"):
        read_dataset(short)
