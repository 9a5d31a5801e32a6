"""Synthetic multi-channel spectrum data, spectral features and energy detection.

The band of N FFT bins is split into K equal contiguous channels in
DC-centred (``fftshift``) order, so channel 0 holds the most negative
frequencies.  An active channel carries a complex carrier at its centre bin
whose phase jumps by a random multiple of pi/2 at every symbol boundary;
noise is circular complex Gaussian with unit variance per sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError

FEATURE_MODES = ("iq", "freq")


def is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GeneratorConfig:
    channels: int = 4
    window: int = 32
    snr_db: float = 0.0
    activity_prob: float | tuple[float, ...] = 0.5
    seed: int = 0
    num_examples: int = 1000
    symbols: int = 2
    # per (example, channel) SNR drawn uniformly in snr_db +/- spread/2
    snr_spread_db: float = 0.0
    # per-window noise floor drawn uniformly (in dB) in 0 +/- spread/2; the
    # carrier is scaled with it so the band SNR is unaffected
    noise_spread_db: float = 0.0

    def validate(self) -> "GeneratorConfig":
        if not is_power_of_two(self.window):
            raise ConfigError(f"window size {self.window} is not a power of two >= 2")
        if self.channels < 1 or (self.window // 2) % self.channels:
            raise ConfigError(
                f"channel count {self.channels} does not divide half the window ({self.window // 2})"
            )
        if self.num_examples < 1:
            raise ConfigError("num_examples must be >= 1")
        if self.symbols < 1 or self.window % self.symbols:
            raise ConfigError(f"symbols={self.symbols} must divide the window size")
        if self.snr_spread_db < 0 or self.noise_spread_db < 0:
            raise ConfigError("snr_spread_db and noise_spread_db must be >= 0")
        p = self.activity()
        if np.any(p < 0) or np.any(p > 1):
            raise ConfigError("activity_prob must lie in [0, 1]")
        return self

    def activity(self) -> np.ndarray:
        p = np.asarray(self.activity_prob, dtype=float)
        if p.ndim == 0:
            return np.full(self.channels, float(p))
        if p.shape != (self.channels,):
            raise ConfigError(f"activity_prob needs {self.channels} entries, got {p.size}")
        return p


# ---------------------------------------------------------------------------
# spectral primitives


def _check_window(iq: np.ndarray) -> np.ndarray:
    iq = np.asarray(iq)
    n = iq.shape[-1] if iq.ndim else 0
    if not is_power_of_two(n):
        raise ShapeError(f"window length {n} is not a power of two >= 2")
    return iq


def fft_features(iq) -> np.ndarray:
    """Magnitude spectrum ``|FFT(iq)|`` in natural bin order (last axis)."""
    iq = _check_window(iq)
    return np.abs(np.fft.fft(iq, axis=-1))


def total_energy(iq) -> float | np.ndarray:
    """Sum of squared sample moduli over the last axis."""
    iq = np.asarray(iq)
    return np.sum(iq.real**2 + iq.imag**2, axis=-1)


def band_bins(k: int, channels: int, window: int) -> np.ndarray:
    """Natural-order FFT bin indices belonging to channel ``k``."""
    if not 0 <= k < channels:
        raise IndexError(f"channel {k} out of range for {channels} channels")
    if window % channels:
        raise ShapeError(f"{channels} channels do not divide {window} bins")
    width = window // channels
    shifted = np.arange(k * width, (k + 1) * width)
    return (shifted + window // 2) % window


def center_offset(k: int, channels: int, window: int) -> int:
    """Signed frequency (in bins) of channel ``k``'s centre bin."""
    width = window // channels
    return k * width + width // 2 - window // 2


def carrier(k: int, channels: int, window: int, amplitude: float = 1.0, phase: float = 0.0) -> np.ndarray:
    t = np.arange(window)
    f = center_offset(k, channels, window)
    return amplitude * np.exp(1j * (2 * np.pi * f * t / window + phase))


def band_energies(iq, channels: int) -> np.ndarray:
    """Per-channel energies for one window ``(N,)`` or a batch ``(M, N)``."""
    iq = _check_window(iq)
    n = iq.shape[-1]
    if n % channels:
        raise ShapeError(f"{channels} channels do not divide {n} bins")
    spec = np.fft.fft(iq, axis=-1)
    power = np.fft.fftshift(spec.real**2 + spec.imag**2, axes=-1) / n
    return power.reshape(*power.shape[:-1], channels, n // channels).sum(axis=-1)


def band_energy(iq, k: int, channels: int) -> float:
    """Energy of channel ``k``: squared FFT magnitudes over its bins, scaled by 1/N."""
    iq = _check_window(iq)
    n = iq.shape[-1]
    bins = band_bins(k, channels, n)
    spec = np.fft.fft(iq, axis=-1)[..., bins]
    return np.sum(spec.real**2 + spec.imag**2, axis=-1) / n


def energy_detect(iq, lam: float) -> bool:
    if lam < 0:
        raise ValueError("threshold must be >= 0")
    return bool(total_energy(iq) >= lam)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class SpectrumExample:
    iq: np.ndarray
    freq: np.ndarray
    band_energy: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True, eq=False)
class SpectrumDataset:
    """Column-oriented collection of sensing windows.

    ``iq`` is ``(M, N)`` complex, ``labels`` is ``(M, K)`` with 0/1 entries.
    Spectral magnitudes and per-channel energies are derived on construction.
    """

    iq: np.ndarray
    labels: np.ndarray
    freq: np.ndarray = field(init=False, repr=False)
    band_energy: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        iq = np.ascontiguousarray(self.iq, dtype=np.complex128)
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if iq.ndim != 2 or labels.ndim != 2 or iq.shape[0] != labels.shape[0]:
            raise ShapeError("iq must be (M, N) and labels (M, K) with matching M")
        _check_window(iq)
        object.__setattr__(self, "iq", iq)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "freq", fft_features(iq))
        object.__setattr__(self, "band_energy", band_energies(iq, labels.shape[1]))

    @property
    def channels(self) -> int:
        return self.labels.shape[1]

    @property
    def window(self) -> int:
        return self.iq.shape[1]

    def __len__(self) -> int:
        return self.iq.shape[0]

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            return SpectrumExample(self.iq[index], self.freq[index], self.band_energy[index], self.labels[index])
        return SpectrumDataset(self.iq[index], self.labels[index])

    def with_labels(self, labels: np.ndarray) -> "SpectrumDataset":
        return SpectrumDataset(self.iq, labels)

    def features(self, mode: str) -> np.ndarray:
        """Model input of shape ``(M, rows, N)``.

        ``iq`` stacks real and imaginary parts as two rows.  ``freq`` is the
        DC-centred magnitude spectrum divided by sqrt(N), which puts it on the
        same energy scale as the time samples.
        """
        if mode == "iq":
            return np.stack([self.iq.real, self.iq.imag], axis=1)
        if mode == "freq":
            shifted = np.fft.fftshift(self.freq, axes=-1) / math.sqrt(self.window)
            return shifted[:, None, :]
        raise ConfigError(f"unknown feature mode {mode!r}")


def generate_dataset(cfg: GeneratorConfig) -> SpectrumDataset:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    m, n, k = cfg.num_examples, cfg.window, cfg.channels
    width = n // k
    labels = (rng.random((m, k)) < cfg.activity()).astype(np.uint8)
    phase0 = rng.uniform(0.0, 2 * np.pi, size=(m, k))
    steps = rng.integers(0, 4, size=(m, k, cfg.symbols))
    snr = np.full((m, k), float(cfg.snr_db))
    if cfg.snr_spread_db > 0:
        snr = snr + rng.uniform(-0.5, 0.5, size=(m, k)) * cfg.snr_spread_db

    floor_db = np.zeros(m)
    if cfg.noise_spread_db > 0:
        floor_db = rng.uniform(-0.5, 0.5, size=m) * cfg.noise_spread_db
    if math.isinf(cfg.snr_db) and cfg.snr_db > 0:
        noise_var = np.zeros(m)
        amp = np.ones((m, k))
    else:
        noise_var = 10.0 ** (floor_db / 10.0)
        amp = np.sqrt(width * 10.0 ** (snr / 10.0) * noise_var[:, None] / n)
    noise = rng.standard_normal((m, n, 2))

    t = np.arange(n)
    symbol_of_t = t // (n // cfg.symbols)
    iq = np.zeros((m, n), dtype=np.complex128)
    for ch in range(k):
        base = np.exp(2j * np.pi * center_offset(ch, k, n) * t / n)
        phase = phase0[:, ch, None] + (np.pi / 2) * steps[:, ch, symbol_of_t]
        iq += (labels[:, ch] * amp[:, ch])[:, None] * np.exp(1j * phase) * base
    iq += np.sqrt(noise_var / 2)[:, None] * (noise[..., 0] + 1j * noise[..., 1])
    return SpectrumDataset(iq, labels)


def concat(datasets: Sequence[SpectrumDataset]) -> SpectrumDataset:
    return SpectrumDataset(
        np.concatenate([d.iq for d in datasets]), np.concatenate([d.labels for d in datasets])
    )


# ---------------------------------------------------------------------------
# energy-detection baseline


def energy_detection_accuracy(dataset: SpectrumDataset, lam: float) -> float:
    pred = dataset.band_energy >= lam
    return float(np.mean(pred == dataset.labels.astype(bool)))


def best_energy_threshold(dataset: SpectrumDataset) -> tuple[float, float]:
    """Sweep a single threshold over all per-channel energies; return (lambda, accuracy)."""
    e = dataset.band_energy.ravel()
    y = dataset.labels.ravel().astype(bool)
    order = np.argsort(e, kind="stable")
    e, y = e[order], y[order]
    total = e.size
    # threshold just above e[i-1]: first i samples predicted idle
    ones_below = np.concatenate([[0], np.cumsum(y)])
    zeros_below = np.arange(total + 1) - ones_below
    correct = zeros_below + (y.sum() - ones_below)
    # only cut between distinct energies
    valid = np.ones(total + 1, dtype=bool)
    valid[1:-1] = e[1:] > e[:-1]
    best = int(np.argmax(np.where(valid, correct, -1)))
    if best == 0:
        lam = float(e[0])
    elif best == total:
        lam = float(np.nextafter(e[-1], np.inf))
    else:
        lam = float(0.5 * (e[best - 1] + e[best]))
    return lam, float(correct[best] / total)


# ---------------------------------------------------------------------------
# file format: "FSSD1 K N M" header, then "i,q i,q ...;bits" per record


def write_dataset(path, dataset: SpectrumDataset) -> None:
    path = Path(path)
    with path.open("w", encoding="ascii") as fh:
        fh.write(f"FSSD1 {dataset.channels} {dataset.window} {len(dataset)}\n")
        for row, bits in zip(dataset.iq, dataset.labels):
            pairs = " ".join(f"{repr(float(z.real))},{repr(float(z.imag))}" for z in row)
            fh.write(f"{pairs};{''.join(str(int(b)) for b in bits)}\n")


def read_dataset(path) -> SpectrumDataset:
    path = Path(path)
    with path.open("r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "FSSD1":
            raise ConfigError(f"{path}: not an FSSD1 dataset file", line=1)
        k, n, m = (int(v) for v in header[1:])
        iq = np.empty((m, n), dtype=np.complex128)
        labels = np.empty((m, k), dtype=np.uint8)
        for i in range(m):
            line = fh.readline()
            if not line:
                raise ConfigError(f"{path}: expected {m} records, found {i}", line=i + 2)
            samples, _, bits = line.strip().partition(";")
            pairs = samples.split()
            if len(pairs) != n or len(bits) != k:
                raise ConfigError(f"{path}: malformed record", line=i + 2)
            for j, pair in enumerate(pairs):
                re_, im_ = pair.split(",")
                iq[i, j] = complex(float(re_), float(im_))
            labels[i] = [int(b) for b in bits]
    return SpectrumDataset(iq, labels)
