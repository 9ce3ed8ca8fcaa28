"""Synthetic corpora from the sparse generative model, and noise conditions.

``x = sum_j a_j * s_j + e`` with smooth planted bases, Laplacian spikes at a
given density and white Gaussian noise ``e``. The noise bank holds five
seeded colored-noise generators used in place of recorded background noises.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import InvalidArgument
from .model import BasisSet, ConvOperator, SparseCoeffs
from .signal import Signal, as_samples


@dataclass(frozen=True)
class SynthSpec:
    n_true: int = 4
    q: int = 32
    p: int = 512
    F: int = 1
    spike_density: float = 0.02
    beta_gen: float = 1.0
    noise_sigma: float = 0.01
    m: int = 20
    seed: int = 0
    c: float = 1.0
    smoothness: float | None = None
    sample_rate_hz: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.spike_density < 1.0:
            raise InvalidArgument("spike_density must lie in (0, 1)")
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be >= 0")
        if min(self.n_true, self.q, self.F, self.m) < 1 or self.q > self.p:
            raise InvalidArgument("need n_true, q, F, m >= 1 and q <= p")
        if not (self.beta_gen > 0 and self.c > 0):
            raise InvalidArgument("beta_gen and c must be positive")


@dataclass
class SynthResult:
    corpus: list
    truth: BasisSet
    coeffs: list


def smooth_bases(rng, n: int, F: int, q: int, c: float, smoothness: float | None = None) -> np.ndarray:
    """Low-pass Gaussian noise under a Hann window, each scaled to ``||a||^2 = c``."""
    width = max(q / 16.0, 0.5) if smoothness is None else smoothness
    raw = gaussian_filter1d(rng.standard_normal((n, F, q + 8 * int(np.ceil(width)))), width,
                            axis=-1, mode="wrap")
    a = raw[..., :q] * np.hanning(q + 2)[1:-1]
    norms = np.sqrt(np.sum(a * a, axis=(1, 2), keepdims=True))
    return a * (np.sqrt(c) / norms)


def sparse_spikes(rng, n: int, T: int, density: float, beta_gen: float) -> np.ndarray:
    """Bernoulli(density) support with Laplacian(scale 1/beta_gen) amplitudes."""
    mask = rng.random((n, T)) < density
    s = np.zeros((n, T))
    s[mask] = rng.laplace(scale=1.0 / beta_gen, size=int(mask.sum()))
    return s


def synth_dataset(spec: SynthSpec) -> SynthResult:
    rng = np.random.default_rng(spec.seed)
    a = smooth_bases(rng, spec.n_true, spec.F, spec.q, spec.c, spec.smoothness)
    op = ConvOperator(a, spec.p)
    corpus = []
    coeffs = []
    for i in range(spec.m):
        s = sparse_spikes(rng, spec.n_true, op.T, spec.spike_density, spec.beta_gen)
        x = op.apply(s) + spec.noise_sigma * rng.standard_normal((spec.F, spec.p))
        corpus.append(Signal(x, spec.sample_rate_hz, f"synth{i}"))
        coeffs.append(SparseCoeffs.from_dense(s))
    return SynthResult(corpus, BasisSet(a, spec.c), coeffs)


# --------------------------------------------------------------------------
# noise
# --------------------------------------------------------------------------


NOISE_KINDS = ("hum", "buzz", "water", "fan", "printer")


def colored_noise(kind: str, length: int, rng) -> np.ndarray:
    """One of five spectrally distinct stationary noises (unit RMS)."""
    f = np.fft.rfftfreq(length)  # cycles per sample, 0 .. 0.5
    spec = rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size)
    if kind == "hum":
        # harmonic comb on a low fundamental (electric shaver)
        shape = sum(np.exp(-0.5 * ((f - k * 0.02) / 0.002) ** 2) for k in range(1, 12)) + 0.02
    elif kind == "buzz":
        # brighter comb with a higher fundamental
        shape = sum(np.exp(-0.5 * ((f - k * 0.045) / 0.004) ** 2) / k for k in range(1, 10)) + 0.02
    elif kind == "water":
        # broadband, tilted towards high frequencies
        shape = 0.1 + f
    elif kind == "fan":
        # brown-ish low-frequency rumble
        shape = 1.0 / (0.01 + f)
    elif kind == "printer":
        # band-limited mid-frequency noise with slow amplitude bursts
        shape = np.exp(-0.5 * ((f - 0.15) / 0.04) ** 2) + 0.01
    else:
        raise InvalidArgument(f"unknown noise kind {kind!r}")
    x = np.fft.irfft(spec * shape, n=length)
    if kind == "printer":
        x *= 0.6 + 0.4 * np.sign(np.sin(2 * np.pi * np.arange(length) / max(8, length // 20)))
    return x / np.sqrt(np.mean(x * x))


def make_noise_bank(length: int, seed: int = 0, sample_rate_hz: float = 1.0,
                    kinds=NOISE_KINDS) -> list[Signal]:
    rng = np.random.default_rng(seed)
    return [Signal(colored_noise(k, length, rng), sample_rate_hz, k) for k in kinds]


def mix_noise(clean, noise, snr_db: float, rng=None) -> Signal:
    """Add a random crop of ``noise`` scaled to the requested SNR.

    ``snr_db = inf`` returns ``clean`` unchanged.
    """
    x = as_samples(clean)
    rate = clean.sample_rate_hz if isinstance(clean, Signal) else 1.0
    cid = clean.id if isinstance(clean, Signal) else ""
    if np.isinf(snr_db) and snr_db > 0:
        return clean if isinstance(clean, Signal) else Signal(x, rate, cid)
    nz = as_samples(noise)
    if nz.shape[0] not in (1, x.shape[0]):
        raise InvalidArgument("noise must have one channel or as many as the clean signal")
    p = x.shape[1]
    if nz.shape[1] < p:
        raise InvalidArgument("noise is shorter than the clean signal")
    rng = np.random.default_rng(rng)
    start = int(rng.integers(0, nz.shape[1] - p + 1))
    crop = np.broadcast_to(nz[:, start:start + p], x.shape)
    e_noise = float(np.sum(crop * crop))
    if e_noise == 0:
        raise InvalidArgument("noise crop has zero energy")
    e_clean = float(np.sum(x * x))
    gamma = np.sqrt(e_clean / (e_noise * 10.0 ** (snr_db / 10.0)))
    return Signal(x + gamma * crop, rate, cid)


def realized_snr_db(clean, noisy) -> float:
    x = as_samples(clean)
    d = as_samples(noisy) - x
    return float(10.0 * np.log10(np.sum(x * x) / np.sum(d * d)))


class NoiseMode(enum.Enum):
    NONE = "NONE"
    SAME = "SAME"
    RANDOM = "RANDOM"
    DIFFERENT = "DIFFERENT"


@dataclass(frozen=True)
class NoiseCondition:
    mode: NoiseMode = NoiseMode.NONE
    snr_db: float = 20.0
    noise_bank: list = field(default_factory=list)

    def __post_init__(self):
        mode = NoiseMode(self.mode)
        object.__setattr__(self, "mode", mode)
        if mode != NoiseMode.NONE and not self.noise_bank:
            raise InvalidArgument(f"{mode.value} needs a non-empty noise bank")
        if mode == NoiseMode.DIFFERENT and len(self.noise_bank) < 2:
            raise InvalidArgument("DIFFERENT needs at least two noise types")


@dataclass
class ConditionAssignment:
    """Noise-bank index used for every train and test example."""

    train: list
    test: list


def assign_noise(cond: NoiseCondition, train_labels, test_labels, seed) -> ConditionAssignment:
    rng = np.random.default_rng(seed)
    k = len(cond.noise_bank)
    ntr, nte = len(train_labels), len(test_labels)
    if cond.mode == NoiseMode.NONE:
        return ConditionAssignment([None] * ntr, [None] * nte)
    if cond.mode == NoiseMode.SAME:
        which = int(rng.integers(k))
        return ConditionAssignment([which] * ntr, [which] * nte)
    if cond.mode == NoiseMode.RANDOM:
        return ConditionAssignment([int(v) for v in rng.integers(k, size=ntr)],
                                   [int(v) for v in rng.integers(k, size=nte)])
    classes = sorted(set(train_labels) | set(test_labels), key=str)
    tr_type = {}
    te_type = {}
    for y in classes:
        a = int(rng.integers(k))
        tr_type[y] = a
        te_type[y] = (a + 1 + int(rng.integers(k - 1))) % k
    return ConditionAssignment([tr_type[y] for y in train_labels], [te_type[y] for y in test_labels])


def apply_condition(train, test, cond: NoiseCondition, seed, train_labels=None, test_labels=None):
    """Noise the train and test sets per ``cond``; returns ``(train', test', assignment)``.

    DIFFERENT needs the labels: every class draws one noise type for its
    training examples and a different one for its test examples.
    """
    train = list(train)
    test = list(test)
    if train_labels is None:
        if cond.mode == NoiseMode.DIFFERENT:
            raise InvalidArgument("DIFFERENT needs class labels")
        train_labels = [0] * len(train)
    if test_labels is None:
        if cond.mode == NoiseMode.DIFFERENT:
            raise InvalidArgument("DIFFERENT needs class labels")
        test_labels = [0] * len(test)
    assign_seq, crop_seq = np.random.SeedSequence(seed).spawn(2)
    plan = assign_noise(cond, train_labels, test_labels, assign_seq)
    if cond.mode == NoiseMode.NONE:
        return train, test, plan
    crop_rng = np.random.default_rng(crop_seq)

    def mix(xs, kinds):
        return [mix_noise(x, cond.noise_bank[k], cond.snr_db, crop_rng) for x, k in zip(xs, kinds)]

    return mix(train, plan.train), mix(test, plan.test), plan
