"""Reference feature extraction: 256 normalized histogram bins + 22 statistics.

Everything here is computed directly from the byte values (two passes where
convenient). The streaming engine in :mod:`bitscreen.engine` must reproduce
these numbers from its single-pass accumulators, so every scalar slot is chosen
to be derivable from the histogram, the power sums, the transition counter and
the run registers.

Moment slots are evaluated from exact integer central sums and rounded once,
which makes them bit-reproducible from either route.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bitstream import Segment

N_BINS = 256
STAT_NAMES = (
    "mean",
    "variance",
    "std",
    "skewness",
    "kurtosis",
    "entropy",
    "min_byte",
    "max_byte",
    "range",
    "transition_rate",
    "zero_frac",
    "ff_frac",
    "printable_frac",
    "unique_frac",
    "mean_run_len",
    "max_run_frac",
    "run_count_frac",
    "dispersion",
    "mode_byte",
    "mode_freq",
    "hi_nibble_entropy",
    "lo_nibble_entropy",
)
N_STATS = len(STAT_NAMES)
N_FEATURES = N_BINS + N_STATS
FEATURE_NAMES = tuple(f"hist_{j:02x}" for j in range(N_BINS)) + STAT_NAMES
STAT = {name: N_BINS + i for i, name in enumerate(STAT_NAMES)}

ENTROPY_SLOTS = (STAT["entropy"], STAT["hi_nibble_entropy"], STAT["lo_nibble_entropy"])
EXACT_SLOTS = tuple(i for i in range(N_FEATURES) if i not in ENTROPY_SLOTS)

PRINTABLE = np.zeros(N_BINS, dtype=bool)
PRINTABLE[0x20:0x7F] = True

FV_MAGIC = b"BLFV0001"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    payload_len: int

    def __post_init__(self):
        if self.values.shape != (N_FEATURES,):
            raise FeatureError(f"expected {N_FEATURES} values, got shape {self.values.shape}")

    @property
    def hist(self) -> np.ndarray:
        return self.values[:N_BINS]

    @property
    def stats(self) -> np.ndarray:
        return self.values[N_BINS:]

    def __getitem__(self, name: str) -> float:
        return float(self.values[STAT[name]])

    def to_bytes(self) -> bytes:
        return (
            FV_MAGIC
            + self.values.astype("<f8").tobytes()
            + struct.pack("<Q", self.payload_len)
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FeatureVector":
        expected = len(FV_MAGIC) + 8 * N_FEATURES + 8
        if len(blob) != expected or blob[:8] != FV_MAGIC:
            raise FeatureError("not a feature-vector record")
        values = np.frombuffer(blob, dtype="<f8", count=N_FEATURES, offset=8).astype(np.float64)
        (payload_len,) = struct.unpack_from("<Q", blob, 8 + 8 * N_FEATURES)
        return cls(values, payload_len)

    def to_text(self) -> str:
        lines = [f"{name},{float(v)!r}" for name, v in zip(FEATURE_NAMES, self.values)]
        lines.append(f"payload_len,{self.payload_len}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FeatureVector":
        rows = dict(line.split(",", 1) for line in text.splitlines() if line)
        values = np.array([float(rows[name]) for name in FEATURE_NAMES])
        return cls(values, int(rows["payload_len"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "FeatureVector":
        return cls.from_bytes(Path(path).read_bytes())


def _as_array(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data.astype(np.uint8, copy=False)
    return np.frombuffer(bytes(data), dtype=np.uint8)


def byte_counts(data) -> np.ndarray:
    return np.bincount(_as_array(data), minlength=N_BINS).astype(np.int64)


def histogram(data) -> np.ndarray:
    b = _as_array(data)
    if b.size == 0:
        raise FeatureError("histogram of empty input")
    return byte_counts(b) / b.size


def shannon_entropy(hist) -> float:
    p = np.asarray(hist, dtype=np.float64)
    if np.any(p < 0):
        raise FeatureError("negative histogram bin")
    p = p[p > 0]
    return float(max(0.0, -np.sum(p * np.log2(p))))


def nibble_histograms(hist) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(hist).reshape(16, 16)
    return h.sum(axis=1), h.sum(axis=0)


def finish_moments(n: int, s1: int, t2: int, t3: int, t4: int) -> tuple[float, float, float, float]:
    """Population mean/variance/skew/excess-kurtosis from integer central sums.

    ``t_k`` is ``sum((n*b - s1)**k)``, i.e. the k-th central sum scaled by n**k.
    Each result is a single correctly rounded int/int division (plus one sqrt).
    """
    mean = s1 / n
    if t2 == 0:
        return mean, 0.0, 0.0, 0.0
    var = t2 / n**3
    skew_sq = (t3 * t3 * n) / t2**3
    skew = math.copysign(math.sqrt(skew_sq), t3) if t3 else 0.0
    kurt = (t4 * n - 3 * t2 * t2) / (t2 * t2)
    return mean, var, skew, kurt


def central_sums(counts: np.ndarray) -> tuple[int, int, int, int, int]:
    """(n, s1, t2, t3, t4) from a byte histogram, in exact integer arithmetic."""
    n = int(counts.sum())
    values = np.nonzero(counts)[0]
    s1 = sum(int(counts[j]) * int(j) for j in values)
    t2 = t3 = t4 = 0
    for j in values:
        c = int(counts[j])
        d = n * int(j) - s1
        d2 = d * d
        t2 += c * d2
        t3 += c * d2 * d
        t4 += c * d2 * d2
    return n, s1, t2, t3, t4


def moments(data) -> tuple[float, float, float, float]:
    """(mean, variance, skewness, excess kurtosis), population definitions."""
    b = _as_array(data)
    if b.size == 0:
        raise FeatureError("moments of empty input")
    return finish_moments(*central_sums(byte_counts(b)))


def transition_count(data) -> int:
    b = _as_array(data)
    return int(np.count_nonzero(b[1:] != b[:-1]))


def transition_rate(data) -> float:
    b = _as_array(data)
    if b.size <= 1:
        return 0.0
    return transition_count(b) / (b.size - 1)


def run_stats(data) -> tuple[int, float, int]:
    """(run_count, mean_run_len, max_run_len) over maximal runs of equal bytes."""
    b = _as_array(data)
    if b.size == 0:
        raise FeatureError("run_stats of empty input")
    starts = np.flatnonzero(np.concatenate(([True], b[1:] != b[:-1])))
    lengths = np.diff(np.append(starts, b.size))
    return int(starts.size), b.size / starts.size, int(lengths.max())


def stats_from_counts(
    counts: np.ndarray,
    moments_: tuple[float, float, float, float],
    entropies: tuple[float, float, float],
    trans: int,
    runs: int,
    max_run: int,
    s1: int,
) -> np.ndarray:
    """Assemble the 22 statistic slots from the reference quantities."""
    n = int(counts.sum())
    mean, var, skew, kurt = moments_
    present = np.flatnonzero(counts)
    lo, hi = int(present[0]), int(present[-1])
    mode = int(np.argmax(counts))
    out = np.empty(N_STATS)
    out[:] = (
        mean,
        var,
        math.sqrt(var),
        skew,
        kurt,
        entropies[0],
        lo,
        hi,
        hi - lo,
        trans / (n - 1) if n > 1 else 0.0,
        int(counts[0]) / n,
        int(counts[0xFF]) / n,
        int(counts[PRINTABLE].sum()) / n,
        present.size / N_BINS,
        n / runs,
        max_run / n,
        runs / n,
        0.0 if s1 == 0 else var / mean,
        mode / 255,
        int(counts[mode]) / n,
        entropies[1],
        entropies[2],
    )
    return out


def features_of(data) -> FeatureVector:
    b = _as_array(data)
    if b.size == 0:
        raise FeatureError("payload_len = 0")
    counts = byte_counts(b)
    hist = counts / b.size
    hi, lo = nibble_histograms(hist)
    ent = (shannon_entropy(hist), shannon_entropy(hi), shannon_entropy(lo))
    n, s1, t2, t3, t4 = central_sums(counts)
    runs, _, max_run = run_stats(b)
    stats = stats_from_counts(
        counts, finish_moments(n, s1, t2, t3, t4), ent, transition_count(b), runs, max_run, s1
    )
    return FeatureVector(np.concatenate([hist, stats]), int(b.size))


def feature_vector(seg: Segment) -> FeatureVector:
    """Features over the payload bytes of a segment; padding is excluded."""
    if seg.payload_len == 0:
        raise FeatureError("payload_len = 0")
    return features_of(seg.payload)


# --- naive software extractor -------------------------------------------------
# Every statistic is its own scalar function over the raw bytes, so each one
# makes its own pass(es). Used as the software baseline in benchmarks and as a
# float cross-check in tests.


def naive_counts(data: bytes) -> list[int]:
    counts = [0] * N_BINS
    for b in data:
        counts[b] += 1
    return counts


def naive_mean(data: bytes) -> float:
    total = 0
    for b in data:
        total += b
    return total / len(data)


def naive_variance(data: bytes) -> float:
    mu = naive_mean(data)
    acc = 0.0
    for b in data:
        d = b - mu
        acc += d * d
    return acc / len(data)


def naive_std(data: bytes) -> float:
    return math.sqrt(naive_variance(data))


def naive_skewness(data: bytes) -> float:
    mu = naive_mean(data)
    var = naive_variance(data)
    if var == 0:
        return 0.0
    acc = 0.0
    for b in data:
        d = b - mu
        acc += d * d * d
    return acc / len(data) / var**1.5


def naive_kurtosis(data: bytes) -> float:
    mu = naive_mean(data)
    var = naive_variance(data)
    if var == 0:
        return 0.0
    acc = 0.0
    for b in data:
        d = b - mu
        d *= d
        acc += d * d
    return acc / len(data) / (var * var) - 3.0


def _entropy_of_counts(counts, n) -> float:
    h = 0.0
    for c in counts:
        if c:
            p = c / n
            h -= p * math.log2(p)
    return h


def naive_entropy(data: bytes) -> float:
    return _entropy_of_counts(naive_counts(data), len(data))


def naive_min(data: bytes) -> int:
    lo = 255
    for b in data:
        if b < lo:
            lo = b
    return lo


def naive_max(data: bytes) -> int:
    hi = 0
    for b in data:
        if b > hi:
            hi = b
    return hi


def naive_range(data: bytes) -> int:
    return naive_max(data) - naive_min(data)


def naive_transition_rate(data: bytes) -> float:
    if len(data) < 2:
        return 0.0
    n = 0
    prev = data[0]
    for b in data:
        if b != prev:
            n += 1
        prev = b
    return n / (len(data) - 1)


def _count_where(data: bytes, pred) -> float:
    n = 0
    for b in data:
        if pred(b):
            n += 1
    return n / len(data)


def naive_zero_frac(data: bytes) -> float:
    return _count_where(data, lambda b: b == 0)


def naive_ff_frac(data: bytes) -> float:
    return _count_where(data, lambda b: b == 0xFF)


def naive_printable_frac(data: bytes) -> float:
    return _count_where(data, lambda b: 0x20 <= b <= 0x7E)


def naive_unique_frac(data: bytes) -> float:
    return sum(1 for c in naive_counts(data) if c) / N_BINS


def naive_runs(data: bytes) -> list[int]:
    runs = []
    cur = 0
    prev = None
    for b in data:
        if b == prev:
            cur += 1
        else:
            if cur:
                runs.append(cur)
            cur = 1
        prev = b
    runs.append(cur)
    return runs


def naive_mean_run_len(data: bytes) -> float:
    return len(data) / len(naive_runs(data))


def naive_max_run_frac(data: bytes) -> float:
    return max(naive_runs(data)) / len(data)


def naive_run_count_frac(data: bytes) -> float:
    return len(naive_runs(data)) / len(data)


def naive_dispersion(data: bytes) -> float:
    mu = naive_mean(data)
    return naive_variance(data) / mu if mu > 0 else 0.0


def naive_mode(data: bytes) -> int:
    counts = naive_counts(data)
    mode = 0
    for j in range(N_BINS):
        if counts[j] > counts[mode]:
            mode = j
    return mode


def naive_mode_byte(data: bytes) -> float:
    return naive_mode(data) / 255


def naive_mode_freq(data: bytes) -> float:
    return naive_counts(data)[naive_mode(data)] / len(data)


def naive_hi_nibble_entropy(data: bytes) -> float:
    counts = [0] * 16
    for b in data:
        counts[b >> 4] += 1
    return _entropy_of_counts(counts, len(data))


def naive_lo_nibble_entropy(data: bytes) -> float:
    counts = [0] * 16
    for b in data:
        counts[b & 15] += 1
    return _entropy_of_counts(counts, len(data))


NAIVE_STATS = (
    naive_mean,
    naive_variance,
    naive_std,
    naive_skewness,
    naive_kurtosis,
    naive_entropy,
    naive_min,
    naive_max,
    naive_range,
    naive_transition_rate,
    naive_zero_frac,
    naive_ff_frac,
    naive_printable_frac,
    naive_unique_frac,
    naive_mean_run_len,
    naive_max_run_frac,
    naive_run_count_frac,
    naive_dispersion,
    naive_mode_byte,
    naive_mode_freq,
    naive_hi_nibble_entropy,
    naive_lo_nibble_entropy,
)
assert len(NAIVE_STATS) == N_STATS


def naive_feature_vector(data: bytes) -> FeatureVector:
    data = bytes(data)
    n = len(data)
    if n == 0:
        raise FeatureError("payload_len = 0")
    hist = [c / n for c in naive_counts(data)]
    stats = [float(f(data)) for f in NAIVE_STATS]
    return FeatureVector(np.array(hist + stats, dtype=np.float64), n)
