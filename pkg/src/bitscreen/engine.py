"""Cycle-level model of the streaming byte-statistics engine.

One byte enters per clock. The histogram lives in a BRAM with one cycle of
read latency, so a byte equal to its predecessor reads a stale count; a bypass
register forwards the in-flight write. Power sums, the transition comparator
and the run registers update in the same cycle. After the last byte, a
256-cycle reduction scan walks the histogram (entropy via an n*log2(n) table,
min/max/mode and the class fractions), then 278 cycles emit the feature words.

:func:`step` is the literal per-cycle model. :func:`stream` is a vectorized
path that must leave the state identical to the equivalent sequence of steps;
tests hold it to that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .bitstream import Segment
from .features import N_BINS, N_FEATURES, N_STATS, FeatureVector, finish_moments

INIT_CYCLES = N_BINS
REDUCE_CYCLES = N_BINS
EMIT_CYCLES = N_FEATURES
COUNTER_MAX = (1 << 32) - 1

LUT_BITS = 16
LUT_SIZE = 1 << LUT_BITS
FRAC_BITS = 24
ONE = 1 << FRAC_BITS
# log2(e) in the same fixed-point format, used by the wide-count fallback
LOG2E_FX = round(ONE / math.log(2))

PRINTABLE_LO, PRINTABLE_HI = 0x20, 0x7E


class EngineError(RuntimeError):
    pass


class LutRangeError(EngineError):
    pass


@dataclass(frozen=True)
class EntropyLut:
    """``table[n] = round(n * log2(n) * 2**24)`` for n in [0, 65535].

    The fractional part is 24 bits; the integer part needs 20 bits for the
    largest entry, so each word is 44 bits wide.
    """

    table: np.ndarray
    wide_counts: bool = True

    @classmethod
    def build(cls, wide_counts: bool = True) -> "EntropyLut":
        n = np.arange(LUT_SIZE, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(n > 0, n * np.log2(np.maximum(n, 1.0)), 0.0)
        table = np.rint(vals * ONE).astype(np.int64)
        table.setflags(write=False)
        return cls(table, wide_counts)

    def nlogn(self, n: int) -> int:
        """Fixed-point n*log2(n), falling back to a shifted lookup above the table."""
        if n < LUT_SIZE:
            return int(self.table[n])
        if not self.wide_counts:
            raise LutRangeError(f"count {n} exceeds LUT range")
        # n = top * 2**shift + rest with top < 2**16:
        # n*log2(n) ~= n*(log2(top) + shift) + n*rest/(top*2**shift)*log2(e)
        shift = n.bit_length() - LUT_BITS
        top = n >> shift
        rest = n - (top << shift)
        val = (n * int(self.table[top])) // top + n * shift * ONE
        if rest:
            val += (n * rest * LOG2E_FX) // (top << shift)
        return val


_DEFAULT_LUT: EntropyLut | None = None


def default_lut() -> EntropyLut:
    global _DEFAULT_LUT
    if _DEFAULT_LUT is None:
        _DEFAULT_LUT = EntropyLut.build()
    return _DEFAULT_LUT


@dataclass
class EngineState:
    mem: list[int] = field(default_factory=lambda: [0] * N_BINS)
    s1: int = 0
    s2: int = 0
    s3: int = 0
    s4: int = 0
    trans_count: int = 0
    prev_byte: int | None = None
    cur_run: int = 0
    max_run: int = 0
    run_count: int = 0
    bytes_seen: int = 0
    cycle: int = 0
    bypass_addr: int | None = None
    bypass_count: int = 0
    forwards: int = 0
    forwarding: bool = True

    @property
    def hist_counts(self) -> list[int]:
        """Architectural histogram: BRAM contents with the in-flight write applied."""
        counts = list(self.mem)
        if self.bypass_addr is not None:
            counts[self.bypass_addr] = self.bypass_count
        return counts


def reset(state: EngineState | None = None) -> EngineState:
    """Fresh state; the 256-cycle BRAM clear is charged here."""
    forwarding = True if state is None else state.forwarding
    return EngineState(cycle=INIT_CYCLES, forwarding=forwarding)


def step(state: EngineState, byte: int, trace: TextIO | None = None) -> EngineState:
    """Advance one clock with ``byte`` on the input. Mutates and returns ``state``."""
    hazard = state.bypass_addr == byte
    if hazard and state.forwarding:
        count = state.bypass_count
        state.forwards += 1
    else:
        count = state.mem[byte]
    if count >= COUNTER_MAX:
        raise EngineError("counter overflow")
    if state.bypass_addr is not None:
        state.mem[state.bypass_addr] = state.bypass_count
    state.bypass_addr = byte
    state.bypass_count = count + 1

    sq = byte * byte
    state.s1 += byte
    state.s2 += sq
    state.s3 += sq * byte
    state.s4 += sq * sq

    if state.prev_byte is None:
        state.run_count = 1
        state.cur_run = 1
    elif byte != state.prev_byte:
        state.trans_count += 1
        state.run_count += 1
        state.cur_run = 1
    else:
        state.cur_run += 1
    if state.cur_run > state.max_run:
        state.max_run = state.cur_run
    state.prev_byte = byte
    state.bytes_seen += 1
    state.cycle += 1

    if trace is not None:
        trace.write(
            f"{state.cycle} {byte:02x} {int(hazard)} "
            f"s1={state.s1} s2={state.s2} trans={state.trans_count} "
            f"run={state.cur_run} runs={state.run_count}\n"
        )
    return state


def run_cycles(state: EngineState, data, trace: TextIO | None = None) -> EngineState:
    for b in bytes(data):
        step(state, b, trace)
    return state


def _power_sums(b: np.ndarray, chunk: int = 1 << 20) -> tuple[int, int, int, int]:
    sums = [0, 0, 0, 0]
    for lo in range(0, b.size, chunk):
        x = b[lo : lo + chunk].astype(np.int64)
        x2 = x * x
        sums[0] += int(x.sum())
        sums[1] += int(x2.sum())
        sums[2] += int((x2 * x).sum())
        sums[3] += int((x2 * x2).sum())
    return sums[0], sums[1], sums[2], sums[3]


def stream(state: EngineState, data) -> EngineState:
    """Feed a whole buffer at once. Same end state as calling :func:`step` per byte."""
    if isinstance(data, np.ndarray):
        b = data.astype(np.uint8, copy=False)
    else:
        b = np.frombuffer(bytes(data), dtype=np.uint8)
    n = int(b.size)
    if n == 0:
        return state
    if not state.forwarding:
        # lost-update behaviour is inherently sequential
        return run_cycles(state, b.tobytes())

    counts = state.hist_counts
    added = np.bincount(b, minlength=N_BINS)
    for j in np.flatnonzero(added):
        counts[j] += int(added[j])
    if max(counts) > COUNTER_MAX:
        raise EngineError("counter overflow")
    last = int(b[-1])
    state.mem = list(counts)
    state.mem[last] = counts[last] - 1
    state.bypass_addr = last
    state.bypass_count = counts[last]

    s1, s2, s3, s4 = _power_sums(b)
    state.s1 += s1
    state.s2 += s2
    state.s3 += s3
    state.s4 += s4

    change = b[1:] != b[:-1]
    starts = np.flatnonzero(np.concatenate(([True], change)))
    lengths = np.diff(np.append(starts, n))
    internal_changes = int(starts.size) - 1
    prev = state.prev_byte
    joins = prev is not None and int(b[0]) == prev
    state.forwards += (n - 1 - internal_changes) + int(joins)
    if prev is not None and not joins:
        state.trans_count += 1
    state.trans_count += internal_changes
    if joins:
        lengths[0] += state.cur_run
    state.run_count += int(starts.size) - int(joins)
    state.max_run = max(state.max_run, int(lengths.max()))
    state.cur_run = int(lengths[-1])
    state.prev_byte = last
    state.bytes_seen += n
    state.cycle += n
    return state


@dataclass(frozen=True)
class EngineOutput:
    """Everything latched at the end of the reduction scan, in integer form."""

    counts: tuple[int, ...]
    n: int
    s1: int
    s2: int
    s3: int
    s4: int
    trans_count: int
    run_count: int
    max_run: int
    lo: int
    hi: int
    mode: int
    mode_count: int
    unique: int
    zeros: int
    ffs: int
    printable: int
    # entropy numerators: H = num / (n * 2**24), for full byte, high nibble, low nibble
    entropy_num: tuple[int, int, int]
    cycles_total: int

    def central_sums(self) -> tuple[int, int, int]:
        n, s1, s2, s3, s4 = self.n, self.s1, self.s2, self.s3, self.s4
        t2 = n * n * s2 - n * s1 * s1
        t3 = n**3 * s3 - 3 * n * n * s1 * s2 + 2 * n * s1**3
        t4 = n**4 * s4 - 4 * n**3 * s1 * s3 + 6 * n * n * s1 * s1 * s2 - 3 * n * s1**4
        return t2, t3, t4

    def entropies(self) -> tuple[float, float, float]:
        den = self.n * ONE
        return tuple(max(0.0, num / den) for num in self.entropy_num)

    def to_feature_vector(self) -> FeatureVector:
        n = self.n
        mean, var, skew, kurt = finish_moments(n, self.s1, *self.central_sums())
        h, h_hi, h_lo = self.entropies()
        stats = [
            mean,
            var,
            math.sqrt(var),
            skew,
            kurt,
            h,
            self.lo,
            self.hi,
            self.hi - self.lo,
            self.trans_count / (n - 1) if n > 1 else 0.0,
            self.zeros / n,
            self.ffs / n,
            self.printable / n,
            self.unique / N_BINS,
            n / self.run_count,
            self.max_run / n,
            self.run_count / n,
            0.0 if self.s1 == 0 else var / mean,
            self.mode / 255,
            self.mode_count / n,
            h_hi,
            h_lo,
        ]
        assert len(stats) == N_STATS
        hist = np.array(self.counts, dtype=np.int64) / n
        return FeatureVector(np.concatenate([hist, np.array(stats)]), n)

    def fifo_words(self) -> list[int]:
        """Emission format: raw counts for the 256 bins and the integer-valued
        slots, signed fixed point with 24 fractional bits for the rest."""
        fv = self.to_feature_vector().values
        words = list(self.counts)
        integer_slots = {N_BINS + 6, N_BINS + 7, N_BINS + 8}
        for i in range(N_BINS, N_FEATURES):
            words.append(int(fv[i]) if i in integer_slots else int(round(fv[i] * ONE)))
        return words


def fifo_to_values(words: list[int], n: int) -> np.ndarray:
    out = np.empty(N_FEATURES)
    out[:N_BINS] = np.array(words[:N_BINS], dtype=np.float64) / n
    for i in range(N_BINS, N_FEATURES):
        out[i] = words[i] if i in (N_BINS + 6, N_BINS + 7, N_BINS + 8) else words[i] / ONE
    return out


def finalize(state: EngineState, lut: EntropyLut | None = None) -> EngineOutput:
    """Reduction scan and emission. Does not modify ``state``."""
    lut = lut or default_lut()
    if state.bytes_seen == 0:
        raise EngineError("no bytes streamed")
    counts = state.hist_counts
    n = state.bytes_seen

    lo = hi = None
    mode = mode_count = 0
    unique = printable = 0
    acc = 0
    nib_hi = [0] * 16
    nib_lo = [0] * 16
    for addr in range(N_BINS):
        c = counts[addr]
        if c:
            if lo is None:
                lo = addr
            hi = addr
            unique += 1
            acc += lut.nlogn(c)
        if c > mode_count:
            mode, mode_count = addr, c
        if PRINTABLE_LO <= addr <= PRINTABLE_HI:
            printable += c
        nib_hi[addr >> 4] += c
        nib_lo[addr & 15] += c

    full = lut.nlogn(n)
    ent = (
        full - acc,
        full - sum(lut.nlogn(c) for c in nib_hi if c),
        full - sum(lut.nlogn(c) for c in nib_lo if c),
    )
    return EngineOutput(
        counts=tuple(counts),
        n=n,
        s1=state.s1,
        s2=state.s2,
        s3=state.s3,
        s4=state.s4,
        trans_count=state.trans_count,
        run_count=state.run_count,
        max_run=state.max_run,
        lo=lo,
        hi=hi,
        mode=mode,
        mode_count=mode_count,
        unique=unique,
        zeros=counts[0],
        ffs=counts[0xFF],
        printable=printable,
        entropy_num=ent,
        cycles_total=state.cycle + REDUCE_CYCLES + EMIT_CYCLES,
    )


def engine_features(data, lut: EntropyLut | None = None) -> FeatureVector:
    if isinstance(data, Segment):
        data = data.payload
    return finalize(stream(reset(), data), lut).to_feature_vector()


@dataclass(frozen=True)
class DmaModel:
    clock_hz: int = 100_000_000
    bytes_per_cycle: int = 1
    burst_bytes: int = 4096
    burst_setup_cycles: int = 780
    fixed_overhead_cycles: int = INIT_CYCLES + REDUCE_CYCLES + EMIT_CYCLES

    def __post_init__(self):
        for name in ("clock_hz", "bytes_per_cycle", "burst_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.burst_setup_cycles < 0 or self.fixed_overhead_cycles < 0:
            raise ValueError("overhead cycles must be non-negative")

    @classmethod
    def ideal(cls, **kw) -> "DmaModel":
        return cls(burst_setup_cycles=0, fixed_overhead_cycles=0, **kw)

    def cycles(self, length: int) -> int:
        if length < 1:
            raise ValueError("length must be >= 1")
        bursts = -(-length // self.burst_bytes)
        return (
            -(-length // self.bytes_per_cycle)
            + self.fixed_overhead_cycles
            + bursts * self.burst_setup_cycles
        )

    def latency_s(self, length: int) -> float:
        return self.cycles(length) / self.clock_hz

    def throughput_mbs(self, length: int) -> float:
        return length * self.clock_hz / self.cycles(length) / 1e6


@dataclass(frozen=True)
class SimResult:
    features: FeatureVector
    output: EngineOutput
    cycles_total: int
    throughput_mbs: float
    latency_s: float


def simulate(data, dma: DmaModel | None = None, lut: EntropyLut | None = None) -> SimResult:
    dma = dma or DmaModel()
    if isinstance(data, Segment):
        data = data.payload
    n = len(data)
    if n == 0:
        raise EngineError("no bytes streamed")
    out = finalize(stream(reset(), data), lut)
    cycles = dma.cycles(n)
    latency = cycles / dma.clock_hz
    return SimResult(
        features=out.to_feature_vector(),
        output=out,
        cycles_total=cycles,
        throughput_mbs=n / latency / 1e6,
        latency_s=latency,
    )


def speedup(sw_throughput: float, hw_throughput: float) -> float:
    if sw_throughput <= 0 or hw_throughput <= 0:
        raise ValueError("throughputs must be positive")
    return hw_throughput / sw_throughput
