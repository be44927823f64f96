"""Deterministic synthetic bitstream corpus: seven design families, benign and
Trojan-inserted variants.

Each family has a fixed byte profile (zero-heavy, with a family-specific
support set and a small uniform background) and a few recurring motifs. A
benign file draws its payload from a per-seed Dirichlet perturbation of the
profile, which plays the role of place-and-route diversification. Trojan
variants overwrite one contiguous region inside the analysis window.
"""

from __future__ import annotations

import csv
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bitstream import SEGMENT_LEN, XILINX_SYNC, RawBitstream, locate_sync

FAMILIES = ("CRYPTO", "COMMS", "MCU_CPU", "BUS_DISPLAY", "ITC99", "ISCAS89", "ISCAS85")
TROJAN_KINDS = ("HIGH_ENTROPY", "TRIGGER", "DENSITY")
BENIGN, TROJAN = "benign", "trojan"

PROFILE_SEED = 0xB175
ZERO_MASS = (0.55, 0.62, 0.70, 0.48, 0.75, 0.66, 0.58)
BACKGROUND_MASS = 0.002
JITTER_CONCENTRATION = 1e5
MOTIF_DENSITY = 0.005
DEFAULT_COUNTS = tuple((f, 198) for f in FAMILIES[:-1]) + ((FAMILIES[-1], 195),)
MANIFEST_FIELDS = ("path", "family", "label", "seed", "length")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class FamilyProfile:
    name: str
    base_histogram: np.ndarray
    motifs: tuple[bytes, ...]
    size_range: tuple[int, int]

    def __post_init__(self):
        if abs(self.base_histogram.sum() - 1.0) > 1e-12:
            raise CorpusError("base histogram must sum to 1")
        lo, hi = self.size_range
        if not 0 < lo <= hi:
            raise CorpusError("bad size range")


def make_profile(name: str) -> FamilyProfile:
    index = FAMILIES.index(name)
    rng = np.random.default_rng([PROFILE_SEED, index])
    support = rng.choice(np.arange(1, 256), size=20 + 4 * index, replace=False)
    weights = 1.0 / np.arange(1, support.size + 1) ** 1.1
    weights = rng.permutation(weights)
    hist = np.full(256, BACKGROUND_MASS / 256)
    hist[0] += ZERO_MASS[index]
    hist[support] += weights / weights.sum() * (1.0 - ZERO_MASS[index] - BACKGROUND_MASS)
    hist /= hist.sum()
    motifs = tuple(
        bytes(rng.choice(support, size=int(rng.integers(6, 17))).astype(np.uint8))
        for _ in range(4)
    )
    lo = 12_288 + 2048 * index
    return FamilyProfile(name, hist, motifs, (lo, lo + 24_576))


PROFILES = {name: make_profile(name) for name in FAMILIES}


def bit_header(design: str, payload_len: int) -> bytes:
    """Minimal .bit-style preamble: key/length fields, dummy words, bus-width
    detection pattern. Everything up to the sync word is ignored downstream."""

    def field_(key: str, text: str) -> bytes:
        raw = text.encode() + b"\x00"
        return key.encode() + struct.pack(">H", len(raw)) + raw

    body = XILINX_SYNC + bytes(payload_len)
    prelude = b"\xff" * 32 + bytes.fromhex("000000bb11220044ffffffffffffffff")
    return (
        bytes.fromhex("00090ff00ff00ff00ff000000001")
        + field_("a", f"{design};UserID=0XFFFFFFFF")
        + field_("b", "7z020clg400")
        + field_("c", "2024/01/01")
        + field_("d", "12:00:00")
        + b"e"
        + struct.pack(">I", len(prelude) + len(body))
        + prelude
    )


def gen_benign(profile: FamilyProfile, seed: int, length: int) -> RawBitstream:
    """Header + sync word + ``length`` payload bytes."""
    lo, hi = profile.size_range
    if not lo <= length <= hi:
        raise CorpusError(f"length {length} outside {profile.size_range}")
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(JITTER_CONCENTRATION * profile.base_histogram)
    payload = rng.choice(256, size=length, p=p).astype(np.uint8)
    motif_len = np.mean([len(m) for m in profile.motifs])
    for _ in range(int(MOTIF_DENSITY * length / motif_len)):
        motif = profile.motifs[int(rng.integers(len(profile.motifs)))]
        at = int(rng.integers(0, length - len(motif) + 1))
        payload[at : at + len(motif)] = np.frombuffer(motif, dtype=np.uint8)
    header = bit_header(f"{profile.name.lower()}_{seed:08x}", length)
    return RawBitstream(header + XILINX_SYNC + payload.tobytes(), f"{profile.name}:{seed}")


def trojan_block(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "HIGH_ENTROPY":
        return rng.integers(0, 256, size, dtype=np.uint8)
    if kind == "TRIGGER":
        pattern = rng.integers(1, 256, 4, dtype=np.uint8)
        return np.resize(pattern, size)
    if kind == "DENSITY":
        block = np.full(size, rng.choice([0xFF, 0xF0, 0x0F, 0x3C]), dtype=np.uint8)
        flips = rng.random(size) < 0.02
        block[flips] = rng.integers(0, 256, int(flips.sum()), dtype=np.uint8)
        return block
    raise CorpusError(f"unknown trojan kind {kind!r}")


def inject_trojan(
    benign: RawBitstream,
    kind: str,
    seed: int,
    frac_range: tuple[float, float] = (0.005, 0.02),
    window: int = SEGMENT_LEN,
) -> RawBitstream:
    """Overwrite one contiguous region (a fraction of the payload) that starts
    inside the first ``window`` payload bytes."""
    data = bytearray(benign.data)
    off = locate_sync(benign) or 0
    payload_len = len(data) - off
    if payload_len < SEGMENT_LEN:
        raise CorpusError("payload too short for injection")
    rng = np.random.default_rng([seed, 0x7A0])
    size = max(16, int(round(rng.uniform(*frac_range) * payload_len)))
    span = min(window, payload_len)
    size = min(size, span)
    start = off + int(rng.integers(0, span - size + 1))
    data[start : start + size] = trojan_block(kind, size, rng).tobytes()
    return RawBitstream(bytes(data), benign.source_id + f":{kind}")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    family: str
    label: str
    seed: int
    length: int
    kind: str = ""


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.entries)

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_FIELDS)
            for e in self.entries:
                w.writerow([e.path, e.family, e.label, e.seed, e.length])

    @classmethod
    def read(cls, path: str | Path) -> "CorpusManifest":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        entries = [
            ManifestEntry(r["path"], r["family"], r["label"], int(r["seed"]), int(r["length"]))
            for r in rows
        ]
        return cls(entries, path.parent)

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path


@dataclass(frozen=True)
class CorpusConfig:
    family_counts: tuple[tuple[str, int], ...] = DEFAULT_COUNTS
    trojan_fraction: float = 0.5
    frac_range: tuple[float, float] = (0.005, 0.02)
    window: int = SEGMENT_LEN
    jobs: int = 1


def entry_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def plan_corpus(config: CorpusConfig, master_seed: int) -> list[ManifestEntry]:
    entries = []
    index = 0
    for family, count in config.family_counts:
        profile = PROFILES[family]
        for i in range(count):
            seed = entry_seed(master_seed, index)
            lo, hi = profile.size_range
            payload_len = int(np.random.default_rng([seed, 1]).integers(lo, hi + 1))
            trojan = int((i + 1) * config.trojan_fraction) > int(i * config.trojan_fraction)
            kind = TROJAN_KINDS[(i // 2) % len(TROJAN_KINDS)] if trojan else ""
            label = TROJAN if trojan else BENIGN
            path = f"{family}/{family.lower()}_{i:04d}_{label}.bit"
            length = len(bit_header("", 0)) + len(f"{family.lower()}_{seed:08x}") + 4 + payload_len
            entries.append(ManifestEntry(path, family, label, seed, length, kind))
            index += 1
    return entries


def render_entry(entry: ManifestEntry, config: CorpusConfig) -> RawBitstream:
    profile = PROFILES[entry.family]
    lo, hi = profile.size_range
    payload_len = int(np.random.default_rng([entry.seed, 1]).integers(lo, hi + 1))
    raw = gen_benign(profile, entry.seed, payload_len)
    if entry.label == TROJAN:
        raw = inject_trojan(raw, entry.kind, entry.seed, config.frac_range, config.window)
    return raw


def build_corpus(out_dir: str | Path, config: CorpusConfig = CorpusConfig(), master_seed: int = 0) -> CorpusManifest:
    """Write every file plus ``manifest.csv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    entries = plan_corpus(config, master_seed)
    seen = set()
    for e in entries:
        if e.path in seen:
            raise CorpusError(f"duplicate output path {e.path}")
        seen.add(e.path)

    def write(entry):
        raw = render_entry(entry, config)
        if len(raw) != entry.length:
            raise CorpusError(f"length mismatch for {entry.path}")
        target = out_dir / entry.path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(raw.data)

    if config.jobs > 1:
        with ThreadPoolExecutor(config.jobs) as pool:
            list(pool.map(write, entries))
    else:
        for e in entries:
            write(e)
    manifest = CorpusManifest(entries, out_dir)
    manifest.write(out_dir / "manifest.csv")
    return manifest
