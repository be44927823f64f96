import numpy as np
import pytest

from bitscreen import corpus as C
from bitscreen.bitstream import XILINX_SYNC, extract_payload, locate_sync, make_segment
from bitscreen.features import features_of


def payload_len(profile, seed):
    lo, hi = profile.size_range
    return int(np.random.default_rng([seed, 1]).integers(lo, hi + 1))


@pytest.mark.parametrize("name", C.FAMILIES)
def test_profile_invariants(name):
    prof = C.PROFILES[name]
    assert abs(prof.base_histogram.sum() - 1) < 1e-12
    assert prof.size_range[0] > 0


def test_gen_benign_deterministic():
    prof = C.PROFILES["CRYPTO"]
    a = C.gen_benign(prof, 11, 20_000)
    b = C.gen_benign(prof, 11, 20_000)
    assert a.data == b.data
    assert C.gen_benign(prof, 12, 20_000).data != a.data


@pytest.mark.parametrize("seed", range(5))
def test_sync_where_written(seed):
    prof = C.PROFILES["ITC99"]
    n = payload_len(prof, seed)
    raw = C.gen_benign(prof, seed, n)
    off = locate_sync(raw)
    assert raw.data[off - 4 : off] == XILINX_SYNC
    assert len(raw.data) - off == n


def test_length_outside_range():
    with pytest.raises(C.CorpusError):
        C.gen_benign(C.PROFILES["COMMS"], 0, 100)


@pytest.mark.parametrize("name", ["CRYPTO", "ISCAS85"])
def test_histogram_total_variation(name):
    prof = C.PROFILES[name]
    counts = np.zeros(256)
    seed = 0
    hi = prof.size_range[1]
    while counts.sum() < 1_000_000:
        payload = extract_payload(C.gen_benign(prof, seed, hi))
        counts += np.bincount(np.frombuffer(payload, np.uint8), minlength=256)
        seed += 1
    tv = 0.5 * np.abs(counts / counts.sum() - prof.base_histogram).sum()
    assert tv < 0.02


@pytest.mark.parametrize("kind", C.TROJAN_KINDS)
@pytest.mark.parametrize("seed", range(4))
def test_injection_contiguous_and_length(kind, seed):
    prof = C.PROFILES["MCU_CPU"]
    n = payload_len(prof, seed)
    benign = C.gen_benign(prof, seed, n)
    troj = C.inject_trojan(benign, kind, seed)
    assert len(troj.data) == len(benign.data)
    a = np.frombuffer(benign.data, np.uint8)
    b = np.frombuffer(troj.data, np.uint8)
    diff = np.flatnonzero(a != b)
    assert diff.size > 0
    lo, hi = diff[0], diff[-1]
    off = locate_sync(benign)
    # a region of 0.5-2% of the payload, starting inside the analysed segment
    assert hi - lo + 1 <= max(16, round(0.02 * n))
    assert off <= lo < off + 4096
    assert np.array_equal(a[:lo], b[:lo]) and np.array_equal(a[hi + 1 :], b[hi + 1 :])


def test_inject_short_payload():
    prof = C.PROFILES["CRYPTO"]
    raw = C.gen_benign(prof, 0, prof.size_range[0])
    short = type(raw)(raw.data[: locate_sync(raw) + 1000], "short")
    with pytest.raises(C.CorpusError):
        C.inject_trojan(short, "HIGH_ENTROPY", 0)


def test_unknown_kind():
    with pytest.raises(C.CorpusError):
        C.trojan_block("NOPE", 10, np.random.default_rng(0))


def test_high_entropy_raises_segment_entropy():
    ent = features_of  # segment features only see the 4096-byte prefix
    raised = 0
    for seed in range(200):
        prof = C.PROFILES[C.FAMILIES[seed % 7]]
        benign = C.gen_benign(prof, seed, payload_len(prof, seed))
        troj = C.inject_trojan(benign, "HIGH_ENTROPY", seed)
        e0 = ent(make_segment(extract_payload(benign)).payload)["entropy"]
        e1 = ent(make_segment(extract_payload(troj)).payload)["entropy"]
        raised += e1 > e0
    assert raised >= 190


def test_default_plan_shape():
    entries = C.plan_corpus(C.CorpusConfig(), 0)
    assert len(entries) == 1383
    assert {e.family for e in entries} == set(C.FAMILIES)
    assert {e.label for e in entries} == {C.BENIGN, C.TROJAN}
    assert len({e.path for e in entries}) == 1383
    n_troj = sum(e.label == C.TROJAN for e in entries)
    assert abs(n_troj - 1383 / 2) <= 7


def test_master_seed_changes_bytes_not_shape():
    cfg = C.CorpusConfig()
    a, b = C.plan_corpus(cfg, 0), C.plan_corpus(cfg, 1)
    assert [(e.path, e.family, e.label) for e in a] == [(e.path, e.family, e.label) for e in b]
    assert C.render_entry(a[0], cfg).data != C.render_entry(b[0], cfg).data


SMALL = C.CorpusConfig(family_counts=(("CRYPTO", 6), ("BUS_DISPLAY", 5)))


def test_build_reproducible_and_provenance(tmp_path):
    m1 = C.build_corpus(tmp_path / "a", SMALL, 42)
    m2 = C.build_corpus(tmp_path / "b", C.CorpusConfig(SMALL.family_counts, jobs=3), 42)
    assert (tmp_path / "a/manifest.csv").read_bytes() == (tmp_path / "b/manifest.csv").read_bytes()
    for e in m1.entries:
        data = m1.resolve(e).read_bytes()
        assert data == m2.resolve(e).read_bytes()
        assert len(data) == e.length
        clean = C.gen_benign(C.PROFILES[e.family], e.seed, len(data) - locate_sync(data)).data
        assert (data == clean) == (e.label == C.BENIGN)


def test_manifest_roundtrip(tmp_path):
    m = C.build_corpus(tmp_path, SMALL, 1)
    back = C.CorpusManifest.read(tmp_path / "manifest.csv")
    assert [(e.path, e.family, e.label, e.seed, e.length) for e in back.entries] == [
        (e.path, e.family, e.label, e.seed, e.length) for e in m.entries
    ]
    assert (tmp_path / "manifest.csv").read_text().splitlines()[0] == "path,family,label,seed,length"


def test_duplicate_path_error(tmp_path):
    cfg = C.CorpusConfig(family_counts=(("CRYPTO", 2), ("CRYPTO", 2)))
    with pytest.raises(C.CorpusError):
        C.build_corpus(tmp_path, cfg, 0)
