"""End-to-end flows: dataset loading, training, screening with a per-phase
timing breakdown, held-out evaluation and the software-vs-engine benchmark."""

from __future__ import annotations

import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import engine, forest, seqmodel
from .bitstream import XILINX_SYNC, BitstreamError, RawBitstream, extract_payload, make_segment
from .corpus import BENIGN, FAMILIES, PROFILES, TROJAN, CorpusManifest
from .features import FeatureError, feature_vector, features_of, naive_feature_vector

EXIT_BENIGN = 0
EXIT_ERROR = 1
EXIT_MALICIOUS = 2
EXIT_BAD_CHECKPOINT = 3

EXTRACTORS = {
    "fast": features_of,
    "naive": naive_feature_vector,
    "engine": engine.engine_features,
}


class InputError(RuntimeError):
    exit_code = EXIT_ERROR


class CheckpointError(RuntimeError):
    exit_code = EXIT_BAD_CHECKPOINT


# --- datasets -----------------------------------------------------------------

@dataclass
class Dataset:
    x: np.ndarray  # (N, 4096) uint8 segments
    fv: np.ndarray  # (N, 278)
    y_trojan: np.ndarray
    y_family: np.ndarray
    paths: list[str]

    def __len__(self) -> int:
        return len(self.paths)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.fv[idx], self.y_trojan[idx], self.y_family[idx], [self.paths[i] for i in idx])


def load_dataset(manifest: CorpusManifest | str | Path) -> Dataset:
    if not isinstance(manifest, CorpusManifest):
        manifest = CorpusManifest.read(manifest)
    xs, fvs = [], []
    for e in manifest.entries:
        seg = make_segment(extract_payload(RawBitstream.from_file(manifest.resolve(e))))
        xs.append(seg.as_array())
        fvs.append(feature_vector(seg).values)
    return Dataset(
        np.stack(xs),
        np.stack(fvs),
        np.array([e.label == TROJAN for e in manifest.entries], dtype=np.int64),
        np.array([FAMILIES.index(e.family) for e in manifest.entries], dtype=np.int64),
        [e.path for e in manifest.entries],
    )


def stratified_split(strata, seed: int, test_frac: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Per-stratum shuffle, first round(test_frac * n) of each stratum to test."""
    strata = np.asarray(strata)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for s in np.unique(strata):
        idx = np.flatnonzero(strata == s)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(test_frac * idx.size))
        test.extend(idx[:k])
        train.extend(idx[k:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


# --- training -----------------------------------------------------------------

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    m: int | None = None
    max_depth: int | None = None
    seed: int = 0
    n_jobs: int = 1


def train_family_forest(data: Dataset, cfg: ForestConfig = ForestConfig()) -> forest.Forest:
    return forest.fit(
        data.fv, data.y_family, cfg.n_trees, cfg.m, cfg.max_depth, cfg.seed,
        n_jobs=cfg.n_jobs, classes=list(FAMILIES), n_classes=len(FAMILIES),
    )


def train_binary_forest(data: Dataset, cfg: ForestConfig = ForestConfig()) -> forest.Forest:
    return forest.fit(
        data.fv, data.y_trojan, cfg.n_trees, cfg.m, cfg.max_depth, cfg.seed,
        n_jobs=cfg.n_jobs, classes=[BENIGN, TROJAN], n_classes=2,
    )


def train_cnn(data: Dataset, spec=seqmodel.ConvSpec(), hyper=seqmodel.TrainConfig()):
    return seqmodel.train(seqmodel.SeqDataset(data.x, data.fv, data.y_trojan), spec, hyper)


# --- screening ----------------------------------------------------------------

@dataclass
class Models:
    cnn: seqmodel.HybridModel
    family: forest.Forest

    @classmethod
    def load(cls, cnn_path, forest_path) -> "Models":
        try:
            cnn = seqmodel.HybridModel.load(cnn_path)
            fam = forest.Forest.load(forest_path)
        except FileNotFoundError as exc:
            raise CheckpointError(f"missing checkpoint: {exc.filename}") from exc
        except (seqmodel.ModelError, forest.ForestError) as exc:
            raise CheckpointError(str(exc)) from exc
        if cnn.scaler_mean is None:
            raise CheckpointError("model checkpoint has no feature scaler")
        return cls(cnn, fam)


@dataclass
class ScreeningReport:
    source_id: str
    verdict: str
    family: str
    probability: float
    family_probability: float
    load_ms: float
    extract_s: float
    predict_s: float
    total_s: float

    @property
    def extract_fraction(self) -> float:
        return self.extract_s / self.total_s if self.total_s > 0 else 0.0

    @property
    def exit_code(self) -> int:
        return EXIT_MALICIOUS if self.verdict == "malicious" else EXIT_BENIGN

    def as_dict(self) -> dict:
        d = asdict(self)
        d["extract_fraction"] = self.extract_fraction
        return d

    def decision(self) -> dict:
        """Timing-free part of the report; identical across repeated runs."""
        return {k: v for k, v in self.as_dict().items() if k not in TIMING_FIELDS}

    def to_line(self) -> str:
        return (
            f"{self.source_id}\t{self.verdict}\tp={self.probability:.4f}\t{self.family}"
            f"\tload={self.load_ms:.1f}ms\textract={self.extract_s:.3f}s"
            f"\tpredict={self.predict_s:.3f}s\ttotal={self.total_s:.3f}s"
            f"\textract_frac={self.extract_fraction:.2f}"
        )


TIMING_FIELDS = ("load_ms", "extract_s", "predict_s", "total_s", "extract_fraction")


def screen(
    path: str | Path,
    models: Models,
    extractor: str = "fast",
    threshold: float = 0.5,
    sync: bytes = XILINX_SYNC,
) -> ScreeningReport:
    """Load -> segment -> features -> hybrid verdict -> family label, timed per phase."""
    t0 = time.perf_counter()
    try:
        raw = RawBitstream.from_file(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except BitstreamError as exc:
        raise InputError(f"{path}: {exc}") from exc
    t1 = time.perf_counter()
    try:
        seg = make_segment(extract_payload(raw, sync))
        fv = EXTRACTORS[extractor](seg.payload)
    except (BitstreamError, FeatureError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    t2 = time.perf_counter()
    prob = seqmodel.predict(seg, fv, models.cnn)
    fam_idx, fam_proba = forest.predict(models.family, fv)
    t3 = time.perf_counter()
    names = models.family.classes or list(FAMILIES)
    return ScreeningReport(
        source_id=str(path),
        verdict="malicious" if prob >= threshold else "benign",
        family=names[fam_idx],
        probability=prob,
        family_probability=float(fam_proba[fam_idx]),
        load_ms=round((t1 - t0) * 1e3, 3),
        extract_s=round(t2 - t1, 6),
        predict_s=round(t3 - t2, 6),
        total_s=round(t3 - t0, 6),
    )


def screen_many(paths, models: Models, jobs: int = 1, **kw) -> list[ScreeningReport | Exception]:
    """Reports in input order; failures come back as the exception instead of a report."""

    def one(p):
        try:
            return screen(p, models, **kw)
        except (InputError, CheckpointError) as exc:
            return exc

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, paths))
    return [one(p) for p in paths]


# --- evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    split_seed: int = 0
    forest: ForestConfig = ForestConfig()
    conv: seqmodel.ConvSpec = seqmodel.ConvSpec()
    train: seqmodel.TrainConfig = seqmodel.TrainConfig(epochs=15)
    heads: tuple[str, ...] = ("rf_binary", "rf_family", "cnn_binary")


def evaluate(manifest, cfg: EvalConfig = EvalConfig(), out_dir: str | Path | None = None, data: Dataset | None = None) -> dict:
    """Stratified 80/20 split on (family, label); fit each head on the train
    part and score it on the held-out part."""
    data = data if data is not None else load_dataset(manifest)
    strata = data.y_family * 2 + data.y_trojan
    train_idx, test_idx = stratified_split(strata, cfg.split_seed)
    tr, te = data.subset(train_idx), data.subset(test_idx)
    for name, y in (("label", tr.y_trojan), ("family", tr.y_family)):
        if np.unique(y).size < 2:
            raise ValueError(f"degenerate split: training part has one {name}")
    if np.unique(te.y_trojan).size < 2:
        raise ValueError("degenerate split: test part has one label")

    results: dict = {"n_train": len(tr), "n_test": len(te), "split_seed": cfg.split_seed, "test_paths": te.paths}
    timings = {}
    if "rf_binary" in cfg.heads:
        t = time.perf_counter()
        rf = train_binary_forest(tr, cfg.forest)
        results["rf_binary"] = forest.classification_report(rf.predict(te.fv), te.y_trojan, 2)
        timings["rf_binary"] = time.perf_counter() - t
    if "rf_family" in cfg.heads:
        t = time.perf_counter()
        fam = train_family_forest(tr, cfg.forest)
        results["rf_family"] = forest.classification_report(fam.predict(te.fv), te.y_family, len(FAMILIES))
        timings["rf_family"] = time.perf_counter() - t
        results["family_forest"] = fam
    if "cnn_binary" in cfg.heads:
        t = time.perf_counter()
        model, log = train_cnn(tr, cfg.conv, cfg.train)
        proba = seqmodel.predict_proba(model, te.x, te.fv)
        results["cnn_binary"] = forest.classification_report((proba >= 0.5).astype(int), te.y_trojan, 2)
        results["cnn_train_loss"] = log.epoch_loss
        results["cnn_model"] = model
        timings["cnn_binary"] = time.perf_counter() - t
    results["fit_seconds"] = timings

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(metrics_only(results), indent=2) + "\n")
        for head in cfg.heads:
            labels = [BENIGN, TROJAN] if head.endswith("binary") else list(FAMILIES)
            write_confusion(out / f"confusion_{head}.csv", results[head]["confusion"], labels)
    return results


def metrics_only(results: dict) -> dict:
    return {k: v for k, v in results.items() if k not in ("family_forest", "cnn_model", "test_paths")}


def write_confusion(path: Path, cm, labels) -> None:
    lines = ["true\\pred," + ",".join(labels)]
    for name, row in zip(labels, cm):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def format_metrics(results: dict) -> str:
    rows = [f"{'head':<12}{'acc':>8}{'prec':>8}{'rec':>8}{'macroF1':>9}"]
    for head in ("rf_binary", "rf_family", "cnn_binary"):
        if head in results:
            r = results[head]
            rows.append(f"{head:<12}{r['accuracy']:>8.3f}{r['precision']:>8.3f}{r['recall']:>8.3f}{r['macro_f1']:>9.3f}")
    return "\n".join(rows)


# --- benchmark ----------------------------------------------------------------

@dataclass
class BenchResult:
    input_size_mb: float
    sw_throughput: float
    hw_model_throughput: float
    speedup: float
    sw_latency_s: float
    hw_latency_s: float
    load_s: float
    extract_s: float
    predict_s: float
    extract_fraction: float
    hw_cycles: int

    def to_lines(self) -> str:
        return "\n".join(f"{k}: {v}" for k, v in asdict(self).items())


def synthetic_stream(size: int, seed: int = 0, family: str = "CRYPTO") -> bytes:
    """Bitstream-like bytes of an exact size (header-free, profile-sampled)."""
    rng = np.random.default_rng(seed)
    return rng.choice(256, size=size, p=PROFILES[family].base_histogram).astype(np.uint8).tobytes()


def bench(
    input_size_bytes: int,
    dma: engine.DmaModel | None = None,
    sw_extractor: str = "naive",
    sw_throughput: float | None = None,
    seed: int = 0,
    model: seqmodel.HybridModel | None = None,
) -> BenchResult:
    """Software extraction vs. the engine's cycle model on one input.

    With ``sw_throughput`` (MB/s) given, the software side is not measured and
    the figure is used as-is; the pipeline timings are then zero.
    """
    if input_size_bytes < 1:
        raise ValueError("input size must be >= 1 byte")
    dma = dma or engine.DmaModel()
    size_mb = input_size_bytes / 1e6
    data = synthetic_stream(input_size_bytes, seed)
    load_s = extract_s = predict_s = 0.0
    if sw_throughput is None:
        t0 = time.perf_counter()
        raw = RawBitstream(io.BytesIO(data).read(), "bench")
        t1 = time.perf_counter()
        fv = EXTRACTORS[sw_extractor](raw.data)
        t2 = time.perf_counter()
        m = model or _bench_model()
        seqmodel.predict(make_segment(raw.data), fv, m)
        t3 = time.perf_counter()
        load_s, extract_s, predict_s = t1 - t0, t2 - t1, t3 - t2
        if extract_s <= 0:
            raise ValueError("measured zero extraction time")
        sw_throughput = size_mb / extract_s
    if sw_throughput <= 0:
        raise ValueError("software throughput must be positive")
    sim = engine.simulate(data, dma)
    total = load_s + extract_s + predict_s
    return BenchResult(
        input_size_mb=size_mb,
        sw_throughput=sw_throughput,
        hw_model_throughput=sim.throughput_mbs,
        speedup=engine.speedup(sw_throughput, sim.throughput_mbs),
        sw_latency_s=size_mb / sw_throughput,
        hw_latency_s=sim.latency_s,
        load_s=load_s,
        extract_s=extract_s,
        predict_s=predict_s,
        extract_fraction=extract_s / total if total > 0 else 0.0,
        hw_cycles=sim.cycles_total,
    )


def _bench_model() -> seqmodel.HybridModel:
    # inference cost depends on the architecture, not the weights
    model = seqmodel.new_model()
    model.scaler_mean = np.zeros(seqmodel.N_FEATURES)
    model.scaler_std = np.ones(seqmodel.N_FEATURES)
    return model
