"""Command-line entry point.

    bitscreen gen-corpus --out corpus/ --seed 0
    bitscreen train forest --manifest corpus/manifest.csv --out family.blrf
    bitscreen train cnn --manifest corpus/manifest.csv --out hybrid.blnn
    bitscreen screen file.bit --cnn hybrid.blnn --forest family.blrf
    bitscreen evaluate --manifest corpus/manifest.csv --out results/
    bitscreen bench --size 3860000
    bitscreen simulate-engine file.bit --trace trace.txt

``screen`` exits 0 when every file is benign, 2 if any is malicious, 1 on an
unreadable input and 3 on a bad checkpoint.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import engine, pipeline, seqmodel
from .bitstream import RawBitstream, extract_payload, make_segment
from .corpus import FAMILIES, CorpusConfig, CorpusManifest, build_corpus
from .features import FEATURE_NAMES

log = logging.getLogger("bitscreen")


def _dma_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine / DMA model")
    g.add_argument("--clock-hz", type=int, default=engine.DmaModel.clock_hz)
    g.add_argument("--bytes-per-cycle", type=int, default=engine.DmaModel.bytes_per_cycle)
    g.add_argument("--burst-bytes", type=int, default=engine.DmaModel.burst_bytes)
    g.add_argument("--setup-cycles", type=int, default=engine.DmaModel.burst_setup_cycles)
    g.add_argument("--fixed-overhead", type=int, default=engine.DmaModel.fixed_overhead_cycles)
    g.add_argument("--ideal", action="store_true", help="zero burst setup and fixed overhead")


def _dma(args) -> engine.DmaModel:
    if args.ideal:
        return engine.DmaModel.ideal(clock_hz=args.clock_hz, bytes_per_cycle=args.bytes_per_cycle, burst_bytes=args.burst_bytes)
    return engine.DmaModel(args.clock_hz, args.bytes_per_cycle, args.burst_bytes, args.setup_cycles, args.fixed_overhead)


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _parse_counts(items) -> tuple[tuple[str, int], ...]:
    out = []
    for item in items:
        fam, _, n = item.partition("=")
        if fam not in FAMILIES:
            raise SystemExit(f"unknown family {fam!r}; choose from {', '.join(FAMILIES)}")
        out.append((fam, int(n)))
    return tuple(out)


def cmd_gen_corpus(args) -> int:
    cfg = CorpusConfig(jobs=args.jobs, trojan_fraction=args.trojan_fraction)
    if args.counts:
        cfg = CorpusConfig(family_counts=_parse_counts(args.counts), jobs=args.jobs, trojan_fraction=args.trojan_fraction)
    manifest = build_corpus(args.out, cfg, args.seed)
    print(f"wrote {len(manifest)} bitstreams and {Path(args.out) / 'manifest.csv'}")
    return 0


def _training_part(args) -> pipeline.Dataset:
    data = pipeline.load_dataset(args.manifest)
    if args.all:
        return data
    train_idx, _ = pipeline.stratified_split(data.y_family * 2 + data.y_trojan, args.split_seed)
    return data.subset(train_idx)


def cmd_train(args) -> int:
    data = _training_part(args)
    if args.head == "forest":
        cfg = pipeline.ForestConfig(args.trees, args.m, args.max_depth, args.seed, args.jobs)
        fit = pipeline.train_family_forest if args.target == "family" else pipeline.train_binary_forest
        model = fit(data, cfg)
        model.save(args.out)
        if args.text:
            Path(args.text).write_text(model.to_text())
        print(f"forest ({args.target}, {cfg.n_trees} trees) -> {args.out}")
    else:
        spec = seqmodel.ConvSpec(tuple(args.kernels), args.channels, args.embedding_dim)
        hyper = seqmodel.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
        model, tlog = pipeline.train_cnn(data, spec, hyper)
        model.save(args.out)
        for i, loss in enumerate(tlog.epoch_loss, 1):
            print(f"epoch {i:3d} loss {loss:.6f}")
        print(f"hybrid cnn -> {args.out}")
    return 0


def cmd_screen(args) -> int:
    try:
        models = pipeline.Models.load(args.cnn, args.forest)
    except pipeline.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_BAD_CHECKPOINT
    results = pipeline.screen_many(args.paths, models, jobs=args.jobs, extractor=args.extractor, threshold=args.threshold)
    exported = []
    errors = []
    malicious = False
    for res in results:
        if isinstance(res, Exception):
            print(f"error: {res}", file=sys.stderr)
            errors.append(res.exit_code)
            exported.append({"error": str(res), "exit_code": res.exit_code})
            continue
        print(res.to_line())
        exported.append(res.as_dict())
        malicious |= res.exit_code == pipeline.EXIT_MALICIOUS
    if args.json:
        _write_json(args.json, exported)
    if errors:
        return max(errors)
    return pipeline.EXIT_MALICIOUS if malicious else pipeline.EXIT_BENIGN


def cmd_evaluate(args) -> int:
    cfg = pipeline.EvalConfig(
        split_seed=args.split_seed,
        forest=pipeline.ForestConfig(n_trees=args.trees, seed=args.seed),
        train=seqmodel.TrainConfig(epochs=args.epochs, seed=args.seed),
        heads=tuple(args.heads),
    )
    results = pipeline.evaluate(args.manifest, cfg, out_dir=args.out)
    print(pipeline.format_metrics(results))
    if args.out:
        print(f"metrics and confusion matrices in {args.out}")
    return 0


def cmd_bench(args) -> int:
    res = pipeline.bench(args.size, _dma(args), args.extractor, args.sw_throughput, args.seed)
    print(res.to_lines())
    if args.json:
        _write_json(args.json, asdict(res))
    return 0


def cmd_simulate(args) -> int:
    dma = _dma(args)
    if args.path:
        data = extract_payload(RawBitstream.from_file(args.path))
        if args.segment:
            data = make_segment(data).payload
    else:
        data = pipeline.synthetic_stream(args.random, args.seed)
    trace = open(args.trace, "w") if args.trace else None
    try:
        if trace is not None or args.cycle_accurate:
            state = engine.run_cycles(engine.reset(), data, trace)
        else:
            state = engine.stream(engine.reset(), data)
    finally:
        if trace is not None:
            trace.close()
    out = engine.finalize(state)
    cycles = dma.cycles(len(data))
    latency = cycles / dma.clock_hz
    fv = out.to_feature_vector()
    summary = {
        "bytes": len(data),
        "engine_cycles": out.cycles_total,
        "cycles_total": cycles,
        "latency_s": latency,
        "throughput_mbs": len(data) / latency / 1e6,
        "forwarded_reads": state.forwards,
        "features": {name: float(v) for name, v in zip(FEATURE_NAMES[256:], fv.stats)},
    }
    for k in ("bytes", "engine_cycles", "cycles_total", "latency_s", "throughput_mbs", "forwarded_reads"):
        print(f"{k}: {summary[k]}")
    for name, v in summary["features"].items():
        print(f"  {name}: {v:.6g}")
    if args.features_out:
        fv.save(args.features_out)
    if args.json:
        _write_json(args.json, summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitscreen", description="Pre-configuration screening of FPGA bitstreams.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write the synthetic labelled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--trojan-fraction", type=float, default=0.5)
    p.add_argument("--counts", nargs="*", metavar="FAMILY=N")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a model head on the corpus")
    p.add_argument("head", choices=("cnn", "forest"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--all", action="store_true", help="train on every entry, not just the 80%% split")
    p.add_argument("--target", choices=("family", "binary"), default="family", help="forest target")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--text", help="also write a text dump of the forest")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--kernels", type=int, nargs="+", default=[3, 7, 15])
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--embedding-dim", type=int, default=64)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("screen", help="screen bitstreams before configuration")
    p.add_argument("paths", nargs="+")
    p.add_argument("--cnn", required=True)
    p.add_argument("--forest", required=True)
    p.add_argument("--extractor", choices=sorted(pipeline.EXTRACTORS), default="fast")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--json", help="structured report path ('-' for stdout)")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("evaluate", help="held-out metrics for every head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--heads", nargs="+", default=["rf_binary", "rf_family", "cnn_binary"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="software extractor vs. engine cycle model")
    p.add_argument("--size", type=int, default=3_860_000)
    p.add_argument("--extractor", choices=sorted(pipeline.EXTRACTORS), default="naive")
    p.add_argument("--sw-throughput", type=float, help="use this MB/s instead of measuring")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json")
    _dma_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate-engine", help="run the streaming engine model on a file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("path", nargs="?")
    src.add_argument("--random", type=int, metavar="BYTES")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--segment", action="store_true", help="only the 4096-byte analysis segment")
    p.add_argument("--cycle-accurate", action="store_true", help="per-cycle model instead of the bulk path")
    p.add_argument("--trace", help="per-cycle event log (implies --cycle-accurate)")
    p.add_argument("--features-out", help="write the feature vector record here")
    p.add_argument("--json")
    _dma_args(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
