"""Software vs. ideal vs. calibrated-engine throughput on one input size.

    python3 scripts/reproduce_perf_table.py --size 3860000 --sw-throughput 0.26
"""

import argparse

from bitscreen import engine, pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=3_860_000)
    ap.add_argument("--sw-throughput", type=float, help="MB/s; measured with the naive extractor if omitted")
    ap.add_argument("--extractor", default="naive", choices=sorted(pipeline.EXTRACTORS))
    args = ap.parse_args()

    sw = args.sw_throughput
    if sw is None:
        sw = pipeline.bench(args.size, sw_extractor=args.extractor).sw_throughput
    rows = [("software", sw, args.size / 1e6 / sw, 1.0)]
    for name, dma in (("ideal", engine.DmaModel.ideal()), ("calibrated", engine.DmaModel())):
        r = pipeline.bench(args.size, dma, sw_throughput=sw)
        rows.append((name, r.hw_model_throughput, r.hw_latency_s, r.speedup))

    print(f"input {args.size / 1e6:.2f} MB")
    print(f"{'model':<12}{'MB/s':>10}{'latency':>14}{'speedup':>10}")
    for name, thr, lat, sp in rows:
        latency = f"{lat:.3f} s" if lat >= 1 else f"{lat * 1e3:.2f} ms"
        print(f"{name:<12}{thr:>10.2f}{latency:>14}{sp:>9.0f}x")


if __name__ == "__main__":
    main()
