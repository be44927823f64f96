"""Build the default corpus and report held-out metrics for every head."""

import argparse
import json
import time
from pathlib import Path

from bitscreen import corpus, pipeline, seqmodel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=0, help="corpus master seed")
    ap.add_argument("--split-seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--trees", type=int, default=100)
    args = ap.parse_args()

    out = Path(args.out)
    t0 = time.perf_counter()
    manifest = corpus.build_corpus(out / "corpus", corpus.CorpusConfig(), args.seed)
    print(f"corpus: {len(manifest)} files in {time.perf_counter() - t0:.1f}s")
    cfg = pipeline.EvalConfig(
        split_seed=args.split_seed,
        forest=pipeline.ForestConfig(n_trees=args.trees),
        train=seqmodel.TrainConfig(epochs=args.epochs),
    )
    res = pipeline.evaluate(manifest, cfg, out)
    print(pipeline.format_metrics(res))
    print("fit seconds:", json.dumps({k: round(v, 1) for k, v in res["fit_seconds"].items()}))
    res["family_forest"].save(out / "family.blrf")
    res["cnn_model"].save(out / "hybrid.blnn")


if __name__ == "__main__":
    main()
