"""Binary RF macro F1 with prefix vs. strided analysis segments.

Trojans in the synthetic corpus sit inside the first 4 KiB of payload by
default; pass --window 0 to let them land anywhere in the payload.
"""

import argparse
import tempfile

import numpy as np

from bitscreen import corpus, forest, pipeline
from bitscreen.bitstream import PREFIX, STRIDED, RawBitstream, extract_payload, make_segment
from bitscreen.features import feature_vector


def features(manifest, strategy):
    return np.stack([
        feature_vector(make_segment(extract_payload(RawBitstream.from_file(manifest.resolve(e))), strategy)).values
        for e in manifest.entries
    ])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trees", type=int, default=50)
    ap.add_argument("--window", type=int, default=4096, help="injection window in bytes; 0 = whole payload")
    args = ap.parse_args()

    window = args.window or 1 << 30
    with tempfile.TemporaryDirectory() as tmp:
        manifest = corpus.build_corpus(tmp, corpus.CorpusConfig(window=window), args.seed)
        y = np.array([e.label == corpus.TROJAN for e in manifest.entries], dtype=int)
        fam = np.array([corpus.FAMILIES.index(e.family) for e in manifest.entries])
        tr, te = pipeline.stratified_split(fam * 2 + y, 0)
        for strategy in (PREFIX, STRIDED):
            X = features(manifest, strategy)
            rf = forest.fit(X[tr], y[tr], n_trees=args.trees, seed=args.seed)
            f1 = forest.macro_f1(rf.predict(X[te]), y[te], 2)
            print(f"{strategy:<8} macro F1 {f1:.3f}")


if __name__ == "__main__":
    main()
