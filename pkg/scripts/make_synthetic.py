#!/usr/bin/env python3
"""Write the synthetic cycle corpus as a CSV event log.

The output has the ``session_id,timestamp,item_id`` columns the CLI's
``preprocess`` step ingests, so a full pipeline can be exercised without
any external data:

    python scripts/make_synthetic.py --out events.csv
    python -m sml preprocess --input events.csv --out-dir work/
    python -m sml train --train work/train.jsonl --model-out work/model.sml
"""

import argparse
import csv

from sml import synth


def parse_args():
    parser = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--out", required=True, help="CSV file to write")
    parser.add_argument("--sessions", type=int, default=200)
    parser.add_argument("--vocab", type=int, default=50)
    parser.add_argument("--min-length", type=int, default=3)
    parser.add_argument("--max-length", type=int, default=8)
    parser.add_argument("--seed", type=int, default=7)
    return parser.parse_args()


def main():
    args = parse_args()
    corpus = synth.cycle_sessions(n_sessions=args.sessions,
                                  vocab_size=args.vocab,
                                  min_length=args.min_length,
                                  max_length=args.max_length,
                                  seed=args.seed)
    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["session_id", "timestamp", "item_id"])
        for session in corpus.sessions:
            for item, ts in zip(session.items, session.timestamps):
                writer.writerow([session.session_id, ts,
                                 corpus.vocab.ids[item]])
    print(f"wrote {corpus.n_events} events, {len(corpus.sessions)} sessions, "
          f"{len(corpus.vocab)} items -> {args.out}")


if __name__ == "__main__":
    main()
