#!/usr/bin/env python3
"""
Write a synthetic human-evaluation response file

Each worker rates one summary per system on creativity, readability and
relevance (1-4). A share of workers answer suspiciously fast, which the
`stats --sweep` truncation is meant to catch.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from dotenv import load_dotenv

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from local_analytics.evalstats import COLUMNS, CRITERIA, SYSTEMS, validate_frame  # noqa: E402

# Load environment variables
load_dotenv()

# Configuration
OUTPUT_PATH = os.getenv('SEMSIM_RESPONSES', 'work/responses.csv')
TEAMS = ('team-1', 'team-2', 'team-3', 'team-4')
# mean score per system before noise
SYSTEM_MEANS = {'reference': 3.0, 'baseline': 2.4, 'ours': 3.1}


def make_responses(workers: int = 60, fast_share: float = 0.15, seed: int = 0) -> pd.DataFrame:
    """Careful workers score near the system means; fast workers answer at random"""
    rng = np.random.default_rng(seed)
    rows = []
    for w in range(workers):
        fast = rng.random() < fast_share
        team = TEAMS[w % len(TEAMS)]
        for system in SYSTEMS:
            time_sec = rng.uniform(3, 8) if fast else rng.uniform(20, 90)
            if fast:
                scores = rng.integers(1, 5, size=len(CRITERIA))
            else:
                scores = np.clip(np.rint(rng.normal(SYSTEM_MEANS[system], 0.7, size=len(CRITERIA))), 1, 4)
            rows.append([f"w{w + 1:03d}", team, round(time_sec, 1), system, *scores.astype(int)])
    return validate_frame(pd.DataFrame(rows, columns=list(COLUMNS)))


def main():
    """Main function"""
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument('--output', default=OUTPUT_PATH)
    parser.add_argument('--workers', type=int, default=60)
    parser.add_argument('--fast-share', type=float, default=0.15)
    parser.add_argument('--seed', type=int, default=0)
    args = parser.parse_args()

    print("=" * 60)
    print("🧪 GENERATING SYNTHETIC RESPONSES")
    print("=" * 60)

    frame = make_responses(args.workers, args.fast_share, args.seed)
    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output, index=False)

    print(f"\n✅ Wrote {len(frame)} responses from {frame['worker'].nunique()} workers")
    print(f"   📁 {output}")
    for system, group in frame.groupby('system'):
        print(f"   • {system}: mean {group[list(CRITERIA)].to_numpy().mean():.2f}")


if __name__ == "__main__":
    main()
