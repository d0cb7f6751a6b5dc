"""Wall-clock time of a full-size study (default 60 users x B=500 x T=450)."""

import argparse
import time

from rlaudit.study import StudyConfig, run_study
from rlaudit.synth import SynthSpec, generate_trial


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-users", type=int, default=60)
    ap.add_argument("--B", type=int, default=500)
    ap.add_argument("--T", type=int, default=450)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--chunk-size", type=int, default=100)
    args = ap.parse_args()
    users = generate_trial(SynthSpec(n_users=args.n_users, T=args.T, seed=0))
    start = time.perf_counter()
    res = run_study(users, StudyConfig(B=args.B, master_seed=0, workers=args.workers, chunk_size=args.chunk_size))
    elapsed = time.perf_counter() - start
    print(f"{len(res.outcomes)} users x B={args.B} x T={args.T}: {elapsed:.1f}s "
          f"({elapsed / max(len(res.outcomes), 1):.2f}s per user, workers={args.workers})")


if __name__ == "__main__":
    main()
