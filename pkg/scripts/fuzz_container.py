"""Million-case corruption fuzz of the container parser and the text/mask blob decoders."""

import sys

from sedic.processing.selftest import fuzz_parse


N_CASES = 1_000_000


if __name__ == "__main__":
    n_cases = int(sys.argv[1]) if len(sys.argv) > 1 else N_CASES
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    outcomes = fuzz_parse(n_cases, seed=seed, progress=True)
    for name, count in outcomes.most_common():
        print(f"{name:<24}{count:>10}")
    print(f"{n_cases} case(s), no crash")
