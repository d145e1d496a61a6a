"""Write the synthetic repeat-consumption stream as an interaction CSV."""

import argparse

from mrate.ingest import dump_interactions
from mrate.synthetic import repeat_stream


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("output")
    ap.add_argument("--users", type=int, default=50)
    ap.add_argument("--interactions", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    net = repeat_stream(n_users=args.users, interactions=args.interactions, seed=args.seed)
    dump_interactions(net, args.output)
    print(f"{len(net)} interactions, {net.n_users} users, {net.n_items} items -> {args.output}")


if __name__ == "__main__":
    main()
