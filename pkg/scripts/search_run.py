"""Genetic search over the channel parameter space; prints the best configurations."""

import argparse
import json

from shp.search import ParameterSpace, SessionTemplate, count_space, run_search


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--budget", type=int, default=128)
    p.add_argument("--population", type=int, default=32)
    p.add_argument("--duration", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--log", help="JSON-lines evaluation log (resumable)")
    p.add_argument("--top", type=int, default=10)
    args = p.parse_args(argv)

    space = ParameterSpace()
    raw, valid = count_space(space)
    res = run_search(space, args.budget, SessionTemplate(duration=args.duration), args.seed,
                     args.population, workers=args.workers, log_path=args.log)
    print(json.dumps({
        "space": {"raw": raw, "valid": valid},
        "evaluations": res.evaluations,
        "generations": res.generations,
        "best_history": res.best_history,
        "top": [{"fitness": i.fitness, **i.config.to_dict()} for i in res.ranked[:args.top]],
    }, indent=2, default=str))


if __name__ == "__main__":
    main()
