"""Budgeted evolutionary search over a built-in space with the proxy evaluator."""
import argparse
import json

from vitas_kit.search import SearchConfig, make_evaluator, nsga2_search
from vitas_kit.space import encode, load_space


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--space", default="twins-small")
    ap.add_argument("--budget", type=float, default=1.4, help="GFLOPs")
    ap.add_argument("--generations", type=int, default=10)
    ap.add_argument("--population", type=int, default=30)
    ap.add_argument("--evaluator", default="proxy")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = SearchConfig(population=args.population, generations=args.generations,
                       parents=max(2, args.population // 3), budget=args.budget, seed=args.seed)
    result = nsga2_search(load_space(args.space), cfg, make_evaluator(args.evaluator))
    for rec in result.history:
        print(f"gen {rec.generation:3d}  best {rec.best_score:.4f}  hv {rec.hypervolume:.4f}")
    best = result.best
    print(json.dumps({"flops": best.flops, "score": best.score, "arch": encode(best.arch)}, indent=2))


if __name__ == "__main__":
    main()
