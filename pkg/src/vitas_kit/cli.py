"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 invalid input or configuration, 3 runtime
failure. Diagnostics go to stderr; stdout is written only on success.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from typing import Sequence

from . import __version__
from .cost import CostConfig, estimate, reference_deit
from .mapping import (
    ChannelMapping,
    build_bilateral,
    build_cyclic,
    build_ordinal,
    dumps,
    enumerate_optimal,
    loads,
    metrics,
    refine_local_search,
)
from .rank import grouped_budget_eval
from .search import InfeasibleBudget, SearchConfig, make_evaluator, nsga2_search
from .simshare import simulate, simulation_csv
from .space import canonicalize, count_space, decode, encode, load_space, sample_uniform

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3
SEED_ENV = "VITAS_KIT_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2
        raise UsageError(f"{self.prog}: {message}")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _resolution(text: str) -> tuple[int, int]:
    try:
        parts = [int(p) for p in text.lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW or N, got {text!r}") from None
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"expected HxW or N, got {text!r}")
    return parts[0], parts[1]


# ---------------------------------------------------------------------------
# mapping


_BUILDERS = {
    "ordinal": lambda l, a: build_ordinal(l),
    "bilateral": lambda l, a: build_bilateral(l),
    "cyclic": lambda l, a: build_cyclic(l, contiguous=not a.non_contiguous, seed=a.seed),
}


def _mapping_payload(m: ChannelMapping) -> dict:
    out = {"l": m.l, "kind": m.kind.value, "contiguous": bool(m.contiguous)}
    out.update(metrics(m).to_dict())
    out["beta"] = m.beta.astype(int).tolist()
    if m.beta_right is not None:
        out["beta_right"] = m.beta_right.astype(int).tolist()
    return out


def _mapping_text(m: ChannelMapping) -> str:
    met = metrics(m)
    lines = [f"kind {m.kind.value}  l={m.l}  contiguous={bool(m.contiguous)}"]
    for b, block in enumerate(m.blocks):
        if len(m.blocks) > 1:
            lines.append("left:" if b == 0 else "right:")
        lines.extend("  " + " ".join(str(int(v)) for v in row) for row in block)
    lines.append("group  count  influence")
    for i, (c, v) in enumerate(zip(met.training_counts, met.influence_vector), 1):
        lines.append(f"{i:5d}  {int(c):5d}  {v:.6f}")
    lines.append(f"influence_gap {met.influence_gap:.6f}")
    return "\n".join(lines) + "\n"


def cmd_mapping(args: argparse.Namespace) -> str:
    if args.action == "build":
        m = _BUILDERS[args.kind](args.l, args)
    elif args.action == "refine":
        if args.mapping_in:
            with open(args.mapping_in, encoding="utf-8") as fh:
                start = loads(fh.read())
        else:
            start = _BUILDERS[args.kind](args.l, args)
        m = refine_local_search(start, args.iters, args.seed)
    else:
        m = enumerate_optimal(args.l)
    if args.mapping_out:
        with open(args.mapping_out, "w", encoding="utf-8") as fh:
            fh.write(dumps(m))
    return _dump_json(_mapping_payload(m)) if args.json else _mapping_text(m)


# ---------------------------------------------------------------------------
# space


def cmd_space(args: argparse.Namespace) -> str:
    spec = load_space(args.space)
    if args.action == "count":
        c = count_space(spec, canonical=args.canonical)
        if args.json:
            return _dump_json({
                "space": spec.name,
                "canonical": args.canonical,
                "total": str(c.total),
                "per_stage": [str(v) for v in c.per_stage],
            })
        return f"{c.total}\n"
    if args.action == "sample":
        import random

        rng = random.Random(args.seed)
        archs = [encode(sample_uniform(spec, canonical=args.canonical, seed=rng)) for _ in range(args.n)]
        if args.json:
            return _dump_json({"space": spec.name, "canonical": args.canonical, "archs": archs})
        return "".join(a + "\n" for a in archs)
    if args.arch is None:
        raise UsageError("space canonicalize: --arch is required")
    out = encode(canonicalize(decode(spec, args.arch)))
    return _dump_json({"space": spec.name, "arch": out}) if args.json else out + "\n"


# ---------------------------------------------------------------------------
# cost


def cmd_cost(args: argparse.Namespace) -> str:
    config = CostConfig(local_window=args.local_window)
    if args.deit_ref:
        dim, heads = {"tiny": (192, 3), "small": (384, 6)}[args.deit_ref]
        arch = reference_deit(dim, heads, 12)
    else:
        if args.space is None or args.arch is None:
            raise UsageError("cost: give --space and --arch, or --deit-ref")
        arch = decode(load_space(args.space), args.arch)
    report = estimate(arch, args.input, config)
    if args.json:
        return _dump_json(report.to_dict())
    lines = ["stage  flops_g     params_m"]
    for s, (f, p) in enumerate(report.per_stage):
        lines.append(f"{s:5d}  {f:9.6f}  {p:9.6f}")
    lines.append(f"total  {report.flops:9.6f}  {report.params:9.6f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args: argparse.Namespace) -> str:
    m = _BUILDERS[args.kind](args.l, args)
    if args.json:
        st = simulate(m, args.steps, args.seed, alternating=args.alternating)
        return _dump_json({
            "kind": m.kind.value,
            "l": m.l,
            "steps": st.steps,
            "seed": st.seed,
            "cost": st.cost,
            "counts": [int(c) for c in st.counts],
            "influence": [float(v) for v in st.influence_acc],
        })
    if args.alternating:
        raise UsageError("simulate: --alternating is only available with --json")
    return simulation_csv(m, args.steps, args.seed, buckets=args.buckets)


# ---------------------------------------------------------------------------
# rank


def _read_paths(path: str) -> list[tuple[float, float]]:
    text = sys.stdin.read() if path == "-" else open(path, encoding="utf-8").read()
    rows = list(csv.reader(io.StringIO(text)))
    out = []
    for n, row in enumerate(rows, 1):
        if not row or not "".join(row).strip():
            continue
        try:
            out.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            if n == 1 and out == []:
                continue  # header
            raise ValueError(f"{path}: line {n}: expected 'flops,score'") from None
    if not out:
        raise ValueError(f"{path}: no (flops, score) rows")
    return out


def _budgets(args: argparse.Namespace, paths: list[tuple[float, float]]) -> list[tuple[float, float]]:
    if args.budgets:
        groups = []
        for part in args.budgets.split(","):
            lo, _, hi = part.partition(":")
            groups.append((float(lo), float(hi)))
        return groups
    lo = min(p[0] for p in paths)
    hi = max(p[0] for p in paths)
    width = (hi - lo) / args.groups
    edges = [lo + k * width for k in range(args.groups)] + [hi]
    return list(zip(edges[:-1], edges[1:]))


def cmd_rank(args: argparse.Namespace) -> str:
    paths = _read_paths(args.input)
    budgets = _budgets(args, paths)
    stats = grouped_budget_eval(paths, budgets)
    groups = []
    for (lo, hi), st in zip(budgets, stats):
        g = {"low": lo, "high": hi, "stats": st.to_dict() if st else None}
        groups.append(g)
    if args.json:
        return _dump_json({"groups": groups})
    lines = ["low       high      n     pearson   spearman  kendall"]
    for g in groups:
        st = g["stats"]
        if st is None:
            lines.append(f"{g['low']:<9.4g} {g['high']:<9.4g} -     (skipped)")
        else:
            lines.append(
                f"{g['low']:<9.4g} {g['high']:<9.4g} {st['n']:<5d} "
                f"{st['pearson']:+.4f}   {st['spearman']:+.4f}   {st['kendall']:+.4f}"
            )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# search


def cmd_search(args: argparse.Namespace) -> str:
    spec = load_space(args.space)
    config = SearchConfig(
        population=args.population,
        generations=args.generations,
        parents=args.parents,
        budget=args.budget_gflops,
        mutation_rate=args.mutation_rate,
        seed=args.seed,
        input_hw=args.input,
        constraint_only=args.constraint_only,
        workers=args.workers,
    )
    result = nsga2_search(spec, config, make_evaluator(args.evaluator))
    if args.json:
        payload = result.to_dict()
        payload["space"] = spec.name
        payload["budget_gflops"] = args.budget_gflops if math.isfinite(args.budget_gflops) else None
        return _dump_json(payload)
    lines = ["gen  best_score   hypervolume"]
    lines += [f"{r.generation:3d}  {r.best_score:10.6f}  {r.hypervolume:12.6g}" for r in result.history]
    lines.append(f"front ({len(result.front)} archs): flops_g  score  encoding")
    lines += [f"  {i.flops:.4f}  {i.score:.6f}  {encode(i.arch)}" for i in result.front]
    if result.best:
        lines.append(f"best: {result.best.score:.6f} at {result.best.flops:.4f} G  {encode(result.best.arch)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# parser


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def build_parser(seed_default: int = 0) -> argparse.ArgumentParser:
    p = _Parser(prog="vitas-kit", description="Channel-sharing mappings, ViT search spaces, cost and NSGA-II search.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    def common(sp: argparse.ArgumentParser, seeded: bool = False) -> None:
        sp.add_argument("--json", action="store_true", help="emit the JSON form")
        if seeded:
            sp.add_argument("--seed", type=int, default=seed_default, help=f"RNG seed (default: ${SEED_ENV} or 0)")

    m = sub.add_parser("mapping", help="build, refine or enumerate a channel mapping")
    m.add_argument("action", choices=["build", "refine", "enumerate"])
    m.add_argument("--l", type=_positive, required=True, help="number of channel groups")
    m.add_argument("--kind", choices=sorted(_BUILDERS), default=None,
                   help="pattern to build (default: cyclic for build, ordinal as refine start)")
    m.add_argument("--non-contiguous", action="store_true", help="let cyclic windows split")
    m.add_argument("--iters", type=_nonneg, default=20000, help="local-search iterations for refine")
    m.add_argument("--mapping-in", help="refine a mapping read from this file")
    m.add_argument("--mapping-out", help="also write the mapping in text form here")
    common(m, seeded=True)
    m.set_defaults(func=cmd_mapping)

    s = sub.add_parser("space", help="count, sample or canonicalize architectures")
    s.add_argument("action", choices=["count", "sample", "canonicalize"])
    s.add_argument("--space", required=True, help="built-in name or config file")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--canonical", dest="canonical", action="store_true", default=True,
                   help="identity-shifted forms only (default)")
    g.add_argument("--raw", dest="canonical", action="store_false", help="all raw assignments")
    s.add_argument("--n", type=_positive, default=1, help="samples to draw")
    s.add_argument("--arch", help="encoding to canonicalize")
    common(s, seeded=True)
    s.set_defaults(func=cmd_space)

    c = sub.add_parser("cost", help="FLOPs and parameters of one architecture")
    c.add_argument("--space")
    c.add_argument("--arch")
    c.add_argument("--deit-ref", choices=["tiny", "small"], help="fixed DeiT reference instead of --arch")
    c.add_argument("--input", type=_resolution, default=(224, 224), help="HxW pixels (default 224x224)")
    c.add_argument("--local-window", type=_positive, default=7)
    common(c)
    c.set_defaults(func=cmd_cost)

    sm = sub.add_parser("simulate", help="weight-sharing training counts and influence (CSV)")
    sm.add_argument("--kind", choices=sorted(_BUILDERS), default="cyclic")
    sm.add_argument("--l", type=_positive, default=10)
    sm.add_argument("--steps", type=_nonneg, default=100_000)
    sm.add_argument("--buckets", type=_positive, default=10)
    sm.add_argument("--non-contiguous", action="store_true")
    sm.add_argument("--alternating", action="store_true", help="bilateral sides on alternate steps")
    common(sm, seeded=True)
    sm.set_defaults(func=cmd_simulate)

    r = sub.add_parser("rank", help="per-budget-group rank coefficients from a flops,score CSV")
    r.add_argument("--input", default="-", help="CSV file or - for stdin")
    gr = r.add_mutually_exclusive_group()
    gr.add_argument("--budgets", help="comma-separated low:high groups")
    gr.add_argument("--groups", type=_positive, default=8, help="equal-width groups over the data range")
    common(r)
    r.set_defaults(func=cmd_rank)

    se = sub.add_parser("search", help="NSGA-II search under a FLOPs budget")
    se.add_argument("--space", required=True)
    se.add_argument("--budget-gflops", type=float, default=math.inf)
    se.add_argument("--population", type=_positive, default=50)
    se.add_argument("--generations", type=_positive, default=40)
    se.add_argument("--parents", type=_positive, default=20)
    se.add_argument("--mutation-rate", type=float, default=0.1)
    se.add_argument("--evaluator", default="proxy", help="proxy, influence or cmd:<path>")
    se.add_argument("--constraint-only", action="store_true", help="score is the only objective")
    se.add_argument("--workers", type=_positive, default=1)
    se.add_argument("--input", type=_resolution, default=(224, 224))
    common(se, seeded=True)
    se.set_defaults(func=cmd_search)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser(_default_seed()).parse_args(argv)
        if getattr(args, "kind", "") is None:
            args.kind = "cyclic" if args.action == "build" else "ordinal"
        out = args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"vitas-kit: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (InfeasibleBudget, OSError, RuntimeError) as exc:
        print(f"vitas-kit: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write(out)
    sys.stdout.flush()
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
