"""Closed-form FLOPs and parameter counts for encoded architectures.

One multiply-accumulate counts as one FLOP. Softmax, LayerNorm, GELU and
residual additions are not counted. For a block with ``N`` query tokens,
residual width ``E``, per-projection attention width ``A`` (q, k and v each
have width ``A``), ``N_kv`` attended tokens and MLP width ``M``::

    qkv         3 * N * E * A
    scores      N * N_kv * A
    aggregate   N * N_kv * A
    projection  N * A * E
    mlp         2 * N * E * M

With ``E == A == D`` this is the usual ``3ND^2 + 2N N_kv D + ND^2``.
``local`` attention restricts ``N_kv`` to a ``window x window`` token
window; ``global`` attention sub-samples keys and values by the stage's
embedding stride in each spatial direction; ``block`` (DeiT) attends to all
tokens. The classifier head is charged to the last stage.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .space import (
    ArchEncoding,
    EmbedSpec,
    Family,
    LayerChoice,
    SpaceSpec,
    StageChoice,
    StageSpec,
    SpaceError,
    round_dim,
)

__all__ = [
    "CostError",
    "ResolutionError",
    "DivisibilityError",
    "CostConfig",
    "CostReport",
    "estimate",
    "min_max_cost",
    "check_budget",
    "reference_deit",
    "StageContext",
    "stage_contexts",
    "layer_cost",
]


class CostError(SpaceError):
    pass


class ResolutionError(CostError):
    pass


class DivisibilityError(CostError):
    pass


@dataclass(frozen=True)
class CostConfig:
    in_channels: int = 3
    num_classes: int = 1000
    local_window: int = 7
    # None: sub-sample by the stage's embedding stride
    global_sr: tuple[int, ...] | None = None


@dataclass(frozen=True)
class CostReport:
    flops: float  # giga-MACs
    params: float  # millions
    per_stage: tuple[tuple[float, float], ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "flops_g": self.flops,
            "params_m": self.params,
            "per_stage": [{"flops_g": f, "params_m": p} for f, p in self.per_stage],
        }


def _block_cost(
    n: int, n_kv: int, embed: int, attn: int, mlp: int
) -> tuple[int, int]:
    flops = 3 * n * embed * attn + 2 * n * n_kv * attn + n * attn * embed + 2 * n * embed * mlp
    params = (
        3 * embed * attn + 3 * attn  # qkv
        + attn * embed + embed  # projection
        + embed * mlp + mlp + mlp * embed + embed  # mlp
        + 4 * embed  # two LayerNorms
    )
    return flops, params


def _layer_dims(st: StageSpec, lc: LayerChoice, stage_index: int) -> tuple[int, int, int]:
    fused = st.max_attn_dim * st.attn_ratios[lc.attn]
    heads = st.head_choices[lc.heads]
    if fused.denominator != 1 or int(fused) % (3 * heads):
        raise DivisibilityError(
            f"stage {stage_index}: attention width {fused} does not split into q/k/v over {heads} heads"
        )
    return int(fused) // 3, heads, st.mlp_dim(lc.mlp)


@dataclass(frozen=True)
class StageContext:
    """Token geometry and widths seen by one stage's searchable layers."""

    height: int
    width: int
    tokens: int
    patch: int
    embed: int
    embed_flops: int
    embed_params: int


def stage_contexts(
    arch: ArchEncoding, input_hw: tuple[int, int] = (224, 224), config: CostConfig = CostConfig()
) -> list[StageContext]:
    space = arch.space
    h, w = input_hw
    embed = config.in_channels
    out = []
    for s, (st, sc) in enumerate(zip(space.stages, arch.stages)):
        patch = st.embed.patch_choices[sc.patch]
        if h % patch or w % patch:
            raise ResolutionError(f"stage {s}: feature map {h}x{w} not divisible by patch size {patch}")
        h, w = h // patch, w // patch
        prev, embed = embed, st.embed.dim(sc.embed_ratio)
        n = h * w
        flops = n * embed * prev * patch * patch
        params = prev * patch * patch * embed + embed + 2 * embed  # conv + bias + LayerNorm
        if space.class_token and s == 0:
            n += 1
            params += embed + n * embed  # private class token + position embedding
        out.append(StageContext(h, w, n, patch, embed, flops, params))
    return out


def layer_cost(
    st: StageSpec, lc: LayerChoice, ctx: StageContext, stage_index: int = 0, config: CostConfig = CostConfig()
) -> tuple[int, int]:
    """(MACs, params) of one searchable slot; Identity costs nothing."""
    if lc.is_identity:
        return 0, 0
    attn, _, mlp = _layer_dims(st, lc, stage_index)
    op = st.op_types[lc.op - 1]
    if op == "local":
        n_kv = min(config.local_window ** 2, ctx.tokens)
    elif op == "global":
        sr = config.global_sr[stage_index] if config.global_sr else ctx.patch
        n_kv = max(1, (ctx.height // sr) * (ctx.width // sr))
    else:
        n_kv = ctx.tokens
    return _block_cost(ctx.tokens, n_kv, ctx.embed, attn, mlp)


def estimate(
    arch: ArchEncoding, input_hw: tuple[int, int] = (224, 224), config: CostConfig = CostConfig()
) -> CostReport:
    space = arch.space
    per_stage: list[tuple[int, int]] = []
    ctxs = stage_contexts(arch, input_hw, config)
    for s, (st, sc, ctx) in enumerate(zip(space.stages, arch.stages, ctxs)):
        flops, params = ctx.embed_flops, ctx.embed_params
        for lc in sc.layers:
            f, p = layer_cost(st, lc, ctx, s, config)
            flops += f
            params += p
        per_stage.append((flops, params))
    # final norm + classifier on the last stage's width
    embed = ctxs[-1].embed
    f_last, p_last = per_stage[-1]
    per_stage[-1] = (
        f_last + embed * config.num_classes,
        p_last + 2 * embed + embed * config.num_classes + config.num_classes,
    )
    breakdown = tuple((f / 1e9, p / 1e6) for f, p in per_stage)
    return CostReport(
        sum(f for f, _ in per_stage) / 1e9,
        sum(p for _, p in per_stage) / 1e6,
        breakdown,
    )


def check_budget(
    arch: ArchEncoding,
    input_hw: tuple[int, int] = (224, 224),
    budget_flops: float = math.inf,
    config: CostConfig = CostConfig(),
) -> bool:
    return estimate(arch, input_hw, config).flops <= budget_flops


def _corner(space: SpaceSpec, patches: tuple[int, ...], largest: bool) -> ArchEncoding:
    stages = []
    for st, p in zip(space.stages, patches):
        top = len(st.embed.ratio_choices) - 1 if largest else 0
        layers = ()
        if largest:
            layers = tuple(
                LayerChoice(1, 0, len(st.attn_ratios) - 1, len(st.mlp_ratios) - 1) for _ in range(st.layers)
            )
        else:
            layers = tuple(LayerChoice() for _ in range(st.layers))
        stages.append(StageChoice(p, top, layers))
    return ArchEncoding(space, tuple(stages))


def min_max_cost(
    spec: SpaceSpec, input_hw: tuple[int, int] = (224, 224), config: CostConfig = CostConfig()
) -> tuple[CostReport, CostReport]:
    """Cheapest and most expensive architecture by FLOPs (params break ties).

    Cost rises with every ratio and with depth, so the extremes sit at the
    all-Identity/smallest-ratio and full-depth/largest-ratio corners. Patch
    sizes and op kinds are not monotone and are enumerated at both corners.
    Heads do not change the count.
    """
    lo: CostReport | None = None
    hi: CostReport | None = None
    patch_sets = itertools.product(*(range(len(st.embed.patch_choices)) for st in spec.stages))
    for patches in patch_sets:
        cheap = _corner(spec, patches, largest=False)
        r = estimate(cheap, input_hw, config)
        if lo is None or (r.flops, r.params) < (lo.flops, lo.params):
            lo = r
        for big in _max_variants(spec, patches):
            r = estimate(big, input_hw, config)
            if hi is None or (r.flops, r.params) > (hi.flops, hi.params):
                hi = r
    return lo, hi


def _max_variants(spec: SpaceSpec, patches: tuple[int, ...]):
    base = _corner(spec, patches, largest=True)
    # cost is additive over layers, so each stage's best op kind can be picked independently
    options = []
    for s, st in enumerate(spec.stages):
        if st.layers == 0:
            options.append([base.stages[s]])
            continue
        alts = []
        for op in range(1, len(st.op_types) + 1):
            lc = LayerChoice(op, 0, len(st.attn_ratios) - 1, len(st.mlp_ratios) - 1)
            alts.append(StageChoice(base.stages[s].patch, base.stages[s].embed_ratio, (lc,) * st.layers))
        options.append(alts)
    for combo in itertools.product(*options):
        yield ArchEncoding(spec, combo)


def reference_deit(
    dim: int, heads: int, depth: int, patch: int = 16, mlp_ratio: int = 4
) -> ArchEncoding:
    """A fixed DeiT configuration expressed as a single-point space."""
    from fractions import Fraction

    one = (Fraction(1),)
    stage = StageSpec(
        EmbedSpec((patch,), dim, one),
        depth,
        ("block",),
        (heads,),
        3 * dim,
        mlp_ratio * dim,
        one,
        one,
    )
    space = SpaceSpec(f"deit-ref-{dim}", Family.DEIT, (stage,), class_token=True)
    return ArchEncoding(space, (StageChoice(0, 0, (LayerChoice(1, 0, 0, 0),) * depth),))
