"""Transformer search spaces, architecture encodings and identity shifting.

A space is a list of stages. Each stage opens with a patch-embedding layer
(patch size and width ratio are searched) followed by ``layers`` slots. A
slot holds either Identity or a parametric block described by an op kind,
a head count, an attention width ratio and an MLP width ratio.

Layer choices are stored as integer indices. Op index 0 is Identity and
``1..len(ops)`` are the parametric kinds; an Identity slot keeps all of its
other indices at 0.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterator, Sequence

__all__ = [
    "SpaceError",
    "SpaceParseError",
    "SpaceValidationError",
    "DecodeError",
    "IncompatibleArch",
    "Family",
    "EmbedSpec",
    "StageSpec",
    "SpaceSpec",
    "LayerChoice",
    "StageChoice",
    "ArchEncoding",
    "SpaceCount",
    "IDENTITY",
    "BUILTIN_SPACES",
    "parse_space_spec",
    "load_space",
    "canonicalize",
    "is_canonical",
    "count_space",
    "sample_uniform",
    "encode",
    "decode",
    "iter_archs",
    "minimal_arch",
]

IDENTITY = 0


class SpaceError(ValueError):
    pass


class SpaceParseError(SpaceError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SpaceValidationError(SpaceError):
    pass


class DecodeError(SpaceError):
    pass


class IncompatibleArch(SpaceError):
    pass


class Family(str, Enum):
    TWINS = "twins"
    DEIT = "deit"


@dataclass(frozen=True)
class EmbedSpec:
    patch_choices: tuple[int, ...]
    max_dim: int
    ratio_choices: tuple[Fraction, ...]

    @property
    def n_choices(self) -> int:
        return len(self.patch_choices) * len(self.ratio_choices)

    def dim(self, ratio_index: int) -> int:
        return round_dim(self.max_dim * self.ratio_choices[ratio_index])


@dataclass(frozen=True)
class StageSpec:
    embed: EmbedSpec
    layers: int
    op_types: tuple[str, ...] = ()
    head_choices: tuple[int, ...] = ()
    max_attn_dim: int = 0
    max_mlp_dim: int = 0
    attn_ratios: tuple[Fraction, ...] = ()
    mlp_ratios: tuple[Fraction, ...] = ()

    @property
    def per_layer_choices(self) -> int:
        """Number of parametric (non-Identity) settings of one slot."""
        return (
            len(self.op_types) * len(self.head_choices) * len(self.attn_ratios) * len(self.mlp_ratios)
        )

    def attn_dim(self, ratio_index: int) -> int:
        """Width of each of the q, k and v projections.

        ``max_attn_dim`` is the width of the fused qkv projection.
        """
        return int(self.max_attn_dim * self.attn_ratios[ratio_index]) // 3

    def mlp_dim(self, ratio_index: int) -> int:
        return round_dim(self.max_mlp_dim * self.mlp_ratios[ratio_index])


@dataclass(frozen=True)
class SpaceSpec:
    name: str
    family: Family
    stages: tuple[StageSpec, ...]
    class_token: bool = False

    def gene_sizes(self) -> tuple[int, ...]:
        sizes: list[int] = []
        for st in self.stages:
            sizes += [len(st.embed.patch_choices), len(st.embed.ratio_choices)]
            for _ in range(st.layers):
                sizes += [len(st.op_types) + 1, len(st.head_choices), len(st.attn_ratios), len(st.mlp_ratios)]
        return tuple(sizes)


def round_dim(x: Fraction) -> int:
    """Round half up, never below 1."""
    return max(1, int(x + Fraction(1, 2)))


# ---------------------------------------------------------------------------
# encodings


@dataclass(frozen=True, order=True)
class LayerChoice:
    op: int = IDENTITY
    heads: int = 0
    attn: int = 0
    mlp: int = 0

    @property
    def is_identity(self) -> bool:
        return self.op == IDENTITY


@dataclass(frozen=True, order=True)
class StageChoice:
    patch: int
    embed_ratio: int
    layers: tuple[LayerChoice, ...]


@dataclass(frozen=True)
class ArchEncoding:
    space: SpaceSpec
    stages: tuple[StageChoice, ...]

    @property
    def class_token(self) -> int | None:
        """Patch size whose private class token this architecture uses."""
        if not self.space.class_token:
            return None
        return self.space.stages[0].embed.patch_choices[self.stages[0].patch]

    def genes(self) -> tuple[int, ...]:
        out: list[int] = []
        for sc in self.stages:
            out += [sc.patch, sc.embed_ratio]
            for lc in sc.layers:
                out += [lc.op, lc.heads, lc.attn, lc.mlp]
        return tuple(out)

    @classmethod
    def from_genes(cls, space: SpaceSpec, genes: Sequence[int]) -> "ArchEncoding":
        """Build from a flat gene vector; Identity slots get their sub-indices zeroed."""
        genes = list(genes)
        if len(genes) != len(space.gene_sizes()):
            raise DecodeError(f"expected {len(space.gene_sizes())} genes, got {len(genes)}")
        pos = 0
        stages = []
        for st in space.stages:
            patch, ratio = genes[pos], genes[pos + 1]
            pos += 2
            layers = []
            for _ in range(st.layers):
                op, h, a, m = genes[pos:pos + 4]
                pos += 4
                layers.append(LayerChoice() if op == IDENTITY else LayerChoice(op, h, a, m))
            stages.append(StageChoice(patch, ratio, tuple(layers)))
        arch = cls(space, tuple(stages))
        _validate(arch)
        return arch

    def __str__(self) -> str:
        return encode(self)


def _validate(arch: ArchEncoding) -> None:
    space = arch.space
    if len(arch.stages) != len(space.stages):
        raise DecodeError(f"expected {len(space.stages)} stages, got {len(arch.stages)}")
    for s, (st, sc) in enumerate(zip(space.stages, arch.stages)):
        _check_index(f"stage {s} embed_patch", sc.patch, len(st.embed.patch_choices))
        _check_index(f"stage {s} embed_ratio", sc.embed_ratio, len(st.embed.ratio_choices))
        if len(sc.layers) != st.layers:
            raise DecodeError(f"stage {s}: expected {st.layers} layers, got {len(sc.layers)}")
        for k, lc in enumerate(sc.layers):
            where = f"stage {s} layer {k}"
            _check_index(f"{where} op", lc.op, len(st.op_types) + 1)
            if lc.is_identity:
                if (lc.heads, lc.attn, lc.mlp) != (0, 0, 0):
                    raise DecodeError(f"{where}: identity layer carries no sub-choices")
                continue
            _check_index(f"{where} heads", lc.heads, len(st.head_choices))
            _check_index(f"{where} attn_ratio", lc.attn, len(st.attn_ratios))
            _check_index(f"{where} mlp_ratio", lc.mlp, len(st.mlp_ratios))


def _check_index(field: str, value: int, size: int) -> None:
    if not 0 <= value < size:
        raise DecodeError(f"{field}: index {value} out of range 0..{size - 1}")


def encode(arch: ArchEncoding) -> str:
    """Comma-separated indices, stages separated by ``|``."""
    groups = []
    for sc in arch.stages:
        vals = [sc.patch, sc.embed_ratio]
        for lc in sc.layers:
            vals += [lc.op, lc.heads, lc.attn, lc.mlp]
        groups.append(",".join(map(str, vals)))
    return "|".join(groups)


def decode(space: SpaceSpec, text: str) -> ArchEncoding:
    groups = text.strip().split("|")
    if len(groups) != len(space.stages):
        raise DecodeError(f"expected {len(space.stages)} stage groups, got {len(groups)}")
    stages = []
    for s, (st, grp) in enumerate(zip(space.stages, groups)):
        try:
            vals = [int(tok) for tok in grp.split(",")]
        except ValueError as exc:
            raise DecodeError(f"stage {s}: non-integer index in {grp!r}") from exc
        if len(vals) != 2 + 4 * st.layers:
            raise DecodeError(f"stage {s}: expected {2 + 4 * st.layers} indices, got {len(vals)}")
        layers = tuple(LayerChoice(*vals[2 + 4 * k: 6 + 4 * k]) for k in range(st.layers))
        stages.append(StageChoice(vals[0], vals[1], layers))
    arch = ArchEncoding(space, tuple(stages))
    _validate(arch)
    return arch


# ---------------------------------------------------------------------------
# identity shifting


def canonicalize(arch: ArchEncoding) -> ArchEncoding:
    """Move every Identity slot to the tail of its stage.

    The order of parametric slots is kept, so the map is idempotent and
    preserves the multiset of parametric choices.
    """
    stages = []
    for sc in arch.stages:
        ops = [lc for lc in sc.layers if not lc.is_identity]
        ids = [LayerChoice()] * (len(sc.layers) - len(ops))
        stages.append(StageChoice(sc.patch, sc.embed_ratio, tuple(ops + ids)))
    return ArchEncoding(arch.space, tuple(stages))


def is_canonical(arch: ArchEncoding) -> bool:
    for sc in arch.stages:
        seen_id = False
        for lc in sc.layers:
            if lc.is_identity:
                seen_id = True
            elif seen_id:
                return False
    return True


# ---------------------------------------------------------------------------
# counting and sampling


@dataclass(frozen=True)
class SpaceCount:
    total: int
    per_stage: tuple[int, ...]


def _depth_weights(P: int, L: int) -> list[int]:
    return [P ** d for d in range(L + 1)]


def count_space(spec: SpaceSpec, canonical: bool = True) -> SpaceCount:
    """Exact number of architectures.

    A stage with ``L`` slots and ``P`` parametric settings per slot has
    ``sum(P**d for d in 0..L)`` canonical layer assignments (depth ``d``
    parametric slots followed by Identity) and ``(P + 1)**L`` raw ones; both
    are multiplied by the stage's embedding choices.
    """
    per = []
    for st in spec.stages:
        P = st.per_layer_choices
        layers = sum(_depth_weights(P, st.layers)) if canonical else (P + 1) ** st.layers
        per.append(st.embed.n_choices * layers)
    total = 1
    for c in per:
        total *= c
    return SpaceCount(total, tuple(per))


def _random_layer(st: StageSpec, rng: random.Random) -> LayerChoice:
    return LayerChoice(
        rng.randrange(len(st.op_types)) + 1,
        rng.randrange(len(st.head_choices)),
        rng.randrange(len(st.attn_ratios)),
        rng.randrange(len(st.mlp_ratios)),
    )


def _rng(seed: int | random.Random | None) -> random.Random:
    return seed if isinstance(seed, random.Random) else random.Random(seed)


def sample_uniform(
    spec: SpaceSpec, canonical: bool = True, seed: int | random.Random | None = 0
) -> ArchEncoding:
    """Uniform draw over canonical forms (or over raw assignments).

    For canonical sampling the depth ``d`` is drawn with probability
    ``P**d / sum_k P**k`` using exact integer arithmetic, then each of the
    ``d`` parametric slots is drawn uniformly.
    """
    rng = _rng(seed)
    stages = []
    for st in spec.stages:
        patch = rng.randrange(len(st.embed.patch_choices))
        ratio = rng.randrange(len(st.embed.ratio_choices))
        P = st.per_layer_choices
        if canonical:
            weights = _depth_weights(P, st.layers)
            u = rng.randrange(sum(weights))
            depth = 0
            while u >= weights[depth]:
                u -= weights[depth]
                depth += 1
            layers = [_random_layer(st, rng) for _ in range(depth)]
            layers += [LayerChoice()] * (st.layers - depth)
        else:
            layers = []
            for _ in range(st.layers):
                if rng.randrange(P + 1) == 0:
                    layers.append(LayerChoice())
                else:
                    layers.append(_random_layer(st, rng))
        stages.append(StageChoice(patch, ratio, tuple(layers)))
    return ArchEncoding(spec, tuple(stages))


def _stage_layer_options(st: StageSpec) -> list[LayerChoice]:
    opts = [LayerChoice()]
    for op in range(1, len(st.op_types) + 1):
        for h in range(len(st.head_choices)):
            for a in range(len(st.attn_ratios)):
                for m in range(len(st.mlp_ratios)):
                    opts.append(LayerChoice(op, h, a, m))
    return opts


def iter_archs(spec: SpaceSpec, canonical: bool = True) -> Iterator[ArchEncoding]:
    """Enumerate a (small) space exhaustively. Canonical forms only by default."""
    import itertools

    per_stage = []
    for st in spec.stages:
        embeds = list(itertools.product(range(len(st.embed.patch_choices)), range(len(st.embed.ratio_choices))))
        opts = _stage_layer_options(st)
        if canonical:
            params = opts[1:]
            layer_sets = [
                tuple(prefix) + (LayerChoice(),) * (st.layers - d)
                for d in range(st.layers + 1)
                for prefix in itertools.product(params, repeat=d)
            ]
        else:
            layer_sets = list(itertools.product(opts, repeat=st.layers))
        per_stage.append([StageChoice(p, r, ls) for (p, r) in embeds for ls in layer_sets])
    for combo in itertools.product(*per_stage):
        yield ArchEncoding(spec, combo)


def minimal_arch(spec: SpaceSpec) -> ArchEncoding:
    """All-Identity, all-smallest choices (the all-zero gene vector)."""
    return ArchEncoding.from_genes(spec, [0] * len(spec.gene_sizes()))


# ---------------------------------------------------------------------------
# config documents

_STAGE_KEYS = {
    "layers", "ops", "heads", "attn_ratios", "mlp_ratios", "embed_patch",
    "embed_ratios", "embed_max_dim", "max_attn_dim", "max_mlp_dim",
}
_TOP_KEYS = {"name", "family", "class_token"}
_RANGE = re.compile(r"^\s*(\d+)\s*/\s*(\d+)\s*\.\.\s*(\d+)\s*/\s*(\d+)\s*$")


def _parse_ratios(raw: str, line: int) -> tuple[Fraction, ...]:
    # "1/10..10/10" is shorthand for the tenths 1/10, 2/10, ..., 10/10
    m = _RANGE.match(raw)
    try:
        if m:
            a, den, b, den2 = map(int, m.groups())
            if den != den2 or den == 0:
                raise ValueError("range ends need one denominator")
            return tuple(Fraction(i, den) for i in range(a, b + 1))
        return tuple(Fraction(tok.strip()) for tok in raw.split(",") if tok.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise SpaceParseError(f"bad ratio list {raw!r}: {exc}", line) from exc


def _parse_ints(raw: str, line: int) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise SpaceParseError(f"expected integers, got {raw!r}", line) from exc


def _parse_int(raw: str, line: int) -> int:
    try:
        return int(raw.strip())
    except ValueError as exc:
        raise SpaceParseError(f"expected an integer, got {raw!r}", line) from exc


def _parse_bool(raw: str, line: int) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise SpaceParseError(f"expected a boolean, got {raw!r}", line)


def parse_space_spec(text: str) -> SpaceSpec:
    """Parse a space config document.

    Top-level ``key = value`` lines (``name``, ``family``, ``class_token``)
    come first, then one ``[stage]`` block per stage. ``#`` starts a comment.
    """
    top: dict[str, tuple[str, int]] = {}
    blocks: list[tuple[int, dict[str, tuple[str, int]]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[stage]":
                raise SpaceParseError(f"unknown section {line!r}", lineno)
            blocks.append((lineno, {}))
            continue
        if "=" not in line:
            raise SpaceParseError(f"expected key = value, got {line!r}", lineno)
        key, val = (part.strip() for part in line.split("=", 1))
        target = blocks[-1][1] if blocks else top
        allowed = _STAGE_KEYS if blocks else _TOP_KEYS
        if key not in allowed:
            raise SpaceParseError(f"unknown key {key!r}", lineno)
        if key in target:
            raise SpaceParseError(f"duplicate key {key!r}", lineno)
        target[key] = (val, lineno)
    if not top and not blocks:
        raise SpaceParseError("empty space document", 1)
    if not blocks:
        raise SpaceParseError("no [stage] blocks", len(text.splitlines()) or 1)

    name = top.get("name", ("custom", 0))[0]
    fam_raw, fam_line = top.get("family", ("deit", 0))
    try:
        family = Family(fam_raw.lower())
    except ValueError as exc:
        raise SpaceParseError(f"unknown family {fam_raw!r}", fam_line) from exc
    class_token = _parse_bool(*top["class_token"]) if "class_token" in top else family is Family.DEIT

    stages = []
    for start, kv in blocks:
        def get(key: str, default: str | None = None) -> tuple[str, int]:
            if key in kv:
                return kv[key]
            if default is None:
                raise SpaceParseError(f"[stage] is missing {key!r}", start)
            return default, start

        layers = _parse_int(*get("layers", "0"))
        embed = EmbedSpec(
            _parse_ints(*get("embed_patch")),
            _parse_int(*get("embed_max_dim")),
            _parse_ratios(*get("embed_ratios")),
        )
        if layers:
            ops_raw, _ = get("ops")
            stage = StageSpec(
                embed,
                layers,
                tuple(tok.strip().lower() for tok in ops_raw.split(",") if tok.strip()),
                _parse_ints(*get("heads")),
                _parse_int(*get("max_attn_dim")),
                _parse_int(*get("max_mlp_dim")),
                _parse_ratios(*get("attn_ratios")),
                _parse_ratios(*get("mlp_ratios")),
            )
        else:
            stage = StageSpec(embed, 0)
        stages.append(stage)
    spec = SpaceSpec(name, family, tuple(stages), class_token)
    validate_space(spec)
    return spec


def _check_ratios(ratios: tuple[Fraction, ...], what: str) -> None:
    if not ratios:
        raise SpaceValidationError(f"{what}: no ratio choices")
    if any(r <= 0 or r > 1 for r in ratios):
        raise SpaceValidationError(f"{what}: ratios must lie in (0, 1]")
    if any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise SpaceValidationError(f"{what}: ratios must be strictly increasing")


def validate_space(spec: SpaceSpec) -> None:
    if not spec.stages:
        raise SpaceValidationError(f"space {spec.name!r} has no stages")
    if spec.class_token and spec.family is not Family.DEIT:
        raise SpaceValidationError("class_token is only meaningful for deit-family spaces")
    for s, st in enumerate(spec.stages):
        where = f"stage {s}"
        if not st.embed.patch_choices or any(p < 1 for p in st.embed.patch_choices):
            raise SpaceValidationError(f"{where}: embed_patch needs positive patch sizes")
        if st.embed.max_dim < 1:
            raise SpaceValidationError(f"{where}: embed_max_dim must be positive")
        _check_ratios(st.embed.ratio_choices, f"{where} embed_ratios")
        if st.layers < 0:
            raise SpaceValidationError(f"{where}: negative layer count")
        if st.layers == 0:
            continue
        if not st.op_types or not st.head_choices:
            raise SpaceValidationError(f"{where}: searchable layers need ops and heads")
        _check_ratios(st.attn_ratios, f"{where} attn_ratios")
        _check_ratios(st.mlp_ratios, f"{where} mlp_ratios")
        for r in st.attn_ratios:
            fused = st.max_attn_dim * r
            for h in st.head_choices:
                if fused.denominator != 1 or int(fused) % (3 * h):
                    raise SpaceValidationError(
                        f"{where}: max_attn_dim {st.max_attn_dim} x ratio {r} is not divisible "
                        f"into q/k/v with {h} heads"
                    )
        if st.max_mlp_dim < 1:
            raise SpaceValidationError(f"{where}: max_mlp_dim must be positive")


# ---------------------------------------------------------------------------
# built-in spaces, transcribed from the published space tables


def _twins(name: str, embed: Sequence[int], depth: Sequence[int], attn: Sequence[int], mlp: Sequence[int]) -> str:
    patches = (4, 2, 2, 2)
    out = [f"name = {name}", "family = twins", "class_token = false", ""]
    for p, e, d, a, m in zip(patches, embed, depth, attn, mlp):
        out += [
            "[stage]",
            f"embed_patch = {p}",
            f"embed_max_dim = {e}",
            "embed_ratios = 1/10..10/10",
            f"layers = {d}",
            "ops = local, global",
            "heads = 2, 4, 8, 16",
            f"max_attn_dim = {a}",
            f"max_mlp_dim = {m}",
            "attn_ratios = 1/10..10/10",
            "mlp_ratios = 1/10..10/10",
            "",
        ]
    return "\n".join(out)


def _deit(name: str, embed: int, depth: int, dim: int) -> str:
    return "\n".join([
        f"name = {name}",
        "family = deit",
        "class_token = true",
        "",
        "[stage]",
        "embed_patch = 14, 16, 32",
        f"embed_max_dim = {embed}",
        "embed_ratios = 1/10..10/10",
        f"layers = {depth}",
        "ops = block",
        "heads = 3, 6, 12, 16",
        f"max_attn_dim = {dim}",
        f"max_mlp_dim = {dim}",
        "attn_ratios = 1/10..10/10",
        "mlp_ratios = 1/10..10/10",
        "",
    ])


BUILTIN_SPACES: dict[str, str] = {
    "twins-tiny": _twins("twins-tiny", (128, 256, 512, 1024), (4, 4, 12, 6), (480, 960, 1920, 3840), (512, 1024, 2048, 4096)),
    "twins-small": _twins("twins-small", (128, 256, 512, 1024), (4, 4, 12, 6), (480, 960, 1920, 3840), (512, 1024, 2048, 4096)),
    "twins-base": _twins("twins-base", (192, 384, 768, 1536), (4, 4, 20, 4), (480, 960, 1920, 3840), (768, 1536, 3072, 6144)),
    "twins-large": _twins("twins-large", (256, 512, 1024, 2048), (4, 4, 20, 4), (960, 1920, 3840, 7680), (1024, 2048, 4096, 8192)),
    "deit-tiny": _deit("deit-tiny", 384, 14, 1440),
    "deit-small": _deit("deit-small", 768, 14, 2880),
}


def load_space(name_or_path: str) -> SpaceSpec:
    """Built-in space by name, or a config file path."""
    if name_or_path in BUILTIN_SPACES:
        return parse_space_spec(BUILTIN_SPACES[name_or_path])
    try:
        with open(name_or_path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SpaceError(
            f"unknown space {name_or_path!r}: not a built-in ({', '.join(BUILTIN_SPACES)}) nor a readable file"
        ) from exc
    return parse_space_spec(text)
