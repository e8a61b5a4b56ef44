"""Recurrent language-guided refinement of an N_f x T x C visual token grid.

Each step attends over space (per frame, guided by the noun phrase) and then
over time (per object slot, guided by the verb phrase), and adds a learned
channel map of the previous state:

    O_hat   = spatial(O_prev, np_vec)
    O_tilde = temporal(O_hat, vp_vec)
    O_next  = O_prev @ W + O_tilde
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embed import EmbeddingProvider, PhraseEmbedding
from .errors import EmptyChain, ShapeMismatch
from .planner import SubPromptChain
from .tensor import (
    AttentionParams,
    Tensor,
    add,
    attention,
    concat,
    constant,
    layer_norm,
    matmul,
    parameter,
    scale,
    scaled_dot_attention,
    transpose,
    reshape,
)

VARIANTS = (
    "full",
    "no-spatial",
    "no-temporal",
    "no-lang",
    "joint",
    "swap",
    "parallel-avg",
    "parallel-sum",
)


@dataclass
class TokenGrid:
    tokens: Tensor

    def __post_init__(self):
        if not isinstance(self.tokens, Tensor):
            self.tokens = Tensor(self.tokens)
        if self.tokens.data.ndim != 3 or min(self.tokens.shape) < 1:
            raise ShapeMismatch(f"token grid must be N_f x T x C, got {self.tokens.shape}")

    @property
    def n_f(self):
        return self.tokens.shape[0]

    @property
    def t(self):
        return self.tokens.shape[1]

    @property
    def c(self):
        return self.tokens.shape[2]

    @property
    def data(self):
        return self.tokens.data


@dataclass
class RefinerConfig:
    variant: str = "full"
    heads: int = 4
    max_steps: int | None = None
    lang_rows: str = "replicated"  # or "single"
    layer_norm: bool = False
    empty_chain: str = "identity"  # or "error"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lang_rows not in ("replicated", "single"):
            raise ValueError(f"lang_rows must be replicated|single, got {self.lang_rows!r}")
        if self.empty_chain not in ("identity", "error"):
            raise ValueError(f"empty_chain must be identity|error, got {self.empty_chain!r}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")


@dataclass
class RefinerParams:
    spatial_attn: AttentionParams
    temporal_attn: AttentionParams
    residual_w: Tensor
    joint_attn: AttentionParams | None = None

    def __post_init__(self):
        if self.spatial_attn is self.temporal_attn or any(
            a is b for a, b in zip(self.spatial_attn.parameters(), self.temporal_attn.parameters())
        ):
            raise ValueError("spatial and temporal attention weights must not be shared")

    @property
    def dim(self):
        return self.residual_w.shape[0]

    def named_parameters(self):
        out = []
        stages = [("spatial", self.spatial_attn), ("temporal", self.temporal_attn)]
        if self.joint_attn is not None:
            stages.append(("joint", self.joint_attn))
        for name, attn in stages:
            out += [(f"{name}.w_{k}", w) for k, w in zip("qkvo", attn.parameters())]
        out.append(("residual.w", self.residual_w))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    @classmethod
    def init(cls, dim: int, heads: int, rng: np.random.Generator, joint: bool = False):
        """W starts near identity; attention projections are N(0, 1/C)."""
        spatial = AttentionParams.init(dim, heads, rng, prefix="spatial")
        temporal = AttentionParams.init(dim, heads, rng, prefix="temporal")
        w = np.eye(dim) + rng.normal(0.0, 0.01 / math.sqrt(dim), (dim, dim))
        joint_attn = AttentionParams.init(dim, heads, rng, prefix="joint") if joint else None
        return cls(spatial, temporal, parameter(w, "residual.w"), joint_attn)


def _vec(x) -> np.ndarray:
    return x.vector if isinstance(x, PhraseEmbedding) else np.asarray(x, dtype=float)


def _tokens(grid) -> Tensor:
    if isinstance(grid, TokenGrid):
        return grid.tokens
    return TokenGrid(grid).tokens


def _lang_block(vec, batch, n, c, mode):
    rows = n if mode == "replicated" else 1
    return constant(np.broadcast_to(vec, (batch, rows, c)))


def _guided(attn, seq, vec, lang, mode, use_ln):
    """Attend over axis 1 of ``seq`` (B, n, C) with language rows appended; keep n rows."""
    b, n, c = seq.shape
    x = layer_norm(seq) if use_ln else seq
    if not lang:
        return scaled_dot_attention(attn, x)
    v = _vec(vec)
    if v.shape != (c,):
        raise ShapeMismatch(f"phrase vector dim {v.shape} vs grid C={c}")
    # outputs at the language rows are discarded, so only visual rows issue queries
    return attention(attn, x, concat([x, _lang_block(v, b, n, c, mode)], axis=1))


def spatial_refine_step(params, grid, np_vec, *, lang=True, lang_rows="replicated", use_ln=False):
    """Per-frame attention over the N_f object tokens plus copies of the NP vector."""
    g = _tokens(grid)
    per_frame = transpose(g, (1, 0, 2))  # T x N_f x C
    out = _guided(params.spatial_attn, per_frame, np_vec, lang, lang_rows, use_ln)
    return TokenGrid(transpose(out, (1, 0, 2)))


def temporal_refine_step(params, grid, vp_vec, *, lang=True, lang_rows="replicated", use_ln=False):
    """Per-object attention over the T time steps plus copies of the VP vector."""
    g = _tokens(grid)
    out = _guided(params.temporal_attn, g, vp_vec, lang, lang_rows, use_ln)
    return TokenGrid(out)


def joint_st_attention(params, grid, np_vec, vp_vec, *, attn=None, lang_rows="replicated", use_ln=False):
    """One attention over all N_f*T tokens plus rows of the averaged NP/VP vector."""
    g = _tokens(grid)
    n_f, t, c = g.shape
    if attn is None:
        attn = params.joint_attn if params.joint_attn is not None else params.spatial_attn
    guide = 0.5 * (_vec(np_vec) + _vec(vp_vec))
    flat = reshape(g, (1, n_f * t, c))
    out = _guided(attn, flat, guide, True, lang_rows, use_ln)
    return TokenGrid(reshape(out, (n_f, t, c)))


def _residual(params, prev: Tensor) -> Tensor:
    return matmul(prev, params.residual_w)


def _one_step(params, cfg, prev: Tensor, np_vec, vp_vec, trace, p) -> Tensor:
    v = cfg.variant
    kw = dict(lang_rows=cfg.lang_rows, use_ln=cfg.layer_norm)
    if v == "joint":
        if trace is not None:
            trace.append(("joint", p))
        return joint_st_attention(params, prev, np_vec, vp_vec, **kw).tokens
    lang = v != "no-lang"
    s_vec, t_vec = (vp_vec, np_vec) if v == "swap" else (np_vec, vp_vec)
    x = prev
    if v != "no-spatial":
        if trace is not None:
            trace.append(("spatial", p))
        x = spatial_refine_step(params, x, s_vec, lang=lang, **kw).tokens
    if v != "no-temporal":
        if trace is not None:
            trace.append(("temporal", p))
        x = temporal_refine_step(params, x, t_vec, lang=lang, **kw).tokens
    return x


def refine(
    params: RefinerParams,
    config: RefinerConfig,
    grid0,
    chain,
    provider: EmbeddingProvider | None = None,
    trace: list | None = None,
) -> TokenGrid:
    """Run the refinement recurrence over the sub-prompts of ``chain``.

    ``chain`` is a :class:`SubPromptChain` (embedded with ``provider``) or a list
    of ``(np_vector, vp_vector)`` pairs. ``trace`` collects ``(stage, step)``
    tuples in execution order.
    """
    return refine_steps(params, config, grid0, chain, provider, trace)[-1]


def _pairs(chain, provider, c):
    if isinstance(chain, SubPromptChain):
        if provider is None:
            raise ValueError("a SubPromptChain needs an embedding provider")
        if provider.dim != c:
            raise ShapeMismatch(f"provider dim {provider.dim} vs grid C={c}")
        return [(provider.vector(sp.np_text), provider.vector(sp.vp_text)) for sp in chain.prompts]
    return [(_vec(a), _vec(b)) for a, b in chain]


def refine_steps(params, config, grid0, chain, provider=None, trace=None) -> list[TokenGrid]:
    """Like :func:`refine` but return ``[O_0, O_1, ..., O_P]``.

    The parallel variants have no intermediate states; they return ``[O_0, O_P]``.
    """
    grid0 = grid0 if isinstance(grid0, TokenGrid) else TokenGrid(grid0)
    if grid0.c != params.dim:
        raise ShapeMismatch(f"grid C={grid0.c} vs parameter dim {params.dim}")
    pairs = _pairs(chain, provider, grid0.c)
    if config.max_steps is not None:
        pairs = pairs[: config.max_steps]
    if not pairs:
        if config.empty_chain == "error":
            raise EmptyChain("no sub-prompts to refine with")
        return [grid0]
    o0 = grid0.tokens
    if config.variant.startswith("parallel"):
        branches = [
            add(_residual(params, o0), _one_step(params, config, o0, n, v, trace, p))
            for p, (n, v) in enumerate(pairs, 1)
        ]
        acc = branches[0]
        for b in branches[1:]:
            acc = add(acc, b)
        if config.variant == "parallel-avg":
            acc = scale(acc, 1.0 / len(branches))
        return [grid0, TokenGrid(acc)]
    states = [grid0]
    o = o0
    for p, (n, v) in enumerate(pairs, 1):
        o = add(_residual(params, o), _one_step(params, config, o, n, v, trace, p))
        states.append(TokenGrid(o))
    return states
