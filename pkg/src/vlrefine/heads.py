"""Task heads: segment scoring for temporal grounding, mask logits for segmentation."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyCandidates,
    LengthMismatch,
    NonBinaryGroundTruth,
    SampleIOError,
    ShapeMismatch,
)
from .tensor import (
    AttentionParams,
    Tensor,
    add,
    attention,
    constant,
    divide,
    log,
    matmul,
    mean,
    multiply,
    parameter,
    reshape,
    scale,
    sigmoid,
    sum_all,
)

PROB_FLOOR = 1e-12


@dataclass(frozen=True, order=True)
class Segment:
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid segment [{self.start}, {self.end})")

    @property
    def width(self):
        return self.end - self.start

    def to_list(self):
        return [self.start, self.end]


@dataclass(frozen=True)
class VtgLabelConfig:
    tau_min: float = 0.3
    tau_max: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.tau_min < self.tau_max <= 1.0:
            raise ValueError(f"need 0 <= tau_min < tau_max <= 1, got {self.tau_min}, {self.tau_max}")


@dataclass(frozen=True)
class RvosLossConfig:
    lambda_f: float = 1.0
    lambda_v: float = 1.0

    def __post_init__(self):
        if self.lambda_f < 0 or self.lambda_v < 0 or self.lambda_f == self.lambda_v == 0:
            raise ValueError("loss weights must be nonnegative and not both zero")


def temporal_iou(a: Segment, b: Segment) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start))
    union = a.width + b.width - inter
    return inter / union


# ------------------------------------------------------------------------- VTG


def _vec(x):
    return getattr(x, "vector", x)


def pooling_matrix(candidates, t: int) -> np.ndarray:
    """Row i averages the clips of candidate i."""
    pool = np.zeros((len(candidates), t))
    for i, seg in enumerate(candidates):
        if seg.end > t:
            raise ShapeMismatch(f"segment {seg} exceeds T={t}")
        pool[i, seg.start : seg.end] = 1.0 / seg.width
    return pool


def vtg_logits(grid, sentence_embed, candidates) -> Tensor:
    tokens = getattr(grid, "tokens", grid)
    if not isinstance(tokens, Tensor):
        tokens = Tensor(tokens)
    if not candidates:
        raise EmptyCandidates("no candidate segments")
    n_f, t, c = tokens.shape
    q = np.asarray(_vec(sentence_embed), dtype=float)
    if q.shape != (c,):
        raise ShapeMismatch(f"sentence embedding {q.shape} vs grid C={c}")
    clips = mean(tokens, axis=0)  # T x C
    segs = matmul(constant(pooling_matrix(candidates, t)), clips)  # K x C
    logits = matmul(segs, constant(q.reshape(c, 1)))  # K x 1
    return scale(reshape(logits, (len(candidates),)), 1.0 / math.sqrt(c))


def vtg_scores(grid, sentence_embed, candidates) -> Tensor:
    """sigmoid(<mean-pooled segment vector, sentence vector> / sqrt(C)) per candidate."""
    return sigmoid(vtg_logits(grid, sentence_embed, candidates))


def scaled_iou_labels(candidates, gt: Segment, cfg: VtgLabelConfig = VtgLabelConfig()) -> np.ndarray:
    o = np.array([temporal_iou(s, gt) for s in candidates])
    return np.clip((o - cfg.tau_min) / (cfg.tau_max - cfg.tau_min), 0.0, 1.0)


def _squeeze(p: Tensor) -> Tensor:
    # affine map of [0,1] onto [floor, 1 - floor]: a clamp that stays differentiable
    return add(scale(p, 1.0 - 2.0 * PROB_FLOOR), constant(PROB_FLOOR))


def bce(probs: Tensor, targets) -> Tensor:
    """Mean binary cross entropy of soft ``targets`` under ``probs``."""
    y = np.asarray(targets, dtype=float)
    p = _squeeze(probs)
    pos = multiply(constant(y), log(p))
    neg = multiply(constant(1.0 - y), log(add(constant(np.ones_like(y)), scale(p, -1.0))))
    return scale(mean(add(pos, neg)), -1.0)


def vtg_loss(scores, labels) -> Tensor:
    if not isinstance(scores, Tensor):
        scores = Tensor(scores)
    labels = np.asarray(labels, dtype=float)
    if scores.shape != labels.shape or labels.size == 0:
        raise LengthMismatch(f"{scores.shape[0] if scores.data.ndim else 0} scores vs {labels.size} labels")
    return bce(scores, labels)


# ------------------------------------------------------------------------ RVOS


@dataclass
class MaskDecoder:
    """Cross-attention stack; ``layers`` holds one AttentionParams per layer."""

    layers: list

    @classmethod
    def init(cls, dim, heads, rng, n_layers=1):
        return cls([AttentionParams.init(dim, heads, rng, prefix=f"decoder{i}") for i in range(n_layers)])

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def rvos_mask_logits(grid, sentence_tokens, decoder, mask_features) -> Tensor:
    """Language rows attend to the refined tokens; the pooled query is dotted with each pixel.

    ``decoder`` is an AttentionParams (one layer) or a :class:`MaskDecoder`.
    Returns logits of shape T x H x W.
    """
    tokens = getattr(grid, "tokens", grid)
    if not isinstance(tokens, Tensor):
        tokens = Tensor(tokens)
    lang = sentence_tokens if isinstance(sentence_tokens, Tensor) else constant(sentence_tokens)
    mf = mask_features if isinstance(mask_features, Tensor) else constant(mask_features)
    n_f, t, c = tokens.shape
    if lang.data.ndim != 2 or lang.shape[1] != c:
        raise ShapeMismatch(f"sentence tokens {lang.shape} vs C={c}")
    if mf.data.ndim != 4 or mf.shape[0] != t or mf.shape[3] != c:
        raise ShapeMismatch(f"mask features {mf.shape} vs T={t}, C={c}")
    layers = decoder.layers if isinstance(decoder, MaskDecoder) else [decoder]
    kv = reshape(tokens, (n_f * t, c))
    x = lang
    for layer in layers:
        x = attention(layer, x, kv)
    e = mean(x, axis=0, keepdims=True)  # 1 x C
    _, h, w, _ = mf.shape
    pix = reshape(mf, (t * h * w, c))
    logits = matmul(pix, reshape(e, (c, 1)))
    return reshape(logits, (t, h, w))


def _dice_loss(p: Tensor, g: np.ndarray) -> Tensor:
    inter = sum_all(multiply(p, constant(g)))
    num = add(scale(inter, 2.0), constant(1.0))
    den = add(sum_all(p), constant(float(g.sum()) + 1.0))
    return add(constant(1.0), scale(divide(num, den), -1.0))


def rvos_loss(pred_logits, gt_masks, cfg: RvosLossConfig = RvosLossConfig()) -> Tensor:
    """lambda_f * mean_t(BCE_t + Dice_t) + lambda_v * Dice over the whole clip."""
    if not isinstance(pred_logits, Tensor):
        pred_logits = Tensor(pred_logits)
    g = np.asarray(gt_masks, dtype=float)
    if pred_logits.shape != g.shape:
        raise ShapeMismatch(f"logits {pred_logits.shape} vs masks {g.shape}")
    if not np.all((g == 0) | (g == 1)):
        raise NonBinaryGroundTruth("ground-truth masks must be 0/1")
    p = sigmoid(pred_logits)
    t = g.shape[0]
    frame_terms = []
    for i in range(t):
        pi = p[i]
        frame_terms.append(add(bce(pi, g[i]), _dice_loss(pi, g[i])))
    lf = frame_terms[0]
    for term in frame_terms[1:]:
        lf = add(lf, term)
    lf = scale(lf, 1.0 / t)
    lv = _dice_loss(p, g)
    return add(scale(lf, cfg.lambda_f), scale(lv, cfg.lambda_v))


def qbar_condition(queries: Tensor, attn: AttentionParams, sentence_tokens, grid):
    """Optional pre-refinement stage: N_f learnable queries attend to the sentence
    tokens and the result is added to every frame's object tokens."""
    tokens = getattr(grid, "tokens", grid)
    lang = sentence_tokens if isinstance(sentence_tokens, Tensor) else constant(sentence_tokens)
    qbar = attention(attn, queries, lang)  # N_f x C
    n_f, t, c = tokens.shape
    return add(tokens, reshape(qbar, (n_f, 1, c)))


def init_qbar(n_f, dim, heads, rng):
    return parameter(rng.normal(0.0, 1.0 / math.sqrt(dim), (n_f, dim)), "qbar.queries"), AttentionParams.init(
        dim, heads, rng, prefix="qbar"
    )


# ------------------------------------------------------------------ mask files


def write_pgm(path, mask) -> None:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeMismatch(f"mask must be 2-D, got {m.shape}")
    h, w = m.shape
    body = np.where(m > 0, 255, 0).astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii") + body)


def read_pgm(path) -> np.ndarray:
    """Binary P5 mask -> bool array (nonzero pixels are foreground)."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise SampleIOError(f"cannot read {path}: {exc.strerror}") from None
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise SampleIOError(f"{path}: truncated PGM header")
        fields.append(buf[start:pos])
    pos += 1
    if fields[0] != b"P5":
        raise SampleIOError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise SampleIOError(f"{path}: 16-bit PGM not supported")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w) > 0


def write_mask_sequence(directory, masks) -> None:
    os.makedirs(directory, exist_ok=True)
    for t, m in enumerate(masks):
        write_pgm(Path(directory) / f"{t:05d}.pgm", m)


def read_mask_sequence(directory) -> list[np.ndarray]:
    d = Path(directory)
    files = sorted(d.glob("*.pgm"))
    if not files:
        raise SampleIOError(f"no .pgm frames in {d}")
    return [read_pgm(f) for f in files]
