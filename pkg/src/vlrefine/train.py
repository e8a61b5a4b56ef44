"""Temporal-grounding training and evaluation on token-grid samples."""

from __future__ import annotations

import json
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embed import EmbeddingProvider
from .errors import Divergence, TensorFormatError
from .heads import VtgLabelConfig, scaled_iou_labels, vtg_loss, vtg_scores
from .metrics import RankConfig, rank_n_at_m
from .planner import decompose_lenient
from .refiner import RefinerConfig, RefinerParams, refine
from .tensor import AdamWState, Tape, Tensor, adamw_step, decode_prtk, encode_prtk
from .treebank import parse_tree


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose ("init", "shuffle", ...)."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


@dataclass
class TrainConfig:
    variant: str = "full"
    heads: int = 4
    epochs: int = 50
    lr: float = 1e-4
    batch_size: int = 16
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    seed: int = 42
    tau_min: float = 0.3
    tau_max: float = 0.7
    threads: int = 1
    lang_rows: str = "replicated"
    layer_norm: bool = False
    lr_schedule: str = "constant"  # or "cosine" (decay to zero over all updates)

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be constant|cosine, got {self.lr_schedule!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.threads < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and threads >= 1 required")

    def lr_at(self, update: int, total: int) -> float:
        if self.lr_schedule == "constant" or total <= 1:
            return self.lr
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * update / total))

    def refiner_config(self) -> RefinerConfig:
        return RefinerConfig(
            variant=self.variant, heads=self.heads, lang_rows=self.lang_rows, layer_norm=self.layer_norm
        )


@dataclass
class Prepared:
    """A sample with its parse, embeddings and targets resolved once."""

    id: str
    grid: Tensor
    pairs: list
    query: np.ndarray
    candidates: list
    gt: object
    labels: np.ndarray


def prepare(samples, provider: EmbeddingProvider, label_cfg: VtgLabelConfig) -> list[Prepared]:
    out = []
    for s in samples:
        tree = parse_tree(s.tree_text)
        chain = decompose_lenient(tree)
        pairs = [(provider.vector(p.np_text), provider.vector(p.vp_text)) for p in chain.prompts]
        out.append(
            Prepared(
                id=s.id,
                grid=Tensor(s.grid),
                pairs=pairs,
                query=provider.vector(tree.text()),
                candidates=list(s.candidates),
                gt=s.gt_span,
                labels=scaled_iou_labels(s.candidates, s.gt_span, label_cfg),
            )
        )
    return out


def sample_scores(params, rcfg, item: Prepared) -> Tensor:
    refined = refine(params, rcfg, item.grid, item.pairs)
    return vtg_scores(refined, item.query, item.candidates)


def sample_loss(params, rcfg, item: Prepared) -> Tensor:
    return vtg_loss(sample_scores(params, rcfg, item), item.labels)


def _grad_one(params, rcfg, item):
    plist = params.parameters()
    with Tape() as tape:
        loss = sample_loss(params, rcfg, item)
    return loss.item(), tape.gradients(loss, plist)


def evaluate(params, rcfg, items, rank_cfg: RankConfig = RankConfig()) -> dict:
    queries = []
    for item in items:
        scores = sample_scores(params, rcfg, item).data
        order = np.argsort(-scores, kind="stable")
        queries.append(([item.candidates[i] for i in order], item.gt))
    return rank_n_at_m(queries, rank_cfg)


@dataclass
class TrainResult:
    params: RefinerParams
    history: list = field(default_factory=list)

    @property
    def final(self) -> dict:
        return self.history[-1]["test"] if self.history else {}


def train_vtg(train_samples, test_samples, provider, cfg: TrainConfig, log=None) -> TrainResult:
    """Minibatch AdamW on the scaled-IoU BCE loss; evaluates Rank n@m on the test split.

    ``history[0]`` is the untrained model, then one entry per epoch.
    """
    label_cfg = VtgLabelConfig(cfg.tau_min, cfg.tau_max)
    rcfg = cfg.refiner_config()
    train_items = prepare(train_samples, provider, label_cfg)
    test_items = prepare(test_samples, provider, label_cfg)
    dim = train_items[0].grid.shape[2] if train_items else test_items[0].grid.shape[2]
    params = RefinerParams.init(dim, cfg.heads, substream(cfg.seed, "init"), joint=cfg.variant == "joint")
    plist = params.parameters()
    state = AdamWState()
    shuffle = substream(cfg.seed, "shuffle")
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    per_epoch = -(-len(train_items) // cfg.batch_size)
    total_updates = per_epoch * cfg.epochs
    update = 0
    result = TrainResult(params)
    result.history.append({"epoch": 0, "loss": None, "test": evaluate(params, rcfg, test_items)})
    if log:
        log(result.history[-1])
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle.permutation(len(train_items))
            total = 0.0
            for b0 in range(0, len(order), cfg.batch_size):
                batch = [train_items[i] for i in order[b0 : b0 + cfg.batch_size]]
                if pool is not None:
                    outs = list(pool.map(lambda it: _grad_one(params, rcfg, it), batch))
                else:
                    outs = [_grad_one(params, rcfg, it) for it in batch]
                grads = [np.zeros_like(p.data) for p in plist]
                for loss, gs in outs:  # fixed reduction order
                    if not math.isfinite(loss):
                        raise Divergence(f"non-finite loss at epoch {epoch}")
                    total += loss
                    for acc, g in zip(grads, gs):
                        acc += g
                for p, g in zip(plist, grads):
                    p.grad = g / len(batch)
                lr = cfg.lr_at(update, total_updates)
                update += 1
                adamw_step(plist, state, lr=lr, betas=tuple(cfg.betas), weight_decay=cfg.weight_decay)
            entry = {
                "epoch": epoch,
                "loss": total / max(1, len(train_items)),
                "test": evaluate(params, rcfg, test_items),
            }
            result.history.append(entry)
            if log:
                log(entry)
    finally:
        if pool is not None:
            pool.shutdown()
    return result


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: RefinerParams, extra: dict | None = None) -> None:
    """Write ``<path>.prtk`` (concatenated PRTK records) and ``<path>.json`` (index)."""
    path = Path(path)
    blob = bytearray()
    index = []
    for name, p in params.named_parameters():
        index.append({"name": name, "offset": len(blob), "shape": list(p.shape)})
        blob += encode_prtk(p.data)
    path.with_suffix(".prtk").write_bytes(bytes(blob))
    meta = {"tensors": index, "heads": params.spatial_attn.heads}
    if extra:
        meta.update(extra)
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[RefinerParams, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    blob = path.with_suffix(".prtk").read_bytes()
    arrays = {}
    for entry in meta["tensors"]:
        arr, _ = decode_prtk(blob, entry["offset"])
        if list(arr.shape) != entry["shape"]:
            raise TensorFormatError(f"{entry['name']}: shape {arr.shape} vs index {entry['shape']}")
        arrays[entry["name"]] = arr
    dim = arrays["residual.w"].shape[0]
    params = RefinerParams.init(dim, meta["heads"], np.random.default_rng(0), joint="joint.w_q" in arrays)
    for name, p in params.named_parameters():
        p.data = arrays[name].copy()
    return params, meta


def rank_table_rows(table: dict) -> list[tuple]:
    return [(n, m, v) for (n, m), v in sorted(table.items())]


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["betas"] = list(d["betas"])
    return d
