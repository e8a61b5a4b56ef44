"""Deterministic synthetic grounding data and its on-disk layout.

A sample is a video-like token grid in which one short span shows the
queried subject performing its actions in order; distractor spans show the
same subject doing other things (or nothing), so matching on the noun phrase
alone cannot find the target.

On disk a dataset is a directory::

    manifest.jsonl      one {"id", "grid", "tree", "gt", "candidates"} per sample
    config.json         generator config and embedding seed
    <id>/grid.prtk      N_f x T x C tokens
    <id>/tree.mrg       bracketed query parse
    <id>/meta.json      spans, candidates and generator annotations
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embed import EmbeddingProvider, hash_provider
from .errors import DatasetNotFound, DimMismatch, SampleIOError
from .heads import Segment, read_mask_sequence, write_mask_sequence
from .tensor import read_tensor, write_tensor
from .treebank import parse_tree

SUBJECTS = [
    ("NN", "panda"), ("NN", "horse"), ("NN", "dog"), ("NN", "cat"), ("NN", "bird"),
    ("NN", "monkey"), ("NN", "elephant"), ("NN", "zebra"), ("NN", "rabbit"), ("NN", "sheep"),
    ("NN", "bear"), ("NN", "tiger"), ("NN", "fox"), ("NN", "deer"), ("NN", "goat"), ("NN", "duck"),
]

ACTIONS = [
    ("eats",), ("runs",), ("jumps",), ("sleeps",), ("turns", "left"), ("turns", "right"),
    ("sits", "down"), ("stands", "up"), ("walks", "away"), ("swims",), ("climbs",), ("rolls", "over"),
    ("drinks",), ("shakes",), ("looks", "back"), ("lies", "down"), ("spins",), ("waves",),
    ("kicks",), ("bows",), ("crawls",), ("hops",), ("digs",), ("flies",), ("barks",),
    ("chews",), ("stretches",), ("yawns",), ("limps",), ("dances",), ("falls",), ("nods",),
]

CANDIDATE_WIDTHS = (4, 8, 16, 32)


@dataclass
class SynthConfig:
    n_samples: int = 64
    n_f: int = 8
    t: int = 64
    c: int = 32
    n_concepts: int = 8
    distractor_rate: float = 0.5
    noise_sigma: float = 0.5
    seed: int = 7
    amplitude: float = 1.0
    gt_width: int = 4
    max_actions: int = 3
    max_distractors: int = 3
    background: float = 0.0  # norm of a scene vector shared by every token of a sample

    def __post_init__(self):
        for name in ("n_samples", "n_f", "t", "c", "n_concepts", "gt_width", "max_actions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.distractor_rate <= 1.0:
            raise ValueError("distractor_rate must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.background < 0:
            raise ValueError("background must be >= 0")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if self.n_concepts > len(SUBJECTS) or 2 * self.n_concepts > len(ACTIONS):
            raise ValueError(f"n_concepts at most {len(SUBJECTS)}")
        if self.max_actions > self.gt_width:
            raise ValueError("gt_width must fit one clip per action")
        if self.t < self.gt_width:
            raise ValueError("t must be at least gt_width")


@dataclass
class GroundingSample:
    id: str
    grid: np.ndarray
    tree_text: str
    gt_span: Segment | None
    candidates: list
    gt_masks: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def sentence(self) -> str:
        return parse_tree(self.tree_text).text()


def sliding_windows(t: int, widths=CANDIDATE_WIDTHS) -> list[Segment]:
    """Multi-scale windows with stride width/4 inside [0, t), duplicates removed.

    A window that would overhang the end is moved back to end at ``t`` rather
    than truncated, so no candidate is narrower than min(width, t).
    """
    seen, out = set(), []
    for w in widths:
        stride = max(1, w // 4)
        w = min(w, t)
        for s in range(0, t, stride):
            s = min(s, t - w)
            seg = (s, s + w)
            if seg not in seen:
                seen.add(seg)
                out.append(Segment(*seg))
    return out


def _vp_tree(action):
    verb = f"(VBZ {action[0]})"
    if len(action) == 1:
        return f"(VP {verb})"
    tag = "PRT (RP" if action[1] in ("down", "up", "over") else "ADVP (RB"
    return f"(VP {verb} ({tag} {action[1]})))"


def query_tree(subject, actions) -> str:
    np_part = f"(NP (DT the) ({subject[0]} {subject[1]}))"
    vps = [_vp_tree(a) for a in actions]
    if len(vps) == 1:
        return f"(S {np_part} {vps[0]})"
    parts = []
    for i, vp in enumerate(vps):
        if i == len(vps) - 1:
            parts.append("(CC and)")
        elif i > 0:
            parts.append("(, ,)")
        parts.append(vp)
    return f"(S {np_part} (VP {' '.join(parts)}))"


def _split(width, k):
    """Contiguous sub-span lengths, as even as possible, earlier parts longer."""
    base, extra = divmod(width, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def _paint(grid, slots, start, subj, acts, widths):
    t = start
    for act, w in zip(acts, widths):
        for _ in range(w):
            if act is None:
                grid[slots, t] += subj
            else:
                grid[slots, t] += subj + act
            t += 1


def _background_vector(cfg):
    v = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB6])).standard_normal(cfg.c)
    return v / np.linalg.norm(v)


def _free_start(rng, t, width, taken, tries=200):
    for _ in range(tries):
        s = int(rng.integers(0, t - width + 1))
        if all(s + width + 1 <= a or s >= b + 1 for a, b in taken):
            return s
    return None


def generate_sample(cfg: SynthConfig, provider: EmbeddingProvider, index: int) -> GroundingSample:
    if provider.dim != cfg.c:
        raise DimMismatch(0, cfg.c, provider.dim)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    subjects = SUBJECTS[: cfg.n_concepts]
    actions = ACTIONS[: 2 * cfg.n_concepts]
    while True:
        subject = subjects[int(rng.integers(len(subjects)))]
        k = int(rng.integers(1, cfg.max_actions + 1))
        picked = [actions[i] for i in rng.choice(len(actions), size=k, replace=False)]
        tree = query_tree(subject, picked)
        np_text = f"the {subject[1]}"
        vp_texts = [" ".join(a) for a in picked]
        subj = cfg.amplitude * provider.vector(np_text)
        acts = [cfg.amplitude * provider.vector(v) for v in vp_texts]
        q = provider.vector(parse_tree(tree).text())
        # every target clip must align positively with the query
        if all(q @ (subj + a) > 0 for a in acts):
            break

    grid = cfg.noise_sigma * rng.standard_normal((cfg.n_f, cfg.t, cfg.c))
    if cfg.background:
        grid += cfg.background * _background_vector(cfg)
    n_slots = int(rng.integers(1, max(1, cfg.n_f // 2) + 1))
    slots = np.sort(rng.choice(cfg.n_f, size=n_slots, replace=False))
    gt_start = int(rng.integers(0, cfg.t - cfg.gt_width + 1))
    widths = _split(cfg.gt_width, k)
    _paint(grid, slots, gt_start, subj, acts, widths)

    taken = [(gt_start, gt_start + cfg.gt_width)]
    distractors = []
    others = [a for a in actions if a not in picked]
    for _ in range(cfg.max_distractors):
        if rng.random() >= cfg.distractor_rate:
            continue
        s = _free_start(rng, cfg.t, cfg.gt_width, taken)
        if s is None:
            continue
        kind = "wrong" if rng.random() < 0.5 else "missing"
        if kind == "wrong":
            wrong = [others[i] for i in rng.choice(len(others), size=k, replace=False)]
            d_acts = [cfg.amplitude * provider.vector(" ".join(a)) for a in wrong]
        else:
            d_acts = [None] * k
        d_slots = np.sort(rng.choice(cfg.n_f, size=n_slots, replace=False))
        _paint(grid, d_slots, s, subj, d_acts, widths)
        taken.append((s, s + cfg.gt_width))
        distractors.append({"span": [s, s + cfg.gt_width], "kind": kind})

    # stored grids are float32; quantize now so memory and disk agree exactly
    grid = grid.astype(np.float32).astype(np.float64)
    gt = Segment(gt_start, gt_start + cfg.gt_width)
    return GroundingSample(
        id=f"s{index:05d}",
        grid=grid,
        tree_text=tree,
        gt_span=gt,
        candidates=sliding_windows(cfg.t),
        meta={
            "subject": np_text,
            "actions": vp_texts,
            "slots": slots.tolist(),
            "action_widths": widths,
            "distractors": distractors,
        },
    )


def generate_vtg_dataset(cfg: SynthConfig, provider: EmbeddingProvider, offset: int = 0) -> list[GroundingSample]:
    """``cfg.n_samples`` samples; sample ``i`` depends only on (cfg, provider, offset + i)."""
    return [generate_sample(cfg, provider, offset + i) for i in range(cfg.n_samples)]


def oracle_best_candidate(sample: GroundingSample, provider: EmbeddingProvider) -> Segment:
    """Candidate whose mean clip vector has the largest dot product with the query embedding."""
    q = provider.vector(sample.sentence)
    clips = sample.grid.mean(axis=0) @ q
    scores = [clips[s.start : s.end].mean() for s in sample.candidates]
    return sample.candidates[int(np.argmax(scores))]


# ------------------------------------------------------------------------ files


def write_sample(sample: GroundingSample, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_tensor(d / "grid.prtk", sample.grid)
    (d / "tree.mrg").write_text(sample.tree_text + "\n", encoding="utf-8")
    meta = {
        "id": sample.id,
        "gt": sample.gt_span.to_list() if sample.gt_span else None,
        "candidates": [s.to_list() for s in sample.candidates],
        "meta": sample.meta,
    }
    (d / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    if sample.gt_masks is not None:
        write_mask_sequence(d / "masks", sample.gt_masks)


def read_sample(directory) -> GroundingSample:
    d = Path(directory)
    paths = {name: d / name for name in ("meta.json", "tree.mrg", "grid.prtk")}
    for path in paths.values():
        if not path.is_file():
            raise SampleIOError(f"missing sample file {path}")
    meta = json.loads(paths["meta.json"].read_text(encoding="utf-8"))
    grid = read_tensor(paths["grid.prtk"])
    masks = None
    if (d / "masks").is_dir():
        masks = np.stack(read_mask_sequence(d / "masks"))
    return GroundingSample(
        id=meta["id"],
        grid=grid,
        tree_text=paths["tree.mrg"].read_text(encoding="utf-8").strip(),
        gt_span=Segment(*meta["gt"]) if meta.get("gt") else None,
        candidates=[Segment(*c) for c in meta["candidates"]],
        gt_masks=masks,
        meta=meta.get("meta", {}),
    )


def write_dataset(samples, root, cfg: SynthConfig | None = None, provider: EmbeddingProvider | None = None) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        write_sample(s, root / s.id)
        lines.append(
            json.dumps(
                {
                    "id": s.id,
                    "grid": f"{s.id}/grid.prtk",
                    "tree": s.tree_text,
                    "gt": s.gt_span.to_list(),
                    "candidates": [c.to_list() for c in s.candidates],
                }
            )
        )
    (root / "manifest.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if cfg is not None:
        info = {"synth": asdict(cfg)}
        if provider is not None and provider.mode == "hash":
            info["embedding"] = {"mode": "hash", "seed": provider.seed, "dim": provider.dim}
        (root / "config.json").write_text(json.dumps(info, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_dataset(root) -> list[GroundingSample]:
    root = Path(root)
    manifest = root / "manifest.jsonl"
    if not manifest.is_file():
        raise DatasetNotFound(f"no manifest at {manifest}")
    samples = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        grid_path = root / rec["grid"]
        sample = read_sample(grid_path.parent)
        sample.tree_text = rec["tree"]
        sample.gt_span = Segment(*rec["gt"])
        sample.candidates = [Segment(*c) for c in rec["candidates"]]
        samples.append(sample)
    return samples


def dataset_provider(root) -> EmbeddingProvider | None:
    """The hash provider recorded in ``config.json``, if any."""
    path = Path(root) / "config.json"
    if not path.is_file():
        return None
    info = json.loads(path.read_text(encoding="utf-8")).get("embedding")
    if not info:
        return None
    return hash_provider(info["dim"], info["seed"])
