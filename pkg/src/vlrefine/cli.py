"""Command-line entry point: ``vlrefine <command> [flags]``.

Failures print exactly one line, ``error: <Kind>: <message>``, to stderr and
exit with status 2 (bad usage) or 1 (everything else).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import bench, synth
from .embed import EmbeddingProvider, hash_provider, load_embedding_file
from .errors import ConfigError, DatasetNotFound, VlrefineError
from .heads import VtgLabelConfig, read_mask_sequence
from .metrics import RankConfig, j_and_f
from .planner import decompose, decompose_lenient
from .refiner import VARIANTS, RefinerConfig, RefinerParams, refine_steps
from .tensor import read_tensor, write_tensor
from .train import (
    TrainConfig,
    config_dict,
    evaluate,
    load_checkpoint,
    prepare,
    rank_table_rows,
    save_checkpoint,
    substream,
    train_vtg,
)
from .treebank import iter_tree_strings, parse_tree


class UsageError(Exception):
    kind = "UsageError"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _unit_float(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a number in [0, 1], got {text}")
    return value


def _defaults(cls):
    return {f.name: f.default for f in fields(cls)}


SYNTH = _defaults(synth.SynthConfig)
TRAIN = _defaults(TrainConfig)


# ------------------------------------------------------------------ helpers


def _emit(args, payload, text=None):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    elif text is not None:
        print(text)


def _provider(args, dim) -> EmbeddingProvider:
    if getattr(args, "embeddings", None):
        prov = load_embedding_file(args.embeddings)
        if prov.dim != dim:
            raise ConfigError(f"embedding file has dim {prov.dim}, grid has C={dim}")
        return prov
    emb_seed = args.emb_seed if getattr(args, "emb_seed", None) is not None else args.seed
    return hash_provider(dim, emb_seed)


def _format_value(v):
    return repr(float(v))


def _write_tsv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _split_dirs(root):
    root = Path(root)
    train, test = root / "train", root / "test"
    for d in (train, test):
        if not (d / "manifest.jsonl").is_file():
            raise DatasetNotFound(f"no manifest at {d / 'manifest.jsonl'}")
    return train, test


# ----------------------------------------------------------------- commands


def cmd_decompose(args):
    source = sys.stdin if args.trees == "-" else open(args.trees, encoding="utf-8")
    split = decompose if args.strict else decompose_lenient
    with source:
        for _, text in iter_tree_strings(source):
            chain = split(parse_tree(text))
            print(json.dumps(chain.to_json(), sort_keys=True))


def cmd_refine(args):
    grid = read_tensor(args.grid)
    if grid.ndim != 3:
        raise ConfigError(f"grid must be N_f x T x C, got shape {grid.shape}")
    dim = grid.shape[2]
    texts = [t for _, t in iter_tree_strings(Path(args.tree).read_text(encoding="utf-8").splitlines())]
    if not texts:
        raise ConfigError(f"no tree in {args.tree}")
    tree = parse_tree(texts[0])
    chain = decompose_lenient(tree)
    provider = _provider(args, dim)
    if args.checkpoint:
        params, meta = load_checkpoint(args.checkpoint)
        variant = args.variant or meta.get("config", {}).get("variant", "full")
    else:
        variant = args.variant or "full"
        params = RefinerParams.init(dim, args.heads, substream(args.seed, "init"), joint=variant == "joint")
    cfg = RefinerConfig(variant=variant, heads=params.spatial_attn.heads, max_steps=args.max_steps, layer_norm=args.layer_norm)
    states = refine_steps(params, cfg, grid, chain, provider)
    write_tensor(args.out, states[-1].data)
    norms = [float(np.linalg.norm(s.data)) for s in states[1:]]
    log = {
        "variant": variant,
        "P": chain.P,
        "chain": chain.to_json(),
        "per_step_output_norms": norms,
        "input_norm": float(np.linalg.norm(grid)),
        "output": str(args.out),
    }
    if args.log:
        Path(args.log).write_text(json.dumps(log, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    _emit(args, log, f"refined {chain.P} step(s) -> {args.out}")


def _synth_config(args, n):
    return synth.SynthConfig(
        n_samples=n,
        n_f=args.nf,
        t=args.t,
        c=args.c,
        n_concepts=args.concepts,
        distractor_rate=args.distractor_rate,
        noise_sigma=args.noise,
        seed=args.seed,
        amplitude=args.amplitude,
        background=args.background,
    )


def cmd_gen_data(args):
    provider = hash_provider(args.c, args.seed)
    out = Path(args.out)
    train_cfg = _synth_config(args, args.n_train)
    test_cfg = _synth_config(args, args.n_test)
    # test samples continue the per-index seed sequence after the training ones
    train = synth.generate_vtg_dataset(train_cfg, provider)
    test = synth.generate_vtg_dataset(test_cfg, provider, offset=args.n_train)
    synth.write_dataset(train, out / "train", train_cfg, provider)
    synth.write_dataset(test, out / "test", test_cfg, provider)
    _emit(args, {"train": len(train), "test": len(test), "out": str(out)}, f"wrote {len(train)} train / {len(test)} test samples to {out}")


def _train_config(args):
    return TrainConfig(
        variant=args.variant,
        heads=args.heads,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
        seed=args.seed,
        tau_min=args.tau_min,
        tau_max=args.tau_max,
        threads=args.threads,
        layer_norm=args.layer_norm,
        lr_schedule=args.lr_schedule,
    )


def _dataset_provider(root, args, dim):
    prov = synth.dataset_provider(root)
    if prov is None or getattr(args, "embeddings", None):
        prov = _provider(args, dim)
    return prov


def cmd_train_vtg(args):
    train_dir, test_dir = _split_dirs(args.data)
    cfg = _train_config(args)
    VtgLabelConfig(cfg.tau_min, cfg.tau_max)  # validate before any work
    train = synth.read_dataset(train_dir)
    test = synth.read_dataset(test_dir)
    dim = train[0].grid.shape[2]
    provider = _dataset_provider(train_dir, args, dim)

    def log(entry):
        if not args.json and not args.quiet:
            loss = "-" if entry["loss"] is None else f"{entry['loss']:.6f}"
            r1 = entry["test"].get((1, 0.5))
            print(f"epoch {entry['epoch']:3d}  loss {loss}  R1@0.5 {r1:.4f}", flush=True)

    result = train_vtg(train, test, provider, cfg, log=log)
    rows = []
    for entry in result.history:
        loss = "" if entry["loss"] is None else _format_value(entry["loss"])
        for n, m, v in rank_table_rows(entry["test"]):
            rows.append([entry["epoch"], loss, n, m, _format_value(v)])
    _write_tsv(args.metrics, ["epoch", "loss", "rank_n", "iou_m", "value"], rows)
    save_checkpoint(args.checkpoint, result.params, {"config": config_dict(cfg)})
    final = {f"R{n}@{m}": v for n, m, v in rank_table_rows(result.final)}
    _emit(args, {"final": final, "metrics": str(args.metrics), "checkpoint": str(args.checkpoint)},
          "final " + "  ".join(f"{k} {v:.4f}" for k, v in final.items()))


def cmd_eval_vtg(args):
    root = Path(args.data)
    samples = synth.read_dataset(root)
    params, meta = load_checkpoint(args.checkpoint)
    saved = meta.get("config", {})
    rcfg = RefinerConfig(
        variant=saved.get("variant", "full"),
        heads=params.spatial_attn.heads,
        lang_rows=saved.get("lang_rows", "replicated"),
        layer_norm=saved.get("layer_norm", False),
    )
    provider = _dataset_provider(root, args, params.dim)
    label_cfg = VtgLabelConfig(saved.get("tau_min", 0.3), saved.get("tau_max", 0.7))
    table = evaluate(params, rcfg, prepare(samples, provider, label_cfg), RankConfig())
    rows = [[n, m, _format_value(v)] for n, m, v in rank_table_rows(table)]
    if args.out:
        _write_tsv(args.out, ["rank_n", "iou_m", "value"], rows)
    _emit(args, {f"R{n}@{m}": v for n, m, v in rank_table_rows(table)},
          "\n".join(f"R{n}@{m}\t{v}" for n, m, v in rank_table_rows(table)))


def _sequences(root):
    root = Path(root)
    if not root.is_dir():
        raise DatasetNotFound(f"no directory {root}")
    if any(root.glob("*.pgm")):
        return {root.name: root}
    return {d.name: d for d in sorted(p for p in root.iterdir() if p.is_dir())}


def cmd_eval_rvos(args):
    preds, gts = _sequences(args.pred), _sequences(args.gt)
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise DatasetNotFound(f"no predictions for sequence(s): {', '.join(missing)}")
    rows, scores = [], []
    for name in sorted(gts):
        j, f, jf = j_and_f(read_mask_sequence(preds[name]), read_mask_sequence(gts[name]), args.radius)
        scores.append((j, f, jf))
        rows.append([name, _format_value(j), _format_value(f), _format_value(jf)])
    if not scores:
        raise DatasetNotFound(f"no sequences under {args.gt}")
    mean = np.mean(np.array(scores), axis=0)
    rows.append(["mean", *(_format_value(v) for v in mean)])
    if args.out:
        _write_tsv(args.out, ["sequence", "J", "F", "J&F"], rows)
    _emit(args, {"sequences": {r[0]: {"J": float(r[1]), "F": float(r[2]), "J&F": float(r[3])} for r in rows}},
          "\n".join("\t".join(map(str, r)) for r in rows))


def cmd_bench_attn(args):
    report = bench.bench_wallclock(args.nf, args.t, args.c, args.heads, args.repeats, threads=args.threads or None)
    if args.out:
        bench.write_report_tsv(args.out, [report])
    _emit(args, report.to_dict(),
          f"core MACs factorized {report.factorized_macs}  joint {report.joint_macs}  ratio {report.core_ratio:.3f}\n"
          f"median ms  factorized {report.wall_factorized_ms:.3f}  joint {report.wall_joint_ms:.3f}")


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_nonneg_int, default=42, help="root seed for every random stream")
    common.add_argument("--json", action="store_true", help="print a JSON result object to stdout")

    parser = _Parser(prog="vlrefine", description="Language-guided token refinement toolkit.", formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text, formatter_class=fmt)
        p.set_defaults(func=func)
        return p

    def model_flags(p, variant_default="full"):
        p.add_argument("--variant", choices=VARIANTS, default=variant_default, help="refiner variant")
        p.add_argument("--heads", type=_positive_int, default=TRAIN["heads"], help="attention heads")
        p.add_argument("--layer-norm", action="store_true", help="normalize attention inputs")

    def embedding_flags(p):
        p.add_argument("--embeddings", default=None, help="EMB phrase table (default: hashed embeddings)")
        p.add_argument("--emb-seed", type=_nonneg_int, default=None, help="hash embedding seed (default: --seed)")

    p = add("decompose", cmd_decompose, "Split bracketed parse trees into (NP, VP) sub-prompt chains (JSON lines).")
    p.add_argument("trees", help="file of bracketed trees, or - for stdin")
    p.add_argument("--strict", action="store_true", help="fail on trees without an NP or VP instead of falling back")

    p = add("refine", cmd_refine, "Refine a token grid with the sub-prompts of a query tree.")
    p.add_argument("--grid", required=True, help="input PRTK grid (N_f x T x C)")
    p.add_argument("--tree", required=True, help="file whose first tree is the query")
    p.add_argument("--out", required=True, help="output PRTK grid")
    p.add_argument("--log", default=None, help="JSON step log path")
    p.add_argument("--checkpoint", default=None, help="trained parameters (default: fresh init from --seed)")
    p.add_argument("--max-steps", type=_nonneg_int, default=None, help="truncate the chain")
    p.add_argument("--variant", choices=VARIANTS, default=None, help="refiner variant (default: checkpoint's, else full)")
    p.add_argument("--heads", type=_positive_int, default=TRAIN["heads"], help="attention heads for a fresh init")
    p.add_argument("--layer-norm", action="store_true", help="normalize attention inputs")
    embedding_flags(p)

    p = add("gen-data", cmd_gen_data, "Generate a synthetic grounding dataset with train/ and test/ splits.")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-train", type=_positive_int, default=64, help="training samples")
    p.add_argument("--n-test", type=_positive_int, default=32, help="test samples")
    p.add_argument("--nf", type=_positive_int, default=SYNTH["n_f"], help="object slots per frame")
    p.add_argument("--t", type=_positive_int, default=SYNTH["t"], help="time steps")
    p.add_argument("--c", type=_positive_int, default=SYNTH["c"], help="channels")
    p.add_argument("--concepts", type=_positive_int, default=SYNTH["n_concepts"], help="subjects in the vocabulary")
    p.add_argument("--distractor-rate", type=_unit_float, default=SYNTH["distractor_rate"], help="chance of each distractor span")
    p.add_argument("--noise", type=float, default=SYNTH["noise_sigma"], help="token noise std")
    p.add_argument("--amplitude", type=_positive_float, default=SYNTH["amplitude"], help="concept vector scale")
    p.add_argument("--background", type=float, default=SYNTH["background"], help="shared scene vector norm")

    p = add("train-vtg", cmd_train_vtg, "Train the refiner on a grounding dataset and report Rank n@m per epoch.")
    p.add_argument("--data", required=True, help="dataset root with train/ and test/")
    p.add_argument("--metrics", default="metrics.tsv", help="per-epoch metric table (TSV)")
    p.add_argument("--checkpoint", default="checkpoint", help="checkpoint stem; writes <stem>.prtk and <stem>.json")
    model_flags(p)
    p.add_argument("--epochs", type=_nonneg_int, default=TRAIN["epochs"], help="passes over the training split")
    p.add_argument("--lr", type=_positive_float, default=TRAIN["lr"], help="AdamW learning rate")
    p.add_argument("--lr-schedule", choices=("constant", "cosine"), default=TRAIN["lr_schedule"], help="learning-rate schedule")
    p.add_argument("--batch-size", type=_positive_int, default=TRAIN["batch_size"], help="samples per update")
    p.add_argument("--weight-decay", type=float, default=TRAIN["weight_decay"], help="decoupled weight decay")
    p.add_argument("--tau-min", type=_unit_float, default=TRAIN["tau_min"], help="IoU mapped to label 0")
    p.add_argument("--tau-max", type=_unit_float, default=TRAIN["tau_max"], help="IoU mapped to label 1")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads for per-sample gradients")
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress lines")
    embedding_flags(p)

    p = add("eval-vtg", cmd_eval_vtg, "Evaluate a checkpoint on one dataset split.")
    p.add_argument("--data", required=True, help="split directory containing manifest.jsonl")
    p.add_argument("--checkpoint", required=True, help="checkpoint stem")
    p.add_argument("--out", default=None, help="TSV output path")
    embedding_flags(p)

    p = add("eval-rvos", cmd_eval_rvos, "Score predicted mask sequences (PGM) against ground truth with J, F and J&F.")
    p.add_argument("--pred", required=True, help="directory of sequence directories (or one sequence) of predicted masks")
    p.add_argument("--gt", required=True, help="matching ground-truth directory")
    p.add_argument("--radius", type=_nonneg_int, default=1, help="boundary match tolerance in pixels")
    p.add_argument("--out", default=None, help="TSV output path")

    p = add("bench-attn", cmd_bench_attn, "Compare factorized and joint attention: MAC counts and wall-clock medians.")
    p.add_argument("--nf", type=_positive_int, default=32, help="object slots")
    p.add_argument("--t", type=_positive_int, default=32, help="time steps")
    p.add_argument("--c", type=_positive_int, default=64, help="channels")
    p.add_argument("--heads", type=_positive_int, default=4, help="attention heads")
    p.add_argument("--repeats", type=_positive_int, default=5, help="timed repeats (at least 5)")
    p.add_argument("--threads", type=_nonneg_int, default=1, help="BLAS threads; 0 leaves the pool alone")
    p.add_argument("--out", default=None, help="TSV report path")
    return parser


def _one_line(text) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "tau_min", None) is not None and args.tau_min >= args.tau_max:
            raise ConfigError(f"--tau-min ({args.tau_min}) must be below --tau-max ({args.tau_max})")
        if getattr(args, "repeats", 5) < 5:
            raise ConfigError("--repeats must be at least 5")
        args.func(args)
    except UsageError as exc:
        print(f"error: UsageError: {_one_line(exc)}", file=sys.stderr)
        return 2
    except VlrefineError as exc:
        print(f"error: {exc.kind}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: ConfigError: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        where = f" {exc.filename}" if exc.filename else ""
        print(f"error: Io: {_one_line(exc.strerror or exc)}{where}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
