"""Attention cost of factorized (spatial then temporal) versus joint space-time attention.

Both sides attend with language rows appended: a spatial pass sees N_f visual
plus N_f language keys per frame, a temporal pass T plus T per slot, and the
joint pass N_f*T plus N_f*T. Only visual rows issue queries, so one pass over
``n`` visual rows costs ``n * 2n * C`` MACs for the scores and again for the
weighted sum:

    factorized core = 4 * N_f * T * (N_f + T) * C
    joint core      = 4 * (N_f * T)**2 * C

The big-O forms without the constant 4 are exposed as ``big_o_*``.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .refiner import RefinerParams, joint_st_attention, spatial_refine_step, temporal_refine_step
from .tensor import Tensor, count_macs

KINDS = ("factorized", "joint")
CORE_TAG = "core"
PROJ_TAG = "proj"


def big_o_factorized(n_f: int, t: int, c: int) -> int:
    return n_f * t * (n_f + t) * c


def big_o_joint(n_f: int, t: int, c: int) -> int:
    return (n_f * t) ** 2 * c


def predicted_core_macs(kind: str, n_f: int, t: int, c: int) -> int:
    """Closed form for the instrumented count (keys = 2 x queries, two products)."""
    if kind == "factorized":
        return 4 * big_o_factorized(n_f, t, c)
    if kind == "joint":
        return 4 * big_o_joint(n_f, t, c)
    raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


def _check_dims(n_f, t, c, heads):
    if min(n_f, t, c, heads) < 1:
        raise ValueError("dimensions must be positive")
    if c % heads:
        raise ValueError(f"heads={heads} must divide C={c}")


def _setup(n_f, t, c, heads, seed):
    rng = np.random.default_rng(seed)
    params = RefinerParams.init(c, heads, rng, joint=True)
    grid = Tensor(rng.standard_normal((n_f, t, c)))
    np_vec = rng.standard_normal(c)
    vp_vec = rng.standard_normal(c)
    return params, grid, np_vec / np.linalg.norm(np_vec), vp_vec / np.linalg.norm(vp_vec)


def _forward(kind, params, grid, np_vec, vp_vec):
    if kind == "factorized":
        mid = spatial_refine_step(params, grid, np_vec)
        return temporal_refine_step(params, mid, vp_vec)
    if kind == "joint":
        return joint_st_attention(params, grid, np_vec, vp_vec)
    raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


def count_attention_macs(kind: str, n_f: int, t: int, c: int, heads: int = 4) -> dict:
    """Instrumented forward pass; returns ``{"core": ..., "proj": ...}`` MAC counts."""
    _check_dims(n_f, t, c, heads)
    params, grid, np_vec, vp_vec = _setup(n_f, t, c, heads, 0)
    with count_macs() as counter:
        _forward(kind, params, grid, np_vec, vp_vec)
    return {CORE_TAG: counter[CORE_TAG], PROJ_TAG: counter[PROJ_TAG]}


@dataclass
class ComplexityReport:
    n_f: int
    t: int
    c: int
    heads: int
    repeats: int
    factorized_macs: int
    joint_macs: int
    predicted_factorized: int
    predicted_joint: int
    factorized_proj_macs: int
    joint_proj_macs: int
    wall_factorized_ms: float
    wall_joint_ms: float

    @property
    def core_ratio(self) -> float:
        return self.joint_macs / self.factorized_macs

    def rows(self) -> list[dict]:
        """One row per attention kind, for the TSV report."""
        out = []
        for kind in KINDS:
            out.append(
                {
                    "variant": kind,
                    "n_f": self.n_f,
                    "t": self.t,
                    "c": self.c,
                    "heads": self.heads,
                    "repeats": self.repeats,
                    "core_macs": getattr(self, f"{kind}_macs"),
                    "predicted_core_macs": getattr(self, f"predicted_{kind}"),
                    "proj_macs": getattr(self, f"{kind}_proj_macs"),
                    "median_ms": round(getattr(self, f"wall_{kind}_ms"), 4),
                }
            )
        return out

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["core_ratio"] = self.core_ratio
        return d


def _median_ms(fn, repeats):
    fn()  # warm-up, not timed
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def bench_wallclock(n_f: int, t: int, c: int, heads: int = 4, repeats: int = 5, threads: int | None = 1) -> ComplexityReport:
    """Median forward time of each attention kind plus exact MAC counts.

    ``threads=None`` leaves the BLAS thread pool alone.
    """
    _check_dims(n_f, t, c, heads)
    if repeats < 5:
        raise ValueError("repeats must be >= 5")
    params, grid, np_vec, vp_vec = _setup(n_f, t, c, heads, 0)
    counts = {k: count_attention_macs(k, n_f, t, c, heads) for k in KINDS}

    def run():
        return {k: _median_ms(lambda k=k: _forward(k, params, grid, np_vec, vp_vec), repeats) for k in KINDS}

    if threads is None:
        walls = run()
    else:
        with threadpool_limits(limits=threads):
            walls = run()
    return ComplexityReport(
        n_f=n_f,
        t=t,
        c=c,
        heads=heads,
        repeats=repeats,
        factorized_macs=counts["factorized"][CORE_TAG],
        joint_macs=counts["joint"][CORE_TAG],
        predicted_factorized=predicted_core_macs("factorized", n_f, t, c),
        predicted_joint=predicted_core_macs("joint", n_f, t, c),
        factorized_proj_macs=counts["factorized"][PROJ_TAG],
        joint_proj_macs=counts["joint"][PROJ_TAG],
        wall_factorized_ms=walls["factorized"],
        wall_joint_ms=walls["joint"],
    )


TSV_COLUMNS = (
    "variant",
    "n_f",
    "t",
    "c",
    "heads",
    "repeats",
    "core_macs",
    "predicted_core_macs",
    "proj_macs",
    "median_ms",
)


def write_report_tsv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TSV_COLUMNS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        for report in reports:
            writer.writerows(report.rows())


__all__ = [
    "ComplexityReport",
    "KINDS",
    "bench_wallclock",
    "big_o_factorized",
    "big_o_joint",
    "count_attention_macs",
    "predicted_core_macs",
    "write_report_tsv",
]
