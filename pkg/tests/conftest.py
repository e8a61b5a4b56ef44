from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from vlrefine.treebank import ParseTree, build

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
CORPUS = ROOT / "corpus"

LABELS = ["S", "NP", "VP", "PP", "NP-SBJ", "VP-TPC", "ADVP", "SBAR", "NN", "VBZ", "DT", "CC"]
WORDS = ["dog", "runs", "the", "and", "a", "panda", "eats", "x", "’s", "日本"]


@st.composite
def trees(draw, max_depth=4):
    """Random well-formed trees (spans fixed up by ``build``)."""

    def node(depth):
        if depth == 0 or draw(st.booleans()):
            return (draw(st.sampled_from(LABELS)), draw(st.sampled_from(WORDS)))
        kids = [node(depth - 1) for _ in range(draw(st.integers(1, 3)))]
        return build(draw(st.sampled_from(LABELS)), *kids)

    t = node(max_depth)
    return t if isinstance(t, ParseTree) else build("S", t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def corpus_dir():
    return CORPUS
