"""Split a parsed referring sentence into an ordered chain of (NP, VP) sub-prompts."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import NoNounPhrase, NoVerbPhrase
from .treebank import ParseTree, label_matches


@dataclass(frozen=True)
class SubPrompt:
    np_text: str
    vp_text: str
    np_span: tuple[int, int]
    vp_span: tuple[int, int]
    step_index: int


@dataclass(frozen=True)
class SubPromptChain:
    prompts: tuple[SubPrompt, ...]
    source_sentence: tuple[str, ...]

    @property
    def P(self) -> int:
        return len(self.prompts)

    def to_json(self) -> dict:
        first = self.prompts[0] if self.prompts else None
        return {
            "P": self.P,
            "np": first.np_text if first else "",
            "vps": [p.vp_text for p in self.prompts],
            "np_span": list(first.np_span) if first else [0, 0],
            "vp_spans": [list(p.vp_span) for p in self.prompts],
        }


def _has_vp_below(node: ParseTree) -> bool:
    return any(label_matches(d, "VP") for c in node.children for d in c.preorder())


def find_main_np(tree: ParseTree) -> ParseTree:
    """First NP in pre-order with no VP anywhere beneath it."""
    for node in tree.preorder():
        if label_matches(node, "NP") and not _has_vp_below(node):
            return node
    raise NoNounPhrase(f"no NP without VP descendants in {tree.text()!r}")


def _atomic(vp: ParseTree, out: list) -> None:
    vp_kids = [c for c in vp.children if label_matches(c, "VP")]
    if not vp_kids:
        out.append(vp)
    # one VP child is an auxiliary wrapper, several are a coordination
    for kid in vp_kids:
        _atomic(kid, out)


def extract_atomic_vps(tree: ParseTree) -> list[ParseTree]:
    out: list[ParseTree] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if label_matches(node, "VP"):
            _atomic(node, out)
            continue
        stack.extend(reversed(node.children))
    if not out:
        raise NoVerbPhrase(f"no VP in {tree.text()!r}")
    return out


def decompose(tree: ParseTree) -> SubPromptChain:
    main_np = find_main_np(tree)
    vps = extract_atomic_vps(tree)
    np_text = main_np.text()
    prompts = tuple(
        SubPrompt(np_text, vp.text(), main_np.span, vp.span, i)
        for i, vp in enumerate(vps, 1)
    )
    return SubPromptChain(prompts, tuple(tree.words()))


def decompose_lenient(tree: ParseTree) -> SubPromptChain:
    """Like :func:`decompose` but never fails on caption fragments.

    Missing NP: the whole sentence is the subject. Missing VP: a single step
    whose VP is every token outside the NP (or the whole sentence when the NP
    covers everything).
    """
    words = tree.words()
    whole = (0, len(words))
    try:
        main_np = find_main_np(tree)
        np_text, np_span = main_np.text(), main_np.span
    except NoNounPhrase:
        np_text, np_span = " ".join(words), whole
    try:
        vps = extract_atomic_vps(tree)
    except NoVerbPhrase:
        rest = [i for i in range(len(words)) if not np_span[0] <= i < np_span[1]]
        if rest:
            vp_text, vp_span = " ".join(words[i] for i in rest), (rest[0], rest[-1] + 1)
        else:
            vp_text, vp_span = " ".join(words), whole
        return SubPromptChain((SubPrompt(np_text, vp_text, np_span, vp_span, 1),), tuple(words))
    prompts = tuple(
        SubPrompt(np_text, vp.text(), np_span, vp.span, i) for i, vp in enumerate(vps, 1)
    )
    return SubPromptChain(prompts, tuple(words))
