"""Reading and writing Penn-style bracketed constituency trees."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import EmptyLabel, TrailingGarbage, TreeSyntaxError, UnbalancedBrackets

_TOKEN = re.compile(r"\(|\)|[^()\s]+")


@dataclass(frozen=True)
class ParseTree:
    label: str
    children: tuple["ParseTree", ...] = ()
    token: str | None = None
    span: tuple[int, int] = (0, 0)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list["ParseTree"]:
        if self.is_leaf:
            return [self]
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def words(self) -> list[str]:
        return [leaf.token for leaf in self.leaves()]

    def text(self) -> str:
        return " ".join(self.words())

    def preorder(self) -> Iterator["ParseTree"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def __str__(self):
        return render(self)


def base_label(label: str) -> str:
    """Strip Penn function tags and indices: ``NP-SBJ-1`` -> ``NP``."""
    m = re.match(r"[^-=]+", label)
    return m.group(0) if m else label


def label_matches(node: ParseTree, category: str) -> bool:
    return base_label(node.label) == category


def _tokenize(text):
    return [(m.group(0), m.start()) for m in _TOKEN.finditer(text)]


def _check_balance(tokens, end):
    depth = 0
    for tok, pos in tokens:
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
            if depth < 0:
                raise UnbalancedBrackets("unexpected ')'", pos)
    if depth > 0:
        raise UnbalancedBrackets(f"{depth} unclosed '('", end)


def parse_tree(text: str) -> ParseTree:
    """Parse one bracketed tree.

    Preterminals may be written ``(NN dog)`` or as a bare labelled word
    ``(NP dog)``; both become a leaf node carrying the label and the token.
    A PTB-style unlabeled wrapper ``( (S ...) )`` around a single subtree is
    dropped.
    """
    tokens = _tokenize(text)
    _check_balance(tokens, len(text))
    if not tokens:
        raise TreeSyntaxError("empty input", 0)
    if tokens[0][0] != "(":
        raise TreeSyntaxError(f"expected '(' but found {tokens[0][0]!r}", tokens[0][1])

    pos = 0

    def node():
        nonlocal pos
        _, start = tokens[pos]
        pos += 1  # '('
        tok, tpos = tokens[pos]
        if tok in "()":
            label = None
        else:
            label = tok
            pos += 1
        kids = []
        words = []
        while tokens[pos][0] != ")":
            tok, tpos = tokens[pos]
            if tok == "(":
                kids.append(node())
            else:
                words.append((tok, tpos))
                pos += 1
        pos += 1  # ')'
        if label is None:
            if len(kids) == 1 and not words:
                return kids[0]
            raise EmptyLabel("bracket without a label", start)
        if words and (kids or len(words) > 1):
            raise TreeSyntaxError(f"stray word {words[-1][0]!r} under {label}", words[-1][1])
        if words:
            return ("leaf", label, words[0][0])
        if not kids:
            raise TreeSyntaxError(f"node {label} has neither children nor a token", start)
        return ("node", label, kids)

    raw = node()
    if pos != len(tokens):
        raise TrailingGarbage(f"unexpected {tokens[pos][0]!r} after tree", tokens[pos][1])
    return _assign_spans(raw, 0)[0]


def _assign_spans(raw, lo):
    if raw[0] == "leaf":
        _, label, word = raw
        return ParseTree(label, (), word, (lo, lo + 1)), lo + 1
    _, label, kids = raw
    children = []
    hi = lo
    for kid in kids:
        child, hi = _assign_spans(kid, hi)
        children.append(child)
    return ParseTree(label, tuple(children), None, (lo, hi)), hi


def render(tree: ParseTree) -> str:
    if tree.is_leaf:
        return f"({tree.label} {tree.token})"
    return "(" + tree.label + " " + " ".join(render(c) for c in tree.children) + ")"


def build(label: str, *children) -> ParseTree:
    """Assemble a tree from nested ``(label, word)`` / ``ParseTree`` parts and fix spans.

    Mostly useful for tests: ``build("S", build("NP", ("NN", "dog")), build("VP", ("VBZ", "runs")))``.
    """

    def raw(part):
        if isinstance(part, ParseTree):
            if part.is_leaf:
                return ("leaf", part.label, part.token)
            return ("node", part.label, [raw(c) for c in part.children])
        lab, word = part
        return ("leaf", lab, word)

    return _assign_spans(("node", label, [raw(c) for c in children]), 0)[0]


def iter_tree_strings(lines) -> Iterator[tuple[int, str]]:
    """Yield ``(line_number, tree_text)``; a tree may continue over several lines."""
    buf, first, depth = [], None, 0
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not buf and (not stripped or stripped.startswith("#")):
            continue
        if not buf:
            first = lineno
        buf.append(stripped)
        depth += stripped.count("(") - stripped.count(")")
        if depth <= 0:
            yield first, " ".join(buf)
            buf, depth = [], 0
    if buf:
        yield first, " ".join(buf)


def read_trees(path) -> list[ParseTree]:
    with open(path, encoding="utf-8") as fh:
        return [parse_tree(text) for _, text in iter_tree_strings(fh)]


def write_trees(path, trees) -> None:
    Path(path).write_text("".join(render(t) + "\n" for t in trees), encoding="utf-8")
