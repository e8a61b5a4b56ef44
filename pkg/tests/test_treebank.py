import pytest
from hypothesis import given

from conftest import trees
from vlrefine.errors import EmptyLabel, TrailingGarbage, TreeSyntaxError, UnbalancedBrackets
from vlrefine.treebank import (
    base_label,
    iter_tree_strings,
    label_matches,
    parse_tree,
    read_trees,
    render,
    write_trees,
)

DOG = "(S (NP (NN dog)) (VP (VBZ runs)))"


def test_two_token_sentence():
    t = parse_tree(DOG)
    assert t.label == "S"
    assert len(t.children) == 2
    assert t.words() == ["dog", "runs"]
    assert t.span == (0, 2)
    assert render(t) == DOG


def test_single_leaf():
    t = parse_tree("(NP (NN panda))")
    assert len(t.children) == 1
    assert t.children[0].token == "panda"
    assert render(t.children[0]) == "(NN panda)"


def test_unbalanced_reports_end_of_input():
    text = "((S (NP (NN a)))"
    with pytest.raises(UnbalancedBrackets) as err:
        parse_tree(text)
    assert err.value.position == len(text)


def test_extra_close_bracket_position():
    with pytest.raises(UnbalancedBrackets) as err:
        parse_tree("(NN a))")
    assert err.value.position == 6


@pytest.mark.parametrize("text", ["( (NN a) (NN b))", "(() (NN a))"])
def test_missing_label(text):
    with pytest.raises(EmptyLabel):
        parse_tree(text)


def test_trailing_garbage():
    with pytest.raises(TrailingGarbage):
        parse_tree("(NN a) (NN b)")
    with pytest.raises(TrailingGarbage):
        parse_tree("(NN a) junk")


@pytest.mark.parametrize("text", ["", "   ", "NN a", "(S (NN a) b)", "(S)"])
def test_other_syntax_errors(text):
    with pytest.raises(TreeSyntaxError):
        parse_tree(text)


def test_bare_leaf_matches_preterminal_shape():
    a = parse_tree("(S (NP dog) (VP runs))")
    assert a.words() == ["dog", "runs"]
    assert a.children[0].token == "dog" and a.children[0].label == "NP"
    assert label_matches(a.children[0], "NP")


def test_ptb_wrapper_is_dropped():
    assert parse_tree(f"( {DOG} )") == parse_tree(DOG)


def test_whitespace_is_interchangeable():
    assert parse_tree("(S\n\t(NP   (NN dog))\n (VP (VBZ runs)))") == parse_tree(DOG)


def test_function_tags():
    assert base_label("NP-SBJ-1") == "NP"
    assert base_label("NP=2") == "NP"
    assert base_label("-NONE-") == "-NONE-"
    t = parse_tree("(NP-SBJ (NN dog))")
    assert label_matches(t, "NP")
    assert not label_matches(t, "N")


def test_three_deep_round_trip():
    t = parse_tree("(S (NP (NP (DT the) (NN dog)) (PP (IN of) (NP (NN x)))) (VP (VBZ runs)))")
    assert parse_tree(render(t)) == t


@given(trees())
def test_round_trip(tree):
    assert parse_tree(render(tree)) == tree


@given(trees())
def test_render_is_idempotent_canonical_form(tree):
    once = render(parse_tree(render(tree)))
    assert once == render(parse_tree(once))
    assert "  " not in once


@given(trees())
def test_structural_invariants(tree):
    assert len(tree.leaves()) == tree.span[1] - tree.span[0]
    for node in tree.preorder():
        assert (node.token is not None) == (not node.children)
        assert node.label and not any(ch in node.label for ch in " ()")
        if node.children:
            assert node.children[0].span[0] == node.span[0]
            assert node.children[-1].span[1] == node.span[1]
            for a, b in zip(node.children, node.children[1:]):
                assert a.span[1] == b.span[0]


def test_corpus_parses(corpus_dir):
    trees_ = read_trees(corpus_dir / "trees.mrg")
    assert len(trees_) == 20


def test_iter_tree_strings_skips_comments_and_joins_lines():
    lines = ["# header", "", "(S (NP (NN a))", "   (VP (VBZ b)))", "(NN c)"]
    got = list(iter_tree_strings(lines))
    assert [n for n, _ in got] == [3, 5]
    assert parse_tree(got[0][1]).words() == ["a", "b"]


def test_write_read_trees(tmp_path):
    ts = [parse_tree(DOG), parse_tree("(NP (NN panda))")]
    write_trees(tmp_path / "t.mrg", ts)
    assert read_trees(tmp_path / "t.mrg") == ts
