import json

import pytest
from hypothesis import given

from conftest import trees
from vlrefine.errors import NoNounPhrase, NoVerbPhrase
from vlrefine.planner import decompose, decompose_lenient, extract_atomic_vps, find_main_np
from vlrefine.treebank import parse_tree, read_trees

PANDA = "(S (NP (NNP Panda)) (VP (VP (VBG lying) (PRT (RP down))) (CC and) (VP (VBG eating))))"


def test_main_np_simple():
    t = parse_tree("(S (NP (NN dog)) (VP (VBZ runs)))")
    assert find_main_np(t).text() == "dog"


def test_main_np_skips_np_with_relative_clause():
    t = parse_tree(
        "(S (NP (NP (DT the) (NN panda)) (SBAR (WHNP (WDT that)) (S (VP (VBZ is) (VP (VBG walking))))))"
        " (VP (VBZ eats)))"
    )
    node = find_main_np(t)
    assert node.text() == "the panda"
    assert node.span == (0, 2)


def test_no_noun_phrase():
    with pytest.raises(NoNounPhrase):
        find_main_np(parse_tree("(VP (VBZ runs))"))


def test_panda_chain():
    chain = decompose(parse_tree(PANDA))
    assert [(p.np_text, p.vp_text) for p in chain.prompts] == [("Panda", "lying down"), ("Panda", "eating")]
    assert chain.P == 2
    assert [p.step_index for p in chain.prompts] == [1, 2]


def test_single_pair():
    chain = decompose(parse_tree("(S (NP (NN dog)) (VP (VBZ runs)))"))
    assert [(p.np_text, p.vp_text) for p in chain.prompts] == [("dog", "runs")]


def test_three_way_coordination():
    t = parse_tree("(S (NP (NN man)) (VP (VP (VBZ sits)) (, ,) (VP (VBZ eats)) (CC and) (VP (VBZ leaves))))")
    assert [v.text() for v in extract_atomic_vps(t)] == ["sits", "eats", "leaves"]


def test_nested_coordination_recurses_fully():
    t = parse_tree("(S (NP (NN cat)) (VP (VP (VBZ a)) (CC and) (VP (VP (VBZ b)) (CC or) (VP (VBZ c)))))")
    assert [v.text() for v in extract_atomic_vps(t)] == ["a", "b", "c"]


def test_auxiliary_wrapper_yields_inner_vp():
    t = parse_tree("(S (NP (NN dog)) (VP (VBZ is) (VP (VBG running))))")
    assert [v.text() for v in extract_atomic_vps(t)] == ["running"]


def test_horse_sentence_has_four_steps():
    t = read_trees(__import__("conftest").CORPUS / "trees.mrg")[1]
    chain = decompose(t)
    assert chain.P == 4
    assert {p.np_text for p in chain.prompts} == {"The horse"}


def test_no_verb_phrase():
    with pytest.raises(NoVerbPhrase):
        extract_atomic_vps(parse_tree("(NP (DT the) (NN dog))"))


def test_lenient_without_vp_uses_rest_of_sentence():
    chain = decompose_lenient(parse_tree("(FRAG (NP (DT the) (NN dog)) (ADVP (RB outside)))"))
    assert chain.P == 1
    assert chain.prompts[0].np_text == "the dog"
    assert chain.prompts[0].vp_text == "outside"


def test_lenient_np_covering_everything():
    chain = decompose_lenient(parse_tree("(NP (DT the) (NN dog))"))
    assert chain.prompts[0].vp_text == "the dog"


def test_lenient_without_np_uses_whole_sentence():
    chain = decompose_lenient(parse_tree("(S (VP (VBZ runs) (ADVP (RB fast))))"))
    assert chain.prompts[0].np_text == "runs fast"
    assert chain.prompts[0].vp_text == "runs fast"


def test_corpus_matches_hand_traced_chains(corpus_dir):
    got = [decompose(t).to_json() for t in read_trees(corpus_dir / "trees.mrg")]
    want = [json.loads(l) for l in (corpus_dir / "expected_chains.jsonl").read_text().splitlines() if l.strip()]
    assert got == want


@given(trees())
def test_chain_invariants(tree):
    try:
        chain = decompose(tree)
    except NoVerbPhrase:
        assert decompose_lenient(tree).P == 1
        return
    except NoNounPhrase:
        chain = decompose_lenient(tree)
        assert chain.P >= 1
        assert chain.prompts[0].np_text == " ".join(tree.words())
        return
    assert chain.P >= 1
    assert len({p.np_text for p in chain.prompts}) == 1
    spans = [p.vp_span for p in chain.prompts]
    for a, b in zip(spans, spans[1:]):
        assert a[1] <= b[0]
    assert [p.step_index for p in chain.prompts] == list(range(1, chain.P + 1))
    assert decompose(tree) == chain
