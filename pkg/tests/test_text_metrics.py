import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navflywheel.lang import Instruction, UnparseableInstruction
from navflywheel.text_metrics import bleu, cider, lcs_length, proposition_f1, rouge_l, text_scores
from oracles import TEXT_CORPUS, bleu_brute, cider_brute, lcs_brute, prop_f1_brute, rouge_l_brute

I = Instruction.from_text

# Values computed with the brute-force oracles in oracles.py before the
# metric module existed, then frozen here.
GOLDEN = {
    "bleu1": [0.75, 0.7142857142857143, 0.6065306597126334, 0.9, 0.6666666666666666, 1.0, 0.8235294117647058, 0.2207276647028654, 0.7857142857142857, 0.9090909090909091],
    "bleu4": [1.8803015465431947e-05, 0.0020556680845025986, 0.5480623193671366, 0.7121043131712586, 0.6262844962765469, 1.0, 0.5241705759002533, 4.625839074220484e-06, 0.722160038719837, 0.7016879391277371],
    "rouge_l": [0.75, 0.7142857142857143, 0.7721518987341772, 0.9, 0.7911802853437093, 1.0, 0.7058823529411764, 0.37731958762886597, 0.8591549295774649, 0.9090909090909091],
    "cider": [0.23390078359868904, 0.1491395232741381, 6.271034226391455, 4.547637712359812, 6.090440743812044, 0.0, 1.5531214538915807, 0.023772830238665124, 5.14305932414008, 5.827168743273887],
    "prop_f1": [1.0, 1.0, 0.6666666666666666, 1.0, 0.8, 1.0, 1.0, 0.0, 0.8, 1.0],
    "prop_f1_dir": [0.0, 1.0, 0.8, 1.0, 0.888888888888889, 1.0, 0.0, 0.0, 0.888888888888889, 1.0],
}


def corpus():
    return [(I(c), [I(r) for r in refs]) for c, refs in TEXT_CORPUS]


def test_golden_corpus_exact():
    items = corpus()
    scores = text_scores([c for c, _ in items], [r for _, r in items])
    for key, expected in GOLDEN.items():
        got = [getattr(s, key) for s in scores]
        assert got == pytest.approx(expected, abs=1e-9), key


def test_golden_values_agree_with_oracles():
    toks = [(c.split(), [r.split() for r in refs]) for c, refs in TEXT_CORPUS]
    assert [bleu_brute(c, r, 1) for c, r in toks] == pytest.approx(GOLDEN["bleu1"], abs=1e-12)
    assert [bleu_brute(c, r, 4) for c, r in toks] == pytest.approx(GOLDEN["bleu4"], abs=1e-12)
    assert [rouge_l_brute(c, r) for c, r in toks] == pytest.approx(GOLDEN["rouge_l"], abs=1e-12)
    assert cider_brute(toks) == pytest.approx(GOLDEN["cider"], abs=1e-12)
    assert [prop_f1_brute(c, r, False) for c, r in TEXT_CORPUS] == pytest.approx(GOLDEN["prop_f1"], abs=1e-12)
    assert [prop_f1_brute(c, r, True) for c, r in TEXT_CORPUS] == pytest.approx(GOLDEN["prop_f1_dir"], abs=1e-12)


def test_bleu_hand_value():
    assert bleu(I("turn left , stop"), [I("turn right , stop")], 1) == pytest.approx(0.75, abs=1e-12)


def test_identity_scores_one():
    x = I("turn left , walk past bed , walk to sofa , stop at lamp")
    assert bleu(x, [x], 1) == pytest.approx(1.0)
    assert bleu(x, [x], 4) == pytest.approx(1.0)
    assert rouge_l(x, [x]) == pytest.approx(1.0)
    assert proposition_f1(x, [x]) == 1.0
    assert proposition_f1(x, [x], directional=True) == 1.0


def test_disjoint_tokens():
    a, b = I("turn left , stop"), I("walk past bed")
    assert bleu(["a", "b", "c"], [["x", "y", "z"]], 4) < 1e-8
    assert rouge_l(["a", "b"], [["x", "y"]]) == 0.0
    assert bleu(a, [a], 4) == pytest.approx(1.0)
    assert rouge_l(a, [b]) == 0.0


def test_rouge_four_token_pair_against_subsequence_oracle():
    a, b = "walk past bed stop".split(), "walk bed past stop".split()
    assert lcs_length(a, b) == lcs_brute(a, b) == 3
    assert rouge_l(a, [b]) == pytest.approx(rouge_l_brute(a, [b]), abs=1e-12)


def test_cider_identity_and_disjoint():
    items = [(I("walk past bed , stop"), [I("walk past bed , stop")]),
             (I("turn left , walk to sofa , stop at lamp"), [I("turn left , walk to sofa , stop at lamp")]),
             (I("turn around , walk past door , stop at door"), [I("turn around , walk past door , stop at door")])]
    # every reference shares "stop" and ","; idf of shared grams is zero but the rest carry weight
    assert cider(items) == pytest.approx([10.0, 10.0, 10.0])
    disjoint = [(I("walk past tv"), [I("turn left")]), (I("stop"), [I("stop at bed")])]
    assert cider([(c.tokens, [r.tokens for r in rs]) for c, rs in disjoint])[0] == 0.0


def test_cider_three_item_corpus_matches_dense_oracle():
    items = TEXT_CORPUS[:3]
    toks = [(c.split(), [r.split() for r in refs]) for c, refs in items]
    assert cider(toks) == pytest.approx(cider_brute(toks), abs=1e-12)


def test_cider_needs_a_corpus():
    with pytest.raises(ValueError):
        cider([(I("stop"), [I("stop")])])


def test_synonyms_and_partial_overlap():
    assert proposition_f1(I("walk past bed , stop at sofa"), [I("walk past cot , stop at couch")]) == 1.0
    assert proposition_f1(I("walk past bed , stop at sofa"), [I("walk past bed , stop at lamp")]) == 0.5


def test_unparseable_raises():
    with pytest.raises(UnparseableInstruction):
        proposition_f1(I("banana split"), [I("stop")])


SENTS = [c for c, _ in TEXT_CORPUS] + [r for _, refs in TEXT_CORPUS for r in refs]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(SENTS), st.lists(st.sampled_from(SENTS), min_size=1, max_size=3), st.randoms())
def test_metric_ranges_and_permutation_invariance(c, refs, rnd):
    cand, rs = I(c), [I(r) for r in refs]
    shuffled = list(rs)
    rnd.shuffle(shuffled)
    for fn in (lambda x: bleu(cand, x, 1), lambda x: bleu(cand, x, 4), lambda x: rouge_l(cand, x),
               lambda x: proposition_f1(cand, x), lambda x: proposition_f1(cand, x, True)):
        v = fn(rs)
        assert 0.0 <= v <= 1.0 + 1e-12
        assert fn(shuffled) == pytest.approx(v, abs=1e-12)


SYN = {"bed": "cot", "sofa": "couch", "door": "doorway", "window": "pane", "lamp": "light", "fridge": "refrigerator"}


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(SENTS), st.sampled_from(SENTS))
def test_prop_f1_invariant_under_synonyms(c, r):
    swap = " ".join(SYN.get(w, w) for w in c.split())
    assert proposition_f1(I(swap), [I(r)]) == proposition_f1(I(c), [I(r)])
    assert proposition_f1(I(c), [I(swap)], True) == proposition_f1(I(c), [I(c)], True)
