import numpy as np
import pytest
from hypothesis import given, strategies as st

from revsel.corpus import GoldSummary, ProductRecord, Review
from revsel.features import (FEATURE_INDEX, FEATURE_NAMES, N_FEATURES, FeatureMatrix,
                             compute_features, featurize_corpus, featurize_product, load_features,
                             save_features)
from revsel.text_metrics import (aspect_density, aspect_scores, default_lexicon, join_segments,
                                 length_difference, rouge_n)

LEX = default_lexicon()


def straight_line(product, k, lex):
    """Recompute one feature row directly from the metric primitives."""
    rev = [list(r.tokens) for r in product.reviews]
    r = rev[k]
    v = product.summary.verdict_tokens()
    pc = join_segments(product.summary.section_tokens(s) for s in ("pros", "cons"))
    rest = join_segments(rev[:k] + rev[k + 1:])
    m = max([len(x) for x in rev] + [len(v), sum(t != "\x1e" for t in pc), 1])
    f = {}
    for name, ref in (("v", v), ("pc", pc), ("r-k", rest)):
        r1, r2 = rouge_n(r, ref, 1), rouge_n(r, ref, 2)
        f[f"R1-P(r,{name})"], f[f"R1-R(r,{name})"] = r1.precision, r1.recall
        f[f"R2-P(r,{name})"], f[f"R2-R(r,{name})"] = r2.precision, r2.recall
        f[f"AP(r,{name})"], f[f"AR(r,{name})"] = aspect_scores(r, ref, lex)
    f["LD(r,v)"] = length_difference(r, v, m)
    f["LD(r,pc)"] = len(r) / m - sum(t != "\x1e" for t in pc) / m
    f["AD(r)"], f["AD(v)"], f["AD(pc)"] = aspect_density(r, lex), aspect_density(v, lex), aspect_density(pc, lex)
    return np.array([f[n] for n in FEATURE_NAMES])


def test_frozen_order():
    assert N_FEATURES == 23
    assert FEATURE_NAMES[0] == "R2-R(r,pc)" and FEATURE_NAMES[-1] == "AD(pc)"
    assert len(set(FEATURE_NAMES)) == 23


def test_fixture_rows_match_straight_line_recomputation(filtered_records):
    for prod in filtered_records[:4]:
        mat = featurize_product(prod, LEX)
        for k in range(len(prod.reviews)):
            np.testing.assert_allclose(mat.values[k], straight_line(prod, k, LEX), rtol=0, atol=1e-12)


def _prod(texts, verdict="a fine blender", pros=("strong motor",), cons=("loud noise",)):
    return ProductRecord("p", tuple(Review(t) for t in texts), GoldSummary(verdict, pros, cons))


def test_identity_and_containment():
    prod = _prod(["a fine blender", "a fine blender"])
    row = compute_features(0, prod, LEX)
    assert row[FEATURE_INDEX["R1-R(r,v)"]] == 1.0 and row[FEATURE_INDEX["R1-P(r,v)"]] == 1.0
    assert row[FEATURE_INDEX["R1-P(r,r-k)"]] == 1.0
    with pytest.raises(IndexError):
        compute_features(2, prod, LEX)


def test_shapes_and_empty_corpus():
    assert featurize_corpus([], LEX) == []
    prod = _prod([f"review {i} about the motor" for i in range(10)])
    assert featurize_corpus([prod], LEX)[0].values.shape == (10, 23)


def test_length_normalizer_is_per_product_max():
    prod = _prod(["one two three", "one two three four five six seven eight"], verdict="a b",
                 pros=("p q r s",), cons=("c",))
    row = compute_features(0, prod, LEX)
    # max over reviews (8), verdict (2) and pros+cons (5) is 8
    assert row[FEATURE_INDEX["LD(r,v)"]] == pytest.approx(3 / 8 - 2 / 8)
    assert row[FEATURE_INDEX["LD(r,pc)"]] == pytest.approx(3 / 8 - 5 / 8)


sentences = st.lists(st.sampled_from(["the", "motor", "jar", "is", "loud", "battery", "life", "good"]),
                     min_size=1, max_size=8).map(" ".join)


@given(st.lists(sentences, min_size=3, max_size=6), st.randoms())
def test_other_review_order_does_not_matter(texts, rnd):
    prod = _prod(texts, verdict="the motor is loud", pros=("good jar",), cons=("battery life",))
    base = compute_features(0, prod, LEX)
    others = texts[1:]
    rnd.shuffle(others)
    perm = compute_features(0, _prod([texts[0]] + others, verdict="the motor is loud",
                                     pros=("good jar",), cons=("battery life",)), LEX)
    np.testing.assert_array_equal(base, perm)
    assert np.all(np.isfinite(base))
    bounded = [i for i, n in enumerate(FEATURE_NAMES) if not n.startswith("LD")]
    assert np.all((base[bounded] >= 0) & (base[bounded] <= 1))
    assert np.all(np.abs(base[[FEATURE_INDEX["LD(r,v)"], FEATURE_INDEX["LD(r,pc)"]]]) <= 1)


def test_serialization_round_trip_is_bit_exact(tmp_path, filtered_records):
    mats = featurize_corpus(filtered_records[:3], LEX)
    mats[0].values[0, 0] = 0.1 + 0.2  # a value with a long repr
    p = tmp_path / "f.jsonl"
    save_features(mats, p)
    back = load_features(p)
    for a, b in zip(mats, back):
        assert a.product_id == b.product_id
        assert a.values.tobytes() == b.values.tobytes()


def test_wrong_column_header_rejected():
    doc = FeatureMatrix("x", np.zeros((1, 23))).to_json()
    doc["columns"] = doc["columns"][::-1]
    with pytest.raises(ValueError):
        FeatureMatrix.from_json(doc)
