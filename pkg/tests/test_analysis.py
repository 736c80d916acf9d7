import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import digamma as sp_digamma

from revsel.analysis import digamma, eval_summaries, mi_discrete_continuous, rank_columns, rank_features
from revsel.corpus import GoldSummary
from revsel.features import FEATURE_NAMES, FeatureMatrix
from revsel.prior import tags_from_indices


def test_digamma_against_reference():
    x = np.concatenate([np.linspace(0.01, 10, 400), np.arange(1, 3000, dtype=float)])
    np.testing.assert_allclose(digamma(x), sp_digamma(x), rtol=0, atol=1e-10)
    assert digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-12)
    with pytest.raises(ValueError):
        digamma(0.0)


def test_mi_null_case_near_zero():
    rng = np.random.default_rng(0)
    vals = [mi_discrete_continuous(rng.normal(size=5000), rng.integers(0, 2, 5000)) for _ in range(5)]
    assert max(abs(v) for v in vals) <= 0.02


def test_mi_deterministic_binary_near_ln2():
    rng = np.random.default_rng(1)
    y = rng.permutation(np.repeat([0, 1], 2500))
    x = y + rng.normal(0.0, 1e-3, size=5000)
    assert mi_discrete_continuous(x, y) == pytest.approx(np.log(2), abs=0.05)


def test_mi_label_flip_and_monotone_transform():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 2, 1500)
    x = rng.normal(size=1500) + 0.8 * y
    base = mi_discrete_continuous(x, y)
    assert mi_discrete_continuous(x, 1 - y) == pytest.approx(base, abs=1e-12)
    assert mi_discrete_continuous(x ** 3, y) == pytest.approx(base, abs=0.01)
    assert mi_discrete_continuous(2.5 * x - 7, y) == pytest.approx(base, abs=0.01)


def test_mi_constant_and_tied_columns():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, 1000)
    assert abs(mi_discrete_continuous(np.ones(1000), y)) <= 0.02
    ints = rng.integers(0, 3, 1000).astype(float)
    v = mi_discrete_continuous(ints, y)
    assert np.isfinite(v) and v == mi_discrete_continuous(ints, y)


@given(st.integers(0, 10_000))
def test_mi_is_finite_on_small_samples(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 40))
    y = rng.integers(0, 3, n)
    y[:2] = [0, 1]
    assert np.isfinite(mi_discrete_continuous(rng.normal(size=n), y))


def test_mi_errors():
    with pytest.raises(ValueError):
        mi_discrete_continuous([1.0, 2.0], [0, 1, 1])
    with pytest.raises(ValueError):
        mi_discrete_continuous(np.arange(10.0), np.zeros(10))
    with pytest.raises(ValueError):
        mi_discrete_continuous([1.0, np.nan, 3, 4, 5, 6], [0, 1, 0, 1, 0, 1])
    with pytest.raises(ValueError):
        mi_discrete_continuous([1.0, 2.0, 3.0], [0, 1, 0], k=3)
    with pytest.raises(ValueError):
        mi_discrete_continuous(np.arange(10.0), [0, 1] * 5, k=0)


def test_planted_column_ranks_first():
    rng = np.random.default_rng(4)
    n = 3000
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, 23))
    x[:, 11] += 1.5 * y
    rep = rank_columns(x, y, names=FEATURE_NAMES)
    assert rep.order[0] == 11
    assert rep.clamped.min() >= 0 and "n = 3000" in rep.table()
    assert rep.to_json()["features"][0]["name"] == FEATURE_NAMES[11]


def test_rank_features_checks_alignment():
    rng = np.random.default_rng(5)
    mats = [FeatureMatrix(f"p{i}", rng.normal(size=(10, 23))) for i in range(4)]
    tags = [tags_from_indices(f"p{i}", 10, [0, 1, 2]) for i in range(4)]
    assert len(rank_features(mats, tags).raw) == 23
    with pytest.raises(ValueError):
        rank_features(mats, tags[::-1])
    with pytest.raises(ValueError):
        rank_features(mats, tags[:3])


G1 = GoldSummary("A sturdy blender with a strong motor.", ("Quiet lid", "Big jar"), ("Heavy base",))
G2 = GoldSummary("Comfortable shoes for long runs.", ("Good grip",), ("Laces come loose", "Pricey"))


def test_eval_identical_and_disjoint():
    same = eval_summaries({"a": G1, "b": G2}, {"a": G1, "b": G2})
    assert all(v == pytest.approx(100.0) for sec in same.values() for v in sec.values())
    empty = GoldSummary("", (), ())
    zero = eval_summaries({"a": empty}, {"a": G1})
    assert all(v == 0.0 for sec in zero.values() for v in sec.values())


def test_eval_order_invariant_and_mismatch():
    a = eval_summaries({"a": G2, "b": G1}, {"a": G1, "b": G2})
    b = eval_summaries(dict(reversed(list({"a": G2, "b": G1}.items()))), {"b": G2, "a": G1})
    assert a == b
    with pytest.raises(ValueError):
        eval_summaries({"a": G1}, {"a": G1, "b": G2})
    with pytest.raises(ValueError):
        eval_summaries({}, {})


def test_jittered_label_column_ranks_first():
    rng = np.random.default_rng(6)
    mats, tags = [], []
    for p in range(40):
        t = np.zeros(20, dtype=int)
        t[rng.choice(20, 5, replace=False)] = 1
        x = rng.normal(size=(20, 23))
        x[:, 0] = t + rng.normal(0.0, 1e-3, size=20)
        x[:, 5] = 3.0
        mats.append(FeatureMatrix(f"p{p}", x))
        tags.append(t)
    rep = rank_features(mats, tags)
    assert rep.order[0] == 0 and rep.names == tuple(FEATURE_NAMES)
    assert rep.clamped[5] <= 0.02
