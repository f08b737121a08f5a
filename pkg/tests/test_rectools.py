import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toolrank.catalog import BehaviorSequence, Catalog, SplitConfig, split_views
from toolrank.rectools import (
    SENTINEL,
    ScoreVector,
    TrainingError,
    load_imported_scores,
    load_tool,
    normalize_scores,
    predict,
    rank_of,
    save_tool,
    top_k,
    train_mf,
    train_tool,
    write_imported_scores,
)
from toolrank.synthetic import block_dataset

from conftest import vec

TINY = SplitConfig(k=1, c=1, k_prime=2, k_cpr=1)


def seqs(*item_lists):
    return [BehaviorSequence(u, list(items), list(range(len(items))), f"u{u}") for u, items in enumerate(item_lists)]


@pytest.mark.parametrize("raw,expected", [
    ([2, 4, 6], [0, 0.5, 1]),
    ([5, 5, 5], [0.5, 0.5, 0.5]),
    ([SENTINEL, 1, 3], [0, 0, 1]),
])
def test_normalize_examples(raw, expected):
    out = normalize_scores(vec(raw))
    np.testing.assert_allclose(out.scores, expected)
    assert np.isfinite(out.scores).all()


def test_normalize_keeps_exclusion_mask():
    out = normalize_scores(vec([SENTINEL, 1, 3]))
    assert out.excluded.tolist() == [True, False, False]
    # the excluded item still ranks last even though it shares the minimum score
    assert top_k(out, 3) == [2, 1, 0]


@pytest.mark.parametrize("scores,k,expected", [
    ([0.1, 0.9, 0.5], 2, [1, 2]),
    ([0.5, 0.5], 2, [0, 1]),
])
def test_top_k_examples(scores, k, expected):
    assert top_k(vec(scores), k) == expected


def test_top_k_full_catalog_is_permutation():
    rng = np.random.default_rng(0)
    v = vec(rng.random(30))
    assert sorted(top_k(v, 30)) == list(range(30))
    with pytest.raises(ValueError):
        top_k(v, 31)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6) | st.just(SENTINEL), min_size=1, max_size=25), st.data())
def test_top_k_prefix_and_normalize_order(raw, data):
    v = vec(raw)
    n = len(raw)
    a = data.draw(st.integers(1, n))
    b = data.draw(st.integers(a, n))
    assert top_k(v, a) == top_k(v, b)[:a]
    # normalization is monotone: walking the original order never increases the scaled score
    order = [i for i in top_k(v, n) if not v.excluded[i]]
    scaled = normalize_scores(v).scores[order]
    assert (np.diff(scaled) <= 0).all()
    assert all(rank_of(v, item) == r for r, item in enumerate(top_k(v, n), start=1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=25, unique=True))
def test_normalize_preserves_argsort_of_separated_scores(raw):
    v = vec(raw)
    assert top_k(normalize_scores(v), len(raw)) == top_k(v, len(raw))


def test_mf_recovers_blocks():
    data, blocks = block_dataset(60, seed=0)
    split = SplitConfig(k=1, c=5, k_prime=10, k_cpr=5)
    model = train_mf(data.sequences, split, len(data.catalog), seed=0, exclude_seen=False)
    good = 0
    for s in data.sequences:
        train, _, target = split_views(s, split)
        top = top_k(model.predict(s.user, train), 10)
        own = target[0] // 10
        good += sum(i // 10 == own for i in top) >= 6
    assert good / len(data.sequences) >= 0.8
    hist = np.array(model.loss_history)
    assert (np.diff(hist) <= 1e-6).all()
    assert hist[-1] < hist[0]


def test_mf_is_seeded():
    data, _ = block_dataset(20, seed=1)
    split = SplitConfig(k=1, c=5, k_prime=10, k_cpr=5)
    a = train_mf(data.sequences, split, 20, seed=3, epochs=20)
    b = train_mf(data.sequences, split, 20, seed=3, epochs=20)
    assert np.array_equal(a.user_factors, b.user_factors)
    assert np.array_equal(a.item_factors, b.item_factors)


def test_mf_unknown_user_falls_back_to_popularity():
    model = train_mf(seqs([0, 1, 1, 2], [1, 2, 3]), TINY, 5, epochs=5)
    out = model.predict(99, [0])
    assert out.fallback
    assert top_k(out, 2) == [1, 2]


def test_mf_non_finite_loss_raises():
    with pytest.raises(TrainingError, match="epoch 1"), np.errstate(all="ignore"):
        train_mf(seqs([0, 1, 2], [1, 2, 3]), TINY, 4, lr=np.inf, epochs=3)


def test_sequential_transition_oracle():
    model = train_tool("sequential", seqs([1, 5, 7, 0], [2, 5, 7, 0], [3, 4, 5, 7, 0]), TINY, 10)
    v = model.predict(0, [8, 5])
    assert top_k(v, 1) == [7]


def test_sequential_dead_end_uses_popularity():
    history = [[1, 2, 3], [1, 2], [1, 4]]
    model = train_tool("sequential", seqs(*[h + [0] for h in history]), TINY, 6, exclude_seen=False)
    v = model.predict(0, [3])  # item 3 never precedes anything in a training prefix
    assert v.fallback
    popularity = np.bincount([i for h in history for i in h], minlength=6).astype(float)
    assert top_k(v, 6) == top_k(vec(popularity), 6)


def test_covisitation_disjoint_cliques():
    clique_a, clique_b = [0, 1, 2], [3, 4, 5]
    model = train_tool("covisitation", seqs(clique_a + [9], clique_a[::-1] + [9], clique_b + [9], clique_b[::-1] + [9]),
                       TINY, 10, exclude_seen=False)
    v = model.predict(0, [0, 1])
    assert (v.scores[clique_b] == 0).all()
    assert (v.scores[clique_a] > 0).all()


def test_seen_items_rank_last():
    model = train_tool("covisitation", seqs([0, 1, 2, 3, 9], [3, 4, 5, 9]), TINY, 10)
    v = model.predict(0, [3])
    assert rank_of(v, 3) == 10
    assert top_k(v, 10)[-1] == 3


def test_imported_scores_passthrough(tmp_path):
    catalog = Catalog(["a", "b", "c"], ["x", "y", "z"])
    users = seqs([0, 1, 2], [2, 1, 0])
    path = tmp_path / "scores.csv"
    path.write_text("user_id,item_id,score\nu0,x,0.3\nu0,z,2.5\nu1,y,1.0\nghost,x,4\n", encoding="utf-8")
    model = load_imported_scores(path, catalog, users, exclude_seen=False)
    np.testing.assert_array_equal(model.predict(0, [0]).scores, [0.3, 0.0, 2.5])
    np.testing.assert_array_equal(model.predict(1, [0]).scores, [0.0, 1.0, 0.0])

    matrix = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    write_imported_scores(tmp_path / "scores.bin", matrix, ["u0", "u1"], ["x", "y", "z"])
    model = load_imported_scores(tmp_path / "scores.bin", catalog, users, exclude_seen=False)
    np.testing.assert_array_equal(model.predict(1, [0]).scores, matrix[1])


@pytest.mark.parametrize("variant", ["mf", "sequential", "covisitation"])
def test_checkpoint_round_trip(tmp_path, variant):
    data, _ = block_dataset(20, seed=2)
    split = SplitConfig(k=1, c=5, k_prime=10, k_cpr=5)
    hp = {"epochs": 10} if variant == "mf" else {}
    model = train_tool(variant, data.sequences, split, len(data.catalog), seed=4, **hp)
    save_tool(model, tmp_path / "m.tool", {"config_hash": "abc"})
    back = load_tool(tmp_path / "m.tool")
    assert back.variant == variant and back.seed == 4
    for s in data.sequences[:5]:
        h = split_views(s, split).train
        np.testing.assert_array_equal(predict(back, s.user, h).scores, predict(model, s.user, h).scores)


def test_predict_rejects_empty_history():
    model = train_tool("covisitation", seqs([0, 1, 2]), TINY, 3)
    with pytest.raises(ValueError):
        model.predict(0, [])


def test_unknown_variant():
    with pytest.raises(ValueError):
        train_tool("lightgcn", seqs([0, 1]), TINY, 2)


def test_score_vector_rejects_nan():
    with pytest.raises(ValueError):
        ScoreVector(0, 0, np.array([np.nan, 1.0]))
