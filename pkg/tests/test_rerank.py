import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toolrank.agent import AgentState, IntentMemory, RecToolMemory
from toolrank.catalog import Catalog, SplitConfig
from toolrank.llm import GatewayError, PromptKind
from toolrank.rectools import ToolModel, normalize_scores, top_k
from toolrank.rerank import (
    aggregate,
    candidates_for,
    final_ranking,
    fuse,
    hallucination_filter,
    refine,
    rerank_general,
    rerank_similarity,
)

from conftest import candidate_ids, echo_candidates, reverse_candidates, scripted, vec


class Fixed(ToolModel):
    variant = "fixed"

    def __init__(self, scores, **kw):
        super().__init__(n_items=len(scores), exclude_seen=False, **kw)
        self.scores = np.asarray(scores, dtype=float)

    def _score(self, user, history):
        return self.scores, False


# ------------------------------------------------------------- aggregate


def test_one_hot_weights_reproduce_tool():
    vs = [vec([0.2, 0.9, 0.4]), vec([1, 0, 0.5]), vec([0.3, 0.3, 0.3])]
    np.testing.assert_array_equal(aggregate(RecToolMemory((1, 0, 0)), vs).scores, vs[0].scores)


def test_equal_weights_tie():
    out = aggregate(RecToolMemory((1, 1, 1)), [vec([0.9, 0.1]), vec([0.1, 0.9]), vec([0.5, 0.5])])
    np.testing.assert_allclose(out.scores, [1.5, 1.5])
    assert top_k(out, 2) == [0, 1]


def test_weighted_sum():
    out = aggregate((2, 1, 0), [vec([1, 0]), vec([0, 1]), vec([0.7, 0.2])])
    np.testing.assert_array_equal(out.scores, [2, 1])


def test_aggregate_length_mismatch():
    with pytest.raises(ValueError):
        aggregate((1, 1), [vec([1, 0])])
    with pytest.raises(ValueError):
        aggregate((1, 1), [vec([1, 0]), vec([1, 0, 0])])


# ------------------------------------------------------------- filter


@pytest.mark.parametrize("raw,expected", [
    (["20", "99", "30", "banana"], [20, 30, 10, 40]),
    ([], [10, 20, 30, 40]),
    (["20", "20", "10"], [20, 10, 30, 40]),
])
def test_filter_examples(raw, expected):
    assert hallucination_filter(raw, [10, 20, 30, 40]) == expected


def test_filter_ignores_non_ascii_digits():
    assert hallucination_filter(["²", "٣", "2"], [0, 2, 3]) == [2, 0, 3]


def test_filter_resolves_external_keys():
    catalog = Catalog(["a", "b", "c", "d"], ["k0", "k1", "k2", "k3"])
    assert hallucination_filter(["k3", "k9", "1"], [0, 1, 3], catalog) == [3, 1, 0]


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 60), min_size=1, max_size=20, unique=True),
       st.lists(st.one_of(st.integers(0, 80).map(str), st.text(max_size=4)), max_size=30))
def test_filter_is_permutation(cands, raw):
    out = hallucination_filter(raw, cands)
    assert sorted(out) == sorted(cands)


# ------------------------------------------------------------- LLM reranks


@pytest.fixture
def catalog20():
    return Catalog([f"product {i}" for i in range(20)], [f"p{i:02d}" for i in range(20)])


def test_similarity_reversal(catalog20):
    gw, _ = scripted(similarity_rerank=reverse_candidates)
    cands = list(range(20))
    assert rerank_similarity(gw, cands, catalog20, ["something"]) == cands[::-1]


def test_similarity_empty_targets_skip_call(catalog20):
    gw, oracle = scripted(similarity_rerank=reverse_candidates)
    assert rerank_similarity(gw, [3, 1, 2], catalog20, []) == [3, 1, 2]
    assert oracle.calls == 0


def test_similarity_partial_list(catalog20):
    cands = list(range(20))
    gw, _ = scripted(similarity_rerank="p19\np07\nbogus\np03\np11\np00")
    out = rerank_similarity(gw, cands, catalog20, ["x"])
    assert out[:5] == [19, 7, 3, 11, 0]
    assert out[5:] == [i for i in cands if i not in (19, 7, 3, 11, 0)]


def test_similarity_gateway_error_keeps_order(catalog20):
    def fail(req):
        raise GatewayError("down")

    gw, _ = scripted(similarity_rerank=fail)
    assert rerank_similarity(gw, [5, 4, 3], catalog20, ["x"]) == [5, 4, 3]


def test_general_echo_and_skip(catalog20):
    gw, oracle = scripted(general_rerank=echo_candidates)
    assert rerank_general(gw, [9, 2, 5], catalog20, "likes things") == [9, 2, 5]
    assert rerank_general(gw, [9, 2, 5], catalog20, "  ") == [9, 2, 5]
    assert oracle.calls == 1


def test_general_partial(catalog20):
    gw, _ = scripted(general_rerank="p05")
    assert rerank_general(gw, [9, 2, 5], catalog20, "p") == [5, 9, 2]


def test_prompt_shows_external_ids(catalog20):
    seen = []

    def spy(req):
        seen.append(candidate_ids(req))
        return ""

    gw, _ = scripted(general_rerank=spy)
    rerank_general(gw, [4, 1], catalog20, "profile")
    assert seen == [["p04", "p01"]]


# ------------------------------------------------------------- fuse


def test_fuse_hand_example():
    out = fuse(["a", "b", "c"], 0.6, ["c", "a", "b"], 0.4)
    # c = 0.6 * 3 + 0.4 * 1
    assert out.scores == pytest.approx({"a": 1.4, "b": 2.4, "c": 2.2})
    assert out.order == ("a", "c", "b")


def test_fuse_degenerate_weight_and_identical_lists():
    assert fuse([3, 1, 2], 0.7, [2, 1, 3], 0.0).order == (3, 1, 2)
    assert fuse([3, 1, 2], 0.0, [3, 1, 2], 0.0).order == (3, 1, 2)
    assert fuse([3, 1, 2], 0.2, [3, 1, 2], 5.0).order == (3, 1, 2)


def test_fuse_tie_uses_list_a():
    # a: 1*1 + 1*2 = 3, b: 1*2 + 1*1 = 3
    assert fuse(["a", "b"], 1, ["b", "a"], 1).order == ("a", "b")
    assert fuse(["b", "a"], 1, ["a", "b"], 1).order == ("b", "a")


def test_fuse_mismatch():
    with pytest.raises(ValueError):
        fuse([1, 2], 1, [1, 3], 1)
    with pytest.raises(ValueError):
        fuse([1, 1], 1, [1, 1], 1)


@settings(max_examples=200, deadline=None)
@given(st.permutations(list(range(8))), st.permutations(list(range(8))),
       st.integers(0, 20), st.integers(0, 20), st.sampled_from([0.25, 0.5, 2.0, 3.0, 10.0]))
def test_fuse_joint_scale_invariance(a, b, wa, wb, c):
    assert fuse(a, wa, b, wb).order == fuse(a, c * wa, b, c * wb).order


# ------------------------------------------------------------- full path


def _state(sub=1 / 3, com=1 / 3, reg=1 / 3, subs=("s",), coms=("c",), profile="p", weights=(1, 1, 1)):
    return AgentState(0, "u0", RecToolMemory(weights), IntentMemory(sub, com, reg), profile, list(subs), list(coms))


def _tools(n_items=30, seed=0):
    rng = np.random.default_rng(seed)
    return [Fixed(rng.random(n_items), label=lab) for lab in "GSM"]


def _catalog(n=30):
    return Catalog([f"thing {i}" for i in range(n)], [f"t{i:02d}" for i in range(n)])


def test_identity_path():
    tools, catalog, split = _tools(), _catalog(), SplitConfig()
    st_ = _state(0, 0, 0, subs=(), coms=(), profile="")
    gw, oracle = scripted()
    items, _ = final_ranking(st_, gw, tools, [0], catalog, split)
    agg = aggregate(st_.rec_memory, [normalize_scores(t.predict(0, [0])) for t in tools])
    assert items == top_k(agg, split.k_prime)
    assert oracle.calls == 0


def test_reversal_path():
    tools, catalog, split = _tools(), _catalog(), SplitConfig()
    st_ = _state(1, 0, 0)
    gw, _ = scripted(similarity_rerank=reverse_candidates, general_rerank=echo_candidates)
    items, _ = final_ranking(st_, gw, tools, [0], catalog, split)
    agg = aggregate(st_.rec_memory, [normalize_scores(t.predict(0, [0])) for t in tools])
    assert items == top_k(agg, split.k_prime)[::-1]


def test_output_is_subset_of_candidates():
    tools, catalog, split = _tools(seed=3), _catalog(), SplitConfig()
    gw, _ = scripted()
    items, scores = final_ranking(_state(0.2, 0.7, 0.4), gw, tools, [0, 5], catalog, split)
    agg = aggregate(RecToolMemory((1, 1, 1)), [normalize_scores(t.predict(0, [0, 5])) for t in tools])
    assert set(items) == set(candidates_for(agg, split.k_prime))
    assert scores == sorted(scores)


def test_exclusive_mode_picks_larger_intent():
    catalog = _catalog()
    cands = list(range(6))
    calls = []

    def spy(req):
        calls.append(req.prompt.split("[Target Item List ordered by priority]\n")[1].splitlines()[0])
        return reverse_candidates(req)

    gw, _ = scripted(similarity_rerank=spy)
    out = refine(gw, cands, catalog, _state(0.2, 0.5, 0, subs=("SUBS",), coms=("COMS",)), "exclusive", False)
    assert calls == ["COMS"] and out.order == tuple(cands[::-1])
    calls.clear()
    refine(gw, cands, catalog, _state(0.5, 0.5, 0, subs=("SUBS",), coms=("COMS",)), "exclusive", False)
    assert calls == ["SUBS"]


def test_sc_off_skips_similarity_calls():
    gw, oracle = scripted(general_rerank=echo_candidates)
    out = refine(gw, [4, 2, 9], _catalog(), _state(), "off", True)
    assert out.order == (4, 2, 9)
    assert oracle.calls == 1


def test_with_ensemble_blend():
    from toolrank.ensemble import init_model

    tools, catalog, split = _tools(), _catalog(), SplitConfig()
    lr = init_model("lr", 3)
    lr.params["v"] = np.array([0.0, 0.0, 1.0])
    st_ = _state(0, 0, 0, subs=(), coms=(), profile="", weights=(0, 0, 1))
    items, _ = final_ranking(st_, scripted()[0], tools, [0], catalog, split, ensemble=lr)
    assert items == top_k(normalize_scores(tools[2].predict(0, [0])), split.k_prime)
