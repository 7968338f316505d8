import itertools
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_table
from cryptovote.errors import ConfigError, ContractError
from cryptovote.ensemble import (
    VoteTable,
    decide_all,
    filter_complete,
    incomplete_packages,
    majority_threshold,
    majority_vote,
    merge,
    read_consolidated_csv,
    write_consolidated_csv,
)
from cryptovote.parser import ParsedResponse, ResponseTable


def _strict_majority(votes):
    # oracle: more True votes than False votes
    return sum(votes) > len(votes) - sum(votes)


@pytest.mark.parametrize("n", range(1, 9))
def test_majority_matches_brute_force(n):
    for votes in itertools.product([False, True], repeat=n):
        assert majority_vote(list(votes), n).decision == _strict_majority(votes)


def test_thresholds():
    assert [majority_threshold(n) for n in (1, 2, 3, 4, 5, 7)] == [1, 2, 2, 3, 3, 4]


def test_five_model_examples():
    assert majority_vote([True, True, True, False, False], 5).decision is True
    assert majority_vote([True, True, False, False, False], 5).decision is False


def test_vote_contract():
    with pytest.raises(ContractError):
        majority_vote([True, False], 3)
    with pytest.raises(ContractError):
        majority_vote([True, None, False], 3)


def test_even_ensemble_warns():
    t = make_table({"a": [True, False]}, ["m1", "m2"])
    with pytest.warns(UserWarning, match="even"):
        d = decide_all(t)
    assert d["a"].decision is False


def test_odd_ensemble_silent():
    t = make_table({"a": [True, False, True]}, ["m1", "m2", "m3"])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert decide_all(t)["a"].decision is True


@given(st.lists(st.booleans(), min_size=1, max_size=11))
def test_monotone_in_true_votes(votes):
    n = len(votes)
    base = majority_vote(votes, n).decision
    for i, v in enumerate(votes):
        if not v:
            flipped = votes[:i] + [True] + votes[i + 1:]
            assert majority_vote(flipped, n).decision >= base


@given(st.lists(st.booleans(), min_size=1, max_size=11), st.randoms(use_true_random=False))
def test_order_independent(votes, rnd):
    shuffled = list(votes)
    rnd.shuffle(shuffled)
    assert majority_vote(shuffled, len(votes)).decision == majority_vote(votes, len(votes)).decision


def test_merge_aligns_and_marks_missing():
    a = ResponseTable("a", {"x": ParsedResponse("x", True), "y": None})
    b = ResponseTable("b", {"y": ParsedResponse("y", False), "z": ParsedResponse("z", True)})
    t = merge([a, b])
    assert t.model_ids == ["a", "b"]
    assert t.rows == {"x": [True, None], "y": [None, False], "z": [None, True]}
    assert incomplete_packages(t) == ["x", "y", "z"]
    complete, dropped = filter_complete(t)
    assert complete.rows == {} and dropped == 3


def test_merge_rejects_duplicate_ids():
    with pytest.raises(ConfigError):
        merge([ResponseTable("a"), ResponseTable("a")])


def test_table_shape_checked():
    with pytest.raises(ContractError):
        VoteTable(["a", "b"], {"x": [True]})


def test_consolidated_csv_roundtrip():
    t = make_table({"b": [True, True, False], "a": [False, False, True]}, ["m1", "m2", "m3"])
    text = write_consolidated_csv(t)
    lines = text.splitlines()
    assert lines[0] == "package,m1,m2,m3,true_votes,majority"
    assert lines[1] == "b,True,True,False,2,True"
    assert read_consolidated_csv(text).rows == t.rows
