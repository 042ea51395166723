"""Property tests over randomly drawn grids, transforms and state clouds."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hrm.analysis import participation_ratio
from hrm.data.arc import ArcTransform, arc_invert, arc_vote, transform_grid
from hrm.data.tokens import arc_tokens, detokenize

grids = st.tuples(st.integers(1, 12), st.integers(1, 12)).flatmap(
    lambda hw: arrays(np.int64, hw, elements=st.integers(0, 9)))
transforms = st.builds(
    ArcTransform,
    dihedral=st.integers(0, 7),
    colors=st.permutations(list(range(10))).map(tuple),
    shift=st.tuples(st.integers(0, 5), st.integers(0, 5)),
)


@settings(max_examples=200, deadline=None)
@given(grids, transforms)
def test_arc_invert_undoes_transform(g, t):
    assert np.array_equal(arc_invert(transform_grid(g, t), t), g)


@settings(max_examples=200, deadline=None)
@given(grids, st.integers(0, 3))
def test_arc_tokens_round_trip(g, pid):
    assert np.array_equal(detokenize(arc_tokens(g, pid), "arc"), g)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=12))
def test_vote_top_choice_is_most_frequent(labels):
    grids_ = [np.full((1, 1), "abcd".index(x)) for x in labels]
    first, _ = arc_vote(grids_)
    counts = {x: labels.count(x) for x in labels}
    assert counts["abcd"[int(first[0, 0])]] == max(counts.values())


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 20), st.integers(1, 8)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_pr_bounded_by_rank(X):
    Xc = X - X.mean(axis=0)
    if np.linalg.norm(Xc) < 1e-6:
        return
    pr = participation_ratio(X)
    assert 1 - 1e-9 <= pr <= min(X.shape) + 1e-9
