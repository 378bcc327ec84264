import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pppkit.padding import (
    PadAmounts,
    PaddingError,
    PaddingScheme,
    pad,
    pad_amounts_for,
    pad_backward,
    pad_forward,
    randn_fill,
)
from pppkit.rng import RngStream

from .oracles import pad_loops

DETERMINISTIC = ("zeros", "circular", "reflect", "replicate")
NP_MODE = {"zeros": "constant", "circular": "wrap", "reflect": "reflect", "replicate": "edge"}


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(DETERMINISTIC),
    h=st.integers(3, 7),
    w=st.integers(3, 7),
    amounts=st.tuples(*[st.integers(0, 2)] * 4),
    seed=st.integers(0, 999),
)
def test_deterministic_schemes_match_index_oracle_and_numpy(kind, h, w, amounts, seed):
    t, b, l, r = amounts
    x = np.random.default_rng(seed).standard_normal((2, 2, h, w))
    y = pad(x, PadAmounts(left=l, right=r, top=t, bottom=b), PaddingScheme(kind))
    np.testing.assert_array_equal(y, pad_loops(x, t, b, l, r, kind))
    np.testing.assert_array_equal(y, np.pad(x, ((0, 0), (0, 0), (t, b), (l, r)), mode=NP_MODE[kind]))


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(DETERMINISTIC + ("randn",)),
    amounts=st.tuples(*[st.integers(0, 2)] * 4),
    seed=st.integers(0, 999),
)
def test_backward_is_the_adjoint_of_forward(kind, amounts, seed):
    t, b, l, r = amounts
    g = np.random.default_rng(seed)
    x = g.standard_normal((2, 3, 5, 6))
    rng = RngStream(seed, "pad-test")
    y, ctx = pad_forward(x, PadAmounts(left=l, right=r, top=t, bottom=b), PaddingScheme(kind), rng)
    dy = g.standard_normal(y.shape)
    dx = pad_backward(dy, ctx)
    assert dx.shape == x.shape
    if kind != "randn":
        # linear map: <P x, dy> == <x, P^T dy>
        assert (y * dy).sum() == pytest.approx((x * dx).sum(), rel=1e-12, abs=1e-12)
    else:
        # reparameterised: directional derivative matches finite differences
        v = g.standard_normal(x.shape)
        eps = 1e-6
        yp, _ = pad_forward(x + eps * v, ctx.amounts, PaddingScheme(kind), rng)
        ym, _ = pad_forward(x - eps * v, ctx.amounts, PaddingScheme(kind), rng)
        num = ((yp - ym) * dy).sum() / (2 * eps)
        assert (v * dx).sum() == pytest.approx(num, rel=1e-5, abs=1e-8)


@pytest.mark.parametrize("kind", DETERMINISTIC + ("randn",))
def test_interior_is_untouched(kind):
    x = np.random.default_rng(0).standard_normal((1, 2, 6, 6))
    y = pad(x, PadAmounts(2, 1, 1, 2), PaddingScheme(kind), RngStream(0))
    np.testing.assert_array_equal(y[:, :, 1:7, 2:8], x)


def test_none_scheme_only_accepts_zero_amounts():
    x = np.ones((1, 1, 4, 4))
    assert pad(x, PadAmounts(), PaddingScheme("none")) is x
    with pytest.raises(PaddingError):
        pad(x, PadAmounts(1, 1, 1, 1), PaddingScheme("none"))


def test_scheme_parsing_and_validation():
    assert PaddingScheme.parse(" Randn:5 ") == PaddingScheme("randn", 5)
    assert str(PaddingScheme("randn", 5)) == "randn:5"
    assert str(PaddingScheme.parse("zeros")) == "zeros"
    with pytest.raises(PaddingError):
        PaddingScheme("mirror")
    with pytest.raises(PaddingError):
        PaddingScheme("randn", 4)
    with pytest.raises(PaddingError):
        PadAmounts(left=-1)


def test_oversized_amounts_are_refused():
    x = np.ones((1, 1, 3, 3))
    with pytest.raises(PaddingError):
        pad(x, PadAmounts(3, 0, 0, 0), PaddingScheme("reflect"))
    with pytest.raises(PaddingError):
        pad(x, PadAmounts(4, 0, 0, 0), PaddingScheme("circular"))


@pytest.mark.parametrize(
    "mode,k,s,n,expected",
    [
        ("same", 3, 1, 10, (1, 1)),
        ("same", 3, 2, 10, (0, 1)),
        ("same", 3, 2, 9, (1, 1)),
        ("same", 7, 2, 224, (2, 3)),
        ("same", 2, 2, 8, (0, 0)),
        ("full", 3, 1, 10, (2, 2)),
        ("valid", 5, 1, 10, (0, 0)),
    ],
)
def test_pad_amounts(mode, k, s, n, expected):
    assert pad_amounts_for(mode, k, s, n) == expected


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 7), s=st.integers(1, 3), n=st.integers(1, 40))
def test_same_mode_output_is_ceil(k, s, n):
    lo, hi = pad_amounts_for("same", k, s, n)
    assert 0 <= hi - lo <= 1
    assert max(0, (n + lo + hi - k) // s + 1) == -(-n // s) or n + lo + hi < k


# ----------------------------------------------------------------------- randn


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("value", [0.0, -3.25, 7.0])
def test_randn_on_constant_input_returns_the_constant(seed, value):
    x = np.full((2, 3, 6, 5), value)
    y = randn_fill(x, PadAmounts(2, 2, 2, 2), 3, RngStream(seed))
    assert np.all(y == value)


def test_randn_two_valued_window_statistics():
    # every window sees both 0 and 1, so each draw is N(0.5, 0.5^2)
    x = np.zeros((1, 1, 4, 4))
    x[0, 0, ::2, ::2] = 1.0
    a = PadAmounts(1, 1, 1, 1)
    vals = []
    draws = 0
    rng = RngStream(11, "stat")
    i = 0
    while draws < 100_000:
        y = randn_fill(x, a, 3, rng, sample_ids=np.array([i]), layer=0)
        border = np.ones(y.shape[2:], bool)
        border[1:-1, 1:-1] = False
        vals.append(y[0, 0][border])
        draws += int(border.sum())
        i += 1
    v = np.concatenate(vals)
    assert abs(v.mean() - 0.5) < 0.01
    assert abs(v.std() - 0.5) < 0.01


def test_randn_draws_depend_only_on_tags():
    x = np.random.default_rng(0).standard_normal((4, 2, 6, 6))
    a = PadAmounts(1, 1, 1, 1)
    rng = RngStream(5)
    full = randn_fill(x, a, 3, rng, sample_ids=np.arange(4), layer=2)
    part = randn_fill(x[2:], a, 3, rng, sample_ids=np.array([2, 3]), layer=2)
    np.testing.assert_array_equal(full[2:], part)
    other = randn_fill(x, a, 3, rng, sample_ids=np.arange(4), layer=3)
    assert not np.array_equal(full, other)


def test_randn_uses_nearest_window_statistics():
    x = np.zeros((1, 1, 7, 7))
    x[0, 0, :3, :3] = np.arange(9).reshape(3, 3)
    big = randn_fill(x, PadAmounts(1, 1, 1, 1), 3, RngStream(0))
    # the top-left corner's nearest window is x[:3, :3]: range 0..8
    mu, sigma = 4.0, 4.0
    assert abs(big[0, 0, 0, 0] - mu) <= 6 * sigma
    # far corner sees only zeros
    assert big[0, 0, -1, -1] == 0.0


def test_randn_needs_rng_and_room():
    with pytest.raises(PaddingError):
        randn_fill(np.zeros((1, 1, 5, 5)), PadAmounts(1, 1, 1, 1), 3, None)
    with pytest.raises(PaddingError):
        randn_fill(np.zeros((1, 1, 2, 5)), PadAmounts(1, 1, 1, 1), 3, RngStream(0))
