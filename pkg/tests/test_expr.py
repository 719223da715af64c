import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levelcurv.expr import (BinOp, Call, Const, DomainError, Neg, ParseError, Pow, Var, eval2, parse,
                            parse_tree, unparse)
from levelcurv.suite import SUITE

from oracles import ad_fd_agreement, fd_jet

ZFOLD = "y*(2*x^2*y^2 - 9*x*y + 12)"


def degree(node) -> int:
    if isinstance(node, Const):
        return 0
    if isinstance(node, Var):
        return 1
    if isinstance(node, Neg):
        return degree(node.arg)
    if isinstance(node, Pow):
        return degree(node.base) * node.exponent
    if isinstance(node, BinOp) and node.op == "*":
        return degree(node.left) + degree(node.right)
    if isinstance(node, BinOp) and node.op in "+-":
        return max(degree(node.left), degree(node.right))
    raise AssertionError("not a polynomial node")


def test_parse_zfold_example_is_degree_five_polynomial():
    f = parse(ZFOLD, 2)
    assert f.arity == 2 and f.source_text == ZFOLD
    assert degree(f.tree) == 5
    assert float(f.value(np.array([1.0, 1.0]))) == 5.0


def test_parse_sum_of_three_squares():
    tree = parse("x^2+y^2+z^2", 3).tree
    sq = lambda i: Pow(Var(i), 2)
    assert tree == BinOp("+", BinOp("+", sq(0), sq(1)), sq(2))


@pytest.mark.parametrize("text", ["x^(1/2)", "x^0.5", "x^-1"])
def test_non_integer_exponent_rejected(text):
    with pytest.raises(ParseError):
        parse(text, 2)


def test_syntax_error_reports_byte_offset():
    with pytest.raises(ParseError) as err:
        parse("x + * y", 2)
    assert err.value.offset == 4


def test_unknown_identifier_and_arity_mismatch():
    with pytest.raises(ParseError, match="w"):
        parse("x + w", 2)
    with pytest.raises(ParseError):
        parse("x + z", 2)
    with pytest.raises(ParseError):
        parse("sin(x)", 2)


def test_unreferenced_trailing_variable_allowed():
    f = parse("x^2 + y^2", 3)
    assert f.arity == 3
    assert float(f.value(np.array([1.0, 2.0, 7.0]))) == 5.0


def test_precedence():
    assert parse_tree("-x^2", 2) == Neg(Pow(Var(0), 2))
    assert parse_tree("x - y - z", 3) == BinOp("-", BinOp("-", Var(0), Var(1)), Var(2))
    assert parse_tree("x + y * z", 3) == BinOp("+", Var(0), BinOp("*", Var(1), Var(2)))


def test_eval2_examples():
    j = eval2(parse("x^2+y^2", 2), [1.0, 0.0])
    assert j.value == 1.0
    np.testing.assert_array_equal(j.gradient, [2.0, 0.0])
    np.testing.assert_array_equal(j.hessian, 2 * np.eye(2))
    for p in ([0.3, -2.0], [5.0, 1.0]):
        np.testing.assert_array_equal(eval2(parse("x*y", 2), p).hessian, [[0, 1], [1, 0]])


def test_eval2_zfold_example_against_finite_differences():
    j = eval2(parse(ZFOLD, 2), [1.0, 1.0])
    v, g, H = fd_jet(ZFOLD, 2, [1.0, 1.0])
    assert j.value == 5.0 and v == 5.0
    assert np.allclose(j.gradient, g, rtol=1e-6, atol=1e-8)
    assert np.allclose(j.hessian, H, rtol=1e-6, atol=1e-8)


def test_domain_errors_name_subexpression():
    with pytest.raises(DomainError, match="x - 5"):
        eval2(parse("sqrt(x - 5)", 2), [0.0, 0.0])
    with pytest.raises(DomainError):
        eval2(parse("1/(x - y)", 2), [1.0, 1.0])


def test_hessian_exactly_symmetric():
    rng = np.random.default_rng(3)
    for ref in SUITE.values():
        X = rng.uniform(-2, 2, size=(50, ref.arity)) + 0.1
        H = ref.field.jet(X).hessian
        assert np.array_equal(H, np.swapaxes(H, -1, -2))


@pytest.mark.parametrize("name", sorted(SUITE))
def test_ad_matches_finite_differences(name):
    assert ad_fd_agreement(SUITE[name], n_points=25, seed=1) < 1e-6


# --- round trip -------------------------------------------------------------

leaves = st.one_of(
    st.builds(Var, st.integers(0, 2)),
    st.builds(Const, st.floats(0, 1e6, allow_nan=False, allow_infinity=False)),
)


def _extend(children):
    return st.one_of(
        st.builds(Neg, children),
        st.builds(BinOp, st.sampled_from("+-*/"), children, children),
        st.builds(Pow, children, st.integers(0, 6)),
        st.builds(Call, st.sampled_from(["exp", "sqrt"]), children),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_unparse_parse_round_trip(tree):
    text = unparse(tree)
    assert parse_tree(text, 3) == tree
    assert unparse(parse_tree(text, 3)) == text


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_value_consistent_across_entry_points(p):
    f = parse(ZFOLD, 2)
    j = eval2(f, p)
    v, g = f.gradient(np.array(p))
    assert j.value == float(f.value(np.array(p)))
    np.testing.assert_allclose(j.gradient, g, rtol=1e-14, atol=1e-14)
