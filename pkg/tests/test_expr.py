import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shares.expr import (
    Binary,
    BinaryOp,
    Constant,
    ExprTree,
    Shape,
    Variable,
    active_vars,
    canonical_render,
    canonicalize,
    duplicate_variables,
    overlapping_binary_nodes,
    render,
    structural_metrics,
    structure_key,
    transparency_bounds,
    validate_transparent,
)
from shares.search import random_grow

from .conftest import share

X = [Variable(i, f"x{i + 1}") for i in range(12)]


def add(a, b):
    return Binary(BinaryOp.ADD, a, b)


def mul(a, b):
    return Binary(BinaryOp.MUL, a, b)


def div(a, b):
    return Binary(BinaryOp.DIV, a, b)


def test_active_vars_examples():
    assert active_vars(add(X[0], X[1])) == {0, 1}
    assert active_vars(Constant(2.3)) == frozenset()
    # s1(x4 * s2(x2))
    assert active_vars(Shape(0, mul(X[3], Shape(1, X[1])))) == {1, 3}


def test_gam_is_transparent():
    gam = add(add(Shape(0, X[0]), Shape(1, X[1])), Shape(2, X[2]))
    assert validate_transparent(gam).is_transparent
    m = structural_metrics(gam)
    assert (m.size, m.n_shapes) == (8, 3)
    assert m.size == 3 * 3 - 1


def test_constant_is_flagged():
    # s1(x4 * s2(x2)) + x1 / (s3(x3) - 2.3)
    expr = add(
        Shape(0, mul(X[3], Shape(1, X[1]))),
        div(X[0], Binary(BinaryOp.SUB, Shape(2, X[2]), Constant(2.3))),
    )
    verdict = validate_transparent(expr)
    assert not verdict.is_transparent
    assert verdict.kinds() == {"ConstantNode"}


def test_shape_of_shape_is_flagged():
    verdict = validate_transparent(Shape(0, Shape(1, X[0])))
    assert verdict.kinds() == {"ShapeOfShape"}


def test_duplicate_variable_is_flagged():
    verdict = validate_transparent(add(X[0], Shape(0, X[0])))
    assert "DuplicateVariable" in verdict.kinds()
    assert any(v.variable == 0 for v in verdict.violations)


def test_subtraction_is_configurable():
    expr = Binary(BinaryOp.SUB, X[0], X[1])
    assert validate_transparent(expr).is_transparent
    assert validate_transparent(expr, allow_sub=False).kinds() == {"SubtractionNode"}


def test_metrics_small_cases():
    m = structural_metrics(X[0])
    assert (m.size, m.depth, m.n_binary_ops) == (1, 1, 0)
    m = structural_metrics(Shape(0, X[0]))
    assert (m.size, m.depth) == (2, 2)


@pytest.mark.parametrize("n, expected", [(1, (2, 2)), (3, (6, 10)), (12, (24, 46))])
def test_transparency_bounds(n, expected):
    assert transparency_bounds(n) == expected


def test_transparency_bounds_rejects_zero():
    with pytest.raises(ValueError):
        transparency_bounds(0)


def chain(k):
    """s(...s(s(x1) + s(x2)) + s(x3) ...) - the largest tree over k variables."""
    node = Shape(0, X[0])
    for i in range(1, k):
        node = Shape(0, add(node, Shape(0, X[i])))
    return node


@pytest.mark.parametrize("k", range(1, 9))
def test_size_and_depth_bounds_are_tight(k):
    tree = ExprTree(canonicalize(ExprTree(chain(k), k)).root, k)
    assert validate_transparent(tree).is_transparent
    m = structural_metrics(tree)
    assert m.size == 4 * k - 2
    assert m.depth == 2 * k


# --- random well-formed trees, valid or not --------------------------------

OPS = list(BinaryOp)[:4]


@st.composite
def any_tree(draw, depth=5):
    if depth == 0 or draw(st.integers(0, 3)) == 0:
        if draw(st.booleans()):
            return X[draw(st.integers(0, 4))]
        return Constant(draw(st.floats(-3, 3, allow_nan=False)))
    kind = draw(st.sampled_from(["shape", "bin", "bin"]))
    if kind == "shape":
        return Shape(0, draw(any_tree(depth - 1)))
    return Binary(draw(st.sampled_from(OPS)), draw(any_tree(depth - 1)), draw(any_tree(depth - 1)))


@settings(max_examples=1500, deadline=None)
@given(any_tree())
def test_global_and_local_disjointness_agree(node):
    assert bool(duplicate_variables(node)) == bool(overlapping_binary_nodes(node))
    validate_transparent(node)  # raises if the two routes disagree


def test_size_and_depth_bounds_on_grown_trees():
    rng = np.random.default_rng(7)
    for n in range(1, 13):
        max_depth, max_size = transparency_bounds(n)
        for _ in range(300):
            tree = random_grow(rng, n, max_depth=None)
            m = structural_metrics(tree)
            assert validate_transparent(tree).is_transparent
            assert not duplicate_variables(tree.root)
            assert m.n_binary_ops == m.n_leaves - 1
            assert m.depth <= max_depth and m.size <= max_size


# --- rendering and canonical form ------------------------------------------


def test_render_parenthesizes_nested_binaries():
    assert render(Shape(0, add(div(X[0], X[1]), Shape(1, X[2])))) == "s1((x1 / x2) + s2(x3))"


def test_canonical_commutativity():
    names = ["x1", "x2"]
    assert canonical_render(share("x2 + x1", names)) == canonical_render(share("x1 + x2", names))
    a = share("s1(x1) * s2(x2)", names)
    b = share("s2(x2) * s1(x1)", names)
    assert canonical_render(a) == canonical_render(b)
    assert canonical_render(share("x1 / x2", names)) != canonical_render(share("x2 / x1", names))


def test_canonical_renumbers_shapes_in_traversal_order():
    tree = share("s2(x1) + s1(x2)", ["x1", "x2"])
    assert canonical_render(tree) == "s1(x1) + s2(x2)"


def test_canonical_render_is_idempotent_and_parses_back():
    rng = np.random.default_rng(3)
    for _ in range(500):
        tree = random_grow(rng, 5, max_depth=None)
        text = canonical_render(tree)
        again = share(text, tree.var_names)
        assert canonical_render(again) == text
        assert canonicalize(again).root == canonicalize(tree).root


def test_canonical_render_injective_modulo_commutativity():
    # Distinct structure keys (which also ignore regrouping) must map to
    # distinct canonical texts; same canonical text implies same key.
    rng = np.random.default_rng(4)
    seen = {}
    for _ in range(2000):
        tree = random_grow(rng, 4, max_depth=None)
        text = canonical_render(tree)
        key = structure_key(tree)
        if text in seen:
            assert seen[text] == key
        seen[text] = key


def test_structure_key_ignores_grouping_of_products():
    names = ["r", "F", "theta"]
    target = structure_key(share("r*F*s1(theta)", names))
    assert structure_key(share("F * (r * s2(theta))", names)) == target
    assert structure_key(share("(s1(theta) * F) * r", names)) == target
    assert structure_key(share("r / F * s1(theta)", names)) != target
