"""Expression trees for shape arithmetic expressions.

A tree is built from five immutable node types:

* :class:`Variable` -- a dataset column,
* :class:`Constant` -- a numeric literal (closed-form equations only),
* :class:`Binary` -- ``+ - * /`` (and ``^`` for parsed closed forms),
* :class:`Shape` -- a trainable univariate shape function placeholder,
* :class:`Func` -- a named elementary function such as ``sin`` (closed forms only).

Trees produced by the genetic search only ever contain variables, shapes and
the ``+ * /`` operators.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Union


class BinaryOp(enum.Enum):
    ADD = "+"
    SUB = "-"
    MUL = "*"
    DIV = "/"
    POW = "^"

    @property
    def commutative(self) -> bool:
        return self in (BinaryOp.ADD, BinaryOp.MUL)


SEARCH_OPS = (BinaryOp.ADD, BinaryOp.MUL, BinaryOp.DIV)


@dataclass(frozen=True)
class Variable:
    index: int
    name: str


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Binary:
    op: BinaryOp
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Shape:
    shape_id: int
    child: "Node"


@dataclass(frozen=True)
class Func:
    name: str
    child: "Node"


Node = Union[Variable, Constant, Binary, Shape, Func]
Path = tuple  # tuple of child positions from the root


@dataclass(frozen=True)
class ExprTree:
    root: Node
    n_vars: int
    var_names: tuple = field(default=())

    def __post_init__(self):
        if not self.var_names:
            object.__setattr__(
                self, "var_names", tuple(f"x{i + 1}" for i in range(self.n_vars))
            )

    def __str__(self) -> str:
        return render(self.root)


def children(node: Node) -> tuple:
    if isinstance(node, Binary):
        return (node.left, node.right)
    if isinstance(node, (Shape, Func)):
        return (node.child,)
    return ()


def with_children(node: Node, kids) -> Node:
    if isinstance(node, Binary):
        return Binary(node.op, kids[0], kids[1])
    if isinstance(node, Shape):
        return Shape(node.shape_id, kids[0])
    if isinstance(node, Func):
        return Func(node.name, kids[0])
    return node


def walk(node: Node, path: Path = ()) -> Iterator[tuple]:
    """Yield ``(path, node)`` pairs in pre-order (left to right)."""
    yield path, node
    for i, child in enumerate(children(node)):
        yield from walk(child, path + (i,))


def get_subtree(node: Node, path: Path) -> Node:
    for i in path:
        node = children(node)[i]
    return node


def replace_subtree(node: Node, path: Path, new: Node) -> Node:
    if not path:
        return new
    kids = list(children(node))
    kids[path[0]] = replace_subtree(kids[path[0]], path[1:], new)
    return with_children(node, kids)


def active_vars(node: Node) -> frozenset:
    """Indices of the variables occurring in the subtree of `node`."""
    if isinstance(node, Variable):
        return frozenset((node.index,))
    out = frozenset()
    for child in children(node):
        out |= active_vars(child)
    return out


def variable_counts(node: Node) -> dict:
    counts: dict = {}
    for _, n in walk(node):
        if isinstance(n, Variable):
            counts[n.index] = counts.get(n.index, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class StructuralMetrics:
    size: int
    depth: int
    n_shapes: int
    n_binary_ops: int
    n_leaves: int


def depth(node: Node) -> int:
    kids = children(node)
    return 1 + (max(depth(k) for k in kids) if kids else 0)


def structural_metrics(tree: ExprTree | Node) -> StructuralMetrics:
    root = tree.root if isinstance(tree, ExprTree) else tree
    size = n_shapes = n_binary = n_leaves = 0
    for _, n in walk(root):
        size += 1
        if isinstance(n, Shape):
            n_shapes += 1
        elif isinstance(n, Binary):
            n_binary += 1
        elif isinstance(n, (Variable, Constant)):
            n_leaves += 1
    return StructuralMetrics(size, depth(root), n_shapes, n_binary, n_leaves)


def size(tree: ExprTree | Node) -> int:
    root = tree.root if isinstance(tree, ExprTree) else tree
    return sum(1 for _ in walk(root))


def n_shapes(tree: ExprTree | Node) -> int:
    root = tree.root if isinstance(tree, ExprTree) else tree
    return sum(isinstance(n, Shape) for _, n in walk(root))


def transparency_bounds(n: int) -> tuple:
    """Maximum ``(depth, size)`` of a transparent SHARE over `n` variables."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2 * n, 4 * n - 2


# ---------------------------------------------------------------------------
# Transparency validation


@dataclass(frozen=True)
class Violation:
    kind: str  # DuplicateVariable | ShapeOfShape | ConstantNode | OverlappingBinaryArgs | SubtractionNode
    location: Path = ()
    variable: int | None = None

    def __str__(self) -> str:
        if self.variable is not None:
            return f"{self.kind}(x{self.variable + 1})"
        return f"{self.kind}@{list(self.location)}"


@dataclass(frozen=True)
class TransparencyVerdict:
    violations: tuple = ()

    @property
    def is_transparent(self) -> bool:
        return not self.violations

    def kinds(self) -> set:
        return {v.kind for v in self.violations}

    def __bool__(self) -> bool:
        return self.is_transparent


_UNIVARIATE = (Shape, Func)


def duplicate_variables(node: Node) -> list:
    """Variables occurring more than once (the global form of the disjointness rule)."""
    return sorted(i for i, c in variable_counts(node).items() if c > 1)


def overlapping_binary_nodes(node: Node) -> list:
    """Paths of binary nodes whose two arguments share a variable (the local form)."""
    out = []

    def visit(n, path):
        if isinstance(n, Variable):
            return frozenset((n.index,))
        if isinstance(n, Constant):
            return frozenset()
        if isinstance(n, Binary):
            a = visit(n.left, path + (0,))
            b = visit(n.right, path + (1,))
            if a & b:
                out.append(path)
            return a | b
        return visit(n.child, path + (0,))

    visit(node, ())
    return out


def validate_transparent(tree: ExprTree | Node, allow_sub: bool = True) -> TransparencyVerdict:
    """Check a tree against the three transparency criteria.

    Argument disjointness is checked two ways: globally (no variable occurs
    twice) and locally (no binary node has overlapping argument sets). The two
    are equivalent; a disagreement is a bug and raises ``AssertionError``.
    """
    root = tree.root if isinstance(tree, ExprTree) else tree
    violations = []
    for path, n in walk(root):
        if isinstance(n, Constant):
            violations.append(Violation("ConstantNode", path))
        elif isinstance(n, _UNIVARIATE) and isinstance(n.child, _UNIVARIATE):
            violations.append(Violation("ShapeOfShape", path))
        elif isinstance(n, Binary) and n.op is BinaryOp.SUB and not allow_sub:
            violations.append(Violation("SubtractionNode", path))
    dups = duplicate_variables(root)
    overlaps = overlapping_binary_nodes(root)
    if bool(dups) != bool(overlaps):
        raise AssertionError("global and local disjointness checks disagree")
    violations.extend(Violation("DuplicateVariable", variable=i) for i in dups)
    violations.extend(Violation("OverlappingBinaryArgs", p) for p in overlaps)
    return TransparencyVerdict(tuple(violations))


# ---------------------------------------------------------------------------
# Rendering and canonical form


def _fmt_const(value: float) -> str:
    return repr(float(value))


def render(node: Node, shape_labels: dict | None = None, anonymous: bool = False) -> str:
    """Infix text; binary nodes are parenthesized unless at the root or
    directly inside a function call."""

    def go(n, wrap):
        if isinstance(n, Variable):
            return n.name
        if isinstance(n, Constant):
            return _fmt_const(n.value)
        if isinstance(n, Binary):
            s = f"{go(n.left, True)} {n.op.value} {go(n.right, True)}"
            return f"({s})" if wrap else s
        if isinstance(n, Shape):
            if anonymous:
                name = "s"
            elif shape_labels is not None:
                name = f"s{shape_labels[n.shape_id]}"
            else:
                name = f"s{n.shape_id + 1}"
            return f"{name}({go(n.child, False)})"
        return f"{n.name}({go(n.child, False)})"

    return go(node, False)


def _sort_commutative(node: Node) -> Node:
    kids = [_sort_commutative(k) for k in children(node)]
    node = with_children(node, kids)
    if isinstance(node, Binary) and node.op.commutative:
        a, b = node.left, node.right
        if render(b, anonymous=True) < render(a, anonymous=True):
            node = Binary(node.op, b, a)
    return node


def renumber_shapes(node: Node) -> Node:
    """Relabel shape ids 0, 1, 2, ... in left-to-right pre-order."""
    counter = iter(range(1 << 30))

    def go(n):
        if isinstance(n, Shape):
            sid = next(counter)
            return Shape(sid, go(n.child))
        return with_children(n, [go(k) for k in children(n)])

    return go(node)


def collapse_shape_chains(node: Node) -> Node:
    """Replace every ``s_i(s_j(.))`` by a single shape ``s(.)``."""
    kids = [collapse_shape_chains(k) for k in children(node)]
    node = with_children(node, kids)
    if isinstance(node, Shape) and isinstance(node.child, Shape):
        node = Shape(node.shape_id, node.child.child)
    return node


def canonicalize(tree: ExprTree) -> ExprTree:
    """Sort commutative children and renumber shapes in traversal order."""
    root = renumber_shapes(_sort_commutative(tree.root))
    return ExprTree(root, tree.n_vars, tree.var_names)


def canonical_render(tree: ExprTree) -> str:
    return render(canonicalize(tree).root)


def structure_key(tree: ExprTree | Node) -> str:
    """Text that is equal for two expressions exactly when they agree up to
    shape renaming and reordering/regrouping of chains of ``+`` or ``*``."""
    root = tree.root if isinstance(tree, ExprTree) else tree

    def operands(n, op):
        if isinstance(n, Binary) and n.op is op:
            return operands(n.left, op) + operands(n.right, op)
        return [go(n)]

    def go(n):
        if isinstance(n, Variable):
            return n.name
        if isinstance(n, Constant):
            return _fmt_const(n.value)
        if isinstance(n, Shape):
            return f"s({go(n.child)})"
        if isinstance(n, Func):
            return f"{n.name}({go(n.child)})"
        if n.op.commutative:
            return f"{n.op.value}[{','.join(sorted(operands(n, n.op)))}]"
        return f"{n.op.value}({go(n.left)},{go(n.right)})"

    return go(root)
