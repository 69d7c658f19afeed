"""Closed-form equations: parsing, size, and transparent-SHARE expressibility.

Grammar (loosest to tightest binding)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Known functions are ``sin cos tan exp log sqrt neg``; ``s<k>(...)`` denotes a
shape-function placeholder and ``pi`` the constant. ``x^2`` and ``x^3`` are
expanded into products, other powers stay ``^`` nodes.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, SchemaError, UnknownFunction
from .expr import (
    Binary,
    BinaryOp,
    Constant,
    ExprTree,
    Func,
    Node,
    Shape,
    Variable,
    active_vars,
    children,
    render,
    size,
    transparency_bounds,
    validate_transparent,
    walk,
    with_children,
)

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "neg": np.negative,
}
NAMED_CONSTANTS = {"pi": math.pi}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_SHAPE_NAME = re.compile(r"s(\d+)$")


def _tokenize(text):
    pos = 0
    tokens = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", position=pos + 1)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text, variables=None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.fixed_vars = list(variables) if variables is not None else None
        self.names = list(self.fixed_vars) if self.fixed_vars is not None else []
        self.shape_labels = []

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            got = tok[1] or "end of input"
            raise ParseError(f"expected {value!r}, got {got!r}", position=tok[2])
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected token {tok[1]!r}", position=tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = BinaryOp.ADD if self.take()[1] == "+" else BinaryOp.SUB
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = BinaryOp.MUL if self.take()[1] == "*" else BinaryOp.DIV
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            inner = self.unary()
            if isinstance(inner, Constant):
                return Constant(-inner.value)
            return Func("neg", inner)
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] != "^":
            return base
        self.take()
        exponent = self.unary()
        if isinstance(exponent, Constant) and exponent.value in (2.0, 3.0):
            node = Binary(BinaryOp.MUL, base, base)
            if exponent.value == 3.0:
                node = Binary(BinaryOp.MUL, node, base)
            return node
        return Binary(BinaryOp.POW, base, exponent)

    def atom(self):
        kind, value, pos = self.take()
        if kind == "num":
            return Constant(float(value))
        if value == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if self.peek()[1] == "(":
                self.take()
                arg = self.expr()
                self.expect(")")
                m = _SHAPE_NAME.match(value)
                if m:
                    label = int(m.group(1))
                    if label in self.shape_labels:
                        raise ParseError(f"shape {value} used more than once", position=pos)
                    self.shape_labels.append(label)
                    return Shape(label, arg)
                if value not in FUNCTIONS:
                    raise UnknownFunction(f"unknown function {value!r}", position=pos)
                return Func(value, arg)
            if value in NAMED_CONSTANTS and value not in self.names:
                return Constant(NAMED_CONSTANTS[value])
            if value not in self.names:
                if self.fixed_vars is not None:
                    raise ParseError(f"unknown variable {value!r}", position=pos)
                self.names.append(value)
            return Variable(self.names.index(value), value)
        got = value or "end of input"
        raise ParseError(f"unexpected token {got!r}", position=pos)


def _relabel_shapes(node, labels):
    order = {lab: i for i, lab in enumerate(sorted(labels))}

    def go(n):
        if isinstance(n, Shape):
            return Shape(order[n.shape_id], go(n.child))
        return with_children(n, [go(k) for k in children(n)])

    return go(node)


@dataclass(frozen=True)
class ParsedEquation:
    tree: ExprTree
    free_vars: tuple
    source_text: str

    @property
    def size(self) -> int:
        return size(self.tree)


def parse(text: str, variables=None) -> ParsedEquation:
    """Parse an equation; `variables` fixes the column order if given."""
    p = _Parser(text, variables)
    root = p.parse()
    root = _relabel_shapes(root, p.shape_labels)
    names = tuple(p.names)
    return ParsedEquation(ExprTree(root, max(len(names), 1), names or ("x1",)), names, text)


def parse_share(text: str, variables) -> ExprTree:
    """Parse a SHARE written with ``s<k>(...)`` placeholders over known columns."""
    return parse(text, variables).tree


# ---------------------------------------------------------------------------
# Numeric evaluation


def evaluate(node: Node, X, shape_fns=None):
    """Evaluate a closed-form tree column-wise; ``X[:, i]`` feeds variable i."""
    X = np.asarray(X, dtype=np.float64)
    shape_fns = shape_fns or {}

    def go(n):
        if isinstance(n, Variable):
            return X[:, n.index]
        if isinstance(n, Constant):
            return np.full(X.shape[0], n.value)
        if isinstance(n, Binary):
            a, b = go(n.left), go(n.right)
            with np.errstate(all="ignore"):
                if n.op is BinaryOp.ADD:
                    return a + b
                if n.op is BinaryOp.SUB:
                    return a - b
                if n.op is BinaryOp.MUL:
                    return a * b
                if n.op is BinaryOp.DIV:
                    return a / b
                return np.power(a, b)
        if isinstance(n, Shape):
            return shape_fns[n.shape_id](go(n.child))
        with np.errstate(all="ignore"):
            return FUNCTIONS[n.name](go(n.child))

    return go(node)


# ---------------------------------------------------------------------------
# Univariate collapse and the expressibility check


def collapse_with_bindings(tree: ExprTree):
    """Replace each maximal single-variable subtree (other than a bare
    variable) by a fresh shape applied to that variable.

    Returns the new tree and ``{shape_id: original_subtree}``.
    """
    bindings = {}
    counter = itertools.count()

    def go(n):
        vs = active_vars(n)
        if len(vs) == 1 and not isinstance(n, Variable):
            var = next(x for _, x in walk(n) if isinstance(x, Variable))
            sid = next(counter)
            bindings[sid] = n
            return Shape(sid, var)
        if isinstance(n, Shape):
            return Shape(next(counter), go(n.child))
        return with_children(n, [go(k) for k in children(n)])

    root = go(tree.root)
    return ExprTree(root, tree.n_vars, tree.var_names), bindings


def collapse_univariate(eq: ParsedEquation | ExprTree) -> ExprTree:
    tree = eq.tree if isinstance(eq, ParsedEquation) else eq
    return collapse_with_bindings(tree)[0]


def bound_shape_functions(bindings, n_vars):
    """Callables evaluating each collapsed subtree as a function of its variable."""
    fns = {}
    for sid, sub in bindings.items():
        (idx,) = active_vars(sub)

        def fn(u, sub=sub, idx=idx):
            cols = np.zeros((np.shape(u)[0], n_vars))
            cols[:, idx] = u
            return evaluate(sub, cols)

        fns[sid] = fn
    return fns


def _is_square(n):
    return isinstance(n, Binary) and n.op is BinaryOp.MUL and n.left == n.right


def _is_cube(n):
    return (isinstance(n, Binary) and n.op is BinaryOp.MUL and _is_square(n.left)
            and n.left.left == n.right)


def align_powers(node: Node) -> Node:
    """Rewrite ``a^k / b^k`` as ``(a/b)^k`` so shared ratios become visible."""
    node = with_children(node, [align_powers(k) for k in children(node)])
    if not (isinstance(node, Binary) and node.op is BinaryOp.DIV):
        return node
    num, den = node.left, node.right
    if _is_cube(num) and _is_cube(den):
        r = Binary(BinaryOp.DIV, num.right, den.right)
        return Binary(BinaryOp.MUL, Binary(BinaryOp.MUL, r, r), r)
    if _is_square(num) and _is_square(den):
        r = Binary(BinaryOp.DIV, num.left, den.left)
        return Binary(BinaryOp.MUL, r, r)
    if (isinstance(num, Binary) and isinstance(den, Binary) and num.op is BinaryOp.POW
            and den.op is BinaryOp.POW and num.right == den.right):
        return Binary(BinaryOp.POW, Binary(BinaryOp.DIV, num.left, den.left), num.right)
    return node


_SUB_OPS = (BinaryOp.DIV, BinaryOp.SUB, BinaryOp.MUL, BinaryOp.ADD)


def _pair_key(n):
    if (isinstance(n, Binary) and n.op in _SUB_OPS and isinstance(n.left, Variable)
            and isinstance(n.right, Variable) and n.left.index != n.right.index):
        a, b = n.left.index, n.right.index
        if n.op.commutative and b < a:
            a, b = b, a
        return (n.op, a, b)
    return None


def substitution_candidates(node: Node) -> list:
    """Two-variable sub-expressions ``a op b`` occurring at least twice."""
    counts, first = {}, {}
    for _, n in walk(node):
        key = _pair_key(n)
        if key is not None:
            counts[key] = counts.get(key, 0) + 1
            first.setdefault(key, n)
    return [(k, first[k]) for k in first if counts[k] >= 2]


def _substitute(tree: ExprTree, chosen):
    names = list(tree.var_names)
    mapping = {}
    subs = []
    j = 1
    for key, example in chosen:
        while f"u{j}" in names:
            j += 1
        name = f"u{j}"
        mapping[key] = Variable(len(names), name)
        names.append(name)
        subs.append((render(example), name))

    def go(n):
        key = _pair_key(n)
        if key in mapping:
            return mapping[key]
        return with_children(n, [go(k) for k in children(n)])

    root = go(tree.root)
    return ExprTree(root, len(names), tuple(names)), subs


@dataclass(frozen=True)
class CheckerVerdict:
    direct_transparent: bool
    transparent_after_rewrites: bool
    applied_substitutions: tuple = ()
    collapsed_shape_count: int = 0
    violations: tuple = ()
    collapsed: ExprTree | None = field(default=None, compare=False)


def _shape_count(tree):
    return sum(isinstance(n, Shape) for _, n in walk(tree.root))


def check_transparent_expressible(eq: ParsedEquation, max_substitutions: int = 2) -> CheckerVerdict:
    """Decide whether `eq` can be written as a transparent SHARE.

    Stage 1 collapses single-variable subtrees into shapes and validates.
    Stage 2 additionally replaces repeated two-variable sub-expressions
    (``a/b``, ``a-b``, ``a*b``, ``a+b``) by fresh variables, trying every set of
    at most `max_substitutions` candidates.
    """
    collapsed = collapse_univariate(eq)
    verdict = validate_transparent(collapsed)
    if verdict.is_transparent:
        return CheckerVerdict(True, True, (), _shape_count(collapsed), (), collapsed)

    aligned = ExprTree(align_powers(eq.tree.root), eq.tree.n_vars, eq.tree.var_names)
    cands = substitution_candidates(aligned.root)
    for r in range(1, max_substitutions + 1):
        for chosen in itertools.combinations(cands, r):
            rewritten, subs = _substitute(aligned, chosen)
            c2 = collapse_univariate(rewritten)
            if validate_transparent(c2).is_transparent:
                return CheckerVerdict(False, True, tuple(subs), _shape_count(c2), (), c2)
    return CheckerVerdict(False, False, (), _shape_count(collapsed), verdict.violations, collapsed)


# ---------------------------------------------------------------------------
# Corpus processing


@dataclass(frozen=True)
class CensusEntry:
    name: str
    text: str
    verdict: CheckerVerdict | None
    size: int | None = None
    n_vars: int | None = None
    error: str | None = None


@dataclass(frozen=True)
class CensusResult:
    n_total: int
    n_direct: int
    n_after_rewrites: int
    entries: tuple


def read_corpus(lines) -> list:
    """``name :: expression`` per line; blank lines and ``#`` comments skipped."""
    out = []
    for k, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "::" in line:
            name, text = (s.strip() for s in line.split("::", 1))
        else:
            name, text = f"eq{k}", line
        out.append((name, text))
    return out


def census(equations, max_substitutions: int = 2) -> CensusResult:
    """Run the expressibility check over ``[(name, text)]`` or plain strings."""
    entries = []
    for k, item in enumerate(equations, start=1):
        name, text = item if isinstance(item, tuple) else (f"eq{k}", item)
        try:
            eq = parse(text)
        except ParseError as exc:
            entries.append(CensusEntry(name, text, None, error=str(exc)))
            continue
        v = check_transparent_expressible(eq, max_substitutions)
        entries.append(CensusEntry(name, text, v, eq.size, len(eq.free_vars)))
    ok = [e for e in entries if e.verdict is not None]
    return CensusResult(
        n_total=len(ok),
        n_direct=sum(e.verdict.direct_transparent for e in ok),
        n_after_rewrites=sum(e.verdict.transparent_after_rewrites for e in ok),
        entries=tuple(entries),
    )


CENSUS_COLUMNS = (
    "name", "direct", "after_rewrites", "substitutions", "shape_count", "size",
    "depth_budget_2n", "size_budget_4n_minus_2",
)


def census_rows(result: CensusResult):
    for e in result.entries:
        if e.verdict is None:
            yield {"name": e.name, "direct": "error", "after_rewrites": "error",
                   "substitutions": e.error, "shape_count": "", "size": "",
                   "depth_budget_2n": "", "size_budget_4n_minus_2": ""}
            continue
        d, s = transparency_bounds(max(e.n_vars, 1))
        yield {
            "name": e.name,
            "direct": str(e.verdict.direct_transparent).lower(),
            "after_rewrites": str(e.verdict.transparent_after_rewrites).lower(),
            "substitutions": ";".join(f"{name}={sub}" for sub, name in e.verdict.applied_substitutions),
            "shape_count": e.verdict.collapsed_shape_count,
            "size": e.size,
            "depth_budget_2n": d,
            "size_budget_4n_minus_2": s,
        }


def check_columns(tree: ExprTree, columns) -> None:
    missing = set(tree.var_names) - set(columns)
    if missing:
        raise SchemaError(f"expression uses unknown columns: {sorted(missing)}")
