"""BNF grammars, derivation trees and grammar-respecting variation operators.

Grammar text::

    start = (<V>, <K>)
    <V>   ::= <pol> + <const>
    <pol> ::= <pol> + <pol> | <const> * <mon>
    <mon> ::= <var> | <var> * <mon>
    <var> ::= s1 | s2
    <const> ::= const[-10, 10]

The start tuple lists ``V`` first and then one entry per controller output.
``const[lo, hi]`` is the random real terminal. In the phenotype every
nonterminal expansion is parenthesised, so rules need no precedence care.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .expr import Expr, ParseError, diff, extract_params, parse, substitute, var

START = "<start>"
DV_BASE = 1_000_000  # placeholder variable index for dV_i inside controllers


class GrammarError(ValueError):
    pass


class GrammarNotTerminating(GrammarError):
    pass


@dataclass(frozen=True)
class NT:
    name: str


@dataclass(frozen=True)
class Text:
    text: str


@dataclass(frozen=True)
class ConstT:
    lo: float
    hi: float


Item = Union[NT, Text, ConstT]
Alt = tuple  # tuple[Item, ...]


@dataclass(frozen=True)
class Node:
    """Derivation-tree node: a nonterminal with the children of one alternative.

    Children mirror the alternative's items: ``Node`` for nonterminals, ``str``
    for literal text and ``float`` for const terminals.
    """

    symbol: str
    alt: int
    children: tuple

    def depth(self) -> int:
        sub = [c.depth() for c in self.children if isinstance(c, Node)]
        return 1 + (max(sub) if sub else 0)


@dataclass
class Grammar:
    rules: dict[str, tuple[Alt, ...]]
    start: tuple[Alt, ...]  # one item sequence per tuple component
    depth_cap: int = 10
    v_names: Mapping[str, Expr] = field(default_factory=dict)
    k_names: Mapping[str, Expr] = field(default_factory=dict)

    def __post_init__(self):
        for nt, alts in self.rules.items():
            if not alts:
                raise GrammarError(f"{nt} has no alternatives")
            for alt in alts:
                for it in alt:
                    if isinstance(it, NT) and it.name not in self.rules:
                        raise GrammarError(f"undefined nonterminal {it.name} in rule for {nt}")
        for comp in self.start:
            for it in comp:
                if isinstance(it, NT) and it.name not in self.rules:
                    raise GrammarError(f"undefined nonterminal {it.name} in start")
        if len(self.start) < 1:
            raise GrammarError("start tuple is empty")
        self._reach = self._reachability()
        self.recursive = {nt: tuple(self._alt_recursive(nt, a) for a in alts) for nt, alts in self.rules.items()}

    @property
    def n_components(self) -> int:
        return len(self.start)

    def _reachability(self) -> dict[str, set[str]]:
        direct = {nt: {it.name for alt in alts for it in alt if isinstance(it, NT)} for nt, alts in self.rules.items()}
        reach = {nt: set(d) for nt, d in direct.items()}
        changed = True
        while changed:
            changed = False
            for nt in reach:
                new = set(reach[nt])
                for m in list(reach[nt]):
                    new |= reach[m]
                if new != reach[nt]:
                    reach[nt] = new
                    changed = True
        return reach

    def _alt_recursive(self, lhs: str, alt: Alt) -> bool:
        return any(isinstance(it, NT) and (it.name == lhs or lhs in self._reach[it.name]) for it in alt)

    @property
    def is_template(self) -> bool:
        """Only one derivation shape exists: no structural variation possible."""
        return all(len(alts) == 1 for alts in self.rules.values())

    def const_ranges(self) -> list[tuple[float, float]]:
        out = []
        for alts in self.rules.values():
            for alt in alts:
                out += [(it.lo, it.hi) for it in alt if isinstance(it, ConstT)]
        for comp in self.start:
            out += [(it.lo, it.hi) for it in comp if isinstance(it, ConstT)]
        return out

    # -- derivation ------------------------------------------------------

    def admissible(self, symbol: str, depth: int) -> list[int]:
        alts = range(len(self.rules[symbol]))
        if depth < self.depth_cap:
            return list(alts)
        ok = [i for i in alts if not self.recursive[symbol][i]]
        if not ok:
            raise GrammarNotTerminating(f"{symbol} has no non-recursive alternative at depth {depth}")
        return ok

    def grow_symbol(self, symbol: str, rng: np.random.Generator, depth: int = 1) -> Node:
        choices = self.admissible(symbol, depth)
        k = choices[int(rng.integers(len(choices)))]
        return Node(symbol, k, self._expand_items(self.rules[symbol][k], rng, depth + 1))

    def _expand_items(self, items: Alt, rng, depth: int) -> tuple:
        out = []
        for it in items:
            if isinstance(it, NT):
                out.append(self.grow_symbol(it.name, rng, depth))
            elif isinstance(it, ConstT):
                out.append(float(rng.uniform(it.lo, it.hi)))
            else:
                out.append(it.text)
        return tuple(out)

    def grow(self, rng: np.random.Generator) -> "Genotype":
        comps = tuple(Node(START, i, self._expand_items(c, rng, 1)) for i, c in enumerate(self.start))
        return Genotype(Node(START, -1, comps))


# ---------------------------------------------------------------------------
# grammar text


_RULE = re.compile(r"^\s*(<[^<>\s]+>)\s*::=\s*(.*)$")
_START = re.compile(r"^\s*start\s*=\s*(.*)$")
_TOKEN = re.compile(r"(<[^<>\s]+>|const\s*\[\s*[-+0-9.eE]+\s*,\s*[-+0-9.eE]+\s*\])")
_CONST = re.compile(r"const\s*\[\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\]")


def _split_top(s: str, sep: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in s:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == sep and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return out


def _items(text: str) -> Alt:
    items: list[Item] = []
    for part in _TOKEN.split(text):
        if not part:
            continue
        if part.startswith("<") and part.endswith(">"):
            items.append(NT(part))
            continue
        m = _CONST.fullmatch(part.strip())
        if m:
            lo, hi = float(m.group(1)), float(m.group(2))
            if lo > hi:
                raise GrammarError(f"const range [{lo}, {hi}] is empty")
            items.append(ConstT(lo, hi))
            continue
        if part.strip():
            items.append(Text(part.strip()))
    if not items:
        raise GrammarError("empty alternative")
    return tuple(items)


def parse_grammar(text: str, depth_cap: int = 10, v_names: Mapping[str, Expr] | None = None,
                  k_names: Mapping[str, Expr] | None = None) -> Grammar:
    rules: dict[str, list[Alt]] = {}
    start = None
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        m = _START.match(line)
        if m:
            body = m.group(1).strip()
            if body.startswith("(") and body.endswith(")"):
                body = body[1:-1]
            start = tuple(_items(c) for c in _split_top(body, ","))
            continue
        m = _RULE.match(line)
        if not m:
            raise GrammarError(f"line {ln}: expected '<nt> ::= ...' or 'start = ...'")
        lhs, body = m.group(1), m.group(2)
        alts = [a for a in _split_top(body, "|")]
        try:
            rules.setdefault(lhs, []).extend(_items(a) for a in alts)
        except GrammarError as exc:
            raise GrammarError(f"line {ln}: {exc}") from None
    if start is None:
        raise GrammarError("missing 'start = ...' line")
    return Grammar({k: tuple(v) for k, v in rules.items()}, start, depth_cap,
                   dict(v_names or {}), dict(k_names or {}))


# ---------------------------------------------------------------------------
# genotypes


@dataclass(frozen=True)
class Phenotype:
    V: Expr  # with parameter slots
    kappa: tuple[Expr, ...]
    values: np.ndarray  # initial parameter values

    @property
    def n_params(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Genotype:
    root: Node

    def components(self) -> tuple[Node, ...]:
        return self.root.children

    def text(self) -> list[str]:
        return [_render(c) for c in self.root.children]

    def consts(self) -> list[float]:
        out: list[float] = []
        _collect_consts(self.root, out)
        return out

    def with_consts(self, values: Sequence[float]) -> "Genotype":
        it = iter([float(v) for v in values])
        root = _replace_consts(self.root, it)
        return Genotype(root)

    def nodes(self) -> list[tuple[tuple[int, ...], Node, int]]:
        """All nonterminal nodes as ``(path, node, depth)``, pre-order."""
        out: list = []

        def go(n: Node, path, depth):
            for i, c in enumerate(n.children):
                if isinstance(c, Node):
                    out.append((path + (i,), c, depth))
                    go(c, path + (i,), depth + 1)

        for ci, comp in enumerate(self.root.children):
            go(comp, (ci,), 1)
        return out

    def replace(self, path: tuple[int, ...], new: Node) -> "Genotype":
        return Genotype(_replace_at(self.root, path, new))

    def get(self, path: tuple[int, ...]) -> Node:
        n = self.root
        for i in path:
            n = n.children[i]
        return n

    def depth(self) -> int:
        return max((c.depth() for c in self.root.children), default=0)


def _render(n) -> str:
    if isinstance(n, float):
        return f"tc({n!r})"
    if isinstance(n, str):
        return n
    parts = [_render(c) if not isinstance(c, Node) else f"({_render(c)})" for c in n.children]
    return " ".join(parts)


def _collect_consts(n, out):
    for c in n.children:
        if isinstance(c, Node):
            _collect_consts(c, out)
        elif isinstance(c, float):
            out.append(c)


def _replace_consts(n: Node, it) -> Node:
    ch = []
    for c in n.children:
        if isinstance(c, Node):
            ch.append(_replace_consts(c, it))
        elif isinstance(c, float):
            ch.append(next(it))
        else:
            ch.append(c)
    return Node(n.symbol, n.alt, tuple(ch))


def _replace_at(n: Node, path, new: Node) -> Node:
    if not path:
        return new
    i = path[0]
    ch = list(n.children)
    ch[i] = _replace_at(ch[i], path[1:], new)
    return Node(n.symbol, n.alt, tuple(ch))


def to_phenotype(gt: Genotype, g: Grammar) -> Phenotype:
    """Elide nonterminals, parse the expression text, extract parameter slots.

    Controller components may use ``dV1..dVn`` for the partial derivatives of
    the candidate ``V``.
    """
    texts = gt.text()
    try:
        V = parse(texts[0], g.v_names)
        knames = dict(g.k_names)
        n_state = len(g.v_names)
        for i in range(n_state):
            knames.setdefault(f"dV{i + 1}", var(DV_BASE + i))
        kap = [parse(t, knames) for t in texts[1:]]
    except ParseError as exc:
        raise GrammarError(f"phenotype does not parse: {exc}") from None
    exprs, values = extract_params([V] + kap)
    Vp, kp = exprs[0], exprs[1:]
    if any(i >= DV_BASE for k in kp for i in _vars(k)):
        dvs = {DV_BASE + i: diff(Vp, _state_index(g, i)) for i in range(n_state)}
        kp = [substitute(k, dvs) for k in kp]
    return Phenotype(Vp, tuple(kp), values)


def _vars(e: Expr) -> frozenset[int]:
    from .expr import free_vars

    return free_vars(e)


def _state_index(g: Grammar, i: int) -> int:
    e = g.v_names.get(f"s{i + 1}")
    return e.data[0] if e is not None else i


# ---------------------------------------------------------------------------
# operators


def mutate(a: Genotype, g: Grammar, rng: np.random.Generator) -> Genotype:
    """Regrow one uniformly chosen nonterminal subtree (cap applies at the site)."""
    nodes = a.nodes()
    if not nodes:
        return a
    path, node, depth = nodes[int(rng.integers(len(nodes)))]
    return a.replace(path, g.grow_symbol(node.symbol, rng, depth))


def crossover(a: Genotype, b: Genotype, rng: np.random.Generator) -> tuple[Genotype, Genotype]:
    """Swap two subtrees rooted at the same nonterminal."""
    na, nb = a.nodes(), b.nodes()
    symbols_b: dict[str, list] = {}
    for path, node, _ in nb:
        symbols_b.setdefault(node.symbol, []).append((path, node))
    cands = [(p, n) for p, n, _ in na if n.symbol in symbols_b]
    if not cands:
        return a, b
    pa, sa = cands[int(rng.integers(len(cands)))]
    opts = symbols_b[sa.symbol]
    pb, sb = opts[int(rng.integers(len(opts)))]
    return a.replace(pa, sb), b.replace(pb, sa)


def adheres(gt: Genotype, g: Grammar) -> bool:
    """Independent check that every node matches one alternative of its rule."""
    root = gt.root
    if root.symbol != START or len(root.children) != len(g.start):
        return False
    for comp, items in zip(root.children, g.start):
        if not isinstance(comp, Node) or not _matches(comp.children, items, g):
            return False
    return True


def _matches(children: tuple, items: Alt, g: Grammar) -> bool:
    if len(children) != len(items):
        return False
    for c, it in zip(children, items):
        if isinstance(it, NT):
            if not isinstance(c, Node) or c.symbol != it.name:
                return False
            if not any(_matches(c.children, alt, g) for alt in g.rules[it.name]):
                return False
        elif isinstance(it, ConstT):
            if not isinstance(c, float) or not math.isfinite(c):
                return False
        else:
            if c != it.text:
                return False
    return True
