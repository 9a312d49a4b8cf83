"""TOML problem files and certificate files.

Problem file sections::

    name = "..."
    [partition]   nx, nq, nt, eta
    [input]       lo, hi                 (one entry per input u1..um)
    [disturbance] lo, hi                 (d1..dk)
    [flow]        f = [...]  and optional [[flow.set]] guard/when pieces
    [jumps.system.<name>]  guard, when, reset
    [jumps.timer]          reset         (G_ol,t over (s_x, s_q))
    [output]      h = [...]
    [sets]        S, I, O, Sq, Oq, Iq, It, links
    [grammar]     depth, text
    [spec] [gp] [prover] [fitness]

Expressions use ``s1..sn``, ``u1..um`` and ``d1..dk``. Controllers in the
grammar use the outputs ``y1..yp``; ``si`` is accepted for ``yj`` whenever
``h_j = si``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import tomli

from .conditions import SpecConfig
from .evolve import GPConfig
from .expr import Expr, ParseError as ExprParseError, diff, parse, substitute, to_text, var
from .fitness import FitnessConfig
from .grammar import DV_BASE, Grammar, GrammarError, parse_grammar
from .hybrid import CoordSet, Guard, JumpPiece, ModelError, OpenLoopSystem, SpecSets, StatePartition
from .verify import ProverConfig

PROBLEM_DIR = Path(__file__).parent / "problems"
CERT_DIR = Path(__file__).parent / "certificates"


class ProblemError(ValueError):
    """Malformed problem or certificate file, with a 1-based line/column when known."""

    def __init__(self, msg: str, line: int | None = None, col: int | None = None, path: str = ""):
        self.line, self.col, self.path = line, col, path
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {col}" if col is not None else "")
        prefix = f"{path}: " if path else ""
        super().__init__(f"{prefix}{where + ': ' if where else ''}{msg}")


@dataclass
class Problem:
    name: str
    system: OpenLoopSystem
    sets: SpecSets
    grammar: Grammar | None
    spec: SpecConfig
    gp: GPConfig
    prover: ProverConfig
    fitness: FitnessConfig
    digest: str
    output_names: dict[str, Expr]
    state_names: dict[str, Expr]
    path: str = ""

    def controller_names(self) -> list[str]:
        return [f"y{j + 1}" for j in range(len(self.system.outputs))]


_SECTIONS = {"name", "description", "partition", "input", "disturbance", "flow", "jumps", "output", "sets",
             "grammar", "spec", "gp", "prover", "fitness"}


def _locate(text: str, key: str) -> int | None:
    """Line of the first ``key = ...`` assignment, else of a ``[...key]`` header."""
    for pat in (r"^\s*" + re.escape(key) + r"\s*=", r"^\s*\[+([\w.]*\.)?" + re.escape(key) + r"\]+"):
        m = re.search(pat, text, re.M)
        if m:
            return text.count("\n", 0, m.start()) + 1
    return None


class _Reader:
    def __init__(self, text: str, path: str):
        self.text, self.path = text, path

    def fail(self, msg: str, key: str = "") -> ProblemError:
        return ProblemError(msg, _locate(self.text, key) if key else None, None, self.path)

    def table(self, d: dict, name: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
        if not isinstance(d, dict):
            raise self.fail(f"[{name}] must be a table", name)
        for k in d:
            if k not in allowed:
                raise self.fail(f"unknown key '{k}' in [{name}]", k)
        for k in required:
            if k not in d:
                raise self.fail(f"[{name}] is missing '{k}'", name)
        return d

    def expr(self, s: Any, names: dict, key: str) -> Expr:
        if isinstance(s, (int, float)):
            s = repr(float(s))
        if not isinstance(s, str):
            raise self.fail(f"'{key}' must hold expression strings", key)
        try:
            return parse(s, names)
        except ExprParseError as exc:
            line = _locate(self.text, key)
            raise ProblemError(f"bad expression for '{key}': {exc}", line, exc.col + 1, self.path) from None

    def floats(self, v: Any, key: str, n: int | None = None) -> tuple[float, ...]:
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) for x in v):
            raise self.fail(f"'{key}' must be a list of numbers", key)
        if n is not None and len(v) != n:
            raise self.fail(f"'{key}' needs {n} entries, got {len(v)}", key)
        return tuple(float(x) for x in v)


def _dataclass_from(r: _Reader, cls, d: dict, name: str, **extra):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    r.table(d, name, set(fields))
    kw = dict(extra)
    for k, v in d.items():
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise r.fail(f"[{name}]: {exc}", name) from None


def _coord(r: _Reader, v: Any, key: str) -> CoordSet:
    if isinstance(v, dict):
        r.table(v, key, {"values"}, {"values"})
        return CoordSet.finite(r.floats(v["values"], key))
    lo, hi = r.floats(v, key, 2)
    if lo > hi:
        raise r.fail(f"interval in '{key}' has lower bound above upper bound", key)
    return CoordSet.box(lo, hi)


def _boxes(r: _Reader, v: Any, key: str, n: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    if not isinstance(v, list) or len(v) != n:
        raise r.fail(f"'{key}' needs {n} intervals", key)
    pairs = [r.floats(x, key, 2) for x in v]
    return tuple(a for a, _ in pairs), tuple(b for _, b in pairs)


def loads(text: str, path: str = "") -> Problem:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ProblemError(f"TOML syntax error: {exc}", line, col, path) from None
    r = _Reader(text, path)
    for k in raw:
        if k not in _SECTIONS:
            raise r.fail(f"unknown section or key '{k}'", k)

    part = r.table(raw.get("partition", {}), "partition", {"nx", "nq", "nt", "eta"}, {"nx"})
    eta = r.floats(part.get("eta", []), "eta")
    try:
        p = StatePartition(int(part["nx"]), int(part.get("nq", 0)), int(part.get("nt", 0)), eta)
    except ModelError as exc:
        raise r.fail(str(exc), "partition") from None

    inp = r.table(raw.get("input", {}), "input", {"lo", "hi"})
    ilo = r.floats(inp.get("lo", []), "lo")
    ihi = r.floats(inp.get("hi", []), "hi", len(ilo))
    dis = r.table(raw.get("disturbance", {}), "disturbance", {"lo", "hi"})
    dlo = r.floats(dis.get("lo", []), "lo")
    dhi = r.floats(dis.get("hi", []), "hi", len(dlo))
    m, k, n = len(ilo), len(dlo), p.n
    names = {f"s{i + 1}": var(i) for i in range(n)}
    names.update({f"u{i + 1}": var(n + i) for i in range(m)})
    names.update({f"d{i + 1}": var(n + m + i) for i in range(k)})
    snames = {f"s{i + 1}": var(i) for i in range(n)}

    fl = r.table(raw.get("flow", {}), "flow", {"f", "set"}, {"f"})
    if not isinstance(fl["f"], list):
        raise r.fail("'f' must be a list of expressions", "f")
    flow = tuple(r.expr(e, names, "f") for e in fl["f"])

    def guard(d: dict, key: str) -> Guard:
        r.table(d, key, {"guard", "when", "reset"})
        cons = tuple(r.expr(e, names, "guard") for e in d.get("guard", []))
        when = []
        for nm, val in d.get("when", {}).items():
            if nm not in snames:
                raise r.fail(f"'when' refers to unknown state '{nm}'", "when")
            when.append((snames[nm].data[0], float(val)))
        return Guard(cons, tuple(when))

    fset = tuple(guard(g, "set") for g in fl.get("set", []))

    jumps = []
    treset = None
    jt = r.table(raw.get("jumps", {}), "jumps", {"system", "timer"})
    for jname, jd in r.table(jt.get("system", {}), "jumps.system", set(jt.get("system", {}))).items():
        if "reset" not in jd:
            raise r.fail(f"jump '{jname}' has no reset", jname)
        reset = tuple(r.expr(e, names, "reset") for e in jd["reset"])
        jumps.append(JumpPiece(guard(jd, jname), reset, jname))
    if "timer" in jt:
        td = r.table(jt["timer"], "jumps.timer", {"reset"}, {"reset"})
        treset = tuple(r.expr(e, names, "reset") for e in td["reset"])

    out = None
    if "output" in raw:
        od = r.table(raw["output"], "output", {"h"}, {"h"})
        out = tuple(r.expr(e, snames, "h") for e in od["h"])

    try:
        system = OpenLoopSystem(p, flow, m, ilo, ihi, dlo, dhi, tuple(jumps), treset, fset, out)
    except ModelError as exc:
        raise r.fail(str(exc)) from None

    sd = r.table(raw.get("sets", {}), "sets", {"S", "I", "O", "Sq", "Oq", "Iq", "It", "links"}, {"S", "I", "O"})
    sxl, sxh = _boxes(r, sd["S"], "S", p.nx)
    ixl, ixh = _boxes(r, sd["I"], "I", p.nx)
    oxl, oxh = _boxes(r, sd["O"], "O", p.nx)
    sq = tuple(_coord(r, v, "Sq") for v in sd.get("Sq", []))
    oq = tuple(_coord(r, v, "Oq") for v in sd.get("Oq", []))
    iq = tuple(_coord(r, v, "Iq") for v in sd["Iq"]) if "Iq" in sd else None
    it = tuple(_coord(r, v, "It") for v in sd["It"]) if "It" in sd else None
    links = []
    for pair in sd.get("links", []):
        a, b = pair
        if a not in snames or b not in snames:
            raise r.fail("'links' entries must name states, e.g. [\"s3\", \"s1\"]", "links")
        links.append((snames[a].data[0], snames[b].data[0]))
    sets = SpecSets(sxl, sxh, ixl, ixh, oxl, oxh, sq, oq, iq, it, tuple(links))
    try:
        sets.check(p)
    except ModelError as exc:
        raise r.fail(str(exc), "sets") from None

    onames = {f"y{j + 1}": var(j) for j in range(len(system.outputs))}
    for j, h in enumerate(system.outputs):
        if h.op == "var":
            onames.setdefault(f"s{h.data[0] + 1}", var(j))

    grammar = None
    if "grammar" in raw:
        gd = r.table(raw["grammar"], "grammar", {"depth", "text"}, {"text"})
        try:
            grammar = parse_grammar(gd["text"], int(gd.get("depth", 10)), snames, onames)
        except GrammarError as exc:
            line = _locate(text, "text")
            raise ProblemError(f"grammar: {exc}", line, None, path) from None
        if grammar.n_components != 1 + m:
            raise r.fail(f"grammar start tuple has {grammar.n_components} entries, expected V plus {m} controller(s)",
                         "text")

    spec = _dataclass_from(r, SpecConfig, raw.get("spec", {}), "spec")
    gp = _dataclass_from(r, GPConfig, raw.get("gp", {}), "gp")
    prover = _dataclass_from(r, ProverConfig, raw.get("prover", {}), "prover")
    fd = dict(raw.get("fitness", {}))
    fd.setdefault("epsilon", 2 * prover.delta)
    fitness = _dataclass_from(r, FitnessConfig, fd, "fitness")
    name = raw.get("name", Path(path).stem if path else "problem")
    digest = hashlib.sha256(text.encode()).hexdigest()[:16]
    return Problem(name, system, sets, grammar, spec, gp, prover, fitness, digest, onames, snames, path)


def load(path: str | Path) -> Problem:
    path = Path(path)
    if not path.exists() and (PROBLEM_DIR / f"{path}.toml").exists():
        path = PROBLEM_DIR / f"{path}.toml"
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemError(f"cannot read problem file: {exc}", path=str(path)) from None
    return loads(text, str(path))


def bundled() -> list[str]:
    return sorted(p.stem for p in PROBLEM_DIR.glob("*.toml"))


# ---------------------------------------------------------------------------
# certificate files


@dataclass
class CertificateFile:
    V: Expr
    kappa: tuple[Expr, ...]
    meta: dict[str, str]

    @property
    def beta(self) -> float | None:
        b = self.meta.get("beta")
        return None if b in (None, "", "none") else float(b)

    def get_float(self, key: str, default: float) -> float:
        v = self.meta.get(key)
        return default if v in (None, "", "none") else float(v)


def format_certificate(V: Expr, kappa, meta: dict, n_state: int, n_out: int) -> str:
    sn = [f"s{i + 1}" for i in range(n_state)]
    yn = [f"y{j + 1}" for j in range(n_out)]
    lines = [f"# {k}: {v}" for k, v in meta.items()]
    lines.append(f"V = {to_text(V, sn)}")
    for j, kp in enumerate(kappa):
        lines.append(f"kappa{j + 1} = {to_text(kp, yn)}")
    return "\n".join(lines) + "\n"


def parse_certificate(text: str, problem: Problem, path: str = "") -> CertificateFile:
    meta: dict[str, str] = {}
    V = None
    kap: dict[int, Expr] = {}
    knames = dict(problem.output_names)
    n = problem.system.n
    knames.update({f"dV{i + 1}": var(DV_BASE + i) for i in range(n)})
    for ln, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            if ":" in s:
                k, v = s[1:].split(":", 1)
                meta[k.strip()] = v.strip()
            continue
        if "=" not in s:
            raise ProblemError("expected 'name = expression'", ln, 1, path)
        lhs, rhs = (x.strip() for x in s.split("=", 1))
        try:
            if lhs == "V":
                V = parse(rhs, problem.state_names)
            elif re.fullmatch(r"kappa\d+", lhs):
                kap[int(lhs[5:])] = parse(rhs, knames)
            elif lhs == "beta":
                meta["beta"] = str(float(rhs))
            else:
                raise ProblemError(f"unknown entry '{lhs}'", ln, 1, path)
        except ExprParseError as exc:
            raise ProblemError(str(exc), ln, len(lhs) + 4 + exc.col, path) from None
    if V is None:
        raise ProblemError("certificate has no 'V = ...' line", path=path)
    m = problem.system.m
    if sorted(kap) != list(range(1, m + 1)):
        raise ProblemError(f"certificate needs kappa1..kappa{m}", path=path)
    dvs = {DV_BASE + i: diff(V, i) for i in range(n)}
    kappa = tuple(substitute(kap[i], dvs) for i in range(1, m + 1))
    return CertificateFile(V, kappa, meta)


def read_certificate(path: str | Path, problem: Problem) -> CertificateFile:
    path = Path(path)
    if not path.exists() and (CERT_DIR / path).exists():
        path = CERT_DIR / path
    return parse_certificate(path.read_text(), problem, str(path))
