"""Knowledge bases: a PDDL-lite planning domain and an interval grounding table.

Domain files are s-expressions::

    (define (domain mountain_car)
      (:objects Car)
      (:predicates (Bottom_of_hills ?x) (On_right_side_hill ?x))
      (:goal (On_right_side_hill Car))
      (:operator Opr.1 :precondition (Bottom_of_hills ?x)
                       :effect (On_right_side_hill ?x)))

Grounding tables hold one tab-separated entry per line::

    Bottom_of_hills(Car)<TAB>0<TAB>-0.6<TAB>-0.4

Lines starting with ';' are comments in both formats.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union


class KnowledgeBaseError(ValueError):
    """Raised for malformed or inconsistent knowledge-base files."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


_SYMBOL_RE = re.compile(r"^\s*([A-Za-z_][\w\-.]*)\s*\(\s*([A-Za-z_?][\w\-.]*)\s*\)\s*$")


@dataclass(frozen=True, order=True)
class Symbol:
    """A predicate applied to one object (or variable), e.g. ``Bottom_of_hills(Car)``."""

    name: str
    obj: str

    def __post_init__(self):
        if not self.name or not self.obj:
            raise KnowledgeBaseError(f"empty symbol component in {self.name!r}({self.obj!r})")

    def __str__(self) -> str:
        return f"{self.name}({self.obj})"

    @property
    def is_lifted(self) -> bool:
        return self.obj.startswith("?")

    def bind(self, obj: str) -> "Symbol":
        return Symbol(self.name, obj) if self.is_lifted else self

    @classmethod
    def parse(cls, text: str) -> "Symbol":
        m = _SYMBOL_RE.match(text)
        if m is None:
            raise KnowledgeBaseError(f"cannot parse symbol {text!r}")
        return cls(m.group(1), m.group(2))


@dataclass(frozen=True)
class Operator:
    id: str
    precondition: Symbol
    effect: Symbol


@dataclass(frozen=True)
class KnowledgeBase:
    name: str
    objects: Tuple[str, ...]
    predicates: Tuple[str, ...]
    goal: Symbol
    operators: Tuple[Operator, ...]

    @property
    def symbols(self) -> Tuple[Symbol, ...]:
        """Every predicate applied to every object, predicate-major in file order."""
        return tuple(Symbol(p, o) for p in self.predicates for o in self.objects)

    def transitions(self) -> List[Tuple[Symbol, Symbol]]:
        """Ground (precondition, effect) pairs; lifted operators bind to each object."""
        pairs = []
        for op in self.operators:
            if op.precondition.is_lifted or op.effect.is_lifted:
                for obj in self.objects:
                    pairs.append((op.precondition.bind(obj), op.effect.bind(obj)))
            else:
                pairs.append((op.precondition, op.effect))
        return pairs

    def without(self, operator_id: str) -> "KnowledgeBase":
        ops = tuple(op for op in self.operators if op.id != operator_id)
        if len(ops) == len(self.operators):
            raise KeyError(operator_id)
        return KnowledgeBase(self.name, self.objects, self.predicates, self.goal, ops)


@dataclass(frozen=True)
class SymbolInterval:
    symbol: Symbol
    dimension: int
    lower: float
    upper: float

    @property
    def mean(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)


@dataclass(frozen=True)
class GroundingTable:
    entries: Tuple[SymbolInterval, ...]

    def __getitem__(self, symbol: Symbol) -> SymbolInterval:
        for e in self.entries:
            if e.symbol == symbol:
                return e
        raise KeyError(str(symbol))

    @property
    def symbols(self) -> Tuple[Symbol, ...]:
        return tuple(e.symbol for e in self.entries)


# ---------------------------------------------------------------------------
# s-expression reader

_Token = Tuple[str, int]
SExpr = Union[str, list]


def _tokenize(text: str) -> Iterator[_Token]:
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.lstrip().startswith(";"):
            continue
        line = line.split(";", 1)[0]
        for tok in re.findall(r"\(|\)|[^\s()]+", line):
            yield tok, lineno


def _read_sexprs(text: str) -> List[Tuple[SExpr, int]]:
    """Parse into nested lists; each list is paired with its opening line."""
    stack: List[Tuple[list, int]] = []
    out: List[Tuple[SExpr, int]] = []
    for tok, line in _tokenize(text):
        if tok == "(":
            stack.append(([], line))
        elif tok == ")":
            if not stack:
                raise KnowledgeBaseError("unbalanced ')'", line)
            lst, start = stack.pop()
            node = _Node(lst, start)
            if stack:
                stack[-1][0].append(node)
            else:
                out.append((node, start))
        else:
            if not stack:
                raise KnowledgeBaseError(f"token {tok!r} outside of any expression", line)
            stack[-1][0].append(_Atom(tok, line))
    if stack:
        raise KnowledgeBaseError("unbalanced '(' (unexpected end of file)", stack[-1][1])
    return out


class _Atom(str):
    line: int

    def __new__(cls, value: str, line: int):
        obj = super().__new__(cls, value)
        obj.line = line
        return obj


class _Node(list):
    def __init__(self, items, line: int):
        super().__init__(items)
        self.line = line


def _expect_atom(x, what: str, line: int) -> str:
    if not isinstance(x, str):
        raise KnowledgeBaseError(f"expected {what}, got a list", getattr(x, "line", line))
    return str(x)


def _parse_atom_pair(node, what: str, line: int) -> Tuple[str, str, int]:
    if not isinstance(node, list) or len(node) != 2:
        raise KnowledgeBaseError(
            f"{what} must be a single predicate with one argument, e.g. (Pred ?x)",
            getattr(node, "line", line),
        )
    ln = getattr(node, "line", line)
    return _expect_atom(node[0], "predicate name", ln), _expect_atom(node[1], "argument", ln), ln


def parse_domain(text: str) -> KnowledgeBase:
    """Parse a PDDL-lite domain file into a validated :class:`KnowledgeBase`."""
    exprs = _read_sexprs(text)
    if len(exprs) != 1:
        raise KnowledgeBaseError(f"expected exactly one (define ...) form, found {len(exprs)}")
    root, line = exprs[0]
    if not isinstance(root, list) or not root or root[0] != "define":
        raise KnowledgeBaseError("file must start with (define ...)", line)
    if len(root) < 2 or not isinstance(root[1], list) or len(root[1]) != 2 or root[1][0] != "domain":
        raise KnowledgeBaseError("expected (domain <name>) after define", line)
    name = str(root[1][1])

    objects: Optional[List[str]] = None
    predicates: Optional[List[str]] = None
    goal: Optional[Tuple[str, str, int]] = None
    raw_ops: List[Tuple[str, Tuple[str, str, int], Tuple[str, str, int], int]] = []

    for section in root[2:]:
        sline = getattr(section, "line", line)
        if not isinstance(section, list) or not section:
            raise KnowledgeBaseError("expected a (:section ...) form", sline)
        head = _expect_atom(section[0], "section keyword", sline)
        if head == ":objects":
            if objects is not None:
                raise KnowledgeBaseError("duplicate :objects section", sline)
            objects = [_expect_atom(x, "object name", sline) for x in section[1:]]
            if not objects:
                raise KnowledgeBaseError(":objects declares nothing", sline)
        elif head == ":predicates":
            if predicates is not None:
                raise KnowledgeBaseError("duplicate :predicates section", sline)
            predicates = []
            for p in section[1:]:
                pname, arg, pl = _parse_atom_pair(p, "predicate declaration", sline)
                if not arg.startswith("?"):
                    raise KnowledgeBaseError(f"predicate {pname} must declare a ?variable", pl)
                if pname in predicates:
                    raise KnowledgeBaseError(f"duplicate predicate {pname}", pl)
                predicates.append(pname)
        elif head == ":goal":
            if goal is not None:
                raise KnowledgeBaseError("duplicate :goal section", sline)
            if len(section) != 2:
                raise KnowledgeBaseError(":goal takes exactly one (Pred Object)", sline)
            goal = _parse_atom_pair(section[1], "goal", sline)
        elif head == ":operator":
            raw_ops.append(_parse_operator(section, sline))
        else:
            raise KnowledgeBaseError(f"unknown section {head}", sline)

    if objects is None:
        raise KnowledgeBaseError("missing :objects section")
    if predicates is None:
        raise KnowledgeBaseError("missing :predicates section")
    if goal is None:
        raise KnowledgeBaseError("missing :goal section")

    def check(pred: str, arg: str, ln: int, allow_var: bool) -> Symbol:
        if pred not in predicates:
            raise KnowledgeBaseError(f"unknown predicate {pred}", ln)
        if arg.startswith("?"):
            if not allow_var:
                raise KnowledgeBaseError(f"goal must name an object, not variable {arg}", ln)
        elif arg not in objects:
            raise KnowledgeBaseError(f"unknown object {arg}", ln)
        return Symbol(pred, arg)

    goal_sym = check(*goal, allow_var=False)
    operators: List[Operator] = []
    seen = set()
    for op_id, pre, eff, ln in raw_ops:
        if op_id in seen:
            raise KnowledgeBaseError(f"duplicate operator id {op_id}", ln)
        seen.add(op_id)
        pre_sym = check(*pre, allow_var=True)
        eff_sym = check(*eff, allow_var=True)
        if pre_sym == eff_sym:
            raise KnowledgeBaseError(f"operator {op_id} has identical precondition and effect", ln)
        if pre_sym.is_lifted and eff_sym.is_lifted and pre_sym.obj != eff_sym.obj:
            raise KnowledgeBaseError(f"operator {op_id} mixes variables {pre_sym.obj}, {eff_sym.obj}", ln)
        operators.append(Operator(op_id, pre_sym, eff_sym))

    return KnowledgeBase(name, tuple(objects), tuple(predicates), goal_sym, tuple(operators))


def _parse_operator(section: list, line: int):
    if len(section) != 6:
        raise KnowledgeBaseError(
            "operator must be (:operator <id> :precondition (P ?x) :effect (Q ?x))", line
        )
    op_id = _expect_atom(section[1], "operator id", line)
    fields = {}
    for key, value in ((section[2], section[3]), (section[4], section[5])):
        key = _expect_atom(key, ":precondition or :effect", line)
        if key not in (":precondition", ":effect") or key in fields:
            raise KnowledgeBaseError(f"unexpected operator field {key}", line)
        fields[key] = _parse_atom_pair(value, key[1:], line)
    return op_id, fields[":precondition"], fields[":effect"], line


def parse_grounding(text: str) -> GroundingTable:
    """Parse a tab-separated grounding table."""
    entries: List[SymbolInterval] = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith(";"):
            continue
        cols = raw.rstrip("\r\n").split("\t")
        if len(cols) != 4:
            raise KnowledgeBaseError(f"expected 4 tab-separated columns, found {len(cols)}", lineno)
        try:
            symbol = Symbol.parse(cols[0])
        except KnowledgeBaseError as e:
            raise KnowledgeBaseError(str(e), lineno) from None
        if symbol.is_lifted:
            raise KnowledgeBaseError(f"grounding entry {symbol} must name an object", lineno)
        try:
            dim = int(cols[1])
        except ValueError:
            raise KnowledgeBaseError(f"dimension {cols[1]!r} is not an integer", lineno) from None
        if dim < 0:
            raise KnowledgeBaseError(f"negative dimension {dim}", lineno)
        try:
            lower, upper = float(cols[2]), float(cols[3])
        except ValueError:
            raise KnowledgeBaseError(f"non-numeric bound in {cols[2]!r}, {cols[3]!r}", lineno) from None
        if not (math.isfinite(lower) and math.isfinite(upper)):
            raise KnowledgeBaseError("bounds must be finite", lineno)
        if lower >= upper:
            raise KnowledgeBaseError(f"lower bound {lower} >= upper bound {upper}", lineno)
        if symbol in seen:
            raise KnowledgeBaseError(f"duplicate symbol {symbol}", lineno)
        seen.add(symbol)
        entries.append(SymbolInterval(symbol, dim, lower, upper))
    return GroundingTable(tuple(entries))


def check_grounding(table: GroundingTable, kb: KnowledgeBase) -> None:
    """Raise unless the table grounds exactly the knowledge base's symbols."""
    have, want = set(table.symbols), set(kb.symbols)
    missing = sorted(map(str, want - have))
    extra = sorted(map(str, have - want))
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing " + ", ".join(missing))
        if extra:
            parts.append("unknown " + ", ".join(extra))
        raise KnowledgeBaseError("grounding table does not match domain: " + "; ".join(parts))


def serialize(value: Union[KnowledgeBase, GroundingTable]) -> str:
    if isinstance(value, KnowledgeBase):
        return _serialize_domain(value)
    if isinstance(value, GroundingTable):
        return "".join(
            f"{e.symbol}\t{e.dimension}\t{e.lower!r}\t{e.upper!r}\n" for e in value.entries
        )
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _serialize_domain(kb: KnowledgeBase) -> str:
    def atom(s: Symbol) -> str:
        return f"({s.name} {s.obj})"

    lines = [f"(define (domain {kb.name})"]
    lines.append(f"  (:objects {' '.join(kb.objects)})")
    lines.append("  (:predicates " + " ".join(f"({p} ?x)" for p in kb.predicates) + ")")
    lines.append(f"  (:goal {atom(kb.goal)})")
    for op in kb.operators:
        lines.append(
            f"  (:operator {op.id} :precondition {atom(op.precondition)} :effect {atom(op.effect)})"
        )
    lines[-1] += ")"
    return "\n".join(lines) + "\n"


def load_domain(path) -> KnowledgeBase:
    with open(path, encoding="utf-8") as f:
        return parse_domain(f.read())


def load_grounding(path) -> GroundingTable:
    with open(path, encoding="utf-8") as f:
        return parse_grounding(f.read())


def symbols_in(kb: KnowledgeBase, names: Sequence[str]) -> List[Symbol]:
    """Resolve ``Pred(Obj)`` strings, or bare predicate names for single-object domains."""
    out = []
    for n in names:
        if "(" in n:
            sym = Symbol.parse(n)
        elif len(kb.objects) == 1:
            sym = Symbol(n, kb.objects[0])
        else:
            raise KnowledgeBaseError(f"ambiguous symbol {n!r}: domain has several objects")
        if sym not in kb.symbols:
            raise KnowledgeBaseError(f"unknown symbol {sym}")
        out.append(sym)
    return out
