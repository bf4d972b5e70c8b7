"""Parser, AST, and emitters for the small imperative input language.

Programs are `;`-separated commands: assignments, C-style `while`/`if` blocks,
and accuracy assertions `require_nsb(x, n)`.  Every AST node carries a unique
integer label (dense, assigned in post order); labels are the variables of the
downstream constraint systems.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional, Union

DEFAULT_CONST_BITS = 53

MATH_FNS = (
    "sin", "cos", "tan", "arcsin", "arccos", "arctan",
    "log", "exp", "sinh", "cosh", "tanh",
)

KEYWORDS = ("while", "if", "else", "require_nsb")

COMPARE_OPS = ("<=", ">=", "==", "!=", "<", ">")


class ParseError(Exception):
    """Syntax error with 1-based source position."""

    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


# --- AST ---------------------------------------------------------------

@dataclass
class Const:
    text: str                 # exact decimal literal as written, sign included
    p: int = DEFAULT_CONST_BITS
    explicit_p: bool = False
    label: int = -1

    @property
    def value(self) -> Fraction:
        return decimal_to_fraction(self.text)


@dataclass
class Var:
    name: str
    label: int = -1


@dataclass
class BinOp:
    op: str                   # one of + - * /
    lhs: "Expr"
    rhs: "Expr"
    label: int = -1


@dataclass
class Sqrt:
    arg: "Expr"
    label: int = -1


@dataclass
class MathCall:
    fn: str
    arg: "Expr"
    label: int = -1


Expr = Union[Const, Var, BinOp, Sqrt, MathCall]


@dataclass
class Compare:
    op: str
    lhs: Expr
    rhs: Expr
    label: int = -1


@dataclass
class Assign:
    var: str
    expr: Expr
    label: int = -1


@dataclass
class Seq:
    first: "Cmd"
    rest: "Cmd"
    label: int = -1


@dataclass
class If:
    cond: Compare
    then: Optional["Cmd"]
    orelse: Optional["Cmd"]
    label: int = -1


@dataclass
class While:
    cond: Compare
    body: Optional["Cmd"]
    label: int = -1


@dataclass
class RequireNsb:
    var: str
    n: int
    label: int = -1


Cmd = Union[Assign, Seq, If, While, RequireNsb]


@dataclass
class Program:
    body: Optional[Cmd]
    n_labels: int = 0


def decimal_to_fraction(text: str) -> Fraction:
    """Exact value of a decimal literal (optionally signed / with exponent)."""
    return Fraction(text)


# --- Lexer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<name>[a-zA-Z][a-zA-Z0-9_]*)
  | (?P<op><=|>=|==|!=|[<>=+\-*/;(){},#])
    """,
    re.VERBOSE,
)


@dataclass
class _Token:
    kind: str   # number | name | op | eof
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


# --- Parser ------------------------------------------------------------

class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.pos = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.cur
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        if self.cur.text != text or self.cur.kind == "eof":
            raise ParseError(f"expected {text!r}, found {self.cur.text!r}",
                             self.cur.line, self.cur.col)
        return self.advance()

    def error(self, msg: str):
        raise ParseError(msg, self.cur.line, self.cur.col)

    def parse_program(self) -> Program:
        stmts = self.parse_statements(stop="eof")
        self.expect_eof()
        return Program(body=_seq_of(stmts))

    def expect_eof(self):
        if self.cur.kind != "eof":
            self.error(f"unexpected {self.cur.text!r}")

    def parse_statements(self, stop: str) -> list[Cmd]:
        stmts = []
        while True:
            tok = self.cur
            if tok.kind == "eof" or (stop == "}" and tok.text == "}"):
                return stmts
            stmts.append(self.parse_statement())

    def parse_statement(self) -> Cmd:
        tok = self.cur
        if tok.kind == "name" and tok.text == "while":
            return self.parse_while()
        if tok.kind == "name" and tok.text == "if":
            return self.parse_if()
        if tok.kind == "name" and tok.text == "require_nsb":
            return self.parse_require()
        if tok.kind == "name":
            if tok.text in MATH_FNS or tok.text == "sqrt":
                self.error(f"{tok.text!r} cannot start a statement")
            name = self.advance().text
            self.expect("=")
            expr = self.parse_expr()
            self.expect(";")
            return Assign(var=name, expr=expr)
        self.error(f"unexpected {tok.text!r}")

    def parse_block(self) -> Optional[Cmd]:
        self.expect("{")
        stmts = self.parse_statements(stop="}")
        self.expect("}")
        if self.cur.text == ";":
            self.advance()
        return _seq_of(stmts)

    def parse_while(self) -> While:
        self.advance()
        self.expect("(")
        cond = self.parse_compare()
        self.expect(")")
        body = self.parse_block()
        return While(cond=cond, body=body)

    def parse_if(self) -> If:
        self.advance()
        self.expect("(")
        cond = self.parse_compare()
        self.expect(")")
        then = self.parse_block()
        orelse = None
        if self.cur.text == "else" and self.cur.kind == "name":
            self.advance()
            orelse = self.parse_block()
        return If(cond=cond, then=then, orelse=orelse)

    def parse_require(self) -> RequireNsb:
        self.advance()
        self.expect("(")
        var = self.cur
        if var.kind != "name":
            self.error("require_nsb needs a variable name")
        self.advance()
        self.expect(",")
        num = self.cur
        if num.kind != "number" or not num.text.isdigit():
            self.error("require_nsb needs a positive integer bit count")
        n = int(self.advance().text)
        if n < 1:
            raise ParseError("require_nsb bit count must be >= 1",
                             num.line, num.col)
        self.expect(")")
        self.expect(";")
        return RequireNsb(var=var.text, n=n)

    def parse_compare(self) -> Compare:
        lhs = self.parse_expr()
        op = self.cur
        if op.text not in COMPARE_OPS:
            self.error(f"expected comparison operator, found {op.text!r}")
        self.advance()
        rhs = self.parse_expr()
        return Compare(op=op.text, lhs=lhs, rhs=rhs)

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while self.cur.text in ("+", "-") and self.cur.kind == "op":
            op = self.advance().text
            node = BinOp(op=op, lhs=node, rhs=self.parse_term())
        return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while self.cur.text in ("*", "/") and self.cur.kind == "op":
            op = self.advance().text
            node = BinOp(op=op, lhs=node, rhs=self.parse_factor())
        return node

    def parse_factor(self) -> Expr:
        tok = self.cur
        if tok.text == "(":
            self.advance()
            node = self.parse_expr()
            self.expect(")")
            return node
        if tok.text == "-":
            self.advance()
            num = self.cur
            if num.kind != "number":
                self.error("unary minus is only supported on numeric literals")
            return self.parse_const(sign="-")
        if tok.kind == "number":
            return self.parse_const(sign="")
        if tok.kind == "name":
            name = self.advance().text
            if self.cur.text == "(":
                if name == "sqrt":
                    self.advance()
                    arg = self.parse_expr()
                    self.expect(")")
                    return Sqrt(arg=arg)
                if name in MATH_FNS:
                    self.advance()
                    arg = self.parse_expr()
                    self.expect(")")
                    return MathCall(fn=name, arg=arg)
                raise ParseError(f"unknown function {name!r}", tok.line, tok.col)
            if name in KEYWORDS:
                self.error(f"{name!r} is a keyword")
            return Var(name=name)
        self.error(f"unexpected {tok.text!r}")

    def parse_const(self, sign: str) -> Const:
        num = self.advance()
        text = sign + num.text
        p = DEFAULT_CONST_BITS
        explicit = False
        if self.cur.text == "#":
            self.advance()
            ptok = self.cur
            if ptok.kind != "number" or not ptok.text.isdigit():
                self.error("expected integer bit count after '#'")
            p = int(self.advance().text)
            if p < 1:
                raise ParseError("constant bit count must be >= 1",
                                 ptok.line, ptok.col)
            explicit = True
        return Const(text=text, p=p, explicit_p=explicit)


def _seq_of(stmts: list[Cmd]) -> Optional[Cmd]:
    if not stmts:
        return None
    node = stmts[-1]
    for stmt in reversed(stmts[:-1]):
        node = Seq(first=stmt, rest=node)
    return node


# --- Labeling ----------------------------------------------------------

def children(node) -> tuple:
    """Direct AST children, left to right."""
    match node:
        case BinOp() | Compare():
            return (node.lhs, node.rhs)
        case Sqrt() | MathCall():
            return (node.arg,)
        case Assign():
            return (node.expr,)
        case Seq():
            return (node.first, node.rest)
        case If():
            kids = [node.cond]
            if node.then is not None:
                kids.append(node.then)
            if node.orelse is not None:
                kids.append(node.orelse)
            return tuple(kids)
        case While():
            return (node.cond, node.body) if node.body is not None else (node.cond,)
        case _:
            return ()


def postorder(node) -> Iterator:
    for child in children(node):
        yield from postorder(child)
    yield node


def label_program(prog: Program) -> Program:
    """Assign dense labels 0..N-1 in post order; mutates and returns prog."""
    next_id = 0
    if prog.body is not None:
        for node in postorder(prog.body):
            node.label = next_id
            next_id += 1
    prog.n_labels = next_id
    return prog


def parse(source: str) -> Program:
    return label_program(_Parser(source).parse_program())


# --- Queries -----------------------------------------------------------

def statements(prog: Program) -> list[Cmd]:
    """Top-level commands in source order (Seq chains flattened)."""
    out: list[Cmd] = []

    def walk(cmd: Optional[Cmd]):
        if cmd is None:
            return
        if isinstance(cmd, Seq):
            walk(cmd.first)
            walk(cmd.rest)
        else:
            out.append(cmd)

    walk(prog.body)
    return out


def block_statements(cmd: Optional[Cmd]) -> list[Cmd]:
    return statements(Program(body=cmd))


def assignment_labels(prog: Program) -> list[tuple[int, str]]:
    """(label, variable) of every assignment, in label order."""
    if prog.body is None:
        return []
    return [(n.label, n.var) for n in postorder(prog.body) if isinstance(n, Assign)]


def const_set(e: Expr) -> set[tuple[str, int]]:
    """Constants occurring in an expression, as (literal text, label) pairs."""
    return {(n.text, n.label) for n in postorder(e) if isinstance(n, Const)}


def free_variables(prog: Program) -> set[str]:
    """Names read (anywhere) before any assignment to them."""
    free: set[str] = set()
    assigned: set[str] = set()

    def expr_reads(e: Expr):
        for n in postorder(e):
            if isinstance(n, Var) and n.name not in assigned:
                free.add(n.name)

    def walk(cmd: Optional[Cmd]):
        match cmd:
            case None:
                pass
            case Seq():
                walk(cmd.first)
                walk(cmd.rest)
            case Assign():
                expr_reads(cmd.expr)
                assigned.add(cmd.var)
            case If():
                expr_reads(cmd.cond.lhs)
                expr_reads(cmd.cond.rhs)
                snap = set(assigned)
                walk(cmd.then)
                mid = set(assigned)
                assigned.clear()
                assigned.update(snap)
                walk(cmd.orelse)
                assigned.update(mid)
            case While():
                expr_reads(cmd.cond.lhs)
                expr_reads(cmd.cond.rhs)
                walk(cmd.body)
            case RequireNsb():
                if cmd.var not in assigned:
                    free.add(cmd.var)

    walk(prog.body)
    return free


# --- Emission ----------------------------------------------------------

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def _const_text(node: Const) -> str:
    return f"{node.text}#{node.p}" if node.explicit_p else node.text


def _emit_expr(node: Expr, nsb, parent_prec: int = 0, right: bool = False) -> str:
    def tag(label: int) -> str:
        return "" if nsb is None else f"|{nsb(label)}|"

    match node:
        case Const():
            return _const_text(node) + tag(node.label)
        case Var():
            return node.name + tag(node.label)
        case Sqrt():
            return f"sqrt({_emit_expr(node.arg, nsb)}){tag(node.label)}"
        case MathCall():
            return f"{node.fn}({_emit_expr(node.arg, nsb)}){tag(node.label)}"
        case BinOp():
            prec = _PRECEDENCE[node.op]
            text = "{} {}{} {}".format(
                _emit_expr(node.lhs, nsb, prec, right=False),
                node.op, tag(node.label),
                _emit_expr(node.rhs, nsb, prec, right=True),
            )
            if prec < parent_prec or (prec == parent_prec and right):
                return f"({text})"
            return text
    raise TypeError(f"not an expression node: {node!r}")


def _emit_cmd(cmd: Optional[Cmd], nsb, indent: int, lines: list[str]):
    pad = "  " * indent

    def tag(label: int) -> str:
        return "" if nsb is None else f"|{nsb(label)}|"

    match cmd:
        case None:
            pass
        case Seq():
            _emit_cmd(cmd.first, nsb, indent, lines)
            _emit_cmd(cmd.rest, nsb, indent, lines)
        case Assign():
            lines.append(f"{pad}{cmd.var}{tag(cmd.label)} = "
                         f"{_emit_expr(cmd.expr, nsb)};")
        case RequireNsb():
            lines.append(f"{pad}require_nsb({cmd.var},{cmd.n});")
        case While():
            cond = f"{_emit_expr(cmd.cond.lhs, None)} {cmd.cond.op} " \
                   f"{_emit_expr(cmd.cond.rhs, None)}"
            lines.append(f"{pad}while ({cond}) {{")
            _emit_cmd(cmd.body, nsb, indent + 1, lines)
            lines.append(f"{pad}}}")
        case If():
            cond = f"{_emit_expr(cmd.cond.lhs, None)} {cmd.cond.op} " \
                   f"{_emit_expr(cmd.cond.rhs, None)}"
            lines.append(f"{pad}if ({cond}) {{")
            _emit_cmd(cmd.then, nsb, indent + 1, lines)
            if cmd.orelse is not None:
                lines.append(f"{pad}}} else {{")
                _emit_cmd(cmd.orelse, nsb, indent + 1, lines)
            lines.append(f"{pad}}}")
        case _:
            raise TypeError(f"not a command node: {cmd!r}")


def emit(prog: Program) -> str:
    """Canonical plain source text."""
    lines: list[str] = []
    _emit_cmd(prog.body, None, 0, lines)
    return "\n".join(lines) + ("\n" if lines else "")


def emit_annotated(prog: Program, nsb_of_label) -> str:
    """Source text with `|nsb|` tags on variables, constants, and operators.

    `nsb_of_label` maps a label id to its solved bit count; raises KeyError
    (MissingLabelValue) if a label is absent.
    """
    getter = nsb_of_label.__getitem__ if hasattr(nsb_of_label, "__getitem__") \
        else nsb_of_label
    lines: list[str] = []
    _emit_cmd(prog.body, getter, 0, lines)
    return "\n".join(lines) + ("\n" if lines else "")


_ANNOTATION_RE = re.compile(r"\|\d+\|")


def strip_annotations(text: str) -> str:
    return _ANNOTATION_RE.sub("", text)


# --- JSON rendering ----------------------------------------------------

def ast_to_json(prog: Program) -> dict:
    def render(node) -> dict:
        d: dict = {"kind": type(node).__name__, "label": node.label}
        match node:
            case Const():
                d["text"] = node.text
                d["p"] = node.p
            case Var():
                d["name"] = node.name
            case BinOp() | Compare():
                d["op"] = node.op
            case MathCall():
                d["fn"] = node.fn
            case Assign():
                d["var"] = node.var
            case RequireNsb():
                d["var"] = node.var
                d["n"] = node.n
        kids = [render(c) for c in children(node)]
        if kids:
            d["children"] = kids
        return d

    return {
        "schema": 1,
        "n_labels": prog.n_labels,
        "body": render(prog.body) if prog.body is not None else None,
    }
