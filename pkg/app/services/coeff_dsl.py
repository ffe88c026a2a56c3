"""系数表达式语言

该模块负责解析和求值定义漂移 b 与扩散 σ 的标量表达式。
主要功能包括:
- 基于 lark 的 LALR 语法，错误带字节偏移
- 不可变的表达式树（Num/Coord/Radius/Param/BinOp/Neg/Call）
- 对一批点的向量化求值，定义域错误从不静默产生 NaN
- 表达式树的规范化打印（打印后再解析得到相同的树）
- ModelSpec：维数、中心、半径、参数和系数表达式网格

语法要点:
- 优先级：^ 高于一元负号，高于 * /，高于 + -；^ 右结合
- 坐标 x1..xd；|x| 与 |x-x0| 为径向符号，也可写作 abs(x)、abs(x-x0)
- 函数 abs, cos, sin, exp, ln, sqrt 以及 pow(a, b)
"""

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from lark import Lark, Transformer, Token, v_args
from lark.exceptions import UnexpectedEOF, UnexpectedInput, VisitError

from app.core.exceptions import (
    DomainError,
    ExprSyntaxError,
    UnknownIdentifierError,
    ValidationException,
    validate_finite,
    validate_positive,
)
from app.schemas.model import ModelFile


expr_grammar = r"""
    ?sum: product
        | sum "+" product       -> add
        | sum "-" product       -> sub

    ?product: unary
        | product "*" unary     -> mul
        | product "/" unary     -> div

    ?unary: power
        | "-" unary             -> neg
        | "+" unary             -> pos

    ?power: atom
        | atom "^" unary        -> pow

    ?atom: NUMBER               -> number
         | NAME                 -> var
         | NAME "(" sum ("," sum)* ")" -> call
         | "(" sum ")"
         | "|" sum "|"          -> bars

    NAME: /[A-Za-z_][A-Za-z0-9_]*/
    %import common.NUMBER
    %import common.WS

    %ignore WS
"""

FUNCTIONS = ("abs", "cos", "sin", "exp", "ln", "sqrt")
_COORD = re.compile(r"^x([1-9][0-9]*)$")


# 表达式树节点
@dataclass(frozen=True)
class Num:
    value: float

@dataclass(frozen=True)
class Coord:
    index: int  # 从 1 开始

@dataclass(frozen=True)
class Radius:
    centered: bool  # True 表示 |x - x0|

@dataclass(frozen=True)
class Param:
    name: str

@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"

@dataclass(frozen=True)
class Neg:
    operand: "Expr"

@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Union[Num, Coord, Radius, Param, BinOp, Neg, Call]


@dataclass(frozen=True)
class _Vector:
    """解析期间的向量符号 x、x0 或 x-x0，只允许出现在 abs 或 |..| 中"""
    kind: str
    pos: int


def _byte_offset(text: str, pos: int) -> int:
    pos = max(0, min(pos, len(text)))
    return len(text[:pos].encode("utf-8"))


@v_args(inline=True)
class _ExprBuilder(Transformer):
    """把 lark 语法树转换成表达式树，同时检查标识符"""

    def __init__(self, text: str, d: int, params: frozenset):
        super().__init__()
        self.text = text
        self.d = d
        self.params = params

    def _offset(self, pos: int) -> int:
        return _byte_offset(self.text, pos)

    def _scalar(self, node):
        if isinstance(node, _Vector):
            if node.kind == "x" and self.d == 1:
                return Coord(1)
            raise ExprSyntaxError(
                f"向量符号 {node.kind} 只能出现在 abs() 或 |...| 中", self._offset(node.pos)
            )
        return node

    def number(self, tok):
        return Num(float(tok))

    def var(self, tok):
        name = str(tok)
        if name == "x":
            return _Vector("x", tok.start_pos)
        if name == "x0":
            return _Vector("x0", tok.start_pos)
        match = _COORD.match(name)
        if match:
            index = int(match.group(1))
            if index > self.d:
                raise UnknownIdentifierError(
                    f"坐标下标 {name} 超出维数 d={self.d}", name, self._offset(tok.start_pos)
                )
            return Coord(index)
        if name in self.params:
            return Param(name)
        raise UnknownIdentifierError(f"未知标识符: {name}", name, self._offset(tok.start_pos))

    def call(self, tok, *args):
        name = str(tok)
        if name == "pow":
            if len(args) != 2:
                raise ExprSyntaxError("pow 需要两个参数", self._offset(tok.start_pos))
            return BinOp("^", self._scalar(args[0]), self._scalar(args[1]))
        if name not in FUNCTIONS:
            raise UnknownIdentifierError(f"未知函数: {name}", name, self._offset(tok.start_pos))
        if len(args) != 1:
            raise ExprSyntaxError(f"{name} 只接受一个参数", self._offset(tok.start_pos))
        if name == "abs":
            return self._abs(args[0])
        return Call(name, self._scalar(args[0]))

    def bars(self, inner):
        return self._abs(inner)

    def _abs(self, inner):
        if isinstance(inner, _Vector):
            if inner.kind == "x":
                return Radius(False)
            if inner.kind == "x-x0":
                return Radius(True)
        return Call("abs", self._scalar(inner))

    def add(self, a, b):
        return BinOp("+", self._scalar(a), self._scalar(b))

    def sub(self, a, b):
        if isinstance(a, _Vector) and isinstance(b, _Vector) and a.kind == "x" and b.kind == "x0":
            return _Vector("x-x0", a.pos)
        return BinOp("-", self._scalar(a), self._scalar(b))

    def mul(self, a, b):
        return BinOp("*", self._scalar(a), self._scalar(b))

    def div(self, a, b):
        return BinOp("/", self._scalar(a), self._scalar(b))

    def pow(self, a, b):
        return BinOp("^", self._scalar(a), self._scalar(b))

    def neg(self, a):
        a = self._scalar(a)
        if isinstance(a, Num):
            return Num(-a.value)
        return Neg(a)

    def pos(self, a):
        return self._scalar(a)


_parser = Lark(expr_grammar, start="sum", parser="lalr")


def parse_expr(text: str, d: int, params: Iterable[str] = ()) -> Expr:
    """解析表达式文本

    Args:
        text: 表达式文本，不能为空
        d: 状态维数，坐标下标必须在 1..d 内
        params: 允许引用的参数名

    Raises:
        ExprSyntaxError: 语法错误，offset 为字节偏移
        UnknownIdentifierError: 未知标识符或坐标越界
    """
    if text is None or not text.strip():
        raise ExprSyntaxError("表达式不能为空", 0)
    try:
        tree = _parser.parse(text)
    except UnexpectedEOF:
        raise ExprSyntaxError("表达式意外结束", _byte_offset(text, len(text)))
    except UnexpectedInput as e:
        pos = getattr(e, "pos_in_stream", None)
        if pos is None or pos < 0:
            pos = len(text)
        raise ExprSyntaxError(f"语法错误，位置 {pos}: 无法识别的输入", _byte_offset(text, pos))

    builder = _ExprBuilder(text, d, frozenset(params))
    if isinstance(tree, Token):
        # 单个记号不会经过任何规则回调
        tree = builder.number(tree) if tree.type == "NUMBER" else builder.var(tree)
        return builder._scalar(tree)
    try:
        return builder._scalar(builder.transform(tree))
    except VisitError as e:
        raise e.orig_exc


def _fmt_num(value: float) -> str:
    if value < 0:
        return f"(-{repr(-value)})"
    return repr(value)


def to_text(expr: Expr) -> str:
    """规范化打印，结果可以被 parse_expr 解析回同一棵树"""
    if isinstance(expr, Num):
        return _fmt_num(expr.value)
    if isinstance(expr, Coord):
        return f"x{expr.index}"
    if isinstance(expr, Radius):
        return "|x-x0|" if expr.centered else "|x|"
    if isinstance(expr, Param):
        return expr.name
    if isinstance(expr, BinOp):
        return f"({to_text(expr.left)} {expr.op} {to_text(expr.right)})"
    if isinstance(expr, Neg):
        return f"(-{to_text(expr.operand)})"
    if isinstance(expr, Call):
        return f"{expr.fn}({to_text(expr.arg)})"
    raise TypeError(f"未知表达式节点: {expr!r}")


class _Evaluator:
    """对一批点 X (N, d) 求值，缓存径向量"""

    def __init__(self, X: np.ndarray, x0: np.ndarray, params: Mapping[str, float]):
        self.X = X
        self.x0 = x0
        self.params = params
        self._radius: Dict[bool, np.ndarray] = {}

    def radius(self, centered: bool) -> np.ndarray:
        if centered not in self._radius:
            Y = self.X - self.x0 if centered else self.X
            self._radius[centered] = np.sqrt(np.einsum("ij,ij->i", Y, Y))
        return self._radius[centered]

    def _fail(self, mask: np.ndarray, message: str, operation: str):
        mask = np.broadcast_to(mask, (self.X.shape[0],))
        index = int(np.flatnonzero(mask)[0])
        raise DomainError(f"{message}（第 {index} 个点）", operation, index,
                          {"point": [float(v) for v in self.X[index]]})

    def eval(self, expr: Expr) -> np.ndarray:
        if isinstance(expr, Num):
            return np.full(self.X.shape[0], expr.value)
        if isinstance(expr, Coord):
            return self.X[:, expr.index - 1]
        if isinstance(expr, Radius):
            return self.radius(expr.centered)
        if isinstance(expr, Param):
            return np.full(self.X.shape[0], float(self.params[expr.name]))
        if isinstance(expr, Neg):
            return -self.eval(expr.operand)
        if isinstance(expr, Call):
            return self._call(expr.fn, self.eval(expr.arg))
        if isinstance(expr, BinOp):
            return self._binop(expr.op, self.eval(expr.left), self.eval(expr.right))
        raise TypeError(f"未知表达式节点: {expr!r}")

    def _binop(self, op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                zero = b == 0
                if zero.any():
                    self._fail(zero, "除数为零", "div")
                return a / b
            if op == "^":
                bad = (a < 0) & (b != np.round(b))
                if bad.any():
                    self._fail(bad, "负底数的非整数次幂", "pow")
                pole = (a == 0) & (b < 0)
                if pole.any():
                    self._fail(pole, "零的负数次幂", "pow")
                return np.power(a, b)
        raise TypeError(f"未知运算符: {op}")

    def _call(self, fn: str, a: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            if fn == "abs":
                return np.abs(a)
            if fn == "cos":
                return np.cos(a)
            if fn == "sin":
                return np.sin(a)
            if fn == "exp":
                return np.exp(a)
            if fn == "ln":
                bad = ~(a > 0)
                if bad.any():
                    self._fail(bad, "ln 的参数必须为正", "ln")
                return np.log(a)
            if fn == "sqrt":
                bad = ~(a >= 0)
                if bad.any():
                    self._fail(bad, "sqrt 的参数不能为负", "sqrt")
                return np.sqrt(a)
        raise TypeError(f"未知函数: {fn}")


def evaluate(expr: Expr, X: np.ndarray, x0: np.ndarray, params: Mapping[str, float],
             strict: bool = True) -> np.ndarray:
    """对一批点求值，返回形状 (N,) 的数组

    strict=True 时溢出产生的非有限值也作为定义域错误抛出；
    模拟中的溢出路径由溢出保护单独处理，因此传 strict=False。
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ev = _Evaluator(X, np.asarray(x0, dtype=float), params)
    out = np.asarray(ev.eval(expr), dtype=float)
    if strict:
        bad = ~np.isfinite(out)
        if bad.any():
            ev._fail(bad, "求值结果不是有限数", "overflow")
    return out


@dataclass(frozen=True)
class ModelSpec:
    """扩散模型 dX = b(X) dt + σ(X) dB

    构造后不可变，所有求值都是纯函数，可以被任意多个线程并发调用。
    """

    name: str
    d: int
    n: int
    x0: Tuple[float, ...]
    r0: float
    params: Mapping[str, float]
    drift: Tuple[Expr, ...]
    diffusion: Tuple[Tuple[Expr, ...], ...]
    source: Optional[ModelFile] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ValidationException("维数 d 和 n 必须至少为 1", "d")
        if len(self.drift) != self.d:
            raise ValidationException(f"drift 应有 {self.d} 个表达式", "drift")
        if len(self.diffusion) != self.d or any(len(row) != self.n for row in self.diffusion):
            raise ValidationException(f"diffusion 应为 {self.d}×{self.n}", "diffusion")
        if len(self.x0) != self.d:
            raise ValidationException(f"x0 维数应为 {self.d}", "x0")
        validate_positive(self.r0, "r0")
        for key, value in self.params.items():
            validate_finite(value, key)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=float)

    def drift_at(self, X: np.ndarray, strict: bool = True) -> np.ndarray:
        """漂移 b 在一批点上的值，形状 (N, d)"""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ev = _Evaluator(X, self.center, self.params)
        out = np.empty((X.shape[0], self.d))
        for i, expr in enumerate(self.drift):
            out[:, i] = ev.eval(expr)
        if strict:
            bad = ~np.isfinite(out).all(axis=1)
            if bad.any():
                ev._fail(bad, "漂移值不是有限数", "overflow")
        return out

    def diffusion_at(self, X: np.ndarray, strict: bool = True) -> np.ndarray:
        """扩散矩阵 σ 在一批点上的值，形状 (N, d, n)"""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ev = _Evaluator(X, self.center, self.params)
        out = np.empty((X.shape[0], self.d, self.n))
        for i, row in enumerate(self.diffusion):
            for j, expr in enumerate(row):
                out[:, i, j] = ev.eval(expr)
        if strict:
            bad = ~np.isfinite(out).reshape(X.shape[0], -1).all(axis=1)
            if bad.any():
                ev._fail(bad, "扩散值不是有限数", "overflow")
        return out

    def to_file(self) -> ModelFile:
        return ModelFile(
            name=self.name,
            d=self.d,
            n=self.n,
            x0=list(self.x0),
            r0=self.r0,
            params=dict(self.params),
            drift=[to_text(e) for e in self.drift],
            diffusion=[[to_text(e) for e in row] for row in self.diffusion],
        )

    def checksum(self) -> str:
        """模型的 sha256 校验和（规范 JSON）"""
        payload = json.dumps(self.to_file().model_dump(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_model(name: str, d: int, n: int, x0: Sequence[float], r0: float,
                params: Mapping[str, float], drift: Sequence[str],
                diffusion: Sequence[Sequence[str]]) -> ModelSpec:
    """从表达式文本构造模型"""
    spec = ModelFile(name=name, d=d, n=n, x0=list(x0), r0=r0, params=dict(params),
                     drift=list(drift), diffusion=[list(row) for row in diffusion])
    return model_from_file(spec)


def model_from_file(spec: ModelFile) -> ModelSpec:
    names = tuple(spec.params)
    drift = tuple(parse_expr(text, spec.d, names) for text in spec.drift)
    diffusion = tuple(tuple(parse_expr(text, spec.d, names) for text in row) for row in spec.diffusion)
    return ModelSpec(
        name=spec.name,
        d=spec.d,
        n=spec.n,
        x0=tuple(float(v) for v in spec.x0),
        r0=float(spec.r0),
        params=dict(spec.params),
        drift=drift,
        diffusion=diffusion,
        source=spec,
    )


def load_model(path) -> ModelSpec:
    """读取模型 JSON 文件"""
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_file(ModelFile.model_validate_json(fh.read()))


def eval_drift(m: ModelSpec, x: Sequence[float]) -> np.ndarray:
    """单点漂移 b(x)，形状 (d,)"""
    return m.drift_at(np.asarray(x, dtype=float).reshape(1, m.d))[0]


def eval_diffusion(m: ModelSpec, x: Sequence[float]) -> np.ndarray:
    """单点扩散矩阵 σ(x)，形状 (d, n)"""
    return m.diffusion_at(np.asarray(x, dtype=float).reshape(1, m.d))[0]
