"""
Reader for model-definition files.

    # comment
    name: solv
    generators: e1 e2 e3 e4 e5 e6
    constant: lam = log((3 + sqrt(5)) / 2)
    d e1: -lam e1 e5
    omega: +1 e1 e2, +1 e3 e4, +1 e5 e6
    phi: +1 e1 e3 e5, -1 e1 e4 e6
    convention: standard
"""

import ast
import operator
import re
from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path

import numpy as np

from app.errors import GeometryError, ModelFileError
from app.forms6 import DIM, KForm
from app.liegeom import BUILTIN_MODELS, LieModel

logger = getLogger(__name__)

MODEL_DIR = Path(__file__).resolve().parent.parent / "models"

_FUNCTIONS = {"sqrt": np.sqrt, "log": np.log, "exp": np.exp}
_BINARY = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

Terms = dict[tuple[int, ...], float]


def evaluate(expression: str, constants: dict[str, float]) -> float:
    """Arithmetic on numbers and named constants with sqrt, log, exp and pi; nothing else is evaluated."""

    def visit(node: ast.AST) -> float:
        match node:
            case ast.Expression(body=body):
                return visit(body)
            case ast.Constant(value=value) if isinstance(value, (int, float)) and not isinstance(value, bool):
                return float(value)
            case ast.Name(id="pi"):
                return float(np.pi)
            case ast.Name(id=name) if name in constants:
                return constants[name]
            case ast.Name(id=name):
                raise ValueError(f"unknown constant {name!r}")
            case ast.BinOp(left=left, op=op, right=right) if type(op) in _BINARY:
                return float(_BINARY[type(op)](visit(left), visit(right)))
            case ast.UnaryOp(op=op, operand=operand) if type(op) in _UNARY:
                return float(_UNARY[type(op)](visit(operand)))
            case ast.Call(func=ast.Name(id=fn), args=[arg], keywords=[]) if fn in _FUNCTIONS:
                return float(_FUNCTIONS[fn](visit(arg)))
            case _:
                raise ValueError(f"unsupported expression {ast.dump(node)}")

    try:
        tree = ast.parse(expression.strip(), mode="eval")
    except SyntaxError as e:
        raise ValueError(f"cannot parse {expression!r}") from e
    value = visit(tree)
    if not np.isfinite(value):
        raise ValueError(f"{expression!r} is not finite")
    return value


@dataclass
class ModelDefinition:
    name: str
    generators: tuple[str, ...]
    constants: dict[str, float] = field(default_factory=dict)
    constant_text: dict[str, str] = field(default_factory=dict)
    differentials: dict[int, Terms] = field(default_factory=dict)
    omega: Terms = field(default_factory=dict)
    phi: Terms | None = None
    convention: str = "standard"
    source: str = "<model>"

    def to_model(self) -> LieModel:
        differentials = {k: KForm.from_terms(terms, degree=2) for k, terms in self.differentials.items()}
        base_phi = KForm.from_terms(self.phi, degree=3) if self.phi else None
        return LieModel.from_differentials(
            self.name,
            differentials,
            KForm.from_terms(self.omega, degree=2),
            flipped=self.convention == "flipped",
            base_phi=base_phi,
            constants=dict(self.constants),
        )

    def _terms_text(self, terms: Terms) -> str:
        return ", ".join(
            f"{value:+.17g} " + " ".join(self.generators[i - 1] for i in idx) for idx, value in sorted(terms.items())
        )

    def normalized(self) -> str:
        """Canonical echo: constants resolved, terms sorted, full precision."""
        lines = [f"name: {self.name}", f"generators: {' '.join(self.generators)}"]
        lines.extend(f"constant: {k} = {v:.17g}" for k, v in self.constants.items())
        for k in sorted(self.differentials):
            if self.differentials[k]:
                lines.append(f"d {self.generators[k]}: {self._terms_text(self.differentials[k])}")
        lines.append(f"omega: {self._terms_text(self.omega)}")
        if self.phi:
            lines.append(f"phi: {self._terms_text(self.phi)}")
        lines.append(f"convention: {self.convention}")
        return "\n".join(lines) + "\n"


class _Reader:
    def __init__(self, source: str):
        self.source = source
        self.name: str | None = None
        self.generators: tuple[str, ...] | None = None
        self.constants: dict[str, float] = {}
        self.constant_text: dict[str, str] = {}
        self.differentials: dict[int, Terms] = {}
        self.omega: Terms | None = None
        self.phi: Terms | None = None
        self.convention = "standard"

    def fail(self, line: int, message: str) -> ModelFileError:
        return ModelFileError(message, line, self.source)

    def generator_index(self, token: str, line: int) -> int:
        if self.generators is None:
            raise self.fail(line, "generators must be declared before they are used")
        if token not in self.generators:
            raise self.fail(line, f"unknown generator {token!r}")
        return self.generators.index(token) + 1

    def coefficient(self, token: str, line: int) -> float:
        text = token[1:] if token[0] in "+-" else token
        sign = -1.0 if token.startswith("-") else 1.0
        if not text:
            raise self.fail(line, f"missing coefficient in {token!r}")
        parts = text.split("*")
        if len(parts) > 2 or any(not p for p in parts):
            raise self.fail(line, f"coefficient must be a number, a name or number*name, got {token!r}")
        value = sign
        for part in parts:
            if _NAME.match(part):
                if part not in self.constants:
                    raise self.fail(line, f"unknown constant {part!r}")
                value *= self.constants[part]
            else:
                try:
                    value *= float(part)
                except ValueError:
                    raise self.fail(line, f"bad coefficient {token!r}") from None
        return value

    def terms(self, text: str, degree: int, line: int) -> Terms:
        out: Terms = {}
        for chunk in text.split(","):
            tokens = chunk.split()
            if not tokens:
                raise self.fail(line, "empty term")
            if len(tokens) != degree + 1:
                raise self.fail(line, f"term {chunk.strip()!r} needs a coefficient and {degree} generators")
            idx = tuple(self.generator_index(t, line) for t in tokens[1:])
            if len(set(idx)) < degree:
                raise self.fail(line, f"repeated generator in {chunk.strip()!r}")
            if idx in out:
                raise self.fail(line, f"duplicate term {chunk.strip()!r}")
            out[idx] = self.coefficient(tokens[0], line)
        return out

    def feed(self, raw: str, line: int) -> None:
        text = raw.split("#", 1)[0].strip()
        if not text:
            return
        if ":" not in text:
            raise self.fail(line, f"expected 'key: value', got {text!r}")
        key, value = (part.strip() for part in text.split(":", 1))
        match key.split():
            case ["name"]:
                if not value:
                    raise self.fail(line, "empty model name")
                self.name = value
            case ["generators"]:
                names = tuple(value.split())
                if len(names) != DIM or len(set(names)) != DIM or not all(_NAME.match(n) for n in names):
                    raise self.fail(line, f"need {DIM} distinct generator names")
                self.generators = names
            case ["constant"]:
                name, sep, expression = value.partition("=")
                name = name.strip()
                if not sep or not _NAME.match(name) or name == "pi":
                    raise self.fail(line, f"expected 'constant: name = expression', got {value!r}")
                if name in self.constants:
                    raise self.fail(line, f"constant {name!r} defined twice")
                try:
                    self.constants[name] = evaluate(expression, self.constants)
                except ValueError as e:
                    raise self.fail(line, str(e)) from e
                self.constant_text[name] = expression.strip()
            case ["d", generator]:
                k = self.generator_index(generator, line) - 1
                if k in self.differentials:
                    raise self.fail(line, f"d {generator} given twice")
                self.differentials[k] = self.terms(value, 2, line)
            case ["omega"]:
                self.omega = self.terms(value, 2, line)
            case ["phi"]:
                self.phi = self.terms(value, 3, line)
            case ["convention"]:
                if value not in ("standard", "flipped"):
                    raise self.fail(line, f"convention must be 'standard' or 'flipped', got {value!r}")
                self.convention = value
            case _:
                raise self.fail(line, f"unknown key {key!r}")

    def finish(self, last_line: int) -> ModelDefinition:
        if self.name is None:
            raise self.fail(last_line, "missing 'name'")
        if self.generators is None:
            raise self.fail(last_line, "missing 'generators'")
        if self.omega is None:
            raise self.fail(last_line, "missing 'omega'")
        return ModelDefinition(
            name=self.name,
            generators=self.generators,
            constants=self.constants,
            constant_text=self.constant_text,
            differentials=self.differentials,
            omega=self.omega,
            phi=self.phi,
            convention=self.convention,
            source=self.source,
        )


def parse_model(text: str, source: str = "<model>") -> ModelDefinition:
    reader = _Reader(source)
    lines = text.splitlines()
    for number, raw in enumerate(lines, start=1):
        reader.feed(raw, number)
    return reader.finish(max(len(lines), 1))


def load_model(path: Path) -> LieModel:
    """Parse and validate a model file; Jacobi or dw failures are reported against the file."""
    definition = parse_model(path.read_text(), source=str(path))
    try:
        model = definition.to_model()
    except GeometryError as e:
        logger.error(f"Failed to build model from {path}: {e}")
        raise ModelFileError(str(e), 0, str(path)) from e
    logger.debug(f"Loaded model {model.name} from {path}")
    return model


def resolve_model(name_or_path: str) -> LieModel:
    """Built-in name, shipped model file stem, or a path to a model file."""
    if name_or_path in BUILTIN_MODELS:
        return BUILTIN_MODELS[name_or_path]
    shipped = MODEL_DIR / f"{name_or_path}.model"
    if shipped.is_file():
        return load_model(shipped)
    path = Path(name_or_path)
    if not path.is_file():
        raise ModelFileError(f"no built-in model or file named {name_or_path!r}", 0, name_or_path)
    return load_model(path)
