"""Problem files: line-oriented key/value format with sections.

Sections: [declare] (var/param declarations), [sde] (drift, diffusion),
[ansatz] (tau/phi/phitilde dictionaries), [target.sde], [map.ansatz]
(mu1/mu2 dictionaries) and [numeric] (window, seeds, tolerances, sizes).
`t` and `x` are always declared as variables; everything else must be
declared.  `#` starts a comment.

Ansatz dictionaries are sums of terms `poly(v1,...,vk; d)` (all monomials
of total degree <= d in the listed variables), optionally multiplied by an
exponential rate `exp(EXPR)*poly(...)`; a bare expression is also accepted
as a single dictionary entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

from .ansatz import Ansatz
from .determining import Sde
from .expr import Expr, ExprError, mul, parse, simplify, var

BASE_VARIABLES = ("t", "x")


class ProblemError(ValueError):
    pass


@dataclass
class ProblemFile:
    variables: tuple = BASE_VARIABLES
    params: dict = field(default_factory=dict)
    sde: Sde | None = None
    ansatz: Ansatz = Ansatz()
    target: Sde | None = None
    map_mu1: tuple = ()
    map_mu2: tuple = ()
    numeric: dict = field(default_factory=dict)
    path: str = "<memory>"

    def require_sde(self) -> Sde:
        if self.sde is None:
            raise ProblemError(f"{self.path}: missing [sde] section")
        return self.sde

    def window(self):
        return tuple(self.numeric.get("window", (0.1, 2.0, 0.5, 2.0)))

    def seed(self) -> int:
        return int(self.numeric.get("seed", 2026))


def _split_top_level(text: str, sep: str) -> list:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def _poly_entries(spec: str, variables, parameters) -> list:
    """Expand `poly(v1,...,vk; d)` into monomials of total degree <= d."""
    inner = spec[len("poly("):-1]
    if ";" not in inner:
        raise ProblemError(f"poly spec '{spec}' needs a ';degree' part")
    vars_part, deg_part = inner.rsplit(";", 1)
    names = [v.strip() for v in vars_part.split(",") if v.strip()]
    try:
        degree = int(deg_part)
    except ValueError:
        raise ProblemError(f"poly degree '{deg_part.strip()}' is not an integer")
    if degree < 0:
        raise ProblemError("poly degree must be >= 0")
    for nm in names:
        if nm not in variables:
            raise ProblemError(f"poly variable '{nm}' is not a declared variable")
    out = []
    for d in range(degree + 1):
        if d == 0:
            out.append(parse("1"))
            continue
        for combo in combinations_with_replacement(names, d):
            out.append(simplify(mul(*[var(nm) for nm in combo])))
    return out


def parse_ansatz_spec(text: str, variables, parameters) -> tuple:
    """Parse an ansatz dictionary spec into a tuple of distinct entries."""
    entries = []
    for raw in _split_top_level(text, "+"):
        term = raw.strip()
        if not term:
            continue
        if term.startswith("poly(") and term.endswith(")"):
            new = _poly_entries(term, variables, parameters)
        elif "*poly(" in term and term.endswith(")"):
            head, tail = term.rsplit("*poly(", 1)
            prefix = parse(head.strip(), variables, parameters)
            monomials = _poly_entries("poly(" + tail, variables, parameters)
            new = [simplify(mul(prefix, m)) for m in monomials]
        else:
            new = [simplify(parse(term, variables, parameters))]
        for e in new:
            if e not in entries:
                entries.append(e)
    return tuple(entries)


def _parse_value(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ProblemError(f"expected a number, got '{text}'")


_KNOWN_SECTIONS = ("declare", "sde", "ansatz", "target.sde", "map.ansatz", "numeric")
_NUMERIC_KEYS = ("window", "seed", "tol", "points", "paths", "h", "steps",
                 "x0", "eps", "pin")


def parse_problem_text(text: str, path: str = "<memory>") -> ProblemFile:
    variables = list(BASE_VARIABLES)
    params: dict = {}
    sections: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _KNOWN_SECTIONS:
                raise ProblemError(f"{where}: unknown section [{section}]")
            sections.setdefault(section, [])
            continue
        if section is None:
            raise ProblemError(f"{where}: content outside any section")
        if section == "declare":
            parts = line.split()
            if parts[0] == "var" and len(parts) == 2:
                if parts[1] not in variables:
                    variables.append(parts[1])
            elif parts[0] == "param":
                rest = line[len("param"):].strip()
                if "=" in rest:
                    nm, val = rest.split("=", 1)
                    params[nm.strip()] = _parse_value(val.strip())
                else:
                    params[rest] = None
            else:
                raise ProblemError(
                    f"{where}: expected 'var NAME' or 'param NAME [= value]'")
            continue
        if "=" not in line:
            raise ProblemError(f"{where}: expected 'key = value'")
        key, value = line.split("=", 1)
        sections[section].append((where, key.strip(), value.strip()))

    pf = ProblemFile(variables=tuple(variables), params=params, path=path)

    def expr_of(where, text_):
        try:
            return parse(text_, pf.variables, tuple(params))
        except ExprError as err:
            raise ProblemError(f"{where}: {err}") from None

    def sde_of(name):
        drift = diffusion = None
        for where, key, value in sections.get(name, []):
            if key == "drift":
                if drift is not None:
                    raise ProblemError(f"{where}: duplicate drift")
                drift = expr_of(where, value)
            elif key == "diffusion":
                if diffusion is not None:
                    raise ProblemError(f"{where}: duplicate diffusion")
                diffusion = expr_of(where, value)
            else:
                raise ProblemError(f"{where}: unknown [{name}] key '{key}'")
        if drift is None or diffusion is None:
            raise ProblemError(
                f"{path}: [{name}] needs exactly one drift and one diffusion")
        return Sde(drift, diffusion, dict(params))

    if "sde" in sections:
        pf.sde = sde_of("sde")
    if "target.sde" in sections:
        pf.target = sde_of("target.sde")

    slots = {"tau": (), "phi": (), "phitilde": ()}
    for where, key, value in sections.get("ansatz", []):
        if key not in slots:
            raise ProblemError(f"{where}: unknown ansatz slot '{key}'")
        try:
            slots[key] = parse_ansatz_spec(value, pf.variables, tuple(params))
        except ExprError as err:
            raise ProblemError(f"{where}: {err}") from None
    pf.ansatz = Ansatz(**slots)

    mu = {"mu1": (), "mu2": ()}
    for where, key, value in sections.get("map.ansatz", []):
        if key not in mu:
            raise ProblemError(f"{where}: unknown map.ansatz slot '{key}'")
        try:
            mu[key] = parse_ansatz_spec(value, pf.variables, tuple(params))
        except ExprError as err:
            raise ProblemError(f"{where}: {err}") from None
    pf.map_mu1, pf.map_mu2 = mu["mu1"], mu["mu2"]

    for where, key, value in sections.get("numeric", []):
        if key not in _NUMERIC_KEYS:
            raise ProblemError(f"{where}: unknown numeric key '{key}'")
        if key in ("window", "pin"):
            vals = tuple(_parse_value(v) for v in value.split(","))
            if len(vals) != 4:
                raise ProblemError(f"{where}: {key} needs 4 comma-separated values")
            pf.numeric[key] = vals
        elif key in ("seed", "points", "paths", "steps"):
            pf.numeric[key] = int(_parse_value(value))
        else:
            pf.numeric[key] = _parse_value(value)
    return pf


def load_problem(path: str) -> ProblemFile:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ProblemError(f"cannot read problem file {path}: {err}")
    return parse_problem_text(text, path)


def parse_field_file(path: str, variables, parameters) -> dict:
    """Bare key=value file for a generator (tau/phi/phitilde) or a map
    (mu1/mu2); returns parsed expressions keyed by slot name."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise ProblemError(f"cannot read file {path}: {err}")
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ProblemError(f"{path}:{lineno}: expected 'key = expression'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in ("tau", "phi", "phitilde", "mu1", "mu2"):
            raise ProblemError(f"{path}:{lineno}: unknown key '{key}'")
        try:
            out[key] = parse(value.strip(), variables, parameters)
        except ExprError as err:
            raise ProblemError(f"{path}:{lineno}: {err}") from None
    return out
