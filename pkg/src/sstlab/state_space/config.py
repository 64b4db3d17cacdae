"""Model config files (TOML).

A model is either a chain on Z (section ``[rates]``) or a branch graph
(section ``[graph]``), never both::

    [rates]
    family = "exponential"      # exponential | geometric | table
    base = 2.0                  # exponential: a_n = b_n = base**|n|
    # geometric: base, ratio    (b_n = base; a_n = base*ratio for n >= 1, base/ratio for n <= 0)
    # table: lo, births, deaths (finite support lo .. lo + len(births))
    window = [-20, 20]          # optional default window for finite checks

    [graph]
    kind = "star"               # star: one center vertex, one branch per family
    shift = 1                   # branch i reproduces states shift, shift+1, ... of its family
    depth = 10                  # optional default branch depth for finite checks
    branches = [{family = "exponential", base = 2.0},
                {family = "geometric", base = 1.0, ratio = 2.0}]

``kind = "line"`` with a single-element ``branches`` list gives Z viewed as
a center {0} with its two halves as branches.  Every error cites the line
of the offending key when it can be located.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError, ValidationError
from .graph import GraphModel, line_as_graph, star_graph
from .rates import BDRates, from_config

FAMILY_KEYS = {
    "exponential": {"family", "base"},
    "geometric": {"family", "base", "ratio"},
    "table": {"family", "lo", "births", "deaths"},
}
RATES_KEYS = {"window"}
GRAPH_KEYS = {"kind", "shift", "depth", "branches"}


@dataclass(frozen=True)
class ModelConfig:
    """A parsed model: ``rates`` on Z or ``graph``, plus its default window."""
    kind: str                           # "line" or "graph"
    rates: BDRates | None
    graph: GraphModel | None
    window: tuple[int, int] | int | None
    source: str | None = None

    @property
    def model(self):
        return self.rates if self.kind == "line" else self.graph


def _key_lines(text: str) -> dict[str, int]:
    """Map ``section.key`` (and ``section``) to the line where it first appears."""
    out: dict[str, int] = {}
    section = ""
    for k, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.\-]+)\s*\]$", line)
        if m:
            section = m.group(1)
            out.setdefault(section, k)
            continue
        m = re.match(r"^([A-Za-z0-9_\-]+)\s*=", line)
        if m:
            out.setdefault(f"{section}.{m.group(1)}" if section else m.group(1), k)
    return out


class _Ctx:
    def __init__(self, text: str, path):
        self.lines = _key_lines(text)
        self.path = path

    def fail(self, msg: str, key: str | None = None):
        # keys inside inline tables are not on lines of their own: cite the
        # nearest enclosing key instead
        while key and key not in self.lines:
            key = key.rpartition(".")[0]
        raise ConfigError(msg, line=self.lines.get(key) if key else None, path=self.path)


def _int(ctx: _Ctx, v, key: str, *, positive: bool = False) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        ctx.fail(f"{key} must be an integer, got {v!r}", key)
    if positive and v <= 0:
        ctx.fail(f"{key} must be positive, got {v}", key)
    return v


def _family(ctx: _Ctx, d, key: str) -> BDRates:
    if not isinstance(d, dict):
        ctx.fail(f"{key} must be a table, got {d!r}", key)
    fam = d.get("family")
    if fam not in FAMILY_KEYS:
        ctx.fail(f"{key}: unknown rate family {fam!r} (expected one of "
                 f"{', '.join(sorted(FAMILY_KEYS))})", f"{key}.family" if "family" in d else key)
    extra = set(d) - FAMILY_KEYS[fam] - (RATES_KEYS if key == "rates" else set())
    if extra:
        k = sorted(extra)[0]
        ctx.fail(f"{key}: unknown key {k!r} for family {fam!r}", f"{key}.{k}")
    for k in ("base", "ratio"):
        if k in d and (isinstance(d[k], bool) or not isinstance(d[k], (int, float)) or not d[k] > 0):
            ctx.fail(f"{key}.{k} must be a positive number, got {d[k]!r}", f"{key}.{k}")
    if fam == "table":
        for k in ("lo", "births", "deaths"):
            if k not in d:
                ctx.fail(f"{key}: table family needs {k!r}", key)
        _int(ctx, d["lo"], f"{key}.lo")
    try:
        return from_config({k: v for k, v in d.items() if k != "window"})
    except (ValidationError, ValueError, TypeError) as e:
        ctx.fail(f"{key}: {e}", f"{key}.family")


def parse_model(text: str, path: str | None = None) -> ModelConfig:
    """Parse and validate a model config; ConfigError (with line) on any problem."""
    ctx = _Ctx(text, path)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(str(e), line=getattr(e, "lineno", None), path=path) from None
    unknown = set(doc) - {"rates", "graph"}
    if unknown:
        k = sorted(unknown)[0]
        ctx.fail(f"unknown section or key {k!r}", k)
    if ("rates" in doc) == ("graph" in doc):
        ctx.fail("config needs exactly one of [rates] or [graph]")
    if "rates" in doc:
        d = doc["rates"]
        rates = _family(ctx, d, "rates")
        window = None
        if "window" in d:
            w = d["window"]
            if not (isinstance(w, list) and len(w) == 2):
                ctx.fail("rates.window must be [lo, hi]", "rates.window")
            lo, hi = (_int(ctx, v, "rates.window") for v in w)
            if lo >= hi:
                ctx.fail("rates.window must have lo < hi", "rates.window")
            window = (lo, hi)
        return ModelConfig("line", rates, None, window, path)
    d = doc["graph"]
    if not isinstance(d, dict):
        ctx.fail("[graph] must be a table", "graph")
    extra = set(d) - GRAPH_KEYS
    if extra:
        k = sorted(extra)[0]
        ctx.fail(f"graph: unknown key {k!r}", f"graph.{k}")
    kind = d.get("kind", "star")
    if kind not in ("star", "line"):
        ctx.fail(f"graph.kind must be 'star' or 'line', got {kind!r}", "graph.kind")
    br = d.get("branches")
    if not isinstance(br, list) or not br:
        ctx.fail("graph.branches must be a non-empty list of rate tables", "graph.branches"
                 if "branches" in d else "graph")
    fams = [_family(ctx, b, "graph.branches") for b in br]
    shift = _int(ctx, d.get("shift", 1), "graph.shift", positive=True)
    depth = _int(ctx, d["depth"], "graph.depth", positive=True) if "depth" in d else None
    if kind == "line":
        if len(fams) != 1:
            ctx.fail("graph.kind = 'line' takes exactly one family", "graph.branches")
        graph = line_as_graph(fams[0])
    else:
        graph = star_graph(fams, shift)
    return ModelConfig("graph", None, graph, depth, path)


def load_model(path) -> ModelConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read model config: {e.strerror}", path=str(p)) from None
    return parse_model(text, str(p))
