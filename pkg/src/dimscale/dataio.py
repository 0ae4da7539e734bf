"""Survey CSV ingestion: load, dichotomise, aggregate, impute.

Answers equal to "no" (any case) or "0" become 0, blank or "NA" cells stay
missing until imputation, and every other answer becomes 1. Missing
responses are finally read as a negative answer.

Rule files are plain text, one rule per line, ``#`` starts a comment::

    radio = yes, some days -> 1
    radio = "no, never" -> 0
    internet_any = OR(email, chat, news)
"""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ResponseMatrix, ValidationError

NA = "NA"
_RECODE = re.compile(r"^(?P<item>[^=]+?)\s*=\s*(?P<value>.*?)\s*->\s*(?P<code>[01])\s*$")
_AGGREGATE = re.compile(r"^(?P<item>[^=]+?)\s*=\s*OR\s*\((?P<cols>.*)\)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class RawTable:
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        dupes = sorted(k for k, v in Counter(self.header).items() if v > 1)
        if dupes:
            raise ValidationError(f"duplicate item ids in header: {', '.join(dupes)}")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.header):
                raise ValidationError(f"row {i + 1} has {len(row)} cells, header has {len(self.header)}")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.header)

    def column(self, item: str) -> list[str]:
        j = self.header.index(item)
        return [row[j] for row in self.rows]


@dataclass(frozen=True)
class RecodeRule:
    """Explicit per-item answer codes; ``default`` enables the no/else rule."""

    mappings: dict[str, dict[str, int]] = field(default_factory=dict)
    default: bool = True

    def code(self, item: str, value: str) -> str:
        v = value.strip()
        explicit = self.mappings.get(item, {})
        if v.casefold() in explicit:
            return str(explicit[v.casefold()])
        if v == "" or v.upper() == NA:
            return NA
        if self.default:
            return "0" if v.casefold() in ("no", "0") else "1"
        raise ValidationError(f"item {item!r}: no recode rule for value {value!r}")


def load_csv(path, delimiter: str = ",", encoding: str = "utf-8") -> RawTable:
    """Read a header-first CSV, keeping cells verbatim."""
    with open(path, newline="", encoding=encoding) as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        lines = [(reader.line_num, row) for row in reader if row]
    if not lines:
        raise ValidationError(f"{path}: empty file")
    header = tuple(c.strip() for c in lines[0][1])
    dupes = sorted(k for k, v in Counter(header).items() if v > 1)
    if dupes:
        raise ValidationError(f"{path}: duplicate item ids in header: {', '.join(dupes)}")
    rows = []
    for line_no, row in lines[1:]:
        if len(row) != len(header):
            raise ValidationError(f"{path}: line {line_no} has {len(row)} cells, expected {len(header)}")
        rows.append(tuple(row))
    return RawTable(header, tuple(rows))


def dichotomize(table: RawTable, rules: RecodeRule | None = None) -> RawTable:
    """Map every cell to "0", "1" or "NA"."""
    rules = rules or RecodeRule()
    rows = tuple(
        tuple(rules.code(item, cell) for item, cell in zip(table.header, row)) for row in table.rows
    )
    return RawTable(table.header, rows)


def aggregate(table: RawTable, groups: dict[str, list[str]]) -> RawTable:
    """Replace each group of binary columns by their logical OR.

    A row is 1 if any source is 1, missing if none is 1 but some are
    missing, else 0. The new column takes the place of its first source.
    """
    if not groups:
        return table
    index = {item: j for j, item in enumerate(table.header)}
    used: dict[str, str] = {}
    for name, cols in groups.items():
        for col in cols:
            if col not in index:
                raise ValidationError(f"aggregate {name!r}: unknown column {col!r}")
            if col in used:
                raise ValidationError(f"column {col!r} used by both {used[col]!r} and {name!r}")
            used[col] = name
    first = {name: min(index[c] for c in cols) for name, cols in groups.items()}
    layout: list[tuple[str, list[int]]] = []
    for j, item in enumerate(table.header):
        if item not in used:
            layout.append((item, [j]))
        elif first[used[item]] == j:
            layout.append((used[item], [index[c] for c in groups[used[item]]]))

    def combine(cells: list[str]) -> str:
        if "1" in cells:
            return "1"
        return NA if NA in cells else "0"

    rows = tuple(tuple(combine([row[j] for j in cols]) for _, cols in layout) for row in table.rows)
    return RawTable(tuple(name for name, _ in layout), rows)


def impute_missing_as_zero(table: RawTable) -> ResponseMatrix:
    """Read missing answers as 0 and record per-item missingness."""
    if not table.rows:
        raise ValidationError("no respondents")
    cells = np.array(table.rows, dtype=object).reshape(table.shape)
    bad = ~np.isin(cells, ("0", "1", NA))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValidationError(f"row {i + 1}, item {table.header[j]!r}: {cells[i, j]!r} is not 0/1/NA")
    missing = cells == NA
    data = (cells == "1").astype(np.uint8)
    counts = {item: int(n) for item, n in zip(table.header, missing.sum(axis=0))}
    warnings = []
    for j, item in enumerate(table.header):
        if missing[:, j].all():
            warnings.append(f"item {item!r} is entirely missing")
        if data[:, j].min() == data[:, j].max():
            warnings.append(f"item {item!r} is degenerate (all {int(data[0, j])})")
    return ResponseMatrix(data, table.header, counts, tuple(warnings))


def degenerate_items(matrix: ResponseMatrix) -> list[int]:
    col_min, col_max = matrix.data.min(axis=0), matrix.data.max(axis=0)
    return [j for j in range(matrix.n_items) if col_min[j] == col_max[j]]


def drop_items(matrix: ResponseMatrix, items: list[int]) -> ResponseMatrix:
    keep = [j for j in range(matrix.n_items) if j not in set(items)]
    ids = tuple(matrix.item_ids[j] for j in keep)
    counts = {i: matrix.missing_counts[i] for i in ids if i in matrix.missing_counts}
    dropped = tuple(f"dropped item {matrix.item_ids[j]!r}" for j in items)
    return ResponseMatrix(matrix.data[:, keep], ids, counts, matrix.warnings + dropped)


def parse_rules(text: str, source: str = "<rules>") -> tuple[RecodeRule, dict[str, list[str]]]:
    """Parse recode and OR-aggregation rules; ``!strict`` disables the default rule."""
    mappings: dict[str, dict[str, int]] = {}
    groups: dict[str, list[str]] = {}
    default = True
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "!strict":
            default = False
            continue
        m = _AGGREGATE.match(line)
        if m:
            cols = [c.strip() for c in m["cols"].split(",") if c.strip()]
            if not cols:
                raise ValidationError(f"{source}:{line_no}: OR() needs at least one column")
            groups[m["item"].strip()] = cols
            continue
        m = _RECODE.match(line)
        if m:
            value = m["value"]
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            mappings.setdefault(m["item"].strip(), {})[value.strip().casefold()] = int(m["code"])
            continue
        raise ValidationError(f"{source}:{line_no}: cannot parse rule {raw.strip()!r}")
    return RecodeRule(mappings, default), groups


def load_rules(path) -> tuple[RecodeRule, dict[str, list[str]]]:
    return parse_rules(Path(path).read_text(encoding="utf-8"), str(path))


def prepare(
    path,
    delimiter: str = ",",
    rules: RecodeRule | None = None,
    groups: dict[str, list[str]] | None = None,
    drop_degenerate: bool = False,
) -> ResponseMatrix:
    """load -> dichotomise -> aggregate -> impute (-> drop degenerate items)."""
    table = dichotomize(load_csv(path, delimiter), rules)
    matrix = impute_missing_as_zero(aggregate(table, groups or {}))
    if drop_degenerate:
        bad = degenerate_items(matrix)
        if bad:
            matrix = drop_items(matrix, bad)
    return matrix


def provenance(matrix: ResponseMatrix) -> dict:
    return {
        "n_respondents": matrix.n_respondents,
        "n_items": matrix.n_items,
        "item_ids": list(matrix.item_ids),
        "missing_counts": dict(matrix.missing_counts),
        "warnings": list(matrix.warnings),
    }


def write_provenance(matrix: ResponseMatrix, path) -> None:
    Path(path).write_text(json.dumps(provenance(matrix), indent=2) + "\n")


def write_csv(matrix: ResponseMatrix, path, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(matrix.item_ids)
        writer.writerows(matrix.data.tolist())
