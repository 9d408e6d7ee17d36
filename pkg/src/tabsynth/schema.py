"""Table schemas and delimited-text I/O.

A table is described column by column: each column is either categorical
(a fixed vocabulary of string labels) or continuous (a float range,
optionally integer valued).  Schemas are either inferred from the data or
supplied as JSON; once fitted they are frozen and travel with every
encoded matrix, model bundle and report so that decoding is unambiguous.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import ParseError, SchemaError

# Numeric columns with at most this many distinct values are treated as
# categorical during inference (they are usually codes, not measurements).
MAX_NUMERIC_CATEGORIES = 20


class ColumnKind(str, Enum):
    CATEGORICAL = "categorical"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class ColumnSchema:
    """Description of a single column, frozen at fit time."""

    name: str
    kind: ColumnKind
    vocabulary: tuple[str, ...] | None = None
    minimum: float | None = None
    maximum: float | None = None
    integer_valued: bool = False

    def __post_init__(self) -> None:
        if self.kind is ColumnKind.CATEGORICAL:
            if not self.vocabulary:
                raise SchemaError(f"categorical column {self.name!r} needs a non-empty vocabulary")
            if len(set(self.vocabulary)) != len(self.vocabulary):
                raise SchemaError(f"duplicate labels in vocabulary of column {self.name!r}")
            if self.minimum is not None or self.maximum is not None:
                raise SchemaError(f"categorical column {self.name!r} must not carry a numeric range")
        else:
            if self.vocabulary is not None:
                raise SchemaError(f"continuous column {self.name!r} must not carry a vocabulary")
            if self.minimum is None or self.maximum is None:
                raise SchemaError(f"continuous column {self.name!r} needs both min and max")
            if not (math.isfinite(self.minimum) and math.isfinite(self.maximum)):
                raise SchemaError(f"non-finite range on column {self.name!r}")
            if self.minimum > self.maximum:
                raise SchemaError(f"min > max on column {self.name!r}")

    @property
    def width(self) -> int:
        """Number of encoded features this column occupies."""
        if self.kind is ColumnKind.CATEGORICAL:
            return len(self.vocabulary)
        return 1


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[ColumnSchema, ...]

    def __post_init__(self) -> None:
        if not self.columns:
            raise SchemaError("a table needs at least one column")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def encoded_width(self) -> int:
        return sum(c.width for c in self.columns)

    def column(self, name: str) -> ColumnSchema:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    def compatible_with(self, other: "TableSchema") -> bool:
        """Structural equality: same names, kinds, vocabularies and ranges."""
        return self.columns == other.columns

    def to_json_dict(self) -> dict:
        cols = []
        for c in self.columns:
            entry: dict = {"name": c.name, "kind": c.kind.value}
            if c.kind is ColumnKind.CATEGORICAL:
                entry["vocabulary"] = list(c.vocabulary)
            else:
                entry["min"] = c.minimum
                entry["max"] = c.maximum
                entry["integer_valued"] = c.integer_valued
            cols.append(entry)
        return {"columns": cols}

    @staticmethod
    def from_json_dict(payload: dict) -> "TableSchema":
        try:
            raw_cols = payload["columns"]
        except (TypeError, KeyError) as exc:
            raise ParseError("schema JSON must contain a 'columns' list") from exc
        if not isinstance(raw_cols, list):
            raise ParseError("schema JSON 'columns' must be a list")
        cols = []
        for i, entry in enumerate(raw_cols):
            try:
                name = entry["name"]
                kind = ColumnKind(entry["kind"])
            except (TypeError, KeyError, ValueError) as exc:
                raise ParseError(f"schema JSON column {i} is malformed") from exc
            if kind is ColumnKind.CATEGORICAL:
                vocab = entry.get("vocabulary")
                if not isinstance(vocab, list):
                    raise ParseError(f"schema JSON column {name!r} needs a vocabulary list")
                cols.append(ColumnSchema(name, kind, vocabulary=tuple(str(v) for v in vocab)))
            else:
                try:
                    lo = float(entry["min"])
                    hi = float(entry["max"])
                except (TypeError, KeyError, ValueError) as exc:
                    raise ParseError(f"schema JSON column {name!r} needs numeric min/max") from exc
                cols.append(
                    ColumnSchema(
                        name,
                        kind,
                        minimum=lo,
                        maximum=hi,
                        integer_valued=bool(entry.get("integer_valued", False)),
                    )
                )
        return TableSchema(tuple(cols))


@dataclass
class RawTable:
    """A parsed table: string cells for categorical columns, floats otherwise."""

    schema: TableSchema
    rows: list[tuple] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column_values(self, name: str) -> list:
        idx = self.schema.names.index(name)
        return [row[idx] for row in self.rows]

    def validate(self) -> None:
        """Check every cell against the schema; raises SchemaError on violation."""
        if not self.rows:
            raise SchemaError("table has no rows")
        for r, row in enumerate(self.rows):
            if len(row) != len(self.schema.columns):
                raise SchemaError(f"row {r} has {len(row)} cells, expected {len(self.schema.columns)}")
            for col, cell in zip(self.schema.columns, row):
                if col.kind is ColumnKind.CATEGORICAL:
                    if cell not in col.vocabulary:
                        raise SchemaError(f"row {r}, column {col.name!r}: label {cell!r} not in vocabulary")
                else:
                    if not isinstance(cell, float) or not math.isfinite(cell):
                        raise SchemaError(f"row {r}, column {col.name!r}: non-finite value {cell!r}")


def _parse_csv_text(text: str) -> tuple[list[str], list[list[str]]]:
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        rows = list(reader)
    except csv.Error as exc:
        raise ParseError(f"malformed CSV: {exc}") from exc
    # A trailing newline yields no extra row; fully blank lines inside are junk.
    rows = [r for r in rows if r != []]
    if not rows:
        raise ParseError("empty input: no header row")
    header, body = rows[0], rows[1:]
    if any(not h for h in header):
        raise ParseError("blank column name in header")
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header")
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ParseError(f"row {i} has {len(row)} cells, expected {len(header)}")
    return header, body


def _try_float(cell: str) -> float | None:
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def infer_schema(
    text: str,
    overrides: dict[str, ColumnKind] | None = None,
    max_numeric_categories: int = MAX_NUMERIC_CATEGORIES,
) -> TableSchema:
    """Infer a schema from delimited text (header plus at least one row).

    Columns whose cells all parse as finite numbers and take more than
    ``max_numeric_categories`` distinct values become continuous; everything
    else becomes categorical with the vocabulary in order of first
    appearance.  ``overrides`` forces the kind of individual columns.
    """
    overrides = dict(overrides or {})
    header, body = _parse_csv_text(text)
    if not body:
        raise ParseError("cannot infer a schema without data rows")
    unknown = set(overrides) - set(header)
    if unknown:
        raise SchemaError(f"override for unknown column(s): {sorted(unknown)}")

    columns = []
    for j, name in enumerate(header):
        cells = [row[j] for row in body]
        numbers = [_try_float(c) for c in cells]
        all_numeric = all(v is not None for v in numbers)
        forced = overrides.get(name)

        if forced is ColumnKind.CONTINUOUS and not all_numeric:
            bad = next(i for i, v in enumerate(numbers) if v is None)
            raise ParseError(f"row {bad}, column {name!r}: {cells[bad]!r} is not a finite number")

        numeric = all_numeric and (forced is not ColumnKind.CATEGORICAL)
        if numeric and forced is not ColumnKind.CONTINUOUS:
            numeric = len(set(numbers)) > max_numeric_categories

        if numeric:
            columns.append(
                ColumnSchema(
                    name,
                    ColumnKind.CONTINUOUS,
                    minimum=min(numbers),
                    maximum=max(numbers),
                    integer_valued=all(v == int(v) for v in numbers),
                )
            )
        else:
            vocab: list[str] = []
            seen = set()
            for c in cells:
                if c not in seen:
                    seen.add(c)
                    vocab.append(c)
            columns.append(ColumnSchema(name, ColumnKind.CATEGORICAL, vocabulary=tuple(vocab)))
    return TableSchema(tuple(columns))


def parse_table(text: str, schema: TableSchema | None = None) -> RawTable:
    """Parse delimited text into a typed table, inferring a schema if needed."""
    if schema is None:
        schema = infer_schema(text)
    header, body = _parse_csv_text(text)
    if list(header) != list(schema.names):
        raise SchemaError(f"header {header} does not match schema columns {list(schema.names)}")
    if not body:
        raise SchemaError("table has no rows")

    rows = []
    for r, raw in enumerate(body):
        row = []
        for col, cell in zip(schema.columns, raw):
            if col.kind is ColumnKind.CATEGORICAL:
                if cell not in col.vocabulary:
                    raise SchemaError(f"row {r}, column {col.name!r}: label {cell!r} not in vocabulary")
                row.append(cell)
            else:
                value = _try_float(cell)
                if value is None:
                    raise ParseError(f"row {r}, column {col.name!r}: {cell!r} is not a finite number")
                row.append(value)
        rows.append(tuple(row))
    return RawTable(schema, rows)


def load_table(path: str | Path, schema: TableSchema | None = None) -> RawTable:
    text = Path(path).read_text(encoding="utf-8")
    return parse_table(text, schema)


def _format_cell(col: ColumnSchema, cell) -> str:
    if col.kind is ColumnKind.CATEGORICAL:
        return cell
    if col.integer_valued and float(cell) == int(cell):
        return str(int(cell))
    return repr(float(cell))


def table_to_text(table: RawTable) -> str:
    table.validate()
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(table.schema.names)
    for row in table.rows:
        writer.writerow([_format_cell(c, v) for c, v in zip(table.schema.columns, row)])
    return out.getvalue()


def write_table(table: RawTable, path: str | Path) -> None:
    Path(path).write_text(table_to_text(table), encoding="utf-8")


def load_schema(path: str | Path) -> TableSchema:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"schema file {path}: {exc}") from exc
    return TableSchema.from_json_dict(payload)


def save_schema(schema: TableSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_json_dict(), indent=2) + "\n", encoding="utf-8")
