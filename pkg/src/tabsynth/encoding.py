"""Reversible table <-> matrix transforms used by every model and metric.

Categorical columns become full-width one-hot blocks (binary columns
included, so every label owns an indicator).  Continuous columns are
min-max scaled into [0, 1].  Decoding inverts both: argmax over each
one-hot block (first index wins on ties) and clamp-then-rescale for
continuous values, with rounding for integer-valued columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .schema import ColumnKind, RawTable, TableSchema


@dataclass(frozen=True)
class ColumnSpan:
    """Half-open feature range [start, start + width) owned by one column."""

    column: str
    kind: ColumnKind
    start: int
    width: int

    @property
    def stop(self) -> int:
        return self.start + self.width


def column_spans(schema: TableSchema) -> tuple[ColumnSpan, ...]:
    spans = []
    offset = 0
    for col in schema.columns:
        spans.append(ColumnSpan(col.name, col.kind, offset, col.width))
        offset += col.width
    return tuple(spans)


@dataclass
class EncodedMatrix:
    values: np.ndarray  # (rows, encoded_width) float64
    schema: TableSchema
    spans: tuple[ColumnSpan, ...]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def encode(table: RawTable) -> EncodedMatrix:
    """Encode a validated table into a float64 matrix."""
    table.validate()
    schema = table.schema
    spans = column_spans(schema)
    out = np.zeros((table.n_rows, schema.encoded_width), dtype=np.float64)

    for col, span in zip(schema.columns, spans):
        cells = table.column_values(col.name)
        if col.kind is ColumnKind.CATEGORICAL:
            index = {label: i for i, label in enumerate(col.vocabulary)}
            hot = np.fromiter((index[c] for c in cells), dtype=np.int64, count=len(cells))
            out[np.arange(len(cells)), span.start + hot] = 1.0
        else:
            values = np.asarray(cells, dtype=np.float64)
            width = col.maximum - col.minimum
            if width == 0.0:
                out[:, span.start] = 0.0
            else:
                out[:, span.start] = (values - col.minimum) / width
    return EncodedMatrix(out, schema, spans)


def decode(values: np.ndarray, schema: TableSchema) -> RawTable:
    """Decode a matrix (typically raw model output) back into a table.

    The matrix does not have to be a valid encoding: one-hot blocks are
    resolved by argmax and continuous features are clamped into [0, 1]
    before the inverse min-max map.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise SchemaError(f"expected a 2-d matrix, got shape {values.shape}")
    if values.shape[1] != schema.encoded_width:
        raise SchemaError(
            f"matrix width {values.shape[1]} does not match encoded width {schema.encoded_width}"
        )

    n = values.shape[0]
    columns = []
    for col, span in zip(schema.columns, column_spans(schema)):
        block = values[:, span.start : span.stop]
        if col.kind is ColumnKind.CATEGORICAL:
            picks = np.argmax(block, axis=1)
            columns.append([col.vocabulary[int(i)] for i in picks])
        else:
            span_width = col.maximum - col.minimum
            if span_width == 0.0:
                columns.append([col.minimum] * n)
                continue
            raw = np.clip(block[:, 0], 0.0, 1.0) * span_width + col.minimum
            if col.integer_valued:
                raw = np.rint(raw)
            columns.append([float(v) for v in raw])
    rows = [tuple(column[i] for column in columns) for i in range(n)]
    return RawTable(schema, rows)
