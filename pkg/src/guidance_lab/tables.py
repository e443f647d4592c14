"""Tiny CSV table helper shared by the experiment runners.

All floats are serialized with 17 significant digits so that written values
round-trip exactly through text, and reruns of a deterministic experiment
produce byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass


def format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    try:
        return f"{float(value):.17g}"
    except (TypeError, ValueError):
        return str(value)


@dataclass
class Table:
    """An ordered-column table of scalar values."""

    columns: list
    rows: list

    def write_csv(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        lines = [",".join(self.columns)]
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(
                    f"row has {len(row)} entries for {len(self.columns)} columns"
                )
            lines.append(",".join(format_value(v) for v in row))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        return path
