"""
Export module for dcls run outputs.

Supports multiple output formats:
- CSV: sweep rows, partial-data rows and 2D projections (plot-ready)
- JSON: metrics and run reports (sorted keys, byte-stable across reruns)
- JSON Lines: pseudo samples and per-epoch training logs
- Markdown: comparison tables such as the ablation grid

Every exporter writes to a temporary file next to the target and renames it
into place, so a reader never sees a half-written report.
"""

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np


def atomic_write(filepath: Union[str, Path], data: Union[str, bytes]) -> Path:
    """
    Write data to filepath via write-temp-then-rename.

    Args:
        filepath: Destination path (parent directories are created)
        data: Text (written as UTF-8) or raw bytes

    Returns:
        The destination path
    """
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def to_builtin(obj: Any) -> Any:
    """Convert numpy/torch scalars and arrays into JSON-serializable builtins."""
    if isinstance(obj, Mapping):
        return {str(k): to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_builtin(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "detach") and hasattr(obj, "tolist"):
        return to_builtin(obj.detach().cpu().tolist())
    if isinstance(obj, Path):
        return str(obj)
    return obj


class Exporter:
    """Base class for all exporters."""

    def __init__(self, filepath: Union[str, Path]):
        """
        Initialize exporter.

        Args:
            filepath: Path to output file
        """
        self.filepath = Path(filepath)

    def export(self, payload: Any) -> Path:
        """
        Export payload to file.

        Args:
            payload: Exporter-specific data

        Returns:
            Path of the written file
        """
        raise NotImplementedError("Subclasses must implement export()")

    def _commit(self, data: Union[str, bytes]) -> Path:
        return atomic_write(self.filepath, data)


class CSVExporter(Exporter):
    """Export rows of dicts to CSV with a fixed column order."""

    def __init__(self, filepath: Union[str, Path], columns: Sequence[str], float_digits: int = 6):
        """
        Initialize CSV exporter.

        Args:
            filepath: Path to output CSV file
            columns: Column names, written as the header in this order
            float_digits: Decimal places for float cells
        """
        super().__init__(filepath)
        self.columns = list(columns)
        self.float_digits = float_digits

    def export(self, rows: Iterable[Mapping[str, Any]]) -> Path:
        """
        Export rows to CSV file.

        Missing keys and None values become empty cells; unknown keys are an error.

        Args:
            rows: Iterable of row dicts

        Returns:
            Path of the written file
        """
        buf = io.StringIO()
        writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(self.columns)
        for row in rows:
            extra = set(row) - set(self.columns)
            if extra:
                raise ValueError(f"unexpected CSV columns: {sorted(extra)}")
            writer.writerow([self._format_cell(row.get(c)) for c in self.columns])
        return self._commit(buf.getvalue())

    def _format_cell(self, value: Any) -> str:
        value = to_builtin(value)
        if value is None:
            return ""
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            if math.isnan(value):
                return "nan"
            return f"{value:.{self.float_digits}f}"
        return str(value)


class JSONExporter(Exporter):
    """Export a JSON document with sorted keys and a trailing newline."""

    def export(self, payload: Any) -> Path:
        text = json.dumps(to_builtin(payload), indent=2, sort_keys=True, ensure_ascii=False)
        return self._commit(text + "\n")


class JSONLinesExporter(Exporter):
    """Export one JSON object per line, keys in insertion order."""

    def export(self, records: Iterable[Mapping[str, Any]]) -> Path:
        lines = [json.dumps(to_builtin(dict(r)), ensure_ascii=False) for r in records]
        return self._commit("".join(line + "\n" for line in lines))


@dataclass
class Table:
    """A titled comparison table for Markdown export."""

    title: str
    columns: List[str]
    rows: List[List[Any]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)


class MarkdownExporter(Exporter):
    """Export comparison tables to GitHub-flavored Markdown."""

    def __init__(self, filepath: Union[str, Path], use_emoji: bool = True,
                 timestamp: Optional[datetime] = None):
        """
        Initialize Markdown exporter.

        Args:
            filepath: Path to output Markdown file
            use_emoji: Render boolean cells as ✅/⚠️ instead of yes/NO
            timestamp: Optional generation time printed under the title
        """
        super().__init__(filepath)
        self.use_emoji = use_emoji
        self.timestamp = timestamp

    def export(self, table: Table) -> Path:
        """
        Export a table.

        Markdown Format:
        # Ablation

        | Config | Macro-F1 | Accuracy | OK |
        |--------|----------|----------|----|
        | full   | 0.8123   | 0.8200   | ✅ |

        Args:
            table: Table to render

        Returns:
            Path of the written file
        """
        out = [f"# {table.title}", ""]
        if self.timestamp is not None:
            out += [f"**Generated**: {self.timestamp.strftime('%Y-%m-%d %H:%M:%S')}", ""]
        out.append("| " + " | ".join(self._escape_markdown(c) for c in table.columns) + " |")
        out.append("|" + "|".join("-" * (len(c) + 2) for c in table.columns) + "|")
        for row in table.rows:
            out.append("| " + " | ".join(self._format_cell(v) for v in row) + " |")
        if table.notes:
            out.append("")
            out.extend(f"- {self._escape_markdown(n)}" for n in table.notes)
        out += ["", "---", "", "*Generated by dcls*", ""]
        return self._commit("\n".join(out))

    def _format_cell(self, value: Any) -> str:
        value = to_builtin(value)
        if isinstance(value, bool):
            if self.use_emoji:
                return "✅" if value else "⚠️"
            return "yes" if value else "NO"
        if isinstance(value, float):
            return f"{value:.4f}"
        if value is None:
            return "-"
        return self._escape_markdown(str(value))

    def _escape_markdown(self, text: str) -> str:
        # pipes delimit table cells
        return text.replace("|", "\\|")


def export_to_csv(rows: Iterable[Mapping[str, Any]], filepath: Union[str, Path],
                  columns: Sequence[str]) -> str:
    """
    Convenience function to export rows to CSV.

    Args:
        rows: Row dicts
        filepath: Output file path
        columns: Column order

    Returns:
        Path to exported file
    """
    return str(CSVExporter(filepath, columns).export(rows))


def export_to_json(payload: Any, filepath: Union[str, Path]) -> str:
    return str(JSONExporter(filepath).export(payload))


def export_to_jsonl(records: Iterable[Mapping[str, Any]], filepath: Union[str, Path]) -> str:
    return str(JSONLinesExporter(filepath).export(records))


def export_to_markdown(table: Table, filepath: Union[str, Path], use_emoji: bool = True) -> str:
    return str(MarkdownExporter(filepath, use_emoji=use_emoji).export(table))


class PseudoSampleExporter(JSONLinesExporter):
    """Export pseudo samples (anything with ``as_dict``) as JSON Lines."""

    def export(self, samples: Iterable[Any]) -> Path:
        return super().export(s.as_dict() for s in samples)
