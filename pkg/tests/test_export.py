"""
Tests for export module.
"""

import unittest
import tempfile
import shutil
import csv
import json
from datetime import datetime
from pathlib import Path

import numpy as np

from dcls.export import (
    CSVExporter,
    JSONExporter,
    JSONLinesExporter,
    MarkdownExporter,
    PseudoSampleExporter,
    Table,
    atomic_write,
    export_to_csv,
    export_to_json,
    export_to_jsonl,
    export_to_markdown,
    to_builtin,
)
from dcls.generator import PseudoSample


class TestAtomicWrite(unittest.TestCase):
    """Test write-temp-then-rename."""

    def setUp(self):
        """Create temporary directory for test files."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up temporary directory."""
        shutil.rmtree(self.temp_dir)

    def test_creates_parents_and_leaves_no_temp(self):
        """Test parent creation and temp cleanup."""
        target = Path(self.temp_dir) / "a" / "b" / "out.txt"
        atomic_write(target, "hello")

        self.assertEqual(target.read_text(encoding="utf-8"), "hello")
        self.assertEqual([p.name for p in target.parent.iterdir()], ["out.txt"])

    def test_bytes(self):
        """Test raw bytes are written unchanged."""
        target = Path(self.temp_dir) / "blob.bin"
        atomic_write(target, b"\x00\x01\xff")
        self.assertEqual(target.read_bytes(), b"\x00\x01\xff")


class TestToBuiltin(unittest.TestCase):
    """Test conversion of numpy values."""

    def test_numpy_values(self):
        """Test numpy scalars and arrays become builtins."""
        data = {"a": np.float64(0.5), "b": np.arange(3), 1: (np.int64(2), Path("x"))}
        self.assertEqual(to_builtin(data), {"a": 0.5, "b": [0, 1, 2], "1": [2, "x"]})


class TestCSVExporter(unittest.TestCase):
    """Test CSV export functionality."""

    def setUp(self):
        """Create temporary directory for test files."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up temporary directory."""
        shutil.rmtree(self.temp_dir)

    def test_export_empty(self):
        """Test export with no rows."""
        output = Path(self.temp_dir) / "empty.csv"
        CSVExporter(output, ["group", "macro_f1_mean"]).export([])

        with open(output, 'r') as f:
            lines = f.readlines()
        self.assertEqual(lines, ["group,macro_f1_mean\n"])

    def test_export_rows(self):
        """Test cell formatting."""
        output = Path(self.temp_dir) / "rows.csv"
        rows = [
            {"group": 1, "macro_f1_mean": 0.5, "flag": True},
            {"group": 2, "macro_f1_mean": float("nan")},
            {"group": np.int64(3), "macro_f1_mean": None, "flag": False},
        ]
        CSVExporter(output, ["group", "macro_f1_mean", "flag"]).export(rows)

        with open(output, 'r') as f:
            parsed = list(csv.DictReader(f))
        self.assertEqual(parsed[0], {"group": "1", "macro_f1_mean": "0.500000", "flag": "true"})
        self.assertEqual(parsed[1]["macro_f1_mean"], "nan")
        self.assertEqual(parsed[1]["flag"], "")
        self.assertEqual(parsed[2], {"group": "3", "macro_f1_mean": "", "flag": "false"})

    def test_unknown_column(self):
        """Test rows with unknown keys are rejected."""
        with self.assertRaises(ValueError):
            CSVExporter(Path(self.temp_dir) / "x.csv", ["a"]).export([{"a": 1, "b": 2}])

    def test_convenience_function(self):
        """Test export_to_csv."""
        output = export_to_csv([{"a": 1}], Path(self.temp_dir) / "conv.csv", ["a"])
        self.assertTrue(Path(output).exists())


class TestJSONExporters(unittest.TestCase):
    """Test JSON and JSON Lines export."""

    def setUp(self):
        """Create temporary directory for test files."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up temporary directory."""
        shutil.rmtree(self.temp_dir)

    def test_json_sorted_and_stable(self):
        """Test sorted keys and byte-identical reruns."""
        a = Path(self.temp_dir) / "a.json"
        b = Path(self.temp_dir) / "b.json"
        JSONExporter(a).export({"z": 1, "a": np.float64(0.25)})
        export_to_json({"a": 0.25, "z": 1}, b)

        self.assertEqual(a.read_bytes(), b.read_bytes())
        self.assertTrue(a.read_text().endswith("\n"))
        self.assertLess(a.read_text().index('"a"'), a.read_text().index('"z"'))

    def test_jsonl(self):
        """Test one object per line."""
        output = Path(self.temp_dir) / "log.jsonl"
        JSONLinesExporter(output).export([{"epoch": 1, "L": 0.5}, {"epoch": 2, "L": 0.25}])
        export_to_jsonl([], Path(self.temp_dir) / "empty.jsonl")

        lines = output.read_text().splitlines()
        self.assertEqual([json.loads(x)["epoch"] for x in lines], [1, 2])
        self.assertEqual((Path(self.temp_dir) / "empty.jsonl").read_text(), "")

    def test_pseudo_samples(self):
        """Test pseudo samples are written without token ids."""
        output = Path(self.temp_dir) / "pseudo.jsonl"
        sample = PseudoSample(text="great movie", label="pos", ids=(2, 9, 10, 3), source_id=4,
                              t_star=14, group=4, seed=123)
        PseudoSampleExporter(output).export([sample])

        record = json.loads(output.read_text())
        self.assertEqual(record, {"text": "great movie", "label": "pos", "source_id": 4,
                                  "t_star": 14, "group": 4, "seed": 123})


class TestMarkdownExporter(unittest.TestCase):
    """Test Markdown export functionality."""

    def setUp(self):
        """Create temporary directory for test files."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up temporary directory."""
        shutil.rmtree(self.temp_dir)

    def _table(self):
        return Table(
            title="Ablation",
            columns=["Config", "Macro-F1", "OK"],
            rows=[["full", 0.81234, True], ["w/o N.R.T.", 0.79, False], ["a|b", None, True]],
            notes=["5 seeds"],
        )

    def test_export(self):
        """Test table rendering."""
        output = Path(self.temp_dir) / "ablation.md"
        MarkdownExporter(output, timestamp=datetime(2024, 1, 2, 3, 4, 5)).export(self._table())

        content = output.read_text(encoding="utf-8")
        self.assertIn("# Ablation", content)
        self.assertIn("**Generated**: 2024-01-02 03:04:05", content)
        self.assertIn("| full | 0.8123 | ✅ |", content)
        self.assertIn("| w/o N.R.T. | 0.7900 | ⚠️ |", content)
        self.assertIn("| a\\|b | - | ✅ |", content)
        self.assertIn("- 5 seeds", content)

    def test_without_emoji(self):
        """Test plain boolean cells."""
        output = export_to_markdown(self._table(), Path(self.temp_dir) / "plain.md", use_emoji=False)

        content = Path(output).read_text(encoding="utf-8")
        self.assertIn("| full | 0.8123 | yes |", content)
        self.assertIn("| w/o N.R.T. | 0.7900 | NO |", content)
        self.assertNotIn("**Generated**", content)


if __name__ == "__main__":
    unittest.main()
