"""
Unit tests for pipeline configuration and presets.
"""

import unittest
import tempfile
import shutil
from pathlib import Path

import yaml

import dcls.config as config_module
from dcls.config import (
    PipelineConfig,
    Preset,
    PREDEFINED_PRESETS,
    apply_overrides,
    coerce,
    delete_custom_preset,
    field_type,
    flatten,
    get_preset,
    list_presets,
    load_all_custom_presets,
    load_config,
    load_custom_preset,
    override_keys,
    resolve_config,
    save_config,
    save_custom_preset,
)
from dcls.errors import ConfigError


class TestPipelineConfig(unittest.TestCase):
    """Test PipelineConfig dataclass."""

    def test_defaults(self):
        """Test desk-scale defaults."""
        config = PipelineConfig()

        self.assertEqual(config.seed, 0)
        self.assertEqual(config.seeds, [0, 1, 2, 3, 4])
        self.assertEqual(config.schedule.T, 32)
        self.assertEqual(config.schedule.groups, 8)
        self.assertEqual(config.training.B, 4)
        self.assertEqual(config.training.tau, 1.0)
        self.assertTrue(config.training.use_nrt)
        config.validate()

    def test_from_nested_dict(self):
        """Test creating config from a nested dictionary."""
        config = PipelineConfig.from_dict({"seed": 3, "schedule": {"T": 16, "groups": 4}})

        self.assertEqual(config.seed, 3)
        self.assertEqual(config.schedule.T, 16)
        self.assertEqual(config.schedule.groups, 4)

    def test_round_trip(self):
        """Test to_dict/from_dict round trip."""
        config = PipelineConfig()
        config.training.refresh = "batch"
        self.assertEqual(PipelineConfig.from_dict(config.to_dict()), config)

    def test_flat_and_get(self):
        """Test dotted key access."""
        config = PipelineConfig()
        flat = config.flat()

        self.assertEqual(flat["schedule.lam"], 0.5)
        self.assertEqual(config.get("training.batch_size"), 32)
        self.assertEqual(set(flat), set(override_keys()))

    def test_synth_classes(self):
        """Test parsing of the synthetic class spec."""
        self.assertEqual(PipelineConfig().synth_classes(), [("pos", 300), ("neg", 60), ("neu", 30)])

        config = PipelineConfig()
        config.data.classes = "pos:3,neg"
        with self.assertRaises(ConfigError):
            config.synth_classes()

    def test_validate(self):
        """Test invalid combinations."""
        cases = {
            "schedule.groups": 5,
            "schedule.group_index": 9,
            "training.tau": 0,
            "training.B": -1,
            "training.refresh": "never",
            "policy.variant": "double",
            "project.method": "umap",
            "data.fraction": 0,
            "model.num_heads": 3,
        }
        for key, value in cases.items():
            config = apply_overrides(PipelineConfig(), {key: value})
            with self.assertRaises(ConfigError, msg=key):
                config.validate()

    def test_contrastive_needs_pairs(self):
        """Test batch size 1 only without the contrastive loss."""
        config = apply_overrides(PipelineConfig(), {"training.batch_size": 1})
        with self.assertRaises(ConfigError):
            config.validate()
        apply_overrides(config, {"training.use_nrt": "false"})
        config.validate()


class TestOverrides(unittest.TestCase):
    """Test override parsing and coercion."""

    def test_coerce_types(self):
        """Test command-line strings become field types."""
        self.assertEqual(coerce("16", int, "k"), 16)
        self.assertEqual(coerce("0.25", float, "k"), 0.25)
        self.assertIs(coerce("yes", bool, "k"), True)
        self.assertIs(coerce("off", bool, "k"), False)
        self.assertEqual(coerce("0, 1,2", field_type("seeds"), "seeds"), [0, 1, 2])
        self.assertEqual(coerce([0.5, "1"], field_type("experiment.fractions"), "k"), [0.5, 1.0])

    def test_coerce_errors(self):
        """Test invalid values raise ConfigError."""
        with self.assertRaises(ConfigError):
            coerce("many", int, "k")
        with self.assertRaises(ConfigError):
            coerce("maybe", bool, "k")
        with self.assertRaises(ConfigError):
            coerce(2.5, int, "k")

    def test_unknown_key(self):
        """Test unknown keys are rejected."""
        with self.assertRaises(ConfigError) as ctx:
            apply_overrides(PipelineConfig(), {"schedule.steps": 3})
        self.assertIn("schedule.steps", str(ctx.exception))
        with self.assertRaises(ConfigError):
            field_type("nosuch")

    def test_flatten(self):
        """Test nested and dotted spellings agree."""
        self.assertEqual(flatten({"schedule": {"T": 8}}), {"schedule.T": 8})
        self.assertEqual(flatten({"schedule.T": 8, "seed": 1}), {"schedule.T": 8, "seed": 1})


class TestConfigFiles(unittest.TestCase):
    """Test YAML config files and resolution order."""

    def setUp(self):
        """Create temporary directory for config files."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up temporary directory."""
        shutil.rmtree(self.temp_dir)

    def _write(self, data):
        path = Path(self.temp_dir) / "run.yaml"
        path.write_text(yaml.safe_dump(data))
        return path

    def test_save_and_load(self):
        """Test a saved config loads back unchanged."""
        config = PipelineConfig()
        config.schedule.lam = 0.9
        path = save_config(config, Path(self.temp_dir) / "sub" / "config.yaml")

        self.assertEqual(load_config(path), config)

    def test_missing_and_invalid(self):
        """Test unreadable config files."""
        with self.assertRaises(ConfigError):
            load_config(Path(self.temp_dir) / "missing.yaml")

        bad = Path(self.temp_dir) / "bad.yaml"
        bad.write_text("- just\n- a list\n")
        with self.assertRaises(ConfigError):
            load_config(bad)

    def test_key_value_file(self):
        """Test flat key=value config files."""
        path = Path(self.temp_dir) / "run.conf"
        path.write_text("# desk variant\nschedule.T=16\nschedule.groups = 4\n\ntraining.use_nrt=false\nseeds=0,1\n")
        config = load_config(path)

        self.assertEqual(config.schedule.T, 16)
        self.assertEqual(config.schedule.groups, 4)
        self.assertFalse(config.training.use_nrt)
        self.assertEqual(config.seeds, [0, 1])

        path.write_text("preset=smoke\nschedule.lam=0.25\n")
        resolved = resolve_config(None, path, env={})
        self.assertEqual(resolved.preset, "smoke")
        self.assertEqual(resolved.schedule.lam, 0.25)

    def test_key_value_unknown_key(self):
        """Test unknown keys in key=value files."""
        path = Path(self.temp_dir) / "run.conf"
        path.write_text("schedule.steps=3\n")
        with self.assertRaises(ConfigError):
            load_config(path)

    def test_resolution_order(self):
        """Test preset < file < overrides < DCLS_SEED."""
        path = self._write({"schedule.T": 16, "schedule.groups": 4, "schedule.group_index": 1, "seed": 5})
        config = resolve_config("smoke", path, {"schedule.T": "12"}, env={})

        self.assertEqual(config.preset, "smoke")
        self.assertEqual(config.model.model_dim, 16)
        self.assertEqual(config.schedule.groups, 4)
        self.assertEqual(config.schedule.T, 12)
        self.assertEqual(config.seed, 5)

        config = resolve_config("smoke", path, {}, env={"DCLS_SEED": "42"})
        self.assertEqual(config.seed, 42)

    def test_preset_from_file(self):
        """Test the file's preset key applies when none is given."""
        path = self._write({"preset": "smoke"})
        self.assertEqual(resolve_config(None, path, env={}).schedule.T, 8)
        self.assertEqual(resolve_config("desk", path, env={}).schedule.T, 32)

    def test_unknown_preset(self):
        """Test unknown presets raise ConfigError."""
        with self.assertRaises(ConfigError):
            resolve_config("nonexistent", env={})

    def test_resolved_config_is_validated(self):
        """Test resolution rejects invalid combinations."""
        with self.assertRaises(ConfigError):
            resolve_config(None, None, {"schedule.groups": "7"}, env={})


class TestPredefinedPresets(unittest.TestCase):
    """Test predefined presets."""

    def test_all_presets_valid(self):
        """Test every predefined preset resolves to a valid config."""
        for name in PREDEFINED_PRESETS:
            config = resolve_config(name, env={})
            self.assertEqual(config.preset, name)

    def test_published_preset(self):
        """Test published hyper-parameters."""
        config = resolve_config("published", env={})

        self.assertEqual(config.training.lr, 4e-6)
        self.assertEqual(config.training.proxy_epochs, 15)
        self.assertEqual(config.training.B, 4)
        self.assertEqual(config.schedule.T, 32)

    def test_generator_presets(self):
        """Test per-dataset generator settings."""
        expected = {"india-covid-x": (1, 40), "smp2020-ewect": (1, 60), "senwave": (2, 60), "sst-2": (2, 20)}
        for name, (epochs, batch) in expected.items():
            config = resolve_config(name, env={})
            self.assertEqual((config.training.generator_epochs, config.training.generator_batch_size), (epochs, batch))

    def test_get_preset(self):
        """Test getting a predefined preset."""
        self.assertEqual(get_preset("smoke").name, "smoke")
        self.assertEqual(get_preset("SMOKE").name, "smoke")


class TestCustomPresets(unittest.TestCase):
    """Test custom preset management."""

    def setUp(self):
        """Set up temporary preset directory."""
        self.temp_dir = tempfile.mkdtemp()
        self.orig_get_preset_directory = config_module.get_preset_directory
        config_module.get_preset_directory = lambda: Path(self.temp_dir)

    def tearDown(self):
        """Clean up temporary preset directory."""
        config_module.get_preset_directory = self.orig_get_preset_directory
        shutil.rmtree(self.temp_dir)

    def test_save_and_load(self):
        """Test saving and loading a custom preset."""
        preset = Preset(name="mine", description="Mine", overrides={"schedule.T": 16, "schedule.groups": 4})

        self.assertTrue(save_custom_preset(preset))
        self.assertTrue((Path(self.temp_dir) / "mine.yaml").exists())

        loaded = load_custom_preset("mine")
        self.assertEqual(loaded, preset)
        self.assertEqual(resolve_config("mine", env={}).schedule.T, 16)

    def test_save_rejects_unknown_keys(self):
        """Test saving a preset with an unknown key."""
        with self.assertRaises(ConfigError):
            save_custom_preset(Preset(name="bad", description="", overrides={"schedule.steps": 3}))

    def test_load_nonexistent(self):
        """Test loading a non-existent custom preset."""
        self.assertIsNone(load_custom_preset("nonexistent"))

    def test_load_all_and_list(self):
        """Test custom presets appear next to the predefined ones."""
        save_custom_preset(Preset(name="one", description="1", overrides={"seed": 1}))
        save_custom_preset(Preset(name="two", description="2", overrides={"seed": 2}))

        self.assertEqual(sorted(load_all_custom_presets()), ["one", "two"])
        presets = list_presets()
        self.assertIn("desk", presets)
        self.assertIn("one", presets)
        self.assertEqual(len(presets), len(PREDEFINED_PRESETS) + 2)

    def test_delete(self):
        """Test deleting a custom preset."""
        save_custom_preset(Preset(name="gone", description=""))

        self.assertTrue(delete_custom_preset("gone"))
        self.assertFalse((Path(self.temp_dir) / "gone.yaml").exists())
        self.assertFalse(delete_custom_preset("gone"))


if __name__ == "__main__":
    unittest.main()
