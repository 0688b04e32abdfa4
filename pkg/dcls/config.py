"""
Pipeline configuration and presets for dcls.

A PipelineConfig is built from a preset, an optional YAML file, command-line
overrides and the DCLS_SEED environment variable, in that order. Keys are
``section.field`` (``schedule.T``); YAML files may spell them flat or nested.
"""

import logging
import os
import re
import yaml
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, get_args, get_origin, get_type_hints

from .errors import ConfigError

log = logging.getLogger(__name__)

SEED_ENV = "DCLS_SEED"
TRUE_WORDS = {"true", "1", "yes", "on"}
FALSE_WORDS = {"false", "0", "no", "off"}
KEY_VALUE_LINE = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*=(.*)$")


@dataclass
class DataSection:
    train_path: str = ""  # empty -> <output_dir>/data/train.jsonl
    test_path: str = ""
    classes: str = "pos:300,neg:60,neu:30"  # synthetic train counts
    test_per_class: int = 100
    max_len: int = 64
    min_count: int = 1
    fraction: float = 1.0
    shots: int = 0  # 0 = full training set


@dataclass
class ModelSection:
    model_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    ffn_dim: int = 128
    dropout: float = 0.1
    dtype: str = "float64"


@dataclass
class ScheduleSection:
    T: int = 32
    lam: float = 0.5
    groups: int = 8
    group_index: int = 4


@dataclass
class TrainingSection:
    proxy_epochs: int = 15
    generator_epochs: int = 20
    classifier_epochs: int = 8
    batch_size: int = 32
    generator_batch_size: int = 32
    lr: float = 3e-4
    weight_decay: float = 0.01
    tau: float = 1.0
    B: int = 4
    refresh: str = "epoch"  # epoch | batch | static
    use_da: bool = True
    use_lap: bool = True
    use_nrt: bool = True


@dataclass
class PolicySection:
    variant: str = "n_each"  # n_each (G/E) | balance (B/D)
    n: int = 4


@dataclass
class GenerationSection:
    temperature: float = 1.0
    workers: int = 1


@dataclass
class ProjectSection:
    method: str = "pca"
    max_points: int = 600
    perplexity: float = 30.0
    per_group: int = 1  # pseudo samples per original and group


@dataclass
class ExperimentSection:
    fractions: List[float] = field(default_factory=lambda: [0.05, 0.2, 0.35, 0.5, 1.0])
    shots: List[int] = field(default_factory=lambda: [5, 10])
    slack: float = 0.02  # allowed ablation shortfall of the full method


SECTIONS = {
    "data": DataSection,
    "model": ModelSection,
    "schedule": ScheduleSection,
    "training": TrainingSection,
    "policy": PolicySection,
    "generation": GenerationSection,
    "project": ProjectSection,
    "experiment": ExperimentSection,
}
TOP_LEVEL = ("seed", "seeds", "output_dir", "preset")


@dataclass
class PipelineConfig:
    """Everything one pipeline run needs."""

    seed: int = 0
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = "runs/dcls"
    preset: str = "desk"
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    policy: PolicySection = field(default_factory=PolicySection)
    generation: GenerationSection = field(default_factory=GenerationSection)
    project: ProjectSection = field(default_factory=ProjectSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def to_dict(self) -> Dict:
        """Convert config to a nested dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> 'PipelineConfig':
        """Create config from a nested or flat dictionary."""
        return apply_overrides(cls(), flatten(data))

    def flat(self) -> Dict[str, Any]:
        return flatten(self.to_dict())

    def get(self, key: str) -> Any:
        holder, name = _locate(self, key)
        return getattr(holder, name)

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        s = self.schedule
        if s.T < 1:
            raise ConfigError("schedule.T must be >= 1")
        if s.groups < 1 or s.T % s.groups:
            raise ConfigError(f"schedule.groups {s.groups} must divide schedule.T={s.T}")
        if not 1 <= s.group_index <= s.groups:
            raise ConfigError(f"schedule.group_index {s.group_index} outside 1..{s.groups}")
        if self.model.model_dim % self.model.num_heads:
            raise ConfigError("model.model_dim must be divisible by model.num_heads")
        t = self.training
        if t.tau <= 0:
            raise ConfigError("training.tau must be > 0")
        if t.B < 0:
            raise ConfigError("training.B must be >= 0")
        if t.use_nrt and t.batch_size < 2:
            raise ConfigError("training.batch_size must be >= 2 with the contrastive loss")
        if t.refresh not in ("epoch", "batch", "static"):
            raise ConfigError("training.refresh must be epoch, batch or static")
        if self.policy.variant not in ("n_each", "balance"):
            raise ConfigError("policy.variant must be n_each or balance")
        if self.project.method not in ("pca", "tsne"):
            raise ConfigError("project.method must be pca or tsne")
        if not 0.0 < self.data.fraction <= 1.0:
            raise ConfigError("data.fraction must be in (0, 1]")
        if self.generation.temperature <= 0:
            raise ConfigError("generation.temperature must be > 0")

    def synth_classes(self) -> List[tuple]:
        """Parse ``data.classes`` ("pos:300,neg:60") into (name, count) pairs."""
        out = []
        for part in self.data.classes.split(","):
            part = part.strip()
            if not part:
                continue
            name, sep, count = part.partition(":")
            try:
                out.append((name.strip(), int(count)))
            except ValueError:
                raise ConfigError(f"invalid class spec '{part}', expected name:count") from None
            if not sep or not name.strip():
                raise ConfigError(f"invalid class spec '{part}', expected name:count")
        if not out:
            raise ConfigError("data.classes is empty")
        return out


def flatten(data: Mapping, prefix: str = "") -> Dict[str, Any]:
    """{"schedule": {"T": 32}} and {"schedule.T": 32} both become {"schedule.T": 32}."""
    out: Dict[str, Any] = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping) and (prefix or key in SECTIONS):
            out.update(flatten(value, f"{name}."))
        else:
            out[name] = value
    return out


def _locate(config: PipelineConfig, key: str):
    parts = key.split(".")
    if len(parts) == 1 and parts[0] in TOP_LEVEL:
        return config, parts[0]
    if len(parts) == 2 and parts[0] in SECTIONS:
        section = getattr(config, parts[0])
        if parts[1] in {f.name for f in fields(section)}:
            return section, parts[1]
    raise ConfigError(f"unknown config key '{key}'")


def coerce(value: Any, typ: Any, key: str) -> Any:
    """Convert a YAML or command-line value to a field type."""
    try:
        if get_origin(typ) in (list, List):
            (inner,) = get_args(typ)
            if isinstance(value, str):
                value = [v for v in value.replace(" ", "").split(",") if v]
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [coerce(v, inner, key) for v in value]
        if typ is bool:
            if isinstance(value, bool):
                return value
            word = str(value).strip().lower()
            if word in TRUE_WORDS:
                return True
            if word in FALSE_WORDS:
                return False
            raise ValueError(word)
        if typ is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if typ is float:
            return float(value)
        if typ is str:
            return "" if value is None else str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} for '{key}'") from None
    return value


def apply_overrides(config: PipelineConfig, overrides: Mapping[str, Any]) -> PipelineConfig:
    """Set ``section.field`` keys in place (values coerced) and return the config."""
    for key, value in overrides.items():
        holder, name = _locate(config, key)
        typ = get_type_hints(type(holder))[name]
        setattr(holder, name, coerce(value, typ, key))
    return config


def load_config(path: Path, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """
    Load a YAML config file on top of ``base`` (defaults if omitted).

    Args:
        path: YAML file with flat dotted or nested keys

    Returns:
        PipelineConfig
    """
    data = _read_yaml(Path(path))
    return apply_overrides(base or PipelineConfig(), flatten(data))


def _read_key_values(text: str) -> Optional[Dict[str, str]]:
    """Parse ``schedule.T=32`` lines; None unless every content line has that form."""
    out: Dict[str, str] = {}
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        match = KEY_VALUE_LINE.match(line)
        if not match:
            return None
        out[match.group(1)] = match.group(2).strip()
    return out or None


def _read_yaml(path: Path) -> Dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, 'r') as f:
        text = f.read()
    pairs = _read_key_values(text)
    if pairs is not None:
        return pairs
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path} must contain a mapping")
    return dict(data)


def save_config(config: PipelineConfig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        yaml.safe_dump(config.to_dict(), f, default_flow_style=False, sort_keys=True)
    return path


# --- presets ----------------------------------------------------------------

@dataclass
class Preset:
    """A named set of config overrides."""

    name: str
    description: str
    overrides: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'Preset':
        return cls(name=data['name'], description=data.get('description', ''),
                   overrides=dict(data.get('overrides') or {}))

    def apply(self, config: PipelineConfig) -> PipelineConfig:
        apply_overrides(config, self.overrides)
        config.preset = self.name
        return config


PREDEFINED_PRESETS = {
    'desk': Preset(
        name='desk',
        description='Desk-scale defaults: 3-class imbalanced synthetic corpus, CPU minutes',
    ),

    'smoke': Preset(
        name='smoke',
        description='Tiny model and corpus for a full pipeline in seconds',
        overrides={
            'data.classes': 'pos:12,neg:8,neu:6',
            'data.test_per_class': 4,
            'data.max_len': 24,
            'model.model_dim': 16,
            'model.num_heads': 2,
            'model.num_layers': 1,
            'model.ffn_dim': 32,
            'schedule.T': 8,
            'schedule.groups': 4,
            'schedule.group_index': 2,
            'training.proxy_epochs': 1,
            'training.generator_epochs': 1,
            'training.classifier_epochs': 1,
            'training.batch_size': 8,
            'training.generator_batch_size': 8,
            'training.B': 1,
            'policy.n': 1,
            'seeds': [0, 1],
            'experiment.fractions': [0.5, 1.0],
            'experiment.shots': [2],
            'project.max_points': 60,
        },
    ),

    'published': Preset(
        name='published',
        description='Published hyper-parameters (lr 4e-6, 15 proxy epochs, B=4, T=32)',
        overrides={
            'training.lr': 4e-6,
            'training.proxy_epochs': 15,
            'training.B': 4,
            'schedule.T': 32,
        },
    ),

    'india-covid-x': Preset(
        name='india-covid-x',
        description='Generator settings used for India-COVID-X',
        overrides={'training.generator_epochs': 1, 'training.generator_batch_size': 40},
    ),

    'smp2020-ewect': Preset(
        name='smp2020-ewect',
        description='Generator settings used for SMP2020-EWECT',
        overrides={'training.generator_epochs': 1, 'training.generator_batch_size': 60},
    ),

    'senwave': Preset(
        name='senwave',
        description='Generator settings used for SenWave',
        overrides={'training.generator_epochs': 2, 'training.generator_batch_size': 60},
    ),

    'sst-2': Preset(
        name='sst-2',
        description='Generator settings used for SST-2',
        overrides={'training.generator_epochs': 2, 'training.generator_batch_size': 20},
    ),
}


def get_preset(name: str) -> Optional[Preset]:
    """
    Get a preset by name.

    Args:
        name: Preset name (e.g., 'desk', 'smoke', 'published')

    Returns:
        Preset if found, None otherwise
    """
    if name.lower() in PREDEFINED_PRESETS:
        return PREDEFINED_PRESETS[name.lower()]

    return load_custom_preset(name)


def list_presets() -> Dict[str, Preset]:
    """
    List all available presets (predefined + custom).

    Returns:
        Dictionary mapping preset names to Preset objects
    """
    presets = PREDEFINED_PRESETS.copy()
    presets.update(load_all_custom_presets())
    return presets


def save_custom_preset(preset: Preset) -> bool:
    """
    Save a custom preset to disk.

    Args:
        preset: Preset to save; its overrides must name known keys

    Returns:
        True if saved successfully, False otherwise
    """
    apply_overrides(PipelineConfig(), preset.overrides)
    try:
        preset_dir = get_preset_directory()
        preset_dir.mkdir(parents=True, exist_ok=True)

        with open(preset_dir / f"{preset.name}.yaml", 'w') as f:
            yaml.safe_dump(preset.to_dict(), f, default_flow_style=False)

        return True
    except OSError as e:
        log.error("error saving preset '%s': %s", preset.name, e)
        return False


def load_custom_preset(name: str) -> Optional[Preset]:
    """
    Load a custom preset from disk.

    Args:
        name: Preset name

    Returns:
        Preset if found, None otherwise
    """
    preset_file = get_preset_directory() / f"{name}.yaml"
    if not preset_file.exists():
        return None
    try:
        with open(preset_file, 'r') as f:
            return Preset.from_dict(yaml.safe_load(f))
    except (OSError, yaml.YAMLError, KeyError, TypeError) as e:
        log.warning("error loading preset '%s': %s", name, e)
        return None


def load_all_custom_presets() -> Dict[str, Preset]:
    """
    Load all custom presets from disk.

    Returns:
        Dictionary mapping preset names to Preset objects
    """
    presets = {}
    preset_dir = get_preset_directory()
    if not preset_dir.exists():
        return presets

    for preset_file in sorted(preset_dir.glob("*.yaml")):
        preset = load_custom_preset(preset_file.stem)
        if preset:
            presets[preset.name] = preset

    return presets


def delete_custom_preset(name: str) -> bool:
    """
    Delete a custom preset.

    Args:
        name: Preset name

    Returns:
        True if deleted successfully, False otherwise
    """
    preset_file = get_preset_directory() / f"{name}.yaml"
    if preset_file.exists():
        preset_file.unlink()
        return True
    return False


def get_preset_directory() -> Path:
    """
    Get the directory for custom presets.

    Returns:
        Path to preset directory
    """
    return Path.home() / '.dcls' / 'presets'


def resolve_config(
    preset: Optional[str] = None,
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> PipelineConfig:
    """Preset < config file < overrides < DCLS_SEED.

    Without an explicit preset the file's ``preset`` key is used, then 'desk'.
    """
    env = os.environ if env is None else env
    file_values = flatten(_read_yaml(Path(path))) if path else {}
    name = preset or file_values.pop('preset', None) or 'desk'
    file_values.pop('preset', None)

    found = get_preset(str(name))
    if found is None:
        raise ConfigError(f"preset '{name}' not found")
    config = found.apply(PipelineConfig())
    apply_overrides(config, file_values)
    apply_overrides(config, overrides or {})
    if env.get(SEED_ENV):
        config.seed = coerce(env[SEED_ENV], int, SEED_ENV)
    config.validate()
    return config


def override_keys() -> List[str]:
    """Every ``section.field`` key a config accepts."""
    config = PipelineConfig()
    keys = list(TOP_LEVEL)
    for section in SECTIONS:
        keys.extend(f"{section}.{f.name}" for f in fields(getattr(config, section)))
    return keys


def field_type(key: str) -> Any:
    holder, name = _locate(PipelineConfig(), key)
    return get_type_hints(type(holder))[name]
