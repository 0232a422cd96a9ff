"""
Run configuration for moesearch.

A run is described by one nested settings document (JSON, or YAML with the
optional PyYAML extra). Values missing from the file fall back to
``create_default_settings()``; individual fields can be overridden with
dot-path assignments such as ``phase1.epochs=3``.
"""

import copy
import json
import logging
import os
from collections.abc import Iterable
from pathlib import Path
from typing import Any

from ..blocks.specs import parse_block_key
from ..core.errors import ConfigError, MoESearchError, SpecError
from ..io.atomic import atomic_write

logger = logging.getLogger(__name__)

DEFAULT_MENU = [
    "skip",
    "mha:h=1",
    "mha:h=2",
    "mha:h=4",
    "mha:h=8",
    "ffl:d=128",
    "moe:d=128:e=4:k=1",
    "moe:d=128:e=4:k=2",
]


def create_default_settings() -> dict[str, Any]:
    """Defaults for a CPU-sized toy model."""
    return {
        "run": {"seed": 0, "output_dir": "runs/default", "progress_bar": True},
        "corpus": {
            "path": None,
            "split_ratios": [0.8, 0.1, 0.1],
            "batch_size": 8,
            "seq_len": 32,
        },
        "model": {"model_dim": 32, "n_layers": 2, "heads": 4, "inner_dim": 128},
        "backbone": {"slots": None},
        "search_space": {"menu": list(DEFAULT_MENU)},
        "profiling": {
            "batch_size": 8,
            "seq_len": 32,
            "precision": "fp64",
            "repetitions": 30,
            "warmup": 5,
        },
        "phase1": {
            "epochs": 10,
            "arch_data_fraction": 0.2,
            "arch_warmup_fraction": 0.1,
            "initial_temperature": 5.0,
            "temperature_anneal_rate": 0.6,
            "min_temperature": 1e-3,
            "net_optimizer": {"kind": "adam", "lr": 0.003},
            "arch_optimizer": {"kind": "adam", "lr": 0.01},
            "grad_clip": 1.0,
            "dropout": 0.1,
            "moe_dropout": 0.2,
        },
        "phase2": {
            "epochs": 10,
            "optimizer": {"kind": "adam", "lr": 0.003},
            "dropout": 0.1,
            "moe_dropout": 0.2,
            "balance_coefficient": 1.0,
            "router_jitter": 0.0,
            "grad_clip": 1.0,
        },
        "target_ratio": 0.5,
        "report": {
            "sweep_targets": [0.5, 0.6, 0.7, 0.8, 0.9, 0.95],
            "measure_repetitions": 30,
        },
    }


def _deep_merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value
    return base


def parse_override(assignment: str) -> tuple[str, Any]:
    """Split ``path=value``; the value is read as JSON when possible, else as a string."""
    path, sep, raw = assignment.partition("=")
    if not sep or not path.strip():
        raise ConfigError(assignment, assignment, "override must look like section.field=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.strip(), value


class RunConfig:
    """Nested run settings with dot-path access and typed views."""

    def __init__(self, settings: dict[str, Any] | None = None, settings_path: str | None = None):
        self.settings = create_default_settings()
        self.source: Path | None = None
        if settings:
            _deep_merge(self.settings, copy.deepcopy(settings))
        if settings_path:
            self.load(settings_path)

    # File I/O ----------------------------------------------------------

    def load(self, settings_path: str | os.PathLike) -> "RunConfig":
        """Merge a JSON or YAML file into the current settings.

        Raises:
            FileNotFoundError: If the file does not exist.
            ConfigError: If the file cannot be parsed or has an unsupported extension.
        """
        path = Path(settings_path)
        if not path.exists():
            logger.error(f"Settings file not found: {path}")
            raise FileNotFoundError(f"Settings file not found: {path}")
        ext = path.suffix.lower()
        try:
            if ext == ".json":
                with open(path, encoding="utf-8") as f:
                    loaded = json.load(f)
            elif ext in (".yaml", ".yml"):
                try:
                    import yaml
                except ImportError:
                    logger.error("YAML support requires PyYAML. Install with: pip install pyyaml")
                    raise ConfigError(
                        "settings_path", str(path), "PyYAML is not installed"
                    ) from None
                with open(path, encoding="utf-8") as f:
                    loaded = yaml.safe_load(f) or {}
            else:
                raise ConfigError("settings_path", str(path), f"unsupported format '{ext}'")
        except (json.JSONDecodeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError("settings_path", str(path), f"cannot parse: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("settings_path", str(path), "top level must be a mapping")
        _deep_merge(self.settings, loaded)
        self.source = path
        logger.info(f"Settings loaded from {path}")
        return self

    def save(self, settings_path: str | os.PathLike) -> Path:
        path = Path(settings_path)
        ext = path.suffix.lower()
        if ext in (".yaml", ".yml"):
            import yaml

            text = yaml.safe_dump(self.settings, default_flow_style=False, sort_keys=False)
        else:
            text = json.dumps(self.settings, indent=2)
        atomic_write(path, text)
        logger.info(f"Settings saved to {path}")
        return path

    # Access ------------------------------------------------------------

    def get_value(self, path: str, default: Any = None) -> Any:
        value: Any = self.settings
        for key in path.split("."):
            if not isinstance(value, dict) or key not in value:
                return default
            value = value[key]
        return value

    def set_value(self, path: str, value: Any) -> None:
        keys = path.split(".")
        setting = self.settings
        for key in keys[:-1]:
            if not isinstance(setting.get(key), dict):
                setting[key] = {}
            setting = setting[key]
        setting[keys[-1]] = value

    def apply_overrides(self, assignments: Iterable[str]) -> "RunConfig":
        for assignment in assignments:
            path, value = parse_override(assignment)
            self.set_value(path, value)
            logger.debug(f"Override {path} = {value!r}")
        return self

    def copy(self) -> "RunConfig":
        clone = RunConfig()
        clone.settings = copy.deepcopy(self.settings)
        clone.source = self.source
        return clone

    # Validation --------------------------------------------------------

    def _require_positive_int(self, path: str) -> int:
        value = self.get_value(path)
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError(path, value, "must be a positive integer")
        return value

    def _require_range(self, path: str, low: float, high: float, *, low_open: bool,
                       high_open: bool) -> float:
        value = self.get_value(path)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, value, "must be a number")
        too_low = value <= low if low_open else value < low
        too_high = value >= high if high_open else value > high
        if too_low or too_high:
            interval = f"{'(' if low_open else '['}{low}, {high}{')' if high_open else ']'}"
            raise ConfigError(path, value, f"must lie in {interval}")
        return float(value)

    def validate(self) -> "RunConfig":
        """Check every field the pipeline reads.

        Raises:
            ConfigError: Naming the first offending field and its value.
        """
        self._require_range("target_ratio", 0.0, 1.0, low_open=True, high_open=False)
        seed = self.get_value("run.seed")
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError("run.seed", seed, "must be an integer")

        corpus_path = self.get_value("corpus.path")
        if corpus_path is not None and not Path(corpus_path).exists():
            raise ConfigError("corpus.path", corpus_path, "file does not exist")
        ratios = self.get_value("corpus.split_ratios")
        if (
            not isinstance(ratios, list)
            or len(ratios) != 3
            or any(not isinstance(r, (int, float)) or r < 0 for r in ratios)
            or abs(sum(ratios) - 1.0) > 1e-9
        ):
            raise ConfigError(
                "corpus.split_ratios", ratios, "need three nonnegative ratios summing to 1"
            )
        for path in ("corpus.batch_size", "corpus.seq_len", "model.model_dim", "model.n_layers",
                     "model.heads", "model.inner_dim", "profiling.batch_size",
                     "profiling.seq_len", "phase1.epochs", "phase2.epochs"):
            self._require_positive_int(path)
        if self.get_value("profiling.repetitions", 0) < 10:
            raise ConfigError("profiling.repetitions", self.get_value("profiling.repetitions"),
                              "must be at least 10")
        if self.get_value("profiling.warmup", 0) < 3:
            raise ConfigError("profiling.warmup", self.get_value("profiling.warmup"),
                              "must be at least 3")
        precision = self.get_value("profiling.precision")
        if precision not in ("fp64", "fp32"):
            raise ConfigError("profiling.precision", precision, "must be 'fp64' or 'fp32'")

        self._require_range("phase1.arch_data_fraction", 0.0, 1.0, low_open=True, high_open=False)
        self._require_range("phase1.arch_warmup_fraction", 0.0, 1.0, low_open=False, high_open=True)
        self._require_range("phase1.temperature_anneal_rate", 0.0, 1.0, low_open=True,
                            high_open=False)
        self._require_range("phase1.initial_temperature", 0.0, float("inf"), low_open=True,
                            high_open=True)
        self._require_range("phase2.balance_coefficient", 0.0, float("inf"), low_open=False,
                            high_open=True)
        for path in ("phase1.dropout", "phase1.moe_dropout", "phase2.dropout",
                     "phase2.moe_dropout"):
            self._require_range(path, 0.0, 1.0, low_open=False, high_open=True)

        model_dim = self.get_value("model.model_dim")
        menu = self.get_value("search_space.menu")
        if not isinstance(menu, list) or not menu:
            raise ConfigError("search_space.menu", menu, "must be a nonempty list of block keys")
        for i, key in enumerate(menu):
            self._check_key(f"search_space.menu[{i}]", key, model_dim)
        if len(set(menu)) != len(menu):
            raise ConfigError("search_space.menu", menu, "contains duplicate block keys")
        slots = self.get_value("backbone.slots")
        if slots is not None:
            if not isinstance(slots, list) or not slots:
                raise ConfigError("backbone.slots", slots, "must be null or a nonempty list")
            for i, key in enumerate(slots):
                self._check_key(f"backbone.slots[{i}]", key, model_dim)
        elif model_dim % self.get_value("model.heads") != 0:
            raise ConfigError("model.heads", self.get_value("model.heads"),
                              f"must divide model.model_dim ({model_dim})")
        return self

    @staticmethod
    def _check_key(field_name: str, key: Any, model_dim: int) -> None:
        try:
            parse_block_key(key).validate_for(model_dim)
        except SpecError as e:
            raise ConfigError(field_name, key, str(e)) from None

    # Typed views -------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.get_value("run.seed", 0))

    @property
    def target_ratio(self) -> float:
        return float(self.get_value("target_ratio"))

    @property
    def output_dir(self) -> Path:
        return Path(self.get_value("run.output_dir"))

    @property
    def progress_bar(self) -> bool:
        return bool(self.get_value("run.progress_bar", True))

    def backbone(self):
        from ..search.supernet import BackboneSpec

        model = self.settings["model"]
        slots = self.get_value("backbone.slots")
        if slots is None:
            return BackboneSpec.interleaved(
                model["model_dim"], model["n_layers"], model["heads"], model["inner_dim"]
            )
        return BackboneSpec(model["model_dim"], tuple(slots))

    def search_space(self):
        from ..search.supernet import SearchSpace

        return SearchSpace.uniform(self.get_value("search_space.menu"), len(self.backbone()))

    def profiling_context(self):
        from ..search.latency import ProfilingContext

        prof = self.settings["profiling"]
        return ProfilingContext(
            batch_size=prof["batch_size"],
            seq_len=prof["seq_len"],
            model_dim=self.get_value("model.model_dim"),
            precision=prof["precision"],
        )

    def phase1_config(self):
        from ..search.engine import Phase1Config

        fields = {k: v for k, v in self.settings["phase1"].items()}
        return self._build("phase1", Phase1Config, fields, target_ratio=self.target_ratio,
                           seed=self.seed, progress_bar=self.progress_bar)

    def phase2_config(self):
        from ..search.finalize import Phase2Config

        fields = {k: v for k, v in self.settings["phase2"].items()}
        return self._build("phase2", Phase2Config, fields, seed=self.seed,
                           progress_bar=self.progress_bar)

    @staticmethod
    def _build(section: str, cls, fields: dict[str, Any], **extra: Any):
        try:
            return cls(**fields, **extra)
        except TypeError as e:
            raise ConfigError(section, sorted(fields), f"unexpected field: {e}") from None
        except MoESearchError as e:
            raise ConfigError(section, fields, str(e)) from None

    def __repr__(self) -> str:
        return f"RunConfig(source={self.source})"


def load_run_config(
    path: str | os.PathLike | None = None, overrides: Iterable[str] = ()
) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``; validated."""
    config = RunConfig()
    if path is not None:
        config.load(path)
    config.apply_overrides(overrides)
    return config.validate()
