#!/usr/bin/env python3
"""
ClickCFA - Configuration Manager

Training recipes, flat key=value configuration files and named configuration
profiles. Settings resolve in this order, later sources winning:

    recipe preset -> --config FILE -> --profile NAME -> explicit command line flags
"""

import os
import logging
from dataclasses import dataclass, fields, replace, asdict
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from assets.errors import UsageError
from assets.utilities import fingerprint

logger = logging.getLogger('clickcfa-config')

CONFIG_DIR_ENV = "CLICKCFA_CONFIG_DIR"
DEFAULT_CONFIG_DIR = "~/.clickcfa"

MODELS = ("gru", "cnn", "ngram3", "ngram4")
CRITERIA = ("none", "C1", "C2")
META_CADENCES = ("batch", "epoch")
WEIGHTING_INITS = ("uniform", "zeros")


@dataclass(frozen=True)
class TrainRecipe:
    """Complete training configuration of one method."""

    name: str = "gru"
    model: str = "gru"
    pretrain: bool = False
    meta: bool = False
    criterion: str = "none"
    hidden_dim: int = 128
    batch_size: int = 32
    lr: float = 0.001
    meta_lr: float = 0.001
    epochs: int = 100
    meta_fraction: float = 0.1
    seed: int = 0
    k_min: int = 2
    k_max: int = 19
    n_clusters: int = 0
    pretrain_epochs: int = 100
    pretrain_lr: float = 0.001
    early_stop_patience: int = 10
    early_stop_delta: float = 1e-5
    gap_marker: bool = False
    folds: int = 5
    stratify: bool = False
    skip_tolerance: float = 1.0
    meta_batch_size: int = 32
    meta_cadence: str = "batch"
    standardize_meta_losses: bool = False
    weighting_hidden: int = 100
    weighting_init: str = "uniform"
    positive_class: int = 1

    def validate(self) -> "TrainRecipe":
        """Raise UsageError for impossible combinations; returns self."""
        if self.model not in MODELS:
            raise UsageError(f"Invalid model: {self.model}. Must be one of {', '.join(MODELS)}")
        if self.criterion not in CRITERIA:
            raise UsageError(f"Invalid criterion: {self.criterion}. Must be C1 or C2")
        if self.meta and self.criterion == "none":
            raise UsageError("meta-learning needs a clustering criterion (C1 or C2)")
        if self.pretrain and self.model != "gru":
            raise UsageError(f"pre-training produces GRU weights and cannot initialise a {self.model} model")
        if self.meta_cadence not in META_CADENCES:
            raise UsageError(f"Invalid meta_cadence: {self.meta_cadence}")
        if self.weighting_init not in WEIGHTING_INITS:
            raise UsageError(f"Invalid weighting_init: {self.weighting_init}")
        if self.positive_class not in (0, 1):
            raise UsageError("positive_class must be 0 or 1")
        for key in ("hidden_dim", "batch_size", "meta_batch_size", "weighting_hidden", "folds"):
            if getattr(self, key) < 1:
                raise UsageError(f"{key} must be positive")
        for key in ("epochs", "pretrain_epochs", "n_clusters", "early_stop_patience"):
            if getattr(self, key) < 0:
                raise UsageError(f"{key} must not be negative")
        for key in ("lr", "meta_lr", "pretrain_lr"):
            if getattr(self, key) < 0:
                raise UsageError(f"{key} must not be negative")
        if not 0 < self.meta_fraction < 0.5:
            raise UsageError("meta_fraction must lie in (0, 0.5)")
        if not 2 <= self.k_min <= self.k_max:
            raise UsageError("cluster range needs 2 <= k_min <= k_max")
        return self

    def to_mapping(self) -> Dict[str, str]:
        return {key: format_value(value) for key, value in asdict(self).items()}

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_mapping())

    @property
    def ngram(self) -> int:
        return {"ngram3": 3, "ngram4": 4}.get(self.model, 0)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "TrainRecipe":
        """Copy with string or typed overrides applied; unknown keys raise UsageError."""
        types = recipe_field_types()
        typed = {}
        for key, value in overrides.items():
            if key not in types:
                raise UsageError(f"Unknown recipe key: {key}")
            typed[key] = parse_value(key, value, types[key]) if isinstance(value, str) else value
        return replace(self, **typed)


def recipe_field_types() -> Dict[str, type]:
    defaults = TrainRecipe()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(TrainRecipe)}


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key: str, text: str, kind: type) -> Any:
    text = text.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise UsageError(f"Invalid value for {key}: {text!r}")
    return text


PRESETS: Dict[str, Dict[str, Any]] = {
    "gru": {},
    "pre-gru": {"pretrain": True},
    "gru-meta-c1": {"meta": True, "criterion": "C1"},
    "gru-meta-c2": {"meta": True, "criterion": "C2"},
    "pre-gru-meta-c1": {"pretrain": True, "meta": True, "criterion": "C1"},
    "pre-gru-meta-c2": {"pretrain": True, "meta": True, "criterion": "C2"},
    "3-gram": {"model": "ngram3"},
    "4-gram": {"model": "ngram4"},
    "cnn": {"model": "cnn"},
}


def preset(name: str) -> TrainRecipe:
    """Built-in recipe of one comparison-table method."""
    if name not in PRESETS:
        raise UsageError(f"Unknown recipe: {name}. Available: {', '.join(PRESETS)}")
    return TrainRecipe(name=name).with_overrides(PRESETS[name]).validate()


def read_flat_config(path: str, multi: bool = False) -> Union[Dict[str, str], List[Tuple[str, str]]]:
    """
    Read a flat `key = value` file.

    Args:
        path: File to read
        multi: Return every pair in file order instead of a dict (repeated keys allowed)

    Returns:
        Dict[str, str] or List[Tuple[str, str]]
    """
    if not os.path.exists(path):
        raise UsageError(f"Configuration file {path} does not exist")
    pairs: List[Tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise UsageError(f"{path}:{line_number}: expected key = value")
            key, value = stripped.split("=", 1)
            pairs.append((key.strip(), value.strip()))
    if multi:
        return pairs
    return dict(pairs)


def write_flat_config(path: str, mapping: Mapping[str, Any], header: Optional[str] = None) -> str:
    lines = [f"# {header}"] if header else []
    lines.extend(f"{key} = {format_value(mapping[key])}" for key in sorted(mapping))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return path


def split_recipe_keys(mapping: Mapping[str, str]) -> Tuple[Dict[str, str], Dict[str, str]]:
    """Separate recipe fields from other (command line) keys."""
    types = recipe_field_types()
    recipe = {k: v for k, v in mapping.items() if k in types}
    extras = {k: v for k, v in mapping.items() if k not in types}
    return recipe, extras


class ConfigManager:
    """Manages recipe profiles for ClickCFA."""

    def __init__(self, config_dir: Optional[str] = None):
        """
        Initialize the configuration manager.

        Args:
            config_dir: Directory to store profiles. Defaults to $CLICKCFA_CONFIG_DIR or ~/.clickcfa
        """
        if config_dir is None:
            config_dir = os.environ.get(CONFIG_DIR_ENV, DEFAULT_CONFIG_DIR)
        self.config_dir = os.path.expanduser(config_dir)
        self.profile_dir = os.path.join(self.config_dir, "profiles")
        os.makedirs(self.profile_dir, exist_ok=True)

    def _get_profile_path(self, profile_name: str) -> str:
        if not profile_name or os.sep in profile_name or profile_name.startswith("."):
            raise UsageError(f"Invalid profile name: {profile_name!r}")
        return os.path.join(self.profile_dir, f"{profile_name}.cfg")

    def save_profile(self, profile_name: str, config: Mapping[str, Any]) -> bool:
        """
        Save a configuration profile.

        Returns:
            bool: True if successful, False otherwise
        """
        try:
            profile_path = self._get_profile_path(profile_name)
            write_flat_config(profile_path, config, header=f"profile {profile_name}")
            logger.info(f"Saved profile '{profile_name}' to {profile_path}")
            return True
        except OSError as e:
            logger.error(f"Failed to save profile '{profile_name}': {str(e)}")
            return False

    def load_profile(self, profile_name: str) -> Optional[Dict[str, str]]:
        """Load a profile; None if it does not exist."""
        profile_path = self._get_profile_path(profile_name)
        if not os.path.exists(profile_path):
            logger.warning(f"Profile '{profile_name}' does not exist")
            return None
        config = read_flat_config(profile_path)
        logger.info(f"Loaded profile '{profile_name}' from {profile_path}")
        return config

    def delete_profile(self, profile_name: str) -> bool:
        try:
            profile_path = self._get_profile_path(profile_name)
            if not os.path.exists(profile_path):
                logger.warning(f"Profile '{profile_name}' does not exist")
                return False
            os.remove(profile_path)
            logger.info(f"Deleted profile '{profile_name}'")
            return True
        except OSError as e:
            logger.error(f"Failed to delete profile '{profile_name}': {str(e)}")
            return False

    def list_profiles(self) -> List[str]:
        return sorted(os.path.splitext(name)[0] for name in os.listdir(self.profile_dir) if name.endswith(".cfg"))

    def args_to_config(self, args) -> Dict[str, Any]:
        """
        Recipe overrides given explicitly on the command line.

        Recipe flags default to None, so only flags the user typed are returned.
        """
        types = recipe_field_types()
        return {
            key: value for key, value in vars(args).items()
            if key in types and key != "name" and value is not None
        }

    def config_to_args(self, config: Mapping[str, str], args):
        """Fill command line arguments that were not given explicitly from a config mapping."""
        for key, value in config.items():
            if hasattr(args, key) and getattr(args, key) is None:
                setattr(args, key, value)
        return args

    def collect_overrides(self, args) -> Tuple[Dict[str, Any], Optional[str]]:
        """
        Recipe overrides from --config, --profile and explicit flags, later sources winning.

        Non-recipe keys of the config file and profile fill missing arguments.

        Returns:
            Tuple[Dict[str, Any], Optional[str]]: Overrides without the recipe name, and the
            recipe name found in the config file or profile
        """
        config_path = getattr(args, "config", None)
        file_config = read_flat_config(config_path) if config_path else {}
        profile_config: Dict[str, str] = {}
        profile_name = getattr(args, "profile", None)
        if profile_name:
            loaded = self.load_profile(profile_name)
            if loaded is None:
                raise UsageError(f"Profile '{profile_name}' does not exist")
            profile_config = loaded

        file_recipe, file_extras = split_recipe_keys(file_config)
        profile_recipe, profile_extras = split_recipe_keys(profile_config)
        self.config_to_args({**file_extras, **profile_extras}, args)

        merged: Dict[str, Any] = {**file_recipe, **profile_recipe, **self.args_to_config(args)}
        name = merged.pop("name", None)
        return merged, name

    def resolve(self, args, recipe_name: Optional[str] = None, default_recipe: str = "gru") -> TrainRecipe:
        """Resolve the recipe of a command: preset, config file, profile, then flags."""
        overrides, stored_name = self.collect_overrides(args)
        name = recipe_name or getattr(args, "recipe", None) or stored_name or default_recipe
        recipe = preset(name) if name in PRESETS else TrainRecipe(name=name)
        return recipe.with_overrides(overrides).validate()
