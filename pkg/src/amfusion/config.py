"""
Run configuration.

Two file formats feed the same flat key space:

* ``key = value`` text files (UTF-8, ``#`` comments);
* YAML profiles under ``configs/`` with sections ``arch``, ``loss``,
  ``ssim`` and ``train``. A profile may name another profile in the same
  directory with ``extends: <name>``; its values are loaded first.

Command-line flags override file values (see ``cli``).
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Union

import yaml

from src.amfusion.errors import ConfigError, DataIOError
from src.amfusion.losses import LossConfig, LossWeights, SsimConfig
from src.amfusion.nn.params import ArchConfig
from src.amfusion.training import TrainConfig

logger = logging.getLogger(__name__)


def parse_bool(raw: str) -> bool:
    value = str(raw).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass(frozen=True)
class Key:
    section: str
    parse: Callable[[str], Any]
    default: Any
    help: str


KEYS: Dict[str, Key] = {
    "base_channels": Key("arch", int, 4, "base channel width c0"),
    "ca_reduction": Key("arch", int, 4, "channel-attention bottleneck reduction r"),
    "image_side": Key("arch", int, 64, "training crop side"),
    "use_attention": Key("arch", parse_bool, True, "enable the parallel attention block"),
    "alpha1": Key("loss", float, 1.0, "weight of the pixel loss"),
    "alpha2": Key("loss", float, 1.0, "weight of the SSIM loss"),
    "alpha3": Key("loss", float, 2.0, "weight of the MS-SSIM/L1 loss (0 disables it)"),
    "alpha4": Key("loss", float, 0.005, "weight of the gradient loss"),
    "beta": Key("loss", float, 0.0025, "L1 share inside the MS-SSIM/L1 loss"),
    "pixel_squared": Key("loss", parse_bool, False, "use the squared norm in the pixel loss"),
    "ssim_window": Key("ssim", int, 11, "Gaussian window size"),
    "ssim_sigma": Key("ssim", float, 1.5, "Gaussian window sigma"),
    "msssim_scales": Key("ssim", int, 3, "number of MS-SSIM scales"),
    "batch_size": Key("train", int, 4, "images per optimizer step"),
    "iterations": Key("train", int, 200, "optimizer steps (epochs with epoch_mode)"),
    "epoch_mode": Key("train", parse_bool, False, "count iterations as epochs"),
    "learning_rate": Key("train", float, 1e-3, "Adam learning rate"),
    "adam_beta1": Key("train", float, 0.9, "Adam first-moment decay"),
    "adam_beta2": Key("train", float, 0.999, "Adam second-moment decay"),
    "adam_eps": Key("train", float, 1e-8, "Adam epsilon"),
    "seed": Key("train", int, 0, "seed for initialization and batch sampling"),
    "checkpoint_interval": Key("train", int, 0, "steps between checkpoints (0: final only)"),
}

SECTIONS = ("arch", "loss", "ssim", "train")


def defaults() -> Dict[str, Any]:
    return {name: key.default for name, key in KEYS.items()}


def coerce(name: str, raw: Any, where: str = "") -> Any:
    """
    Parse one value for ``name``.

    Raises:
        ConfigError: If the key is unknown or the value does not parse
    """
    prefix = f"{where}: " if where else ""
    if name not in KEYS:
        raise ConfigError(f"{prefix}unknown key {name!r}")
    key = KEYS[name]
    if key.parse is int and isinstance(raw, bool):
        raise ConfigError(f"{prefix}{name} expects an integer, got {raw!r}")
    try:
        if key.parse is int and isinstance(raw, float):
            if not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        return key.parse(raw) if not isinstance(raw, str) else key.parse(raw.strip())
    except (TypeError, ValueError):
        raise ConfigError(f"{prefix}invalid value {raw!r} for {name}") from None


def parse_flat(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Parse ``key = value`` lines; unknown keys fail with their line number."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        name, raw = (part.strip() for part in body.split("=", 1))
        values[name] = coerce(name, raw, f"{source}:{lineno}")
    return values


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc


def _load_yaml_tree(path: Path, seen: tuple = ()) -> Dict[str, Any]:
    if path in seen:
        raise ConfigError(f"{path}: circular 'extends' chain")
    try:
        tree = yaml.safe_load(_read_text(path)) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    parent = tree.pop("extends", None)
    merged: Dict[str, Any] = {}
    if parent:
        parent_path = path.with_name(f"{parent}{path.suffix}")
        merged = _load_yaml_tree(parent_path, seen + (path,))
    for section, body in tree.items():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section {section!r} (expected one of {', '.join(SECTIONS)})")
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: section {section!r} must be a mapping")
        for name, raw in body.items():
            if name not in KEYS or KEYS[name].section != section:
                raise ConfigError(f"{path}: unknown key {name!r} in section {section!r}")
            merged[name] = coerce(name, raw, f"{path} [{section}]")
    return merged


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a flat or YAML config file into a key -> value map (no defaults)."""
    path = Path(path)
    if path.suffix.lower() in (".yaml", ".yml"):
        values = _load_yaml_tree(path)
    else:
        values = parse_flat(_read_text(path), str(path))
    logger.debug("loaded config path=%s keys=%d", path, len(values))
    return values


def resolve(file_values: Optional[Mapping[str, Any]] = None, overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """Defaults, then file values, then non-None overrides."""
    values = defaults()
    values.update(file_values or {})
    for name, value in (overrides or {}).items():
        if value is not None:
            values[name] = coerce(name, value, "command line")
    return values


def build_train_config(values: Mapping[str, Any]) -> TrainConfig:
    """
    Assemble and validate a TrainConfig from a resolved key map.

    Raises:
        ConfigError: If any type invariant fails
    """
    v = dict(defaults())
    v.update(values)
    arch = ArchConfig(
        base_channels=v["base_channels"],
        ca_reduction=v["ca_reduction"],
        image_side=v["image_side"],
        use_attention=v["use_attention"],
    )
    ssim = SsimConfig(window=v["ssim_window"], sigma=v["ssim_sigma"], scales=v["msssim_scales"])
    if arch.image_side < ssim.min_side:
        raise ConfigError(
            f"image_side {arch.image_side} is below {ssim.min_side}, the minimum for {ssim.scales} MS-SSIM scales"
        )
    weights = LossWeights(alpha1=v["alpha1"], alpha2=v["alpha2"], alpha3=v["alpha3"], alpha4=v["alpha4"], beta=v["beta"])
    return TrainConfig(
        arch=arch,
        loss=LossConfig(weights=weights, ssim=ssim, pixel_squared=v["pixel_squared"]),
        batch_size=v["batch_size"],
        iterations=v["iterations"],
        epoch_mode=v["epoch_mode"],
        learning_rate=v["learning_rate"],
        adam_beta1=v["adam_beta1"],
        adam_beta2=v["adam_beta2"],
        adam_eps=v["adam_eps"],
        seed=v["seed"],
        checkpoint_interval=v["checkpoint_interval"],
    )
