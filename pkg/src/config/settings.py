"""Configuration loading for bench specs, mixtures and task presets.

Config files are flat YAML mappings. Mixture entries use dotted keys:
``weights``, ``mean.<k>`` and ``cov.<k>`` (a scalar covariance means
scalar * I). Inline tasks prefix them with ``source.`` and ``target.``.
"""

from pathlib import Path
from typing import Any

import numpy as np
import yaml
from loguru import logger
from pydantic import ValidationError

from src.config.models import BenchSpec
from src.core.domain_models import EditTask, GaussianMixture
from src.core.errors import ConfigError

PAIRED_TWO_MODE = "paired-two-mode"
IDENTITY_TWO_MODE = "identity-two-mode"

_TASK_PREFIXES = ("source.", "target.")
_TASK_KEYS = ("task", "task_file", "pairing")


# --- Presets ---


def paired_two_mode() -> EditTask:
    """Two source modes at (-3, -1) and (-3, 1), target modes shifted by (+6, 0)."""
    source = GaussianMixture.isotropic(
        weights=[0.5, 0.5], means=[[-3.0, -1.0], [-3.0, 1.0]], variance=0.3
    )
    return EditTask(
        name=PAIRED_TWO_MODE, source=source, target=source.shifted([6.0, 0.0]), pairing=(0, 1)
    )


def identity_two_mode() -> EditTask:
    """Source and target are the same mixture; every edit should be the identity."""
    source = paired_two_mode().source
    return EditTask(name=IDENTITY_TWO_MODE, source=source, target=source, pairing=(0, 1))


TASK_PRESETS = {
    PAIRED_TWO_MODE: paired_two_mode,
    IDENTITY_TWO_MODE: identity_two_mode,
}


def preset_task(name: str) -> EditTask:
    try:
        return TASK_PRESETS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown task preset '{name}', expected one of {sorted(TASK_PRESETS)}", key="task"
        ) from None


# --- YAML helpers ---


def _key_lines(text: str) -> dict[str, int]:
    """1-based line of every top-level key, for error messages."""
    node = yaml.compose(text, Loader=yaml.SafeLoader)
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {str(k.value): k.start_mark.line + 1 for k, _ in node.value}


def _read_flat_yaml(path: Path) -> tuple[dict[str, Any], dict[str, int]]:
    if not path.exists():
        raise FileNotFoundError(f"Configuration file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(e, "problem", None) or str(e)
        raise ConfigError(f"cannot parse {path}: {problem}", line=line) from e
    if raw is None:
        return {}, lines
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a key-value mapping", line=1)
    return {str(k): v for k, v in raw.items()}, lines


# --- Mixtures and tasks ---


def mixture_from_flat(entries: dict[str, Any], prefix: str = "") -> GaussianMixture:
    """Build a mixture from ``weights``, ``mean.<k>``, ``cov.<k>`` entries."""
    weights_key = f"{prefix}weights"
    if weights_key not in entries:
        raise ConfigError("mixture needs weights", key=weights_key)
    weights = np.asarray(entries[weights_key], dtype=np.float64)
    k_count = weights.size
    means, covs = [], []
    for k in range(k_count):
        mean_key, cov_key = f"{prefix}mean.{k}", f"{prefix}cov.{k}"
        if mean_key not in entries:
            raise ConfigError(f"missing mean of component {k}", key=mean_key)
        mean = np.asarray(entries[mean_key], dtype=np.float64)
        d = mean.size
        cov = np.asarray(entries.get(cov_key, 1.0), dtype=np.float64)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(d)
        means.append(mean)
        covs.append(cov)
    expected = {weights_key} | {f"{prefix}{n}.{k}" for n in ("mean", "cov") for k in range(k_count)}
    for key in entries:
        if key.startswith(prefix) and key not in expected:
            raise ConfigError("unknown mixture key", key=key)
    try:
        return GaussianMixture(
            weights=weights, means=np.stack(means), covariances=np.stack(covs)
        )
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"invalid mixture: {e}", key=prefix.rstrip(".") or None) from e


def mixture_to_flat(gmm: GaussianMixture, prefix: str = "") -> dict[str, Any]:
    entries: dict[str, Any] = {f"{prefix}weights": gmm.weights.tolist()}
    for k in range(gmm.n_components):
        entries[f"{prefix}mean.{k}"] = gmm.means[k].tolist()
        entries[f"{prefix}cov.{k}"] = gmm.covariances[k].tolist()
    return entries


def load_mixture(path: Path) -> GaussianMixture:
    """Load a single mixture file."""
    raw, lines = _read_flat_yaml(Path(path))
    try:
        return mixture_from_flat(raw)
    except ConfigError as e:
        raise ConfigError(str(e), line=lines.get(e.key or "")) from e


def load_task_file(path: Path) -> EditTask:
    """Load a task file holding ``source.*``, ``target.*`` and ``pairing``."""
    raw, lines = _read_flat_yaml(Path(path))
    try:
        return _task_from_flat(raw, name=Path(path).stem)
    except ConfigError as e:
        raise ConfigError(str(e), line=lines.get(e.key or "")) from e


def _task_from_flat(entries: dict[str, Any], name: str) -> EditTask:
    source = mixture_from_flat(entries, "source.")
    target = mixture_from_flat(entries, "target.")
    pairing = tuple(entries.get("pairing", range(source.n_components)))
    for key in entries:
        if not key.startswith(_TASK_PREFIXES) and key != "pairing":
            raise ConfigError("unknown task key", key=key)
    try:
        return EditTask(name=name, source=source, target=target, pairing=pairing)
    except ValidationError as e:
        raise ConfigError(f"invalid task: {e.errors()[0]['msg']}", key="pairing") from e


def task_to_flat(task: EditTask) -> dict[str, Any]:
    entries = mixture_to_flat(task.source, "source.")
    entries.update(mixture_to_flat(task.target, "target."))
    entries["pairing"] = list(task.pairing)
    return entries


def _resolve_task(raw: dict[str, Any], base_dir: Path) -> tuple[EditTask, str]:
    task_entries = {k: v for k, v in raw.items() if k.startswith(_TASK_PREFIXES) or k == "pairing"}
    if task_entries:
        if "task" in raw or "task_file" in raw:
            raise ConfigError("inline task keys cannot be combined with task or task_file")
        return _task_from_flat(task_entries, name=str(raw.get("name", "inline"))), "inline"
    if "task_file" in raw:
        task_path = Path(raw["task_file"])
        if not task_path.is_absolute():
            task_path = base_dir / task_path
        return load_task_file(task_path), str(raw["task_file"])
    label = str(raw.get("task", PAIRED_TWO_MODE))
    return preset_task(label), label


# --- Bench spec ---


def _wrap_validation(e: ValidationError, lines: dict[str, int]) -> ConfigError:
    first = e.errors()[0]
    key = str(first["loc"][0]) if first["loc"] else None
    msg = str(first["msg"]).removeprefix("Value error, ")
    if first["type"] == "extra_forbidden":
        msg = "unknown key"
    return ConfigError(msg, key=key, line=lines.get(key or ""))


def bench_spec_from_dict(raw: dict[str, Any], base_dir: Path = Path(".")) -> BenchSpec:
    """Validate a flat mapping into a BenchSpec."""
    return _bench_spec_from_dict(raw, {}, base_dir)


def _bench_spec_from_dict(
    raw: dict[str, Any], lines: dict[str, int], base_dir: Path
) -> BenchSpec:
    try:
        task, label = _resolve_task(raw, base_dir)
    except ConfigError as e:
        if e.line is None and e.key is not None and e.key in lines:
            raise ConfigError(str(e), line=lines[e.key]) from e
        raise
    fields = {
        k: v
        for k, v in raw.items()
        if not k.startswith(_TASK_PREFIXES) and k not in _TASK_KEYS
    }
    try:
        return BenchSpec(task=task, task_label=label, **fields)
    except ValidationError as e:
        raise _wrap_validation(e, lines) from e


def load_config(config_path: Path = Path("config/config.yaml")) -> BenchSpec:
    """Load a bench spec from a flat YAML file.

    Args:
        config_path: Path to the YAML document; an empty file yields all defaults

    Returns:
        Validated bench spec with the task resolved

    Raises:
        FileNotFoundError: If the file doesn't exist
        ConfigError: On parse errors (with line number), unknown keys or
            invariant violations (with the offending key)
    """
    config_path = Path(config_path)
    logger.info(f"Loading configuration from {config_path}")
    raw, lines = _read_flat_yaml(config_path)
    spec = _bench_spec_from_dict(raw, lines, config_path.parent)
    logger.debug(
        f"Loaded spec '{spec.name}': task={spec.task_label}, "
        f"{len(spec.methods)} methods, {len(spec.grid_points())} grid points"
    )
    return spec


def spec_to_flat(spec: BenchSpec) -> dict[str, Any]:
    """Flat mapping that reloads to an equivalent bench config, with the task inlined."""
    data = spec.model_dump(mode="json", exclude={"task", "task_label", "output_dir"})
    data["methods"] = [str(m) for m in spec.methods]
    if spec.grid is not None:
        data["grid"] = [[n_max, s_tar] for n_max, s_tar in spec.grid]
    if spec.n_avg_grid is not None:
        data["n_avg_grid"] = list(spec.n_avg_grid)
    data = {k: v for k, v in data.items() if v is not None}
    data.update(task_to_flat(spec.task))
    return data


def dump_snapshot(spec: BenchSpec) -> str:
    """Resolved bench config as flat YAML text."""
    return yaml.safe_dump(spec_to_flat(spec), sort_keys=False, default_flow_style=None)
