from __future__ import annotations

from dataclasses import asdict, dataclass, fields
import json
import logging
import os
from pathlib import Path

from .errors import ConfigError


logger = logging.getLogger(__name__)


def _xdg_config_dir() -> Path:
    raw = os.environ.get("XDG_CONFIG_HOME")
    if raw:
        return Path(raw).expanduser()
    return Path.home() / ".config"


def settings_path() -> Path:
    return _xdg_config_dir() / "iq_meta" / "settings.json"


@dataclass
class AnalysisSettings:
    alpha: float = 0.05
    j2_tol: float = 1e-5
    j2_max_iter: int = 10_000
    workers: int = 1


def _valid(name: str, value: object) -> bool:
    if isinstance(value, bool):
        return False
    if name == "alpha":
        return isinstance(value, (int, float)) and 0 < value < 1
    if name == "j2_tol":
        return isinstance(value, (int, float)) and value > 0
    if name in {"j2_max_iter", "workers"}:
        return isinstance(value, int) and value >= 1
    return False


def load_settings() -> AnalysisSettings:
    path = settings_path()
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        return AnalysisSettings()
    except Exception as e:
        logger.warning("ignoring unreadable settings file %s: %s", path, e)
        return AnalysisSettings()

    if not isinstance(data, dict):
        logger.warning("ignoring settings file %s: expected a JSON object", path)
        return AnalysisSettings()

    settings = AnalysisSettings()
    for f in fields(AnalysisSettings):
        if f.name not in data:
            continue
        value = data[f.name]
        if _valid(f.name, value):
            setattr(settings, f.name, float(value) if f.type == "float" else value)
        else:
            logger.warning("ignoring invalid %s=%r in %s", f.name, value, path)
    for name in sorted(set(data) - {f.name for f in fields(AnalysisSettings)}):
        logger.warning("ignoring unknown setting %r in %s", name, path)
    return settings


def save_settings(settings: AnalysisSettings) -> Path:
    for f in fields(AnalysisSettings):
        value = getattr(settings, f.name)
        if not _valid(f.name, value):
            raise ConfigError(f"invalid value {value!r}", key=f.name)

    path = settings_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = asdict(settings)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
