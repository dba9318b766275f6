from importlib import resources
from pathlib import Path
import logging

import tomli

logger = logging.getLogger(__name__)


def data_path(*parts: str) -> Path:
    """Path of a file bundled under ibe_trust/data."""
    return Path(str(resources.files("ibe_trust").joinpath("data", *parts)))


def load_toml(path: str | Path) -> dict:
    with open(path, "rb") as t:
        config = tomli.load(t)
    logger.debug("loaded %s with keys %s", path, sorted(config))
    return config


def load_bundled_toml(*parts: str) -> dict:
    return load_toml(data_path(*parts))
