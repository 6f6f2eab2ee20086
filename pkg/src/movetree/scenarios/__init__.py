"""Bundled scenario files and scenario loading."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..netsim import SimConfig, SimEvent, parse_scenario


def bundled_names() -> list[str]:
    names = []
    for entry in resources.files(__name__).iterdir():
        if entry.name.endswith(".scen"):
            names.append(entry.name[: -len(".scen")])
    return sorted(names)


def load_scenario(name_or_path: str) -> tuple[SimConfig, list[SimEvent]]:
    """Load a bundled scenario by name, or any scenario file by path."""
    bundle = resources.files(__name__).joinpath(f"{name_or_path}.scen")
    if bundle.is_file():
        return parse_scenario(bundle.read_text())
    path = Path(name_or_path)
    if path.is_file():
        return parse_scenario(path.read_text())
    raise FileNotFoundError(
        f"no scenario named {name_or_path!r}; bundled: {', '.join(bundled_names())}"
    )
