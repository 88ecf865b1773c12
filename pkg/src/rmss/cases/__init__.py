"""Bundled synthetic study cases shipped with the package."""

from importlib import resources
from pathlib import Path


def available() -> list[str]:
    """Names of the bundled case files, without extension."""
    root = resources.files(__package__)
    return sorted(p.name[:-2] for p in root.iterdir() if p.name.endswith(".m"))


def case_path(name: str) -> Path:
    """Filesystem path of a bundled case, by bare name or filename."""
    fname = name if name.endswith(".m") else f"{name}.m"
    ref = resources.files(__package__).joinpath(fname)
    if not ref.is_file():
        raise FileNotFoundError(
            f"no bundled case {name!r}; available: {', '.join(available())}"
        )
    return Path(str(ref))
