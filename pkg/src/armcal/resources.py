"""Access to the data files bundled with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .chain import Chain
from .errors import SpecFileError

# names accepted wherever a chain file is expected
BUILTIN_CHAINS = {
    "kuka-iiwa": "kuka_iiwa.json",
    "kuka-iiwa-reduced": "kuka_iiwa_reduced.json",
}


def data_path(filename: str) -> Path:
    path = resources.files("armcal").joinpath("data", filename)
    return Path(str(path))


def load_chain(spec: str | Path) -> Chain:
    """Load a chain from a builtin name or a file path."""
    name = str(spec)
    if name in BUILTIN_CHAINS:
        return Chain.load(data_path(BUILTIN_CHAINS[name]))
    p = Path(spec)
    if not p.exists():
        raise SpecFileError(
            f"chain {spec!r} is neither a file nor one of {sorted(BUILTIN_CHAINS)}"
        )
    return Chain.load(p)
