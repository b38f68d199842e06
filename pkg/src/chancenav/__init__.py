"""Chance-constrained output-feedback navigation with fused virtual landmarks.

The package synthesizes linear output-feedback controllers that steer a
linear system through convex polytopic cells using noisy landmark
measurements.  Landmarks can be fused into minimum-variance virtual
landmarks before synthesis; safety against wall crossings and progress
through exit faces are enforced as chance constraints tightened into a
convex QCQP.
"""

from importlib import resources as _resources

__version__ = "0.1.0"


def bundled_scenario(name: str) -> str:
    """Absolute path of a scenario JSON shipped with the package."""
    path = _resources.files("chancenav").joinpath("scenarios", f"{name}.json")
    if not path.is_file():
        available = sorted(
            p.name[:-5] for p in _resources.files("chancenav").joinpath("scenarios").iterdir()
            if p.name.endswith(".json"))
        raise FileNotFoundError(f"no bundled scenario {name!r}; available: {available}")
    return str(path)
