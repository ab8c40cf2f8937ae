"""Figure recipes: what to draw, from which files, to where.

A recipe is a small JSON document:

    {"kind": "trajectory" | "ellipses" | "convergence" | "bridge" | "fields",
     "inputs": {...kind-specific file paths...},
     "style": {"dpi": 120, "figsize": [6.0, 5.0], "title": "..."},
     "output": "figure.png"}

Recipes only reference the simulation CLI's documented CSV/JSON outputs; they
never compute anything new from model internals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class RecipeError(ValueError):
    """A recipe failed validation (unknown kind, missing input, bad schema)."""


KINDS = ("trajectory", "ellipses", "convergence", "bridge", "fields")

_REQUIRED_INPUTS = {
    "trajectory": ("trajectory",),
    "ellipses": ("moments",),
    "convergence": ("trace",),
    "bridge": ("bridges", "source", "target"),
    "fields": ("config",),
}

_OPTIONAL_INPUTS = {
    "trajectory": (),
    "ellipses": ("observed",),
    "convergence": (),
    "bridge": (),
    "fields": ("estimated",),
}


@dataclass
class FigureRecipe:
    kind: str
    inputs: dict
    output: str
    style: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RecipeError(f"kind: unknown figure kind {self.kind!r}; "
                              f"expected one of {KINDS}")
        required = _REQUIRED_INPUTS[self.kind]
        allowed = set(required) | set(_OPTIONAL_INPUTS[self.kind])
        for key in required:
            if key not in self.inputs:
                raise RecipeError(f"inputs.{key}: required for kind {self.kind!r}")
        for key in self.inputs:
            if key not in allowed:
                raise RecipeError(f"inputs.{key}: not understood by kind {self.kind!r}")
        for key, value in self.inputs.items():
            paths = value if isinstance(value, list) else [value]
            for p in paths:
                if not self.resolve(p).exists():
                    raise RecipeError(f"inputs.{key}: file not found: {p}")

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def dpi(self) -> int:
        return int(self.style.get("dpi", 120))

    @property
    def figsize(self):
        return tuple(self.style.get("figsize", (6.0, 5.0)))

    @property
    def title(self) -> str | None:
        return self.style.get("title")


def load_recipe(path) -> FigureRecipe:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise RecipeError(f"recipe file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise RecipeError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise RecipeError("recipe must be a JSON object")
    for key in ("kind", "inputs", "output"):
        if key not in obj:
            raise RecipeError(f"{key}: required recipe field")
    return FigureRecipe(kind=obj["kind"], inputs=obj["inputs"], output=obj["output"],
                        style=obj.get("style", {}), base_dir=path.parent)
