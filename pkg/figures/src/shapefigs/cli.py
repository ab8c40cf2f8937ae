"""Entry point: shapefigs-render --recipe recipe.json"""

from __future__ import annotations

import argparse
import sys

from .recipes import RecipeError, load_recipe
from .render import render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shapefigs-render",
        description="Render one figure from simulation output files.")
    parser.add_argument("--recipe", required=True, help="path to the recipe JSON")
    args = parser.parse_args(argv)
    try:
        out = render(load_recipe(args.recipe))
    except RecipeError as exc:
        print(f"recipe error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
