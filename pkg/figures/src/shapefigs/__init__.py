"""Offline figure rendering for stochastic landmark experiment outputs."""

__version__ = "0.1.0"

from .recipes import FigureRecipe, RecipeError, load_recipe
from .render import render

__all__ = ["FigureRecipe", "RecipeError", "load_recipe", "render"]
