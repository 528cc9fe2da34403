"""Gradient-free averaged stochastic optimization with online inference.

Subpackages: ``numkernel`` (dense symmetric linear algebra), ``directions``
(random search-direction laws and their noise-inflation matrices),
``models`` (loss oracles with closed-form ground truth), ``kwengine``
(the optimizer), ``plugin_inference`` and ``random_scaling`` (two online
confidence-interval constructions), ``simharness`` (Monte-Carlo
experiment runner), ``cli`` (command line).
"""

from . import (  # noqa: F401
    cli,
    directions,
    kwengine,
    models,
    numkernel,
    plugin_inference,
    random_scaling,
    recipes,
    simharness,
)

__version__ = "0.1.0"
