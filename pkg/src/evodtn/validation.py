"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numbers

import numpy as np

from .gp import Node, Target, Unrepairable, check_validity, parse_tree
from .netsim import ScenarioSpec

__all__ = ["check_scenario", "check_tree", "check_target", "check_random_state"]


def check_scenario(spec: object) -> ScenarioSpec:
    """Return ``spec`` if it is a usable scenario, else raise ``ValueError``."""
    if not isinstance(spec, ScenarioSpec):
        raise TypeError(f"expected a ScenarioSpec, got {type(spec).__name__}")
    if spec.n_hosts < 2:
        raise ValueError("a scenario needs at least two hosts")
    if spec.events is None:
        raise ValueError("the scenario generates no messages, so delivery probability is undefined")
    if not spec.end_time > 0 or not spec.update_interval > 0:
        raise ValueError("end time and update interval must be positive")
    lo, hi = spec.events.hosts
    if hi > spec.n_hosts:
        raise ValueError(f"message hosts {lo},{hi} exceed the {spec.n_hosts} hosts in the scenario")
    return spec


def check_target(target: str) -> str:
    return Target.check(target)


def check_tree(tree: Node | str, target: str = Target.PROPHET) -> Node:
    """Parse (if given text) and verify a program tree."""
    node = parse_tree(tree) if isinstance(tree, str) else tree
    if not isinstance(node, Node):
        raise TypeError(f"expected a tree or its text, got {type(tree).__name__}")
    if not check_validity(node, target):
        raise Unrepairable(f"not a valid {target} program: {node}")
    return node


def check_random_state(seed) -> int:
    """Integer seed from ``None``, an int or a numpy ``Generator``."""
    if seed is None:
        return 0
    if isinstance(seed, numbers.Integral):
        if seed < 0:
            raise ValueError("seeds must be non-negative")
        return int(seed)
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2 ** 31))
    raise TypeError(f"cannot use {seed!r} as a seed")
