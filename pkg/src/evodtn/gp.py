"""Strongly-typed GP over router update programs.

Programs are trees of two types, *condition* and *body*. A tree is run once
per host per tick; ``return`` ends that invocation. Trees are immutable
:class:`Node` values and every operator builds new ones.
"""
from __future__ import annotations

import csv
import io
import itertools
import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import routing
from .metrics import SimReport, compute_report
from .netsim import ContactTrace, ScenarioSpec, prepare_contacts
from .routing import RouterKind

__all__ = [
    "CONDITION",
    "BODY",
    "NodeKind",
    "NODE_KINDS",
    "Target",
    "Node",
    "GpTree",
    "GpParams",
    "TreeSyntaxError",
    "Unrepairable",
    "parse_tree",
    "dump_tree",
    "check_validity",
    "repair",
    "grow_random",
    "compile_tree",
    "crossover",
    "mutate",
    "evaluate",
    "EvaluatedIndividual",
    "GenerationRecord",
    "EvolutionResult",
    "evolve",
    "EPIDEMIC_TREE",
    "PROPHET_TREE",
    "DIRECT_DELIVERY_TREE",
    "baseline_tree",
]

CONDITION = "condition"
BODY = "body"


@dataclass(frozen=True)
class NodeKind:
    name: str
    arity: int
    arg_types: tuple[str, ...]
    return_type: str


NODE_KINDS: dict[str, NodeKind] = {k.name: k for k in (
    NodeKind("or", 2, (CONDITION, CONDITION), CONDITION),
    NodeKind("not", 1, (CONDITION,), CONDITION),
    NodeKind("notEqual", 2, (CONDITION, CONDITION), CONDITION),
    NodeKind("if", 2, (CONDITION, BODY), BODY),
    NodeKind("sequence", 2, (BODY, BODY), BODY),
    NodeKind("isTransferring", 0, (), CONDITION),
    NodeKind("canStartTransfer", 0, (), CONDITION),
    NodeKind("update", 0, (), BODY),
    NodeKind("exchangeDeliverableMessages", 0, (), BODY),
    NodeKind("tryAllMessagesToAllConnections", 0, (), BODY),
    NodeKind("tryOtherMessages", 0, (), BODY),
    NodeKind("return", 0, (), BODY),
)}

PROPHET_ONLY = frozenset({"tryOtherMessages"})


class Target:
    """Protocol being improved; decides the terminal set and router state."""

    EPIDEMIC = "epidemic"
    PROPHET = "prophet"

    @staticmethod
    def check(target: str) -> str:
        t = target.lower()
        if t not in (Target.EPIDEMIC, Target.PROPHET):
            raise ValueError(f"unknown target {target!r}")
        return t


def _allowed(target: str) -> dict[str, NodeKind]:
    if target == Target.EPIDEMIC:
        return {n: k for n, k in NODE_KINDS.items() if n not in PROPHET_ONLY}
    return NODE_KINDS


def _terminals(target: str, rtype: str) -> list[str]:
    return [n for n, k in _allowed(target).items() if k.arity == 0 and k.return_type == rtype]


def _functions(target: str, rtype: str, arity: int | None = None) -> list[str]:
    return [n for n, k in _allowed(target).items()
            if k.arity > 0 and k.return_type == rtype and (arity is None or k.arity == arity)]


# ------------------------------------------------------------------- trees

@dataclass(frozen=True)
class Node:
    name: str
    children: tuple["Node", ...] = ()

    def __str__(self) -> str:
        return dump_tree(self)

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)

    def walk(self) -> Iterator["Node"]:
        yield self
        for c in self.children:
            yield from c.walk()

    def paths(self, prefix: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], "Node"]]:
        """Pre-order ``(path, node)`` pairs; a path is a tuple of child indices."""
        yield prefix, self
        for i, c in enumerate(self.children):
            yield from c.paths(prefix + (i,))

    def get(self, path: Sequence[int]) -> "Node":
        node = self
        for i in path:
            node = node.children[i]
        return node

    def replace(self, path: Sequence[int], new: "Node") -> "Node":
        if not path:
            return new
        i = path[0]
        kids = list(self.children)
        kids[i] = kids[i].replace(path[1:], new)
        return Node(self.name, tuple(kids))

    def contains(self, name: str) -> bool:
        return any(n.name == name for n in self.walk())


_uid = itertools.count(1)


@dataclass(frozen=True)
class GpTree:
    """A program tree plus where it came from."""

    root: Node
    origin: str = "random"
    unique_id: str = field(default_factory=lambda: f"T{next(_uid)}", compare=False)

    def __str__(self) -> str:
        return dump_tree(self.root)


def _root(t: Node | GpTree) -> Node:
    return t.root if isinstance(t, GpTree) else t


class TreeSyntaxError(ValueError):
    pass


_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|([(),]))")


def parse_tree(text: str) -> Node:
    """Parse ``name(child, child)`` prefix text. Names are not checked against
    the grammar here, so invalid trees can be loaded and repaired."""
    pos = 0
    tokens = []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise TreeSyntaxError(f"unexpected character {text[pos:pos + 1]!r} at offset {pos}")
        tokens.append((m.group(1) or m.group(2), m.start(m.lastindex)))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    it = 0

    def parse() -> Node:
        nonlocal it
        if it >= len(tokens):
            raise TreeSyntaxError("unexpected end of input")
        tok, off = tokens[it]
        if not (tok[0].isalpha() or tok[0] == "_"):
            raise TreeSyntaxError(f"expected a name at offset {off}, got {tok!r}")
        it += 1
        kids = []
        if it < len(tokens) and tokens[it][0] == "(":
            it += 1
            while True:
                kids.append(parse())
                if it >= len(tokens):
                    raise TreeSyntaxError("unclosed '('")
                sep, off = tokens[it]
                it += 1
                if sep == ")":
                    break
                if sep != ",":
                    raise TreeSyntaxError(f"expected ',' or ')' at offset {off}")
        return Node(tok, tuple(kids))

    node = parse()
    if it != len(tokens):
        raise TreeSyntaxError(f"trailing input at offset {tokens[it][1]}")
    return node


def dump_tree(t: Node | GpTree) -> str:
    node = _root(t)
    if not node.children:
        return node.name
    return f"{node.name}({', '.join(dump_tree(c) for c in node.children)})"


# ---------------------------------------------------------------- validity

def _typed_ok(node: Node, expected: str, kinds: dict[str, NodeKind]) -> bool:
    kind = kinds.get(node.name)
    if kind is None or kind.return_type != expected or len(node.children) != kind.arity:
        return False
    return all(_typed_ok(c, t, kinds) for c, t in zip(node.children, kind.arg_types))


def check_validity(t: Node | GpTree, target: str = Target.PROPHET) -> bool:
    """Arity and type check from a body-typed root, plus at least one ``return``."""
    node = _root(t)
    return _typed_ok(node, BODY, _allowed(Target.check(target))) and node.contains("return")


class Unrepairable(Exception):
    """The tree cannot be turned into a valid program."""


def _natural_type(node: Node) -> str | None:
    kind = NODE_KINDS.get(node.name)
    return kind.return_type if kind else None


def _repair_node(node: Node, expected: str, target: str, rng: np.random.Generator) -> Node:
    kinds = _allowed(target)
    if node.name not in NODE_KINDS:
        raise Unrepairable(f"unknown node {node.name!r}")
    kind = kinds.get(node.name)
    k = len(node.children)
    if k == 0 or (kind is None and NODE_KINDS[node.name].arity == 0):
        if kind is not None and kind.arity == 0 and kind.return_type == expected:
            return node
        opts = _terminals(target, expected)
        return Node(opts[int(rng.integers(len(opts)))])
    if not (kind is not None and kind.arity == k and kind.return_type == expected):
        cands = _functions(target, expected, k)
        if not cands:
            if NODE_KINDS[node.name].arity == 0:
                return _repair_node(Node(node.name), expected, target, rng)
            raise Unrepairable(f"no {expected} node takes {k} arguments (at {node.name!r})")
        natural = tuple(_natural_type(c) for c in node.children)
        matching = [c for c in cands if NODE_KINDS[c].arg_types == natural]
        pool = matching or cands
        kind = NODE_KINDS[pool[int(rng.integers(len(pool)))]]
    kids = tuple(_repair_node(c, t, target, rng) for c, t in zip(node.children, kind.arg_types))
    return Node(kind.name, kids)


def _body_leaf_paths(node: Node, expected: str = BODY, prefix: tuple[int, ...] = ()) -> list[tuple[int, ...]]:
    kind = NODE_KINDS[node.name]
    if not node.children:
        return [prefix] if expected == BODY else []
    out = []
    for i, (c, t) in enumerate(zip(node.children, kind.arg_types)):
        out.extend(_body_leaf_paths(c, t, prefix + (i,)))
    return out


def _ensure_return(node: Node, rng: np.random.Generator) -> Node:
    if node.contains("return"):
        return node
    leaves = _body_leaf_paths(node)
    return node.replace(leaves[int(rng.integers(len(leaves)))], Node("return"))


def repair(t: Node | GpTree, rng: np.random.Generator, target: str = Target.PROPHET) -> Node:
    """Return a valid version of ``t`` or raise :class:`Unrepairable`.

    Valid trees come back unchanged and draw nothing from ``rng``. Otherwise
    mistyped leaves become random terminals of the slot's type, inner nodes
    whose arity or types do not fit become a random function of the same
    arity (preferring ones whose argument types match the children), and a
    random body leaf becomes ``return`` if none is present.
    """
    target = Target.check(target)
    node = _root(t)
    if check_validity(node, target):
        return node
    fixed = _ensure_return(_repair_node(node, BODY, target, rng), rng)
    if not check_validity(fixed, target):
        raise Unrepairable(dump_tree(fixed))
    return fixed


# -------------------------------------------------------------- generation

def grow_random(rng: np.random.Generator, target: str = Target.PROPHET, max_depth: int = 5,
                max_nodes: int = 50, terminal_prob: float = 0.5) -> Node:
    """Grow-method tree within both limits; a body leaf is turned into
    ``return`` when none was drawn.

    Below the root a node is a terminal with probability ``terminal_prob``
    (always, when no function fits the depth and node limits), otherwise a
    uniformly chosen function.
    """
    if max_depth < 1 or max_nodes < 1:
        raise ValueError("limits must be at least 1")
    target = Target.check(target)

    def grow(expected: str, depth: int, budget: int) -> Node:
        funcs = []
        if depth < max_depth:
            funcs = [f for f in _functions(target, expected) if 1 + NODE_KINDS[f].arity <= budget]
        terms = _terminals(target, expected)
        # the root is a function whenever the limits allow one, as in the classic grow method
        if funcs and (depth == 1 or rng.random() >= terminal_prob):
            name = funcs[int(rng.integers(len(funcs)))]
        else:
            name = terms[int(rng.integers(len(terms)))]
        kind = NODE_KINDS[name]
        kids = []
        left = budget - 1
        for i, t in enumerate(kind.arg_types):
            reserve = kind.arity - i - 1
            child = grow(t, depth + 1, left - reserve)
            left -= child.size()
            kids.append(child)
        return Node(name, tuple(kids))

    return _ensure_return(grow(BODY, 1, max_nodes), rng)


# -------------------------------------------------------------- interpreter

def _compile(node: Node) -> Callable:
    n = node.name
    if n == "sequence":
        a, b = (_compile(c) for c in node.children)
        return lambda w, h: a(w, h) or b(w, h)
    if n == "if":
        c, b = (_compile(c) for c in node.children)
        return lambda w, h: b(w, h) if c(w, h) else False
    if n == "or":
        a, b = (_compile(c) for c in node.children)
        return lambda w, h: a(w, h) or b(w, h)
    if n == "not":
        a = _compile(node.children[0])
        return lambda w, h: not a(w, h)
    if n == "notEqual":
        a, b = (_compile(c) for c in node.children)
        return lambda w, h: a(w, h) != b(w, h)
    if n == "return":
        return lambda w, h: True
    if n == "isTransferring":
        return routing.is_transferring
    if n == "canStartTransfer":
        return routing.can_start_transfer
    action = {
        "update": routing.super_update,
        "exchangeDeliverableMessages": routing.exchange_deliverable_messages,
        "tryAllMessagesToAllConnections": routing.try_all_messages_to_all_connections,
        "tryOtherMessages": routing.try_other_messages,
    }.get(n)
    if action is None:
        raise ValueError(f"cannot compile node {n!r}")

    def body(w, h):
        action(w, h)
        return False

    return body


def compile_tree(t: Node | GpTree) -> Callable:
    """Turn a valid tree into an ``update(world, host)`` function."""
    node = _root(t)
    if not check_validity(node):
        raise ValueError(f"invalid tree: {dump_tree(node)}")
    run = _compile(node)

    def update(world, host):
        run(world, host)

    return update


def router_kind(t: Node | GpTree, target: str | None = None) -> RouterKind:
    if target is None:
        target = Target.PROPHET if _root(t).contains("tryOtherMessages") else Target.EPIDEMIC
    return RouterKind.EVOLVED_PROPHET if Target.check(target) == Target.PROPHET else RouterKind.EVOLVED_EPIDEMIC


# ---------------------------------------------------------------- baselines

EPIDEMIC_TREE = parse_tree(
    "sequence(update, sequence(if(or(isTransferring, not(canStartTransfer)), return), "
    "sequence(exchangeDeliverableMessages, sequence(if(isTransferring, return), "
    "tryAllMessagesToAllConnections))))")
PROPHET_TREE = parse_tree(
    "sequence(update, sequence(if(or(not(canStartTransfer), isTransferring), return), "
    "sequence(exchangeDeliverableMessages, sequence(if(isTransferring, return), "
    "tryOtherMessages))))")
DIRECT_DELIVERY_TREE = parse_tree("sequence(exchangeDeliverableMessages, return)")


def baseline_tree(target: str) -> Node:
    return EPIDEMIC_TREE if Target.check(target) == Target.EPIDEMIC else PROPHET_TREE


# ------------------------------------------------------------------ operators

def crossover(a: Node | GpTree, b: Node | GpTree, rng: np.random.Generator) -> tuple[Node, Node]:
    """Swap a uniformly chosen subtree of ``a`` with one of ``b``."""
    ra, rb = _root(a), _root(b)
    pa = [p for p, _ in ra.paths()]
    pb = [p for p, _ in rb.paths()]
    i = pa[int(rng.integers(len(pa)))]
    j = pb[int(rng.integers(len(pb)))]
    sa, sb = ra.get(i), rb.get(j)
    return ra.replace(i, sb), rb.replace(j, sa)


def mutate(t: Node | GpTree, rng: np.random.Generator, node_prob: float) -> Node:
    """Swap mutation: each node is picked with ``node_prob`` and exchanged,
    subtree and all, with another random node of the same tree. Swaps where
    one node contains the other are skipped."""
    node = _root(t)
    n = node.size()
    if n < 2 or node_prob <= 0:
        return node
    for i in range(n):
        if rng.random() >= node_prob:
            continue
        j = int(rng.integers(n - 1))
        if j >= i:
            j += 1
        paths = [p for p, _ in node.paths()]
        pi, pj = paths[i], paths[j]
        if pi == pj[:len(pi)] or pj == pi[:len(pj)]:
            continue
        si, sj = node.get(pi), node.get(pj)
        node = node.replace(pi, sj).replace(pj, si)
    return node


# ----------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class EvaluatedIndividual:
    tree: Node
    fitness: float
    sim_seed: int
    report: SimReport | None
    """``None`` when the tree was unrepairable or the simulation failed."""


def evaluate(t: Node | GpTree, spec: ScenarioSpec, sim_seed: int | None = None,
             target: str | None = None, contacts: ContactTrace | None = None) -> EvaluatedIndividual:
    """Simulate with ``t`` as every host's update; fitness is the delivery
    probability, or 0 for invalid trees and failed runs."""
    node = _root(t)
    seed = spec.seed if sim_seed is None else sim_seed
    if not check_validity(node, target or Target.PROPHET):
        return EvaluatedIndividual(node, 0.0, seed, None)
    try:
        log = routing.run_simulation(spec, router_kind(node, target), update=compile_tree(node),
                                     seed=seed, contacts=contacts)
        report = compute_report(log)
    except Exception:  # a crashing individual scores zero instead of ending the run
        return EvaluatedIndividual(node, 0.0, seed, None)
    return EvaluatedIndividual(node, report.fitness, seed, report)


@dataclass(frozen=True)
class GpParams:
    population: int = 150
    offspring_fraction: float = 0.6
    crossover_prob: float = 0.1
    mutation_individual_prob: float = 0.1 ** (2 / 3)
    mutation_node_prob: float = 0.1 ** (1 / 3)
    tournament_size: int = 3
    max_depth: int = 5
    max_nodes: int = 50
    steady_fitness_gens: int = 50
    max_gens: int = 100

    def __post_init__(self):
        for name in ("offspring_fraction", "crossover_prob", "mutation_individual_prob",
                     "mutation_node_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        for name in ("population", "tournament_size", "max_depth", "max_nodes",
                     "steady_fitness_gens", "max_gens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class GenerationRecord:
    gen: int
    best_fitness: float
    mean_fitness: float
    best_tree: str


@dataclass
class EvolutionResult:
    best: EvaluatedIndividual
    history: list[GenerationRecord]
    n_evaluations: int = 0
    """number of distinct trees simulated"""

    def history_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["gen", "best_fitness", "mean_fitness", "best_tree"])
        for r in self.history:
            w.writerow([r.gen, repr(r.best_fitness), repr(r.mean_fitness), r.best_tree])
        return out.getvalue()


def _tournament(fit: Sequence[float], k: int, rng: np.random.Generator) -> int:
    picks = rng.integers(len(fit), size=k)
    return int(max(picks, key=lambda i: (fit[i], -i)))


def evolve(spec: ScenarioSpec | None, target: str = Target.EPIDEMIC, params: GpParams = GpParams(),
           run_seed: int = 0, sim_seeds: Sequence[int] | None = None,
           fitness_fn: Callable[[Node], float] | None = None,
           on_generation: Callable[[GenerationRecord], None] | None = None) -> EvolutionResult:
    """Run the GP loop and return the best individual and per-generation log.

    Every individual is simulated on the same ``sim_seeds`` (default: the
    scenario seed); with several seeds the fitness is their mean. Fitness is
    a deterministic function of the tree text, so repeated trees reuse the
    first result. ``fitness_fn`` replaces simulation entirely.
    """
    target = Target.check(target)
    rng = np.random.default_rng(run_seed)
    cache: dict[str, EvaluatedIndividual] = {}

    if fitness_fn is None:
        if spec is None:
            raise ValueError("a scenario or a fitness function is required")
        seeds = list(sim_seeds) if sim_seeds else [spec.seed]
        traces = {s: prepare_contacts(spec, s) for s in seeds}

    def score(node: Node) -> EvaluatedIndividual:
        key = dump_tree(node)
        hit = cache.get(key)
        if hit is not None:
            return hit
        if fitness_fn is not None:
            ind = EvaluatedIndividual(node, float(fitness_fn(node)) if check_validity(node, target) else 0.0,
                                      -1, None)
        else:
            runs = [evaluate(node, spec, s, target, traces[s]) for s in seeds]
            ind = EvaluatedIndividual(node, sum(r.fitness for r in runs) / len(runs), seeds[0],
                                      runs[0].report)
        cache[key] = ind
        return ind

    pop = [grow_random(rng, target, params.max_depth, params.max_nodes) for _ in range(params.population)]
    history: list[GenerationRecord] = []
    best: EvaluatedIndividual | None = None
    steady = 0
    n_off = int(round(params.offspring_fraction * params.population))
    for gen in range(params.max_gens):
        evaluated = []
        for node in pop:
            try:
                node = repair(node, rng, target)
            except Unrepairable:
                evaluated.append(EvaluatedIndividual(node, 0.0, -1, None))
                continue
            evaluated.append(score(node))
        fits = [e.fitness for e in evaluated]
        gi = int(np.argmax(fits))
        rec = GenerationRecord(gen, fits[gi], float(np.mean(fits)), dump_tree(evaluated[gi].tree))
        history.append(rec)
        if on_generation:
            on_generation(rec)
        if best is None or evaluated[gi].fitness > best.fitness:
            best = evaluated[gi]
            steady = 0
        else:
            steady += 1
        if steady >= params.steady_fitness_gens or gen == params.max_gens - 1:
            break
        chosen = [evaluated[_tournament(fits, params.tournament_size, rng)].tree
                  for _ in range(params.population)]
        offspring, survivors = chosen[:n_off], chosen[n_off:]
        picked = [i for i in range(len(offspring)) if rng.random() < params.crossover_prob]
        picked = [picked[i] for i in rng.permutation(len(picked))]
        for x, y in zip(picked[0::2], picked[1::2]):
            offspring[x], offspring[y] = crossover(offspring[x], offspring[y], rng)
        for i in range(len(offspring)):
            if rng.random() < params.mutation_individual_prob:
                offspring[i] = mutate(offspring[i], rng, params.mutation_node_prob)
        pop = offspring + survivors
    return EvolutionResult(best, history, len(cache))
