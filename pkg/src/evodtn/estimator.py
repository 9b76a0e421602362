"""scikit-learn style wrapper around the GP loop."""
from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import gp
from .metrics import compute_report
from .routing import run_simulation
from .validation import check_random_state, check_scenario, check_target

__all__ = ["RouterEvolver"]


class RouterEvolver(BaseEstimator):
    """Evolve a router update program for one scenario.

    ``fit(scenario)`` runs the GP loop on the scenario's seed (or
    ``sim_seeds``) and stores ``best_tree_``, ``best_fitness_`` and
    ``history_``. ``score(scenario)`` returns the delivery probability of the
    fitted program on a scenario, optionally under another seed.

    Parameters mirror :class:`evodtn.gp.GpParams`; ``random_state`` seeds
    the GP run.
    """

    def __init__(self, target="epidemic", population=150, max_gens=100, offspring_fraction=0.6,
                 crossover_prob=0.1, mutation_individual_prob=0.1 ** (2 / 3),
                 mutation_node_prob=0.1 ** (1 / 3), tournament_size=3, max_depth=5, max_nodes=50,
                 steady_fitness_gens=50, sim_seeds=None, random_state=None):
        self.target = target
        self.population = population
        self.max_gens = max_gens
        self.offspring_fraction = offspring_fraction
        self.crossover_prob = crossover_prob
        self.mutation_individual_prob = mutation_individual_prob
        self.mutation_node_prob = mutation_node_prob
        self.tournament_size = tournament_size
        self.max_depth = max_depth
        self.max_nodes = max_nodes
        self.steady_fitness_gens = steady_fitness_gens
        self.sim_seeds = sim_seeds
        self.random_state = random_state

    def _params(self) -> gp.GpParams:
        return gp.GpParams(
            population=self.population, offspring_fraction=self.offspring_fraction,
            crossover_prob=self.crossover_prob, mutation_individual_prob=self.mutation_individual_prob,
            mutation_node_prob=self.mutation_node_prob, tournament_size=self.tournament_size,
            max_depth=self.max_depth, max_nodes=self.max_nodes,
            steady_fitness_gens=self.steady_fitness_gens, max_gens=self.max_gens)

    def fit(self, scenario, y=None):
        spec = check_scenario(scenario)
        target = check_target(self.target)
        result = gp.evolve(spec, target, self._params(), run_seed=check_random_state(self.random_state),
                           sim_seeds=self.sim_seeds)
        self.best_tree_ = result.best.tree
        self.best_fitness_ = result.best.fitness
        self.best_report_ = result.best.report
        self.history_ = result.history
        self.n_evaluations_ = result.n_evaluations
        return self

    def _check_fitted(self):
        if not hasattr(self, "best_tree_"):
            raise NotFittedError("RouterEvolver is not fitted yet; call fit first")

    def simulate(self, scenario, seed=None):
        """Report of one run of the fitted program."""
        self._check_fitted()
        spec = check_scenario(scenario)
        elog = run_simulation(spec, gp.router_kind(self.best_tree_, self.target),
                              update=gp.compile_tree(self.best_tree_), seed=seed)
        return compute_report(elog)

    def score(self, scenario, y=None, seed=None) -> float:
        return self.simulate(scenario, seed).fitness
