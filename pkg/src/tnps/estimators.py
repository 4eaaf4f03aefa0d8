"""Scikit-learn style estimators wrapping the searchers and the fixed-structure
fitter, so the algorithms compose with pipelines, grid search and clone()."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .fitting import FitConfig, fit as fit_cores
from .graphs import TemplateGraph, make_template
from .model import TnStructure, contract_network, param_count, phi
from .search import GaConfig, SearchConfig, tnga_plus, tnls
from .validation import as_seed, check_tensor

__all__ = ["TNLSSearch", "TNGASearch", "StructureFit", "search_fit_config",
           "refine_fit_config"]


def search_fit_config(learning_rate=0.01, max_steps=4000, restarts=4,
                      init_std=math.sqrt(0.1), tolerance=1e-5, seed=0,
                      plateau_window=250, plateau_rtol=2e-2,
                      restart_gate=1e-2) -> FitConfig:
    """Evaluation-phase fit profile used inside searches: a larger step size
    and a tighter budget than the standalone-fit defaults, tuned so candidate
    evaluations stay cheap while still certifying RSE well under 1e-4."""
    return FitConfig(learning_rate=learning_rate, max_steps=max_steps,
                     restarts=restarts, init_std=init_std, tolerance=tolerance,
                     seed=seed, plateau_window=plateau_window,
                     plateau_rtol=plateau_rtol, restart_gate=restart_gate)


def refine_fit_config(learning_rate=0.01, max_steps=12_000, restarts=6,
                      init_std=math.sqrt(0.1), tolerance=1e-5) -> FitConfig:
    """Careful profile used to re-fit adopted incumbents: more restarts, a
    patient plateau and no restart gate, so borderline structures are not
    misjudged by the fast evaluation profile."""
    return FitConfig(learning_rate=learning_rate, max_steps=max_steps,
                     restarts=restarts, init_std=init_std, tolerance=tolerance,
                     plateau_window=1000, plateau_rtol=1e-3, restart_gate=None)


def _resolve_template(template, n_modes: int) -> TemplateGraph:
    if isinstance(template, TemplateGraph):
        return template
    return make_template(str(template), n_modes)


class _SearchMixin:
    def reconstruct(self) -> np.ndarray:
        """Reconstruction of the training tensor from the fitted model."""
        return contract_network(self.model_)

    def score(self, X, y=None) -> float:
        """Negative reconstruction error against X (sklearn convention:
        larger is better)."""
        X = check_tensor(X)
        z = self.reconstruct()
        return -float(np.linalg.norm(X - z) / np.linalg.norm(X))

    def _store(self, result, dims):
        self.result_ = result
        self.structure_ = result.structure
        self.model_ = result.fit.model
        self.loss_ = result.loss
        self.rse_ = result.rse
        self.phi_ = phi(result.structure, dims)
        self.param_count_ = param_count(result.structure, dims)
        self.n_evaluations_ = result.evaluations
        self.trace_ = result.trace
        return self


class TNLSSearch(BaseEstimator, _SearchMixin):
    """Tensor-network permutation search by annealed local sampling.

    fit(X) searches jointly over mode-vertex mappings and integer edge ranks
    of the chosen template for a structure whose fitted network reconstructs
    X with a small parameter count.
    """

    def __init__(self, template="cycle", rank_max=7, iters=30, samples=60,
                 c1=0.9, c2=0.9, lam=200.0, learning_rate=0.01,
                 max_steps=4000, restarts=4, init_std=math.sqrt(0.1),
                 tolerance=1e-5, patience=None, refine=True, n_jobs=1,
                 random_state=0):
        self.template = template
        self.rank_max = rank_max
        self.iters = iters
        self.samples = samples
        self.c1 = c1
        self.c2 = c2
        self.lam = lam
        self.learning_rate = learning_rate
        self.max_steps = max_steps
        self.restarts = restarts
        self.init_std = init_std
        self.tolerance = tolerance
        self.patience = patience
        self.refine = refine
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, X, y=None, mask=None):
        X = check_tensor(X)
        template = _resolve_template(self.template, X.ndim)
        cfg = SearchConfig(
            rank_max=self.rank_max, iters=self.iters, samples=self.samples,
            c1=self.c1, c2=self.c2, lam=self.lam,
            fit=search_fit_config(self.learning_rate, self.max_steps,
                                  self.restarts, self.init_std, self.tolerance),
            refine_fit=refine_fit_config() if self.refine else None,
            seed=as_seed(self.random_state), patience=self.patience,
            jobs=self.n_jobs)
        self.template_ = template
        return self._store(tnls(X, template, cfg, mask=mask), X.shape)


class TNGASearch(BaseEstimator, _SearchMixin):
    """Random-key genetic baseline searcher over the same structure space."""

    def __init__(self, template="cycle", rank_max=7, population=150,
                 generations=30, elimination_rate=0.36, elites=2, alpha=20.0,
                 beta=1.0, mutation_rate=0.24, lam=200.0, learning_rate=0.01,
                 max_steps=4000, restarts=4, init_std=math.sqrt(0.1),
                 tolerance=1e-5, patience=None, refine=True, n_jobs=1,
                 random_state=0):
        self.template = template
        self.rank_max = rank_max
        self.population = population
        self.generations = generations
        self.elimination_rate = elimination_rate
        self.elites = elites
        self.alpha = alpha
        self.beta = beta
        self.mutation_rate = mutation_rate
        self.lam = lam
        self.learning_rate = learning_rate
        self.max_steps = max_steps
        self.restarts = restarts
        self.init_std = init_std
        self.tolerance = tolerance
        self.patience = patience
        self.refine = refine
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, X, y=None, mask=None):
        X = check_tensor(X)
        template = _resolve_template(self.template, X.ndim)
        cfg = GaConfig(
            rank_max=self.rank_max, population=self.population,
            generations=self.generations,
            elimination_rate=self.elimination_rate, elites=self.elites,
            alpha=self.alpha, beta=self.beta, mutation_rate=self.mutation_rate,
            lam=self.lam,
            fit=search_fit_config(self.learning_rate, self.max_steps,
                                  self.restarts, self.init_std, self.tolerance),
            refine_fit=refine_fit_config() if self.refine else None,
            seed=as_seed(self.random_state), patience=self.patience,
            jobs=self.n_jobs)
        self.template_ = template
        return self._store(tnga_plus(X, template, cfg, mask=mask), X.shape)


class StructureFit(BaseEstimator):
    """Fit core tensors for one fixed structure (no searching).

    The structure is either a TnStructure or a (template, permutation, ranks)
    triple resolved against the training tensor's order.
    """

    def __init__(self, structure=None, template="cycle", permutation=None,
                 ranks=None, learning_rate=1e-3, max_steps=10_000, restarts=4,
                 init_std=math.sqrt(0.1), tolerance=1e-5, random_state=0):
        self.structure = structure
        self.template = template
        self.permutation = permutation
        self.ranks = ranks
        self.learning_rate = learning_rate
        self.max_steps = max_steps
        self.restarts = restarts
        self.init_std = init_std
        self.tolerance = tolerance
        self.random_state = random_state

    def _resolve_structure(self, X) -> TnStructure:
        if self.structure is not None:
            return self.structure
        template = _resolve_template(self.template, X.ndim)
        perm = tuple(self.permutation) if self.permutation is not None \
            else template.external_vertices
        if self.ranks is None:
            raise ValueError("ranks are required when no structure is given")
        return TnStructure(template, perm, tuple(self.ranks))

    def fit(self, X, y=None, mask=None):
        X = check_tensor(X)
        structure = self._resolve_structure(X)
        cfg = FitConfig(learning_rate=self.learning_rate,
                        max_steps=self.max_steps, restarts=self.restarts,
                        init_std=self.init_std, tolerance=self.tolerance,
                        seed=as_seed(self.random_state))
        result = fit_cores(X, structure, cfg, mask=mask)
        self.structure_ = structure
        self.fit_result_ = result
        self.model_ = result.model
        self.rse_ = result.rse
        self.param_count_ = param_count(structure, X.shape)
        self.phi_ = phi(structure, X.shape)
        return self

    def reconstruct(self) -> np.ndarray:
        return contract_network(self.model_)

    def score(self, X, y=None) -> float:
        X = check_tensor(X)
        z = self.reconstruct()
        return -float(np.linalg.norm(X - z) / np.linalg.norm(X))
