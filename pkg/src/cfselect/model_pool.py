"""Pool of k correlation filters with fixed roles.

Index 0 is the initial model (never updated), index 1 the accumulated model
(updated every frame), indices 2..k-1 are dynamic models that are updated only
on frames where they are the selected model.
"""

from dataclasses import dataclass

from .cf_core import cf_init, cf_response, update_from_spectra
from .spectral import dft2

INITIAL, ACCUMULATED, DYNAMIC = "initial", "accumulated", "dynamic"


@dataclass(frozen=True)
class ModelPool:
    models: tuple
    eta: float = 0.05

    @property
    def k(self):
        return len(self.models)

    @property
    def roles(self):
        return [INITIAL, ACCUMULATED] + [DYNAMIC] * (self.k - 2)


def pool_init(features, label, lam=1e-4, eta=0.05, k=3) -> ModelPool:
    if k < 3:
        raise ValueError(f"a pool needs k >= 3 models (initial, accumulated, dynamic), got {k}")
    model = cf_init(features, label, lam)
    return ModelPool(tuple([model] * k), eta)


def pool_responses(pool: ModelPool, features):
    return [cf_response(m, features) for m in pool.models]


def pool_update(pool: ModelPool, selected_index, features) -> ModelPool:
    if not 0 <= selected_index < pool.k:
        raise IndexError(f"selected_index {selected_index} out of range for k={pool.k}")
    X = dft2(features)
    models = list(pool.models)
    models[1] = update_from_spectra(models[1], X, pool.eta)
    if selected_index >= 2:
        models[selected_index] = update_from_spectra(models[selected_index], X, pool.eta)
    return ModelPool(tuple(models), pool.eta)
