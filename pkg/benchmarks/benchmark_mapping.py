import numpy as np

from boltzmap.mapping import expand
from boltzmap.model import RbmModel
from boltzmap.potentials import ActivationKind


class ExpandSuite:

    params = [kind.value for kind in ActivationKind]
    param_names = ['activation']

    def setup(self, activation: str) -> None:
        rng = np.random.default_rng(0)
        n, m = 40, 100
        self.model = RbmModel(ActivationKind.parse(activation),
                              rng.normal(size=n), rng.normal(size=m),
                              rng.normal(scale=m ** -0.5, size=(n, m)))

    def time_expand_order3(self, activation: str) -> None:
        expand(self.model, 3)
