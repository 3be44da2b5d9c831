import numpy as np

from boltzmap.model import RbmModel
from boltzmap.oracle import enumerate_states
from boltzmap.potentials import ActivationKind
from boltzmap.sampling import sample_chain


class EnumerateSuite:

    def setup(self) -> None:
        rng = np.random.default_rng(0)
        n, m = 20, 30
        self.model = RbmModel(ActivationKind.STEP, rng.normal(size=n),
                              rng.normal(size=m),
                              rng.normal(scale=m ** -0.5, size=(n, m)))

    def time_enumerate_states(self) -> None:
        enumerate_states(self.model)

    def time_gibbs_chain(self) -> None:
        sample_chain(self.model, 10000, seed=0, burn_in=0)
