# Pure three-body interaction from an Exponential RBM with four hidden units

import sys

import numpy as np

from boltzmap.mapping import expand
from boltzmap.model import RbmModel
from boltzmap.potentials import ActivationKind


SIGNS = np.array([[1, 1, -1, -1],
                  [1, -1, 1, -1],
                  [1, -1, -1, 1]], dtype=np.float64)


def main() -> None:
    strength = float(sys.stdin.readline())
    model = RbmModel(ActivationKind.EXPONENTIAL, np.zeros(3), np.zeros(4),
                     np.log1p(SIGNS * strength))

    for subset, value in expand(model, 3).items():
        indices = ';'.join(map(str, subset))
        print(f'{len(subset)} {indices} {round(value, 6) + 0.0:.6f}')


if __name__ == '__main__':
    main()
