# Pairwise model -> Linear RBM -> pairwise model

import sys

import numpy as np

from boltzmap.mapping import expand, linear_embed


def main() -> None:
    n = int(sys.stdin.readline())
    couplings = np.array([list(map(float, sys.stdin.readline().split()))
                          for _ in range(n)])
    fields = np.array(list(map(float, sys.stdin.readline().split())))

    model = linear_embed(couplings, fields)
    for subset, value in expand(model, min(n, 2)).items():
        indices = ';'.join(map(str, subset))
        print(f'{len(subset)} {indices} {round(value, 6) + 0.0:.6f}')


if __name__ == '__main__':
    main()
