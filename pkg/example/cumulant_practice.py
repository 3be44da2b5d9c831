# Mean and variance of the hidden units at zero input

import sys

from boltzmap.potentials import ActivationKind, cumulant


def main() -> None:
    t = int(sys.stdin.readline())
    for _ in range(t):
        name, bias = sys.stdin.readline().split()
        kind = ActivationKind.parse(name)
        c = float(bias)
        print(f'{float(cumulant(kind, c, 1)):.7f} '
              f'{float(cumulant(kind, c, 2)):.7f}')


if __name__ == '__main__':
    main()
