import math
import typing

import numpy as np
import numpy.typing as npt
from numpy.polynomial import Polynomial


def _central_difference(
        f: typing.Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]],
        n: int, h: float) -> npt.NDArray[np.float64]:
    """f の 0 における n 階微分を中心差分で近似します。

    誤差は h の偶数冪で展開されるため、Richardson 補外と組み合わせて
    使います。

    Args:
        f: 形状 (K,) の点列を受け取り、形状 (K, ...) の値を返す関数。
        n (int): 微分の階数 (1 以上)。
        h (float): 刻み幅。

    Returns:
        ndarray: 形状 (...) の微分値。
    """
    assert 1 <= n

    ks = np.arange(n + 1)
    points = (n / 2 - ks) * h
    weights = np.array([(-1) ** int(k) * math.comb(n, int(k)) for k in ks],
                       dtype=np.float64)
    values = f(points)
    return typing.cast(npt.NDArray[np.float64],
                       np.tensordot(weights, values, axes=(0, 0)) / h ** n)


def _richardson_derivative(
        f: typing.Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]],
        n: int, h0: float = 0.2, levels: int = 4
) -> npt.NDArray[np.float64]:
    """中心差分を h0, h0/2, ... で評価し Richardson 補外した n 階微分。

    計算量: O(levels^2) 回の差分評価の結合
    """
    assert 1 <= levels

    table: typing.List[npt.NDArray[np.float64]] = []
    for j in range(levels):
        row = [_central_difference(f, n, h0 / 2 ** j)]
        for m in range(1, j + 1):
            factor = 4.0 ** m
            row.append(row[m - 1]
                       + (row[m - 1] - table[m - 1]) / (factor - 1.0))
        table = row
    return table[-1]


def _sigmoid_derivative_poly(n: int) -> Polynomial:
    """n 回目の微分 d^{n-1}/dx^{n-1} σ(x) を p = σ(x) の多項式で返します。

    σ' = σ(1-σ) を繰り返し使います。

    Examples:
        >>> _sigmoid_derivative_poly(2)  # p - p^2
        Polynomial([0., 1., -1.], ...)
    """
    assert 1 <= n

    p = Polynomial([0.0, 1.0])
    dp = p * (1 - p)
    poly = p
    for _ in range(n - 1):
        poly = poly.deriv() * dp
    return poly
