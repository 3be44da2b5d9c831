import logging
import math
import typing

import numpy as np
import numpy.typing as npt

from boltzmap.errors import ConvergenceError


logger = logging.getLogger(__name__)


def _jacobi_eigh(
        a: npt.ArrayLike, rtol: float = 1e-12, max_sweeps: int = 100
) -> typing.Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """巡回 Jacobi 法で実対称行列を対角化します。

    非対角成分の Frobenius ノルムが rtol * ||A||_F 以下になるまで、
    (p, q) の全組について Givens 回転を繰り返します。

    Reference:
        W. H. Press et al., Numerical Recipes, Sec. 11.1

    Args:
        a: 実対称行列 (n, n)。
        rtol (float): 収束判定の相対閾値。
        max_sweeps (int): 最大スイープ数。

    Returns:
        (eigenvalues, eigenvectors): 固有値 (n,) と、列が固有ベクトルの
        直交行列 (n, n)。並びは昇順ではありません。

    Raises:
        ConvergenceError: max_sweeps 回で収束しなかった場合。

    計算量: O(n^3) / スイープ
    """
    a = np.array(a, dtype=np.float64, copy=True)
    assert a.ndim == 2 and a.shape[0] == a.shape[1]
    assert np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(
        1.0, float(np.max(np.abs(a), initial=0.0))))

    n = a.shape[0]
    v = np.eye(n)
    threshold = rtol * float(np.linalg.norm(a))

    for sweep in range(max_sweeps + 1):
        off = math.sqrt(max(float(np.sum(a * a) - np.sum(np.diag(a) ** 2)),
                            0.0))
        logger.debug('jacobi sweep %d: off-diagonal norm %.3e', sweep, off)
        if off <= threshold:
            return np.diag(a).copy(), v
        if sweep == max_sweeps:
            break

        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                cos = 1.0 / math.sqrt(t * t + 1.0)
                sin = t * cos

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = cos * col_p - sin * col_q
                a[:, q] = sin * col_p + cos * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = cos * row_p - sin * row_q
                a[q, :] = sin * row_p + cos * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0

                col_p = v[:, p].copy()
                col_q = v[:, q].copy()
                v[:, p] = cos * col_p - sin * col_q
                v[:, q] = sin * col_p + cos * col_q

    raise ConvergenceError(
        f'Jacobi eigensolver did not converge in {max_sweeps} sweeps')
