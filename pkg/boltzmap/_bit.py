import typing

import numpy as np
import numpy.typing as npt


def _bsf(n: int) -> int:
    """整数nの最下位ビットが1である位置を計算します

    Gray コード順の列挙で、t 番目の遷移で反転するビットの位置を求めるのに
    使います。

    Args:
        n (int): 正の整数。

    Returns:
        int: 最下位ビットの位置(0-indexed)。

    Examples:
        >>> _bsf(8)
        3  # 8 = 1000(2), 最下位ビットの1の位置は3
        >>> _bsf(10)
        1  # 10 = 1010(2), 最下位ビットの1の位置は1
    """
    assert 1 <= n

    return (n & -n).bit_length() - 1


def _gray(t: int) -> int:
    """t 番目の Gray コードを返します。

    Examples:
        >>> [_gray(t) for t in range(4)]
        [0, 1, 3, 2]
    """
    return t ^ (t >> 1)


def _mask_to_indices(mask: int) -> typing.Tuple[int, ...]:
    """ビットマスクを昇順の添字のタプルに変換します。

    Examples:
        >>> _mask_to_indices(0b1011)
        (0, 1, 3)
    """
    result = []
    i = 0
    while mask:
        if mask & 1:
            result.append(i)
        mask >>= 1
        i += 1
    return tuple(result)


def _indices_to_mask(indices: typing.Iterable[int]) -> int:
    mask = 0
    for i in indices:
        mask |= 1 << i
    return mask


def _state_bits(masks: npt.ArrayLike, n: int) -> npt.NDArray[np.float64]:
    """状態のビットマスクを 0/1 の行列 (len(masks), n) に展開します。

    ビット i が v_i に対応します。
    """
    masks = np.asarray(masks, dtype=np.int64)
    shifts = np.arange(n, dtype=np.int64)
    return ((masks[..., None] >> shifts) & 1).astype(np.float64)


def _bits_to_masks(bits: npt.ArrayLike) -> npt.NDArray[np.int64]:
    bits = np.asarray(bits, dtype=np.int64)
    weights = np.left_shift(np.int64(1), np.arange(bits.shape[-1],
                                                   dtype=np.int64))
    return typing.cast(npt.NDArray[np.int64], bits @ weights)


def _subset_sums(rows: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """s 本の行ベクトルのすべての部分和を倍々に構成します。

    Args:
        rows: 形状 (..., s, M) の配列。

    Returns:
        形状 (..., M, 2^s) の配列。最後の軸の添字 t のビット j が
        行 j を含むかどうかを表します (t = 0 は空和)。

    計算量: O(M 2^s)、部分集合あたり加算1回
    """
    s = rows.shape[-2]
    out = np.zeros(rows.shape[:-2] + (rows.shape[-1], 1 << s))
    for j in range(s):
        half = 1 << j
        out[..., half:2 * half] = out[..., :half] + rows[..., j, :, None]
    return out


def _subset_signs(s: int) -> npt.NDArray[np.float64]:
    """包除原理の符号 (-1)^(s - |T|) を _subset_sums と同じ順に返します。"""
    signs = np.array([-1.0 if s % 2 else 1.0])
    for _ in range(s):
        signs = np.concatenate([signs, -signs])
    return signs


def _zeta_transform(a: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """部分集合和 f(S) = Σ_{T⊆S} a(T) を計算します(コピーを返します)。

    計算量: O(n 2^n)
    """
    n = _log2_length(a)
    f = np.array(a, dtype=np.float64, copy=True)
    for i in range(n):
        view = f.reshape(-1, 2, 1 << i)
        view[:, 1, :] += view[:, 0, :]
    return f


def _moebius_transform(f: npt.NDArray[np.float64]
                       ) -> npt.NDArray[np.float64]:
    """_zeta_transform の逆変換 a(S) = Σ_{T⊆S} (-1)^{|S|-|T|} f(T)。

    計算量: O(n 2^n)
    """
    n = _log2_length(f)
    a = np.array(f, dtype=np.float64, copy=True)
    for i in range(n):
        view = a.reshape(-1, 2, 1 << i)
        view[:, 1, :] -= view[:, 0, :]
    return a


def _log2_length(a: npt.NDArray[np.float64]) -> int:
    size = a.shape[0]
    assert size >= 1 and size & (size - 1) == 0
    return size.bit_length() - 1


def _popcount(masks: npt.NDArray[np.int64], n: int) -> npt.NDArray[np.int64]:
    count = np.zeros(masks.shape, dtype=np.int64)
    for i in range(n):
        count += (masks >> i) & 1
    return count


def _subset_order(n: int) -> npt.NDArray[np.int64]:
    """空でない部分集合のマスクを (要素数, 添字の辞書順) の順に返します。

    itertools.combinations を s = 1, 2, ... と並べた順と一致します。

    Examples:
        >>> _subset_order(3).tolist()
        [1, 2, 4, 3, 5, 6, 7]
    """
    masks = np.arange(1, 1 << n, dtype=np.int64)
    reversed_masks = np.zeros_like(masks)
    for i in range(n):
        reversed_masks |= ((masks >> i) & 1) << (n - 1 - i)
    order = np.lexsort((-reversed_masks, _popcount(masks, n)))
    return masks[order]
