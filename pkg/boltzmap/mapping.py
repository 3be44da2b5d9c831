import concurrent.futures
import dataclasses
import itertools
import logging
import math
import typing

import numpy as np
import numpy.typing as npt

import boltzmap._bit
from boltzmap._jacobi import _jacobi_eigh
from boltzmap.errors import BudgetExceededError
from boltzmap.model import InteractionModel, RbmModel, Subset
from boltzmap.potentials import (ActivationKind, FloatArray, cgf_eval,
                                 cumulant)


logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 10 ** 9

# Upper bound on the K-evaluation block held in memory at once.
_BLOCK_ELEMENTS = 1 << 22


@dataclasses.dataclass(frozen=True, eq=False)
class ExpParams:
    """Exponential ポテンシャルの再パラメータ化。

    Attributes:
        u (ndarray): u_{k,μ} = exp(w_{k,μ}) - 1、形状 (N, M)。
        lambda_tilde (ndarray): λ̃_μ = exp(-c_μ)、形状 (M,)。
    """

    u: FloatArray
    lambda_tilde: FloatArray


def exp_params(model: RbmModel) -> ExpParams:
    return ExpParams(np.expm1(model.w), np.exp(-model.c))


def expansion_cost(pool_size: int, max_order: int, n_hidden: int) -> int:
    """expand に必要な K の評価回数 Σ_s C(P, s) 2^s M を返します。"""
    return sum(math.comb(pool_size, s) * (1 << s) * n_hidden
               for s in range(1, max_order + 1))


def _check_subsets(subsets: npt.NDArray[np.int64], n: int) -> None:
    assert subsets.ndim == 2 and 1 <= subsets.shape[1] <= n
    assert np.all((0 <= subsets) & (subsets < n))
    assert np.all(np.diff(subsets, axis=1) > 0)


def _block_terms(model: RbmModel,
                 subsets: npt.NDArray[np.int64]) -> FloatArray:
    s = subsets.shape[1]
    rows = model.w[subsets]

    if model.activation is ActivationKind.EXPONENTIAL:
        # Σ_μ λ̃_μ Π_{k∈S} u_{k,μ}
        params = exp_params(model)
        products = np.prod(np.expm1(rows), axis=1)
        result = products @ params.lambda_tilde
    else:
        sums = boltzmap._bit._subset_sums(rows)
        values = cgf_eval(model.activation, model.c[:, None], sums)
        signed = values * boltzmap._bit._subset_signs(s)
        result = np.sum(np.sum(signed, axis=-1), axis=-1)

    if s == 1:
        result = result + model.b[subsets[:, 0]]
    return typing.cast(FloatArray, result)


def interaction_terms(model: RbmModel, subsets: npt.ArrayLike,
                      threads: int = 1) -> FloatArray:
    """同じ次数 s の部分集合の列について相互作用係数 I^(s) を計算します。

    各隠れ層ユニットについて Σ_{T⊆S} (-1)^{|S|-|T|} K(Σ_{j∈T} w_{j,μ})
    を求め、隠れ層ユニットについて和をとります。s = 1 では b を加えます。
    Exponential では閉じた式 Σ_μ λ̃_μ Π u_{k,μ} を使います。

    Args:
        model (RbmModel): RBM。
        subsets: 形状 (K, s) の整数配列。各行は狭義単調増加。
        threads (int): ブロックを並列に処理するスレッド数。

    Returns:
        ndarray: 形状 (K,) の係数。並びは subsets の行の順です。

    計算量: O(K M 2^s)
    """
    subsets = np.asarray(subsets, dtype=np.int64)
    _check_subsets(subsets, model.n_visible)

    s = subsets.shape[1]
    block = max(1, _BLOCK_ELEMENTS // (model.n_hidden << s))
    blocks = [subsets[i:i + block] for i in range(0, len(subsets), block)]
    if not blocks:
        return np.zeros(0)

    if threads <= 1 or len(blocks) == 1:
        results = [_block_terms(model, rows) for rows in blocks]
    else:
        with concurrent.futures.ThreadPoolExecutor(threads) as executor:
            results = list(executor.map(
                lambda rows: _block_terms(model, rows), blocks))
    return typing.cast(FloatArray, np.concatenate(results))


def interaction_term(model: RbmModel, subset: Subset) -> float:
    """部分集合 subset (昇順の添字) の相互作用係数 I^(s)。

    Examples:
        >>> model = RbmModel(ActivationKind.LINEAR, [0.0, 0.0], [0.0],
        ...                  [[0.3], [-0.2]])
        >>> round(interaction_term(model, (0, 1)), 12)
        -0.06
    """
    return float(interaction_terms(model, [tuple(subset)])[0])


def small_w_terms(model: RbmModel, subsets: npt.ArrayLike) -> FloatArray:
    """重みが小さい極限での主要項 Σ_μ κ_μ^(s) Π_{k∈S} w_{k,μ}。

    s = 1 では b を加えます。Linear の s = 2 は厳密な値に一致します。
    """
    subsets = np.asarray(subsets, dtype=np.int64)
    _check_subsets(subsets, model.n_visible)

    s = subsets.shape[1]
    kappa = cumulant(model.activation, model.c, s)
    result = np.prod(model.w[subsets], axis=1) @ kappa
    if s == 1:
        result = result + model.b[subsets[:, 0]]
    return typing.cast(FloatArray, result)


def small_w_interaction(model: RbmModel, subset: Subset) -> float:
    return float(small_w_terms(model, [tuple(subset)])[0])


def _resolve_pool(model: RbmModel,
                  index_pool: typing.Optional[typing.Iterable[int]]
                  ) -> typing.List[int]:
    if index_pool is None:
        return list(range(model.n_visible))
    pool = sorted(set(int(i) for i in index_pool))
    assert all(0 <= i < model.n_visible for i in pool)
    return pool


def _expand_with(
        terms: typing.Callable[[npt.NDArray[np.int64]], FloatArray],
        model: RbmModel, max_order: int,
        index_pool: typing.Optional[typing.Iterable[int]],
        budget: int) -> InteractionModel:
    pool = _resolve_pool(model, index_pool)
    assert 1 <= max_order <= len(pool)

    cost = expansion_cost(len(pool), max_order, model.n_hidden)
    logger.info('expanding %d indices up to order %d: %.3e K-evaluations',
                len(pool), max_order, cost)
    if cost > budget:
        raise BudgetExceededError(cost, budget)

    result = InteractionModel(model.n_visible)
    for s in range(1, max_order + 1):
        subsets = np.array(list(itertools.combinations(pool, s)),
                           dtype=np.int64).reshape(-1, s)
        for subset, value in zip(subsets, terms(subsets)):
            result[tuple(subset)] = float(value)
    return result


def expand(model: RbmModel, max_order: int,
           index_pool: typing.Optional[typing.Iterable[int]] = None,
           budget: int = DEFAULT_BUDGET, threads: int = 1
           ) -> InteractionModel:
    """RBM を相互作用モデルに展開します。

    index_pool 上の次数 max_order 以下のすべての部分集合について係数を
    計算します。項は次数、次に辞書順で並びます。

    Args:
        model (RbmModel): RBM。
        max_order (int): 最大次数。
        index_pool: 対象の可視層ユニット (省略時はすべて)。
        budget (int): K の評価回数の上限。
        threads (int): スレッド数。結果はスレッド数に依存しません。

    Returns:
        InteractionModel: 展開結果 (0 の項も含みます)。

    Raises:
        BudgetExceededError: 見積もりが budget を超える場合。
    """
    return _expand_with(
        lambda subsets: interaction_terms(model, subsets, threads),
        model, max_order, index_pool, budget)


def small_w_expand(model: RbmModel, max_order: int,
                   index_pool: typing.Optional[typing.Iterable[int]] = None,
                   budget: int = DEFAULT_BUDGET) -> InteractionModel:
    """expand の小さい重みの近似版。"""
    return _expand_with(lambda subsets: small_w_terms(model, subsets),
                        model, max_order, index_pool, budget)


def sample_subsets(pool_size: int, s: int, count: int,
                   rng: np.random.Generator) -> npt.NDArray[np.int64]:
    """{0, ..., pool_size-1} から s 個の異なる添字を count 組選びます。

    各行は昇順です。行どうしの重複は許します。
    """
    assert 1 <= s <= pool_size
    assert 0 <= count

    out = rng.integers(0, pool_size, size=(count, s))
    out.sort(axis=1)
    bad = np.flatnonzero(np.any(np.diff(out, axis=1) == 0, axis=1))
    while bad.size:
        redraw = rng.integers(0, pool_size, size=(bad.size, s))
        redraw.sort(axis=1)
        out[bad] = redraw
        bad = bad[np.any(np.diff(redraw, axis=1) == 0, axis=1)]
    return out


def linear_embed(couplings: npt.ArrayLike, fields: npt.ArrayLike,
                 rank: typing.Optional[int] = None) -> RbmModel:
    """対称な結合行列 J と場 h を Linear RBM に埋め込みます。

    J = U Λ U^T を固有値分解し、λ_0 = -λ_min として Λ + λ_0 I の大きい
    方から rank 個 (0 でないもの) を W = U_k (Λ_k + λ_0)^{1/2} とします。
    v_i^2 = v_i に作用する対角成分は b に折り込み、1 次の項が h に
    一致するようにします。rank = N - 1 で最小固有値が縮退していなければ
    J を厳密に再現し、それ以外では Frobenius ノルムで最良の近似です。

    Args:
        couplings: 対角成分が 0 の対称行列 J、形状 (N, N)。
        fields: 場 h、形状 (N,)。
        rank (int): 隠れ層ユニット数 M (既定値 N - 1)。

    Returns:
        RbmModel: c = 0 の Linear RBM。

    Raises:
        ValueError: J が対称でない、または対角成分が 0 でない場合。
        ConvergenceError: 固有値分解が収束しない場合。

    Examples:
        >>> model = linear_embed([[0.0, 0.5], [0.5, 0.0]], [0.0, 0.0])
        >>> model.w.ravel()
        array([0.70710678, 0.70710678])
    """
    j = np.asarray(couplings, dtype=np.float64)
    h = np.asarray(fields, dtype=np.float64)
    if j.ndim != 2 or j.shape[0] != j.shape[1]:
        raise ValueError(f'couplings must be a square matrix, got {j.shape}')
    n = j.shape[0]
    if h.shape != (n,):
        raise ValueError(f'fields must have length {n}, got {h.shape}')
    scale = max(1.0, float(np.max(np.abs(j), initial=0.0)))
    if not np.allclose(j, j.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError('couplings must be symmetric')
    if np.any(np.diag(j) != 0.0):
        raise ValueError('couplings must have a zero diagonal')
    if rank is None:
        rank = max(1, n - 1)
    assert 1 <= rank <= max(1, n - 1)

    eigenvalues, eigenvectors = _jacobi_eigh(0.5 * (j + j.T))
    shifted = eigenvalues - eigenvalues.min()
    tolerance = 1e-12 * max(1.0, float(np.linalg.norm(j)))
    order = np.argsort(-shifted, kind='stable')[:rank]
    keep = order[shifted[order] > tolerance]
    logger.info('linear embedding: shift %.6g, %d of %d columns kept',
                -eigenvalues.min(), keep.size, rank)

    if keep.size == 0:
        w = np.zeros((n, 1))
    else:
        w = eigenvectors[:, keep] * np.sqrt(shifted[keep])
    b = h - 0.5 * np.sum(w * w, axis=1)
    return RbmModel(ActivationKind.LINEAR, b, np.zeros(w.shape[1]), w)
