import concurrent.futures
import dataclasses
import itertools
import logging
import math
import typing

import numpy as np
import numpy.typing as npt
from scipy.special import expit, logit, logsumexp
from scipy.stats import linregress

from boltzmap._random import STREAM_AIS, STREAM_SUBSETS, rng_stream
from boltzmap.errors import DegenerateReferenceError
from boltzmap.mapping import interaction_terms, sample_subsets
from boltzmap.model import InteractionModel, RbmModel, rbm_log_weight
from boltzmap.potentials import FloatArray, cgf_eval
from boltzmap.sampling import InputCache


logger = logging.getLogger(__name__)

MAD_SCALE = 1.4826
PSEUDO_COUNT = 1e-6

# Runs advanced together as one vectorized batch.  Fixed so that the
# floating-point result does not depend on the thread count.
_AIS_GROUP = 25
# Temperatures whose uniforms are drawn per run in one call.
_AIS_BLOCK = 64


def pseudo_likelihood(model: RbmModel, data: npt.ArrayLike) -> float:
    """データ点あたりの擬似対数尤度 Σ_i log P(v_i | v_-i) の平均。

    サイトについては和 (平均ではありません) をとります。

    Examples:
        >>> model = RbmModel(ActivationKind.STEP, np.zeros(3), np.zeros(2),
        ...                  np.zeros((3, 2)))
        >>> pseudo_likelihood(model, np.eye(3))  # -3 log 2
        -2.0794415416798357
    """
    data = np.asarray(data, dtype=np.float64)
    assert data.ndim == 2 and data.shape[0] >= 1

    cache = InputCache(model, data)
    total = np.zeros(data.shape[0])
    for i in range(model.n_visible):
        sign = 2.0 * data[:, i] - 1.0
        total -= np.logaddexp(0.0, -sign * cache.log_odds(i))
    return float(np.mean(total))


def base_biases_from_data(data: npt.ArrayLike,
                          pseudo_count: float = PSEUDO_COUNT) -> FloatArray:
    """データの各ピクセルの対数オッズ log(<v>) - log(1 - <v>)。"""
    data = np.asarray(data, dtype=np.float64)
    mean = np.clip(data.mean(axis=0), pseudo_count, 1.0 - pseudo_count)
    return typing.cast(FloatArray, logit(mean))


def mad_filter(values: npt.ArrayLike, threshold: float = 3.0
               ) -> npt.NDArray[np.bool_]:
    """中央値から threshold × (1.4826 × MAD) より離れた値を外れ値とします。

    残った値で中央値と MAD を計算し直し、変化がなくなるまで繰り返すので、
    結果に再び適用しても何も除かれません。

    Returns:
        ndarray: 残す値で True となる真偽値配列。
    """
    values = np.asarray(values, dtype=np.float64)
    keep = np.ones(values.shape, dtype=bool)
    while True:
        kept = values[keep]
        median = np.median(kept)
        mad = MAD_SCALE * np.median(np.abs(kept - median))
        inside = keep & (np.abs(values - median) <= threshold * mad)
        if np.array_equal(inside, keep):
            return keep
        keep = inside


@dataclasses.dataclass
class AisConfig:
    """AIS の設定。

    Attributes:
        n_runs (int): アニーリングの本数 (2 以上)。
        n_temperatures (int): β の格子点数 (両端を含む)。
        base_biases (ndarray, optional): 基底分布 (独立モデル) の
            バイアス b_0。省略時はモデルの b。
        seed (int): マスターシード。
        betas (ndarray, optional): β の列。省略時は [0, 1] の等間隔格子。

    Raises:
        ValueError: ラン数や温度数が 2 未満、または betas が 0 から 1 へ
            狭義単調増加しない場合。
    """

    n_runs: int = 100
    n_temperatures: int = 14000
    base_biases: typing.Optional[FloatArray] = None
    seed: int = 0
    betas: typing.Optional[FloatArray] = None

    def __post_init__(self) -> None:
        if self.n_runs < 2:
            raise ValueError('n_runs must be at least 2')
        if self.betas is None:
            if self.n_temperatures < 2:
                raise ValueError('n_temperatures must be at least 2')
            return
        betas = np.asarray(self.betas, dtype=np.float64)
        if (betas.ndim != 1 or betas.size < 2 or betas[0] != 0.0
                or betas[-1] != 1.0 or not np.all(np.diff(betas) > 0.0)):
            raise ValueError('betas must increase strictly from 0 to 1')

    def schedule(self) -> FloatArray:
        if self.betas is None:
            return np.linspace(0.0, 1.0, self.n_temperatures)
        return np.asarray(self.betas, dtype=np.float64)


@dataclasses.dataclass(frozen=True, eq=False)
class AisEstimate:
    """AIS による log Z の推定値。

    Attributes:
        log_z (float): 外れ値を除いた重みの平均の対数。
        log_weights (ndarray): 各ランの log Z の推定値 (除く前)。
        lower (float): 平均 - 3 標準誤差 (重みの空間で計算、正でなければ
            -inf)。
        upper (float): 平均 + 3 標準誤差。
        n_outliers_removed (int): MAD で除いたラン数。
        kept (ndarray): 残したランで True。
    """

    log_z: float
    log_weights: FloatArray
    lower: float
    upper: float
    n_outliers_removed: int
    kept: npt.NDArray[np.bool_]


def _ais_group(model: RbmModel, base: FloatArray, betas: FloatArray,
               seed: int, runs: typing.Sequence[int]) -> FloatArray:
    rngs = [rng_stream(seed, STREAM_AIS, r) for r in runs]
    n = model.n_visible
    p0 = expit(base)
    v = np.stack([(rng.random(n) < p0).astype(np.float64) for rng in rngs])
    cache = InputCache(model, v)
    log_w = np.zeros(len(runs))

    uniforms = np.empty((len(runs), 0, n))
    for k in range(1, betas.size):
        beta = betas[k]
        log_target = cache.v @ model.b + np.sum(
            cgf_eval(model.activation, model.c, cache.inputs), axis=1)
        log_w += (beta - betas[k - 1]) * (log_target - cache.v @ base)
        if k == betas.size - 1:
            break

        step = (k - 1) % _AIS_BLOCK
        if step == 0:
            block = min(_AIS_BLOCK, betas.size - 1 - k)
            uniforms = np.stack([rng.random((block, n)) for rng in rngs])
        for i in range(n):
            log_odds = (1.0 - beta) * base[i] + beta * (
                model.b[i] + cache.k_difference(i))
            cache.set_site(i, (uniforms[:, step, i] < expit(log_odds))
                           .astype(np.float64))
    return typing.cast(FloatArray,
                       log_w + np.sum(np.logaddexp(0.0, base)))


def ais_log_partition(model: RbmModel, config: AisConfig,
                      threads: int = 1) -> AisEstimate:
    """焼きなまし重点サンプリング (AIS) で log Z' を推定します。

    中間分布は p_β(v) ∝ exp[(1-β) b_0^T v + β (b^T v + Σ_μ K((W^T v)_μ))]
    で、遷移は β での 1 サイトずつの Gibbs スイープです。各ランは
    ストリーム (seed, STREAM_AIS, ラン番号) を使います。

    Args:
        model (RbmModel): RBM。
        config (AisConfig): 設定。
        threads (int): スレッド数。結果はスレッド数に依存しません。

    Returns:
        AisEstimate: 推定値と ±3 標準誤差の範囲。

    Raises:
        DegenerateReferenceError: 外れ値を除いた後に 2 ラン未満しか
            残らない場合。
    """
    assert 2 <= config.n_runs

    betas = config.schedule()
    base = (model.b if config.base_biases is None
            else np.asarray(config.base_biases, dtype=np.float64))
    assert base.shape == (model.n_visible,)

    groups = [range(start, min(start + _AIS_GROUP, config.n_runs))
              for start in range(0, config.n_runs, _AIS_GROUP)]

    def run(runs: typing.Sequence[int]) -> FloatArray:
        return _ais_group(model, base, betas, config.seed, runs)

    if threads <= 1:
        results = [run(group) for group in groups]
    else:
        with concurrent.futures.ThreadPoolExecutor(threads) as executor:
            results = list(executor.map(run, groups))
    log_weights = np.concatenate(results)

    kept = mad_filter(log_weights)
    removed = int(np.count_nonzero(~kept))
    if removed:
        logger.warning('AIS: removed %d outlier runs of %d', removed,
                       log_weights.size)
    if np.count_nonzero(kept) < 2:
        raise DegenerateReferenceError(
            'fewer than 2 AIS runs left after outlier removal')

    values = log_weights[kept]
    log_z = float(logsumexp(values) - math.log(values.size))
    shift = float(values.max())
    weights = np.exp(values - shift)
    mean = float(weights.mean())
    stderr = float(weights.std(ddof=1)) / math.sqrt(weights.size)
    upper = shift + math.log(mean + 3.0 * stderr)
    lower = (shift + math.log(mean - 3.0 * stderr)
             if mean - 3.0 * stderr > 0.0 else -math.inf)
    logger.info('AIS: log Z = %.6f [%.6f, %.6f] from %d runs x %d '
                'temperatures', log_z, lower, upper, values.size, betas.size)
    return AisEstimate(log_z, log_weights, lower, upper, removed, kept)


def mean_log_likelihood_ais(model: RbmModel, data: npt.ArrayLike,
                            log_z: float) -> float:
    """log Z の推定値を使ったデータ点あたりの平均対数尤度。"""
    return float(np.mean(rbm_log_weight(model, data))) - log_z


@dataclasses.dataclass(frozen=True)
class ComparisonStats:
    """2 つの相互作用モデルの s 次の係数の比較 (B が基準)。

    Attributes:
        slope (float): 原点を通る回帰 A ≈ slope × B の傾き。
        nrmse (float): sqrt(Σ (B - A)^2 / Σ B^2)。
        rms_a (float): A の係数の二乗平均平方根。
        rms_b (float): B の係数の二乗平均平方根。
        n_terms (int): 比較した項の数。
    """

    slope: float
    nrmse: float
    rms_a: float
    rms_b: float
    n_terms: int


def comparison_stats(a: InteractionModel, b: InteractionModel,
                     order: int) -> ComparisonStats:
    """s 次の係数を比較します。片方にしかない項は 0 として扱います。

    Raises:
        DegenerateReferenceError: B の s 次の係数のノルムが 0 の場合。
    """
    assert a.n_visible == b.n_visible

    subsets = list(dict.fromkeys(itertools.chain(b.order(order),
                                                 a.order(order))))
    x = np.array([a[subset] for subset in subsets])
    y = np.array([b[subset] for subset in subsets])
    norm = float(np.sum(y * y))
    if norm == 0.0:
        raise DegenerateReferenceError(
            f'reference model has no nonzero order-{order} terms')
    return ComparisonStats(
        slope=float(np.sum(x * y)) / norm,
        nrmse=math.sqrt(float(np.sum((y - x) ** 2)) / norm),
        rms_a=math.sqrt(float(np.mean(x * x))),
        rms_b=math.sqrt(norm / y.size),
        n_terms=y.size)


def rms_weight(model: RbmModel) -> float:
    """sqrt(Σ w^2 / (N M))。"""
    return math.sqrt(float(np.mean(model.w * model.w)))


@dataclasses.dataclass(frozen=True)
class StrengthProfile:
    """次数ごとの相互作用の強さ。

    Attributes:
        orders (tuple of int): 次数。
        rms (tuple of float): s 次の係数の二乗平均平方根 (1 次は b を除く)。
        n_subsets (tuple of int): 評価した部分集合の数。
    """

    orders: typing.Tuple[int, ...]
    rms: typing.Tuple[float, ...]
    n_subsets: typing.Tuple[int, ...]

    @property
    def log_rms(self) -> typing.Tuple[float, ...]:
        return tuple(math.log(x) if x > 0.0 else -math.inf
                     for x in self.rms)


def interaction_strengths(
        model: RbmModel, orders: typing.Sequence[int] = (1, 2, 3),
        max_subsets: int = 10 ** 5, seed: int = 0,
        index_pool: typing.Optional[typing.Sequence[int]] = None,
        threads: int = 1) -> StrengthProfile:
    """次数ごとの係数の二乗平均平方根を求めます。

    部分集合の総数が max_subsets を超える次数では、ストリーム
    (seed, STREAM_SUBSETS, s) で max_subsets 組を無作為に選びます。
    """
    pool = np.array(sorted(set(index_pool)) if index_pool is not None
                    else range(model.n_visible), dtype=np.int64)
    rms = []
    counts = []
    for s in orders:
        assert 1 <= s <= pool.size
        if math.comb(pool.size, s) <= max_subsets:
            local = np.array(list(itertools.combinations(range(pool.size),
                                                         s)),
                             dtype=np.int64).reshape(-1, s)
        else:
            local = sample_subsets(pool.size, s, max_subsets,
                                   rng_stream(seed, STREAM_SUBSETS, s))
        subsets = pool[local]
        values = interaction_terms(model, subsets, threads)
        if s == 1:
            values = values - model.b[subsets[:, 0]]
        rms.append(math.sqrt(float(np.mean(values * values))))
        counts.append(len(subsets))
        logger.info('order %d: rms %.6g over %d subsets', s, rms[-1],
                    counts[-1])
    return StrengthProfile(tuple(orders), tuple(rms), tuple(counts))


@dataclasses.dataclass(frozen=True)
class StrengthFit:
    slope: float
    intercept: float
    r_squared: float


def fit_strength_decay(profile: StrengthProfile) -> StrengthFit:
    """log RMS を次数に対して最小二乗で直線に当てはめます。"""
    assert len(profile.orders) >= 2

    result = linregress(np.array(profile.orders, dtype=np.float64),
                        np.array(profile.log_rms))
    return StrengthFit(float(result.slope), float(result.intercept),
                       float(result.rvalue) ** 2)
