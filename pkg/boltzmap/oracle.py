import concurrent.futures
import dataclasses
import io
import logging
import typing

import numpy as np
import numpy.typing as npt
from scipy.special import expit, logsumexp
from scipy.stats import chi2

import boltzmap._bit
from boltzmap.errors import StateSpaceTooLargeError
from boltzmap.model import InteractionModel, RbmModel
from boltzmap.potentials import FloatArray, cgf_eval


logger = logging.getLogger(__name__)

MAX_VISIBLE = 24

# Number of low bits enumerated as one dense block of states.
_BLOCK_BITS = 12
# High-bit states per Gray-code run; each run recomputes its base input.
_GRAY_RUN = 256

TABLE_HEADER = 'mask,log_weight,probability'


@dataclasses.dataclass(frozen=True, eq=False)
class ExactSummary:
    """2^N 状態すべての厳密な表。

    添字 mask のビット i が v_i に対応します。

    Attributes:
        n_visible (int): 可視層ユニット数 N。
        log_weights (ndarray): 非正規化対数重み、形状 (2^N,)。
        log_partition (float): log Z' = logsumexp(log_weights)。
        probabilities (ndarray): 確率、形状 (2^N,)。
    """

    n_visible: int
    log_weights: FloatArray
    log_partition: float
    probabilities: FloatArray

    @classmethod
    def from_log_weights(cls, log_weights: npt.ArrayLike) -> 'ExactSummary':
        log_weights = np.array(log_weights, dtype=np.float64, copy=True)
        n = boltzmap._bit._log2_length(log_weights)
        log_partition = float(logsumexp(log_weights))
        probabilities = np.exp(log_weights - log_partition)
        log_weights.setflags(write=False)
        probabilities.setflags(write=False)
        return cls(n, log_weights, log_partition, probabilities)


def _check_size(n: int) -> None:
    if n > MAX_VISIBLE:
        raise StateSpaceTooLargeError(
            f'exact enumeration needs N <= {MAX_VISIBLE}, got N = {n}')


def _rbm_block_range(model: RbmModel, low_inputs: FloatArray,
                     low_bias: FloatArray, out: FloatArray,
                     start: int, stop: int) -> None:
    # High bits walk Gray-code order from `start`; each step adds or
    # removes one row of W from the shared input.
    low = low_inputs.shape[0].bit_length() - 1
    w_high = model.w[low:]
    b_high = model.b[low:]
    n_high = w_high.shape[0]
    offsets = np.arange(low_inputs.shape[0])

    gray = boltzmap._bit._gray(start)
    bits = boltzmap._bit._state_bits(gray, n_high)
    base_input = bits @ w_high
    base_bias = float(bits @ b_high)
    for t in range(start, stop):
        if t != start:
            j = boltzmap._bit._bsf(t)
            gray ^= 1 << j
            if gray >> j & 1:
                base_input = base_input + w_high[j]
                base_bias += b_high[j]
            else:
                base_input = base_input - w_high[j]
                base_bias -= b_high[j]
        values = cgf_eval(model.activation, model.c,
                          low_inputs + base_input).sum(axis=1)
        out[(gray << low) + offsets] = low_bias + base_bias + values


def _rbm_log_weights(model: RbmModel, threads: int) -> FloatArray:
    n = model.n_visible
    low = min(n, _BLOCK_BITS)
    low_bits = boltzmap._bit._state_bits(np.arange(1 << low), low)
    low_inputs = low_bits @ model.w[:low]
    low_bias = low_bits @ model.b[:low]

    out = np.empty(1 << n)
    high_states = 1 << (n - low)
    runs = [(start, min(start + _GRAY_RUN, high_states))
            for start in range(0, high_states, _GRAY_RUN)]
    if threads <= 1 or len(runs) == 1:
        for start, stop in runs:
            _rbm_block_range(model, low_inputs, low_bias, out, start, stop)
    else:
        with concurrent.futures.ThreadPoolExecutor(threads) as executor:
            futures = [executor.submit(_rbm_block_range, model, low_inputs,
                                       low_bias, out, start, stop)
                       for start, stop in runs]
            for future in futures:
                future.result()
    return out


def enumerate_states(model: typing.Union[RbmModel, InteractionModel],
                     threads: int = 1) -> ExactSummary:
    """すべての可視層の状態を列挙して厳密な分布を求めます。

    RBM では下位 12 ビットを一括で、上位ビットを Gray コード順に W^T v を
    差分更新しながら評価します。InteractionModel では部分集合和
    (ゼータ変換) で指数部を求めます。

    Args:
        model: RbmModel または InteractionModel。
        threads (int): スレッド数。結果はスレッド数に依存しません。

    Returns:
        ExactSummary: 厳密な表。

    Raises:
        StateSpaceTooLargeError: N > 24 の場合。
        RangeError: Exponential で K がオーバーフローする場合。

    計算量: O(2^N M) (RBM)、O(N 2^N) (InteractionModel)
    """
    n = model.n_visible
    _check_size(n)

    if isinstance(model, RbmModel):
        log_weights = _rbm_log_weights(model, threads)
    else:
        coefficients = np.zeros(1 << n)
        for subset, value in model.items():
            coefficients[boltzmap._bit._indices_to_mask(subset)] += value
        log_weights = boltzmap._bit._zeta_transform(coefficients)
    summary = ExactSummary.from_log_weights(log_weights)
    logger.debug('enumerated %d states: log Z = %.12g', 1 << n,
                 summary.log_partition)
    return summary


def moebius_invert(summary: ExactSummary,
                   atol: float = 0.0) -> InteractionModel:
    """厳密な表から相互作用係数を Möbius 反転で復元します。

    I_S = Σ_{T⊆S} (-1)^{|S|-|T|} H(T)、H(v) = log_weight(v) - log_weight(0)。
    |I_S| <= atol の項は省略します。項は次数、次に辞書順で並びます。

    計算量: O(N 2^N)
    """
    n = summary.n_visible
    coefficients = boltzmap._bit._moebius_transform(
        summary.log_weights - summary.log_weights[0])

    result = InteractionModel(n)
    masks = boltzmap._bit._subset_order(n)
    values = coefficients[masks]
    keep = np.abs(values) > atol
    for mask, value in zip(masks[keep].tolist(), values[keep].tolist()):
        result[boltzmap._bit._mask_to_indices(mask)] = value
    return result


def site_conditional(summary: ExactSummary, v: npt.ArrayLike,
                     i: int) -> FloatArray:
    """表から厳密な P(v_i = 1 | v_-i) を求めます。v は形状 (..., N)。"""
    assert 0 <= i < summary.n_visible

    masks = boltzmap._bit._bits_to_masks(v)
    on = masks | (1 << i)
    off = masks & ~(1 << i)
    return typing.cast(FloatArray, expit(summary.log_weights[on]
                                         - summary.log_weights[off]))


def exact_samples(summary: ExactSummary, count: int,
                  rng: np.random.Generator) -> FloatArray:
    """厳密な分布から独立に count 個の状態をサンプリングします。"""
    masks = rng.choice(summary.probabilities.size, size=count,
                       p=summary.probabilities)
    return boltzmap._bit._state_bits(masks, summary.n_visible)


def mean_log_likelihood(summary: ExactSummary, data: npt.ArrayLike) -> float:
    """データ点あたりの厳密な平均対数尤度。"""
    masks = boltzmap._bit._bits_to_masks(data)
    assert masks.size >= 1
    return float(np.mean(summary.log_weights[masks])
                 - summary.log_partition)


def kl_divergence(p: ExactSummary, q: ExactSummary) -> float:
    """KL(p || q) = Σ_v p(v) (log p(v) - log q(v))。"""
    assert p.n_visible == q.n_visible

    support = p.probabilities > 0.0
    log_p = p.log_weights[support] - p.log_partition
    log_q = q.log_weights[support] - q.log_partition
    return float(np.sum(p.probabilities[support] * (log_p - log_q)))


@dataclasses.dataclass(frozen=True, eq=False)
class FrequencyReport:
    """サンプルの頻度と厳密な確率の比較。

    Attributes:
        probabilities (ndarray): 厳密な確率 (2^N,)。
        frequencies (ndarray): 試行ごとの頻度の平均 (2^N,)。
        std (ndarray): 試行間の頻度の標準偏差 (試行が 1 つなら 0)。
        stderr (ndarray): 平均の標準誤差 std / √trials。
        n_samples (int): サンプルの総数。
        n_trials (int): 試行数。
        tv_distance (float): 全変動距離。
        chi_square (float): χ^2 統計量 (期待度数 5 未満の状態はまとめる)。
        dof (int): 自由度。
        p_value (float): χ^2 検定の p 値。
    """

    probabilities: FloatArray
    frequencies: FloatArray
    std: FloatArray
    stderr: FloatArray
    n_samples: int
    n_trials: int
    tv_distance: float
    chi_square: float
    dof: int
    p_value: float


def _chi_square(counts: npt.NDArray[np.int64], probabilities: FloatArray
                ) -> typing.Tuple[float, int]:
    expected = counts.sum() * probabilities
    large = expected >= 5.0
    observed_bins = list(counts[large].astype(np.float64))
    expected_bins = list(expected[large])
    pooled = float(expected[~large].sum())
    if pooled > 0.0:
        observed_bins.append(float(counts[~large].sum()))
        expected_bins.append(pooled)
    observed = np.array(observed_bins)
    expectation = np.array(expected_bins)
    if expectation.size <= 1:
        return 0.0, 0
    statistic = float(np.sum((observed - expectation) ** 2 / expectation))
    return statistic, expectation.size - 1


def compare_frequencies(summary: ExactSummary,
                        samples: npt.ArrayLike) -> FrequencyReport:
    """サンプルの状態頻度を厳密な確率と比較します。

    Args:
        summary (ExactSummary): 厳密な表。
        samples: 形状 (K, N) または試行ごとに分けた (T, K, N) の 0/1 配列。

    Returns:
        FrequencyReport: 比較結果。

    Raises:
        ValueError: サンプルが空の場合。
    """
    samples = np.asarray(samples)
    if samples.ndim == 2:
        samples = samples[None]
    assert samples.ndim == 3 and samples.shape[2] == summary.n_visible
    if samples.shape[1] == 0:
        raise ValueError('no samples to compare')

    n_trials, per_trial = samples.shape[:2]
    size = summary.probabilities.size
    masks = boltzmap._bit._bits_to_masks(samples)
    counts = np.stack([np.bincount(row, minlength=size) for row in masks])
    trial_frequencies = counts / per_trial
    frequencies = trial_frequencies.mean(axis=0)
    if n_trials > 1:
        std = trial_frequencies.std(axis=0, ddof=1)
    else:
        std = np.zeros(size)
    total = counts.sum(axis=0)
    pooled = total / total.sum()
    tv = 0.5 * float(np.sum(np.abs(pooled - summary.probabilities)))
    statistic, dof = _chi_square(total, summary.probabilities)
    p_value = float(chi2.sf(statistic, dof)) if dof > 0 else 1.0
    return FrequencyReport(summary.probabilities, frequencies, std,
                           std / np.sqrt(n_trials), int(total.sum()),
                           n_trials, tv, statistic, dof, p_value)


def format_table(summary: ExactSummary) -> str:
    out = io.StringIO()
    out.write(TABLE_HEADER + '\n')
    for mask, (log_weight, probability) in enumerate(
            zip(summary.log_weights.tolist(),
                summary.probabilities.tolist())):
        out.write(f'{mask},{log_weight:.17g},{probability:.17g}\n')
    return out.getvalue()
