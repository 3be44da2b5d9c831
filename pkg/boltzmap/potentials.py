import enum
import math
import typing
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.special import expit, log_ndtr

import boltzmap._math
from boltzmap.errors import RangeError


FloatArray = npt.NDArray[np.float64]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class ActivationKind(enum.Enum):
    """隠れ層ユニットのポテンシャル(活性化関数)の種類。

    値はモデルファイルや CLI で使う ASCII 名です。

    - LINEAR: U(z) = z^2/2 + c z (ガウス分布)
    - RELU: z >= 0 に制限した二次ポテンシャル (切断正規分布)
    - STEP: z ∈ {0, 1}、U(z) = c z (ベルヌーイ分布)
    - EXPONENTIAL: z ∈ N、U(z) = c z + log z! (ポアソン分布)
    """

    LINEAR = 'linear'
    RELU = 'relu'
    STEP = 'step'
    EXPONENTIAL = 'exp'

    @classmethod
    def parse(cls, name: str) -> 'ActivationKind':
        try:
            return cls(name)
        except ValueError:
            names = ', '.join(kind.value for kind in cls)
            raise ValueError(
                f'unknown activation {name!r}; expected one of {names}'
            ) from None

    def __str__(self) -> str:
        return self.value


def _exp(x: npt.ArrayLike) -> FloatArray:
    with np.errstate(over='raise'):
        try:
            return typing.cast(FloatArray, np.exp(x))
        except FloatingPointError:
            raise RangeError('exp overflow in the Exponential potential '
                             '(input minus bias is too large)') from None


def cgf_eval(kind: ActivationKind, c: npt.ArrayLike,
             q: npt.ArrayLike) -> FloatArray:
    """ρ(z) のキュムラント母関数 K(q) = log ∫ exp(q z) ρ(z) dz を計算します。

    c と q はブロードキャストされます。

    Args:
        kind (ActivationKind): ポテンシャルの種類。
        c: 隠れ層のバイアス c_μ。
        q: 引数 q。

    Returns:
        ndarray: K(q)。すべての c について K(0) = 0 です。

    Raises:
        RangeError: Exponential で exp(q - c) がオーバーフローする場合。

    Examples:
        >>> float(cgf_eval(ActivationKind.LINEAR, 0.0, 1.0))
        0.5
        >>> float(cgf_eval(ActivationKind.STEP, 0.0, math.log(3)))
        0.6931471805599453

    Notes:
        - ReLU は log((1 + erf((q-c)/√2)) / (1 - erf(c/√2))) の項を
          log Φ(q - c) - log Φ(-c) と書き換え、c >> 0 でも桁落ちしません。
    """
    c = np.asarray(c, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)

    if kind is ActivationKind.LINEAR:
        return typing.cast(FloatArray, 0.5 * q * q - q * c)
    if kind is ActivationKind.RELU:
        return typing.cast(FloatArray, 0.5 * q * q - q * c
                           + log_ndtr(q - c) - log_ndtr(-c))
    if kind is ActivationKind.STEP:
        return typing.cast(FloatArray,
                           np.logaddexp(0.0, q - c) - np.logaddexp(0.0, -c))
    if kind is ActivationKind.EXPONENTIAL:
        lam = _exp(-c)
        with np.errstate(over='raise'):
            try:
                return typing.cast(FloatArray, lam * np.expm1(q))
            except FloatingPointError:
                raise RangeError('exp overflow in the Exponential '
                                 'potential') from None
    raise ValueError(kind)


def _relu_mills(x: FloatArray) -> FloatArray:
    # φ(x) / Φ(x)
    return typing.cast(FloatArray,
                       np.exp(-0.5 * x * x - _LOG_SQRT_2PI - log_ndtr(x)))


def conditional_mean(kind: ActivationKind, c: npt.ArrayLike,
                     inputs: npt.ArrayLike) -> FloatArray:
    """入力 I_μ が与えられたときの隠れ層ユニットの条件付き平均 <z_μ>。

    Examples:
        >>> float(conditional_mean(ActivationKind.STEP, 1.0, 1.0))
        0.5
    """
    x = np.asarray(inputs, dtype=np.float64) - np.asarray(c,
                                                          dtype=np.float64)

    if kind is ActivationKind.LINEAR:
        return x
    if kind is ActivationKind.RELU:
        return typing.cast(FloatArray, x + _relu_mills(x))
    if kind is ActivationKind.STEP:
        return typing.cast(FloatArray, expit(x))
    if kind is ActivationKind.EXPONENTIAL:
        return _exp(x)
    raise ValueError(kind)


def conditional_mode(kind: ActivationKind, c: npt.ArrayLike,
                     inputs: npt.ArrayLike) -> FloatArray:
    """条件付き分布の最頻値、すなわち活性化関数。

    - Linear: I - c
    - ReLU: max(0, I - c)
    - Step: Θ(I - c) (Θ(0) = 1 とします)
    - Exponential: floor(exp(I - c))

    Examples:
        >>> float(conditional_mode(ActivationKind.RELU, 0.0, -3.0))
        0.0
    """
    x = np.asarray(inputs, dtype=np.float64) - np.asarray(c,
                                                          dtype=np.float64)

    if kind is ActivationKind.LINEAR:
        return x
    if kind is ActivationKind.RELU:
        return typing.cast(FloatArray, np.maximum(x, 0.0))
    if kind is ActivationKind.STEP:
        return (x >= 0.0).astype(np.float64)
    if kind is ActivationKind.EXPONENTIAL:
        return typing.cast(FloatArray, np.floor(_exp(x)))
    raise ValueError(kind)


def conditional_variance(kind: ActivationKind, c: npt.ArrayLike,
                         inputs: npt.ArrayLike) -> FloatArray:
    """条件付き分布の分散。入力 0 では二次のキュムラント κ^(2) です。"""
    x = np.asarray(inputs, dtype=np.float64) - np.asarray(c,
                                                          dtype=np.float64)

    if kind is ActivationKind.LINEAR:
        return np.ones_like(x)
    if kind is ActivationKind.RELU:
        h = _relu_mills(x)
        return typing.cast(FloatArray, 1.0 - h * (x + h))
    if kind is ActivationKind.STEP:
        return typing.cast(FloatArray, expit(x) * expit(-x))
    if kind is ActivationKind.EXPONENTIAL:
        return _exp(x)
    raise ValueError(kind)


def cumulant(kind: ActivationKind, c: npt.ArrayLike, n: int) -> FloatArray:
    """ρ(z) の n 次キュムラント κ^(n) = K^(n)(0)。

    Args:
        kind (ActivationKind): ポテンシャルの種類。
        c: 隠れ層のバイアス。
        n (int): 次数 (1 以上)。

    Returns:
        ndarray: c と同じ形状の κ^(n)。

    Notes:
        - n = 1, 2 はすべての種類で閉じた式を使います。
        - Linear は n >= 3 で 0、Exponential はすべての n で exp(-c) です。
        - Step の n >= 3 は σ' = σ(1-σ) による σ(-c) の多項式で厳密に
          計算します。
        - ReLU の n >= 3 は K の中心差分を Richardson 補外した値です。

    Examples:
        >>> float(cumulant(ActivationKind.STEP, 0.0, 2))
        0.25
    """
    assert 1 <= n

    c = np.asarray(c, dtype=np.float64)

    if n == 1:
        return conditional_mean(kind, c, 0.0)
    if n == 2:
        return conditional_variance(kind, c, 0.0)
    if kind is ActivationKind.LINEAR:
        return np.zeros_like(c)
    if kind is ActivationKind.EXPONENTIAL:
        return _exp(-c)
    if kind is ActivationKind.STEP:
        poly = boltzmap._math._sigmoid_derivative_poly(n)
        return typing.cast(FloatArray, poly(expit(-c)))
    if kind is ActivationKind.RELU:
        def k(points: FloatArray) -> FloatArray:
            return cgf_eval(kind, c, points.reshape(points.shape
                                                    + (1,) * c.ndim))

        return boltzmap._math._richardson_derivative(k, n)
    raise ValueError(kind)


def _standard_tail(lower: FloatArray,
                   rng: np.random.Generator) -> FloatArray:
    # y >= lower > 0 from N(0, 1): exponential proposal with the optimal
    # rate (Robert, 1995).
    out = np.empty(lower.shape)
    pending = np.arange(lower.size)
    while pending.size:
        a = lower[pending]
        alpha = 0.5 * (a + np.sqrt(a * a + 4.0))
        y = a + rng.standard_exponential(a.size) / alpha
        accept = rng.random(a.size) <= np.exp(-0.5 * (y - alpha) ** 2)
        out[pending[accept]] = y[accept]
        pending = pending[~accept]
    return out


def _standard_body(lower: FloatArray,
                   rng: np.random.Generator) -> FloatArray:
    # y >= lower with lower <= 0: plain rejection, acceptance >= 1/2.
    out = np.empty(lower.shape)
    pending = np.arange(lower.size)
    while pending.size:
        a = lower[pending]
        y = rng.standard_normal(a.size)
        accept = y >= a
        out[pending[accept]] = y[accept]
        pending = pending[~accept]
    return out


def _truncated_normal(loc: FloatArray,
                      rng: np.random.Generator) -> FloatArray:
    """N(loc, 1) を [0, ∞) に切断した分布からサンプリングします。"""
    lower = (-loc).reshape(-1)
    y = np.empty(lower.shape)
    tail = lower > 0.0
    y[tail] = _standard_tail(lower[tail], rng)
    y[~tail] = _standard_body(lower[~tail], rng)
    return typing.cast(FloatArray,
                       np.maximum(loc + y.reshape(loc.shape), 0.0))


def sample_hidden(kind: ActivationKind, c: npt.ArrayLike,
                  inputs: npt.ArrayLike,
                  rng: np.random.Generator) -> FloatArray:
    """P(z_μ | I_μ) から隠れ層ユニットの値をサンプリングします。

    c と inputs はブロードキャストされ、要素ごとに独立に 1 つずつ
    サンプリングします。

    Args:
        kind (ActivationKind): ポテンシャルの種類。
        c: 隠れ層のバイアス。
        inputs: 入力 I_μ = (W^T v)_μ。
        rng (numpy.random.Generator): 乱数生成器。

    Returns:
        ndarray: Linear は実数、ReLU は 0 以上、Step は {0, 1}、
        Exponential は 0 以上の整数値 (float 型)。

    Raises:
        RangeError: Exponential でポアソン分布のレートがオーバーフロー
            する場合。
    """
    x = np.asarray(inputs, dtype=np.float64) - np.asarray(c,
                                                          dtype=np.float64)

    if kind is ActivationKind.LINEAR:
        return typing.cast(FloatArray, x + rng.standard_normal(x.shape))
    if kind is ActivationKind.RELU:
        return _truncated_normal(x, rng)
    if kind is ActivationKind.STEP:
        return (rng.random(x.shape) < expit(x)).astype(np.float64)
    if kind is ActivationKind.EXPONENTIAL:
        lam = _exp(x)
        try:
            return rng.poisson(lam).astype(np.float64)
        except ValueError:
            raise RangeError('Poisson rate too large for sampling '
                             f'(max rate {float(np.max(lam)):.3e})') from None
    raise ValueError(kind)


@dataclass(frozen=True)
class HiddenConditional:
    """1 つの隠れ層ユニットの条件付き分布 P(z | I)。

    Attributes:
        kind (ActivationKind): ポテンシャルの種類。
        input (float): 入力 I_μ。
        bias (float): バイアス c_μ。
    """

    kind: ActivationKind
    input: float
    bias: float

    def mean(self) -> float:
        return float(conditional_mean(self.kind, self.bias, self.input))

    def mode(self) -> float:
        return float(conditional_mode(self.kind, self.bias, self.input))

    def variance(self) -> float:
        return float(conditional_variance(self.kind, self.bias, self.input))

    def sample(self, rng: np.random.Generator) -> float:
        return float(sample_hidden(self.kind, self.bias, self.input, rng))
