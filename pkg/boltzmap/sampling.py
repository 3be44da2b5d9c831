import concurrent.futures
import dataclasses
import logging
import typing

import numpy as np
import numpy.typing as npt
from scipy.special import expit

from boltzmap._random import STREAM_SAMPLE, rng_stream
from boltzmap.model import RbmModel
from boltzmap.potentials import FloatArray, cgf_eval, sample_hidden


logger = logging.getLogger(__name__)

DEFAULT_BURN_IN = 1000
DEFAULT_THINNING = 1
REFRESH_EVERY = 10 ** 4


@dataclasses.dataclass
class ChainState:
    """Gibbs 連鎖の状態。

    v と z は 1 本の連鎖なら形状 (N,), (M,)、複数本をまとめて進める
    場合は (R, N), (R, M) です。

    Attributes:
        v (ndarray): 可視層 (0/1)。
        z (ndarray): 隠れ層。
        rng (numpy.random.Generator): この連鎖専用の乱数生成器。
        sweeps_done (int): 実行したスイープ数。
    """

    v: FloatArray
    z: FloatArray
    rng: np.random.Generator
    sweeps_done: int = 0


def sample_hidden_layer(model: RbmModel, v: npt.ArrayLike,
                        rng: np.random.Generator) -> FloatArray:
    """z ~ P(z | v) をユニットごとに独立にサンプリングします。"""
    return sample_hidden(model.activation, model.c,
                         model.hidden_inputs(v), rng)


def visible_probabilities(model: RbmModel, z: npt.ArrayLike) -> FloatArray:
    """P(v_i = 1 | z) = σ(b_i + Σ_μ w_{i,μ} z_μ)。"""
    z = np.asarray(z, dtype=np.float64)
    return typing.cast(FloatArray, expit(model.b + z @ model.w.T))


def sample_visible_layer(model: RbmModel, z: npt.ArrayLike,
                         rng: np.random.Generator) -> FloatArray:
    p = visible_probabilities(model, z)
    return (rng.random(p.shape) < p).astype(np.float64)


def init_chain(model: RbmModel, rng: np.random.Generator,
               v: typing.Optional[npt.ArrayLike] = None) -> ChainState:
    """連鎖を初期化します。v を省略した場合は一様な乱数で決めます。"""
    if v is None:
        v = (rng.random(model.n_visible) < 0.5).astype(np.float64)
    v = np.array(v, dtype=np.float64, copy=True)
    assert v.shape[-1] == model.n_visible
    return ChainState(v, sample_hidden_layer(model, v, rng), rng)


def gibbs_sweep(model: RbmModel, state: ChainState) -> ChainState:
    """ブロック Gibbs サンプリングを 1 スイープ進めます。

    z ~ P(z | v) をサンプリングし、続いて v ~ P(v | z) をサンプリング
    します。

    Raises:
        RangeError: 隠れ層のサンプリングでオーバーフローした場合。
    """
    z = sample_hidden_layer(model, state.v, state.rng)
    v = sample_visible_layer(model, z, state.rng)
    return ChainState(v, z, state.rng, state.sweeps_done + 1)


def visible_site_conditional(model: RbmModel, v: npt.ArrayLike,
                             i: int) -> FloatArray:
    """隠れ層を周辺化した分布での P(v_i = 1 | v_-i)。

    Δ_i = b_i + Σ_μ [K(I_μ^{i←1}) - K(I_μ^{i←0})] として σ(Δ_i) を返します。
    v は形状 (..., N) です。W^T v をその場で計算します。
    """
    assert 0 <= i < model.n_visible

    v = np.asarray(v, dtype=np.float64)
    inputs = model.hidden_inputs(v)
    off = inputs - v[..., i, None] * model.w[i]
    return typing.cast(FloatArray,
                       expit(model.b[i] + _k_difference(model, off, i)))


def _k_difference(model: RbmModel, off: FloatArray, i: int) -> FloatArray:
    on = off + model.w[i]
    return typing.cast(FloatArray,
                       np.sum(cgf_eval(model.activation, model.c, on)
                              - cgf_eval(model.activation, model.c, off),
                              axis=-1))


class InputCache:
    """R 本の可視層ベクトルと隠れ層への入力 W^T v を保持するキャッシュ。

    1 サイトの更新ごとに入力を O(M) で差分更新し、refresh_every 回ごとに
    計算し直して丸め誤差の蓄積を抑えます。

    Args:
        model (RbmModel): RBM。
        v: 形状 (R, N) または (N,) の 0/1 配列 (コピーされます)。
        refresh_every (int): 入力を計算し直す間隔。

    Examples:
        >>> cache = InputCache(model, np.zeros((4, model.n_visible)))
        >>> cache.set_site(0, np.ones(4))
        >>> cache.log_odds(1)  # P(v_1 = 1 | v_-1) の対数オッズ、形状 (4,)
    """

    def __init__(self, model: RbmModel, v: npt.ArrayLike,
                 refresh_every: int = REFRESH_EVERY) -> None:
        assert 1 <= refresh_every

        self._model = model
        self._v = np.array(v, dtype=np.float64, copy=True, ndmin=2)
        assert self._v.shape[1] == model.n_visible
        self._refresh_every = refresh_every
        self._updates = 0
        self._inputs = self._v @ model.w

    @property
    def v(self) -> FloatArray:
        view = self._v.view()
        view.setflags(write=False)
        return view

    @property
    def inputs(self) -> FloatArray:
        view = self._inputs.view()
        view.setflags(write=False)
        return view

    def k_difference(self, i: int) -> FloatArray:
        """Σ_μ [K(I_μ^{i←1}) - K(I_μ^{i←0})]、形状 (R,)。"""
        assert 0 <= i < self._model.n_visible

        off = self._inputs - self._v[:, i, None] * self._model.w[i]
        return _k_difference(self._model, off, i)

    def log_odds(self, i: int) -> FloatArray:
        """log P(v_i = 1 | v_-i) - log P(v_i = 0 | v_-i)、形状 (R,)。"""
        return self._model.b[i] + self.k_difference(i)

    def set_site(self, i: int, values: npt.ArrayLike) -> None:
        """すべての行の v_i を values (形状 (R,) の 0/1) に置き換えます。"""
        assert 0 <= i < self._model.n_visible

        values = np.asarray(values, dtype=np.float64)
        delta = values - self._v[:, i]
        self._inputs += delta[:, None] * self._model.w[i]
        self._v[:, i] = values
        self._updates += 1
        if self._updates >= self._refresh_every:
            self.refresh()

    def refresh(self) -> None:
        self._inputs = self._v @ self._model.w
        self._updates = 0


def sample_chain(model: RbmModel, n_samples: int, seed: int, trial: int = 0,
                 burn_in: int = DEFAULT_BURN_IN,
                 thinning: int = DEFAULT_THINNING) -> FloatArray:
    """1 本の Gibbs 連鎖から n_samples 個の可視層の状態を取り出します。

    乱数はストリーム (seed, STREAM_SAMPLE, trial) から取ります。

    Returns:
        ndarray: 形状 (n_samples, N) の 0/1 配列。
    """
    assert 0 <= burn_in and 1 <= thinning and 0 <= n_samples

    state = init_chain(model, rng_stream(seed, STREAM_SAMPLE, trial))
    for _ in range(burn_in):
        state = gibbs_sweep(model, state)
    out = np.empty((n_samples, model.n_visible))
    for k in range(n_samples):
        for _ in range(thinning):
            state = gibbs_sweep(model, state)
        out[k] = state.v
    logger.debug('trial %d: %d sweeps', trial, state.sweeps_done)
    return out


def sample_trials(model: RbmModel, n_samples: int, trials: int, seed: int,
                  burn_in: int = DEFAULT_BURN_IN,
                  thinning: int = DEFAULT_THINNING,
                  threads: int = 1) -> FloatArray:
    """独立な trials 本の連鎖から、それぞれ n_samples 個の状態を取ります。

    試行 t は乱数ストリーム (seed, STREAM_SAMPLE, t) を使うため、結果は
    スレッド数に依存しません。

    Returns:
        ndarray: 形状 (trials, n_samples, N) の 0/1 配列。
    """
    assert 1 <= trials

    def run(trial: int) -> FloatArray:
        return sample_chain(model, n_samples, seed, trial, burn_in, thinning)

    if threads <= 1:
        chains = [run(t) for t in range(trials)]
    else:
        with concurrent.futures.ThreadPoolExecutor(threads) as executor:
            chains = list(executor.map(run, range(trials)))
    return np.stack(chains)
