import collections
import configparser
import dataclasses
import io
import logging
import math
import typing

import numpy as np
import numpy.typing as npt

import boltzmap._bit
from boltzmap._random import (STREAM_EVAL, STREAM_INIT, STREAM_TRAIN,
                              rng_stream)
from boltzmap.errors import TrainingDivergedError
from boltzmap.evaluation import (PSEUDO_COUNT, base_biases_from_data,
                                 pseudo_likelihood)
from boltzmap.mnist import iter_minibatches
from boltzmap.model import RbmModel
from boltzmap.oracle import enumerate_states
from boltzmap.potentials import ActivationKind, FloatArray, conditional_mean
from boltzmap.sampling import sample_hidden_layer, sample_visible_layer


logger = logging.getLogger(__name__)

DEFAULT_ETA0 = {
    ActivationKind.STEP: 0.05,
    ActivationKind.LINEAR: 0.01,
    ActivationKind.RELU: 0.01,
    ActivationKind.EXPONENTIAL: 0.005,
}

INITIAL_WEIGHT_VARIANCE = 0.1
WEIGHT_STEP_LIMIT = 1.0

LOG_HEADER = ('update,epoch,cd_steps,learning_rate,pseudo_likelihood,'
              'moving_average')


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """CD 学習の設定。

    エポック e (1 始まり) では k = ceil(e / cd_period) 回の Gibbs
    ステップを使い、学習率は η = η_0 / k です。

    Attributes:
        minibatch (int): ミニバッチの大きさ。
        epochs (int): エポック数。
        eta0 (float, optional): 初期学習率。省略時は活性化関数ごとの
            既定値 (DEFAULT_ETA0)。
        seed (int): マスターシード。
        eval_subset (int): 擬似尤度を評価するデータ点の数。
        cd_period (int): k を 1 増やすエポック数。
        moving_window (int): 擬似尤度の移動平均の幅 (エポック数)。
    """

    minibatch: int = 100
    epochs: int = 500
    eta0: typing.Optional[float] = None
    seed: int = 0
    eval_subset: int = 100
    cd_period: int = 10
    moving_window: int = 20

    def __post_init__(self) -> None:
        for name in ('minibatch', 'epochs', 'eval_subset', 'cd_period',
                     'moving_window'):
            if getattr(self, name) < 1:
                raise ValueError(f'{name} must be positive')
        if self.seed < 0:
            raise ValueError('seed must be nonnegative')
        if self.eta0 is not None and not self.eta0 > 0.0:
            raise ValueError('eta0 must be positive')

    def cd_steps(self, epoch: int) -> int:
        assert 1 <= epoch
        return -(-epoch // self.cd_period)

    def learning_rate(self, epoch: int, activation: ActivationKind) -> float:
        eta0 = DEFAULT_ETA0[activation] if self.eta0 is None else self.eta0
        return eta0 / self.cd_steps(epoch)

    def replace(self, **changes: typing.Any) -> 'TrainConfig':
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: typing.Mapping[str, str]) -> 'TrainConfig':
        converters: typing.Dict[str, typing.Callable[[str], typing.Any]] = {
            'minibatch': int, 'epochs': int, 'eta0': float, 'seed': int,
            'eval_subset': int, 'cd_period': int, 'moving_window': int,
        }
        changes = {}
        for key, raw in values.items():
            if key not in converters:
                raise ValueError(f'unknown training option {key!r}')
            try:
                changes[key] = converters[key](raw)
            except ValueError:
                raise ValueError(
                    f'bad value for {key}: {raw!r}') from None
        return cls(**changes)

    @classmethod
    def from_file(cls, path: str) -> 'TrainConfig':
        """``key=value`` 形式の設定ファイルを読み込みます。"""
        parser = configparser.ConfigParser()
        with open(path) as f:
            try:
                parser.read_string('[train]\n' + f.read(), source=path)
            except configparser.Error as e:
                raise ValueError(str(e)) from None
        return cls.from_mapping(dict(parser['train']))


def initialize(data: npt.ArrayLike, n_hidden: int,
               activation: ActivationKind,
               rng: np.random.Generator) -> RbmModel:
    """データから RBM を初期化します。

    - b = log<v> - log(1 - <v>) (<v> は [1e-6, 1 - 1e-6] に切り詰め)
    - w_{i,μ} = ±sqrt(0.1 / N) (符号は一様)
    - c = W^T <v> (データの平均に対する隠れ層への入力が 0)
    """
    data = np.asarray(data, dtype=np.float64)
    assert data.ndim == 2 and data.shape[0] >= 1
    assert 1 <= n_hidden

    n = data.shape[1]
    b = base_biases_from_data(data, PSEUDO_COUNT)
    signs = np.where(rng.random((n, n_hidden)) < 0.5, -1.0, 1.0)
    w = signs * math.sqrt(INITIAL_WEIGHT_VARIANCE / n)
    c = data.mean(axis=0) @ w
    return RbmModel(activation, b, c, w)


@dataclasses.dataclass(frozen=True, eq=False)
class Gradient:
    """対数尤度の勾配 (の推定値)。"""

    b: FloatArray
    c: FloatArray
    w: FloatArray

    def flatten(self) -> FloatArray:
        return np.concatenate([self.b, self.c, self.w.ravel()])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flatten())))


def _data_statistics(model: RbmModel, v: FloatArray,
                     weights: FloatArray) -> Gradient:
    # Weighted <v>, <E[z|v]> and <v E[z|v]^T> with hidden means.
    h = conditional_mean(model.activation, model.c, model.hidden_inputs(v))
    return Gradient(weights @ v, -(weights @ h), v.T @ (weights[:, None] * h))


def cd_gradient(model: RbmModel, batch: npt.ArrayLike, k: int,
                rng: np.random.Generator) -> Gradient:
    """CD-k による勾配の推定値。

    正の項は隠れ層の条件付き平均、負の項はデータから始めた k 回の
    ブロック Gibbs 更新の後の v' での条件付き平均で計算します。
    """
    assert 1 <= k

    batch = np.asarray(batch, dtype=np.float64)
    reconstruction = batch
    for _ in range(k):
        z = sample_hidden_layer(model, reconstruction, rng)
        reconstruction = sample_visible_layer(model, z, rng)

    weights = np.full(batch.shape[0], 1.0 / batch.shape[0])
    positive = _data_statistics(model, batch, weights)
    negative = _data_statistics(model, reconstruction, weights)
    return Gradient(positive.b - negative.b, positive.c - negative.c,
                    positive.w - negative.w)


def exact_gradient(model: RbmModel, data: npt.ArrayLike,
                   threads: int = 1) -> Gradient:
    """状態の列挙による厳密な平均対数尤度の勾配 (N <= 24)。"""
    data = np.asarray(data, dtype=np.float64)
    summary = enumerate_states(model, threads)
    states = boltzmap._bit._state_bits(
        np.arange(1 << model.n_visible), model.n_visible)

    positive = _data_statistics(model, data,
                                np.full(data.shape[0], 1.0 / data.shape[0]))
    negative = _data_statistics(model, states, summary.probabilities)
    return Gradient(positive.b - negative.b, positive.c - negative.c,
                    positive.w - negative.w)


def cd_step(model: RbmModel, batch: npt.ArrayLike, k: int, eta: float,
            rng: np.random.Generator) -> RbmModel:
    """CD-k で 1 回パラメータを更新します。

    重みの更新量は各成分 [-1, 1] に切り詰めます。eta = 0 ではモデルを
    そのまま返します。

    Raises:
        TrainingDivergedError: 勾配が有限でない場合。
    """
    assert 0.0 <= eta

    if eta == 0.0:
        return model
    gradient = cd_gradient(model, batch, k, rng)
    if not gradient.is_finite():
        raise TrainingDivergedError(
            f'non-finite CD-{k} gradient (activation {model.activation}, '
            f'max |w| = {float(np.max(np.abs(model.w))):.3g})')
    step = np.clip(eta * gradient.w, -WEIGHT_STEP_LIMIT, WEIGHT_STEP_LIMIT)
    return model.replace(b=model.b + eta * gradient.b,
                         c=model.c + eta * gradient.c,
                         w=model.w + step)


@dataclasses.dataclass(frozen=True)
class TrainLogRow:
    update: int
    epoch: int
    cd_steps: int
    learning_rate: float
    pseudo_likelihood: float
    moving_average: float


@dataclasses.dataclass(frozen=True, eq=False)
class TrainResult:
    model: RbmModel
    log: typing.List[TrainLogRow]


def format_training_log(rows: typing.Iterable[TrainLogRow]) -> str:
    out = io.StringIO()
    out.write(LOG_HEADER + '\n')
    for row in rows:
        out.write(f'{row.update},{row.epoch},{row.cd_steps},'
                  f'{row.learning_rate:.17g},{row.pseudo_likelihood:.17g},'
                  f'{row.moving_average:.17g}\n')
    return out.getvalue()


def train(data: npt.ArrayLike, config: TrainConfig,
          activation: ActivationKind, n_hidden: int,
          eval_data: typing.Optional[npt.ArrayLike] = None) -> TrainResult:
    """ミニバッチ CD-k で RBM を学習します。

    各更新の後に評価データ (省略時は学習データ) から無作為に選んだ
    eval_subset 点で擬似尤度を計算し、moving_window エポック分の
    移動平均とともに記録します。

    乱数はストリーム STREAM_INIT (初期化)、STREAM_TRAIN (並べ替えと
    Gibbs)、STREAM_EVAL (評価点の選択) から取るため、同じ設定からは
    同じ記録が得られます。

    Raises:
        TrainingDivergedError: 勾配が有限でなくなった場合。
    """
    data = np.asarray(data, dtype=np.float64)
    assert data.ndim == 2 and data.shape[0] >= 1
    evaluation = data if eval_data is None else np.asarray(eval_data,
                                                           dtype=np.float64)

    model = initialize(data, n_hidden, activation,
                       rng_stream(config.seed, STREAM_INIT))
    train_rng = rng_stream(config.seed, STREAM_TRAIN)
    eval_rng = rng_stream(config.seed, STREAM_EVAL)

    n_items = data.shape[0]
    per_epoch = -(-n_items // config.minibatch)
    window: typing.Deque[float] = collections.deque(
        maxlen=config.moving_window * per_epoch)
    eval_size = min(config.eval_subset, evaluation.shape[0])
    logger.info('training %s RBM: N=%d, M=%d, %d items, %d updates/epoch; '
                'pseudo-likelihood is summed over sites', activation,
                data.shape[1], n_hidden, n_items, per_epoch)

    log: typing.List[TrainLogRow] = []
    update = 0
    window_sum = 0.0
    for epoch in range(1, config.epochs + 1):
        k = config.cd_steps(epoch)
        eta = config.learning_rate(epoch, activation)
        for batch in iter_minibatches(data, config.minibatch, train_rng):
            model = cd_step(model, batch, k, eta, train_rng)
            update += 1

            points = eval_rng.choice(evaluation.shape[0], size=eval_size,
                                     replace=False)
            value = pseudo_likelihood(model, evaluation[points])
            if len(window) == window.maxlen:
                window_sum -= window[0]
            window.append(value)
            window_sum += value
            log.append(TrainLogRow(update, epoch, k, eta, value,
                                   window_sum / len(window)))
        logger.info('epoch %d: k=%d eta=%.4g pseudo-likelihood %.4f '
                    '(moving average %.4f)', epoch, k, eta,
                    log[-1].pseudo_likelihood, log[-1].moving_average)
    return TrainResult(model, log)
