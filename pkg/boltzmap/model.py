import dataclasses
import io
import math
import typing

import numpy as np
import numpy.typing as npt

from boltzmap.errors import ModelFormatError
from boltzmap.potentials import ActivationKind, FloatArray, cgf_eval


MODEL_HEADER = 'boltzmap-rbm v1'
INTERACTION_HEADER = 'order,indices,value'

Subset = typing.Tuple[int, ...]


def _frozen_array(a: npt.ArrayLike, ndim: int) -> FloatArray:
    array = np.array(a, dtype=np.float64, copy=True, order='C')
    assert array.ndim == ndim
    array.setflags(write=False)
    return array


@dataclasses.dataclass(frozen=True, eq=False)
class RbmModel:
    """一般化 RBM のパラメータ。

    P(v, z) ∝ exp(b^T v + v^T W z - Σ_μ U(z_μ)) で、U は activation で
    決まるポテンシャル (c を含む) です。配列は読み取り専用のコピーとして
    保持されます。

    Attributes:
        activation (ActivationKind): 隠れ層のポテンシャル。
        b (ndarray): 可視層のバイアス、形状 (N,)。
        c (ndarray): 隠れ層のバイアス、形状 (M,)。
        w (ndarray): 重み行列、形状 (N, M)。
    """

    activation: ActivationKind
    b: FloatArray
    c: FloatArray
    w: FloatArray

    def __post_init__(self) -> None:
        b = _frozen_array(self.b, 1)
        c = _frozen_array(self.c, 1)
        w = _frozen_array(self.w, 2)
        assert 1 <= b.size and 1 <= c.size
        assert w.shape == (b.size, c.size)
        for name, array in (('b', b), ('c', c), ('w', w)):
            if not np.all(np.isfinite(array)):
                raise ValueError(f'non-finite entries in {name}')
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'c', c)
        object.__setattr__(self, 'w', w)

    @property
    def n_visible(self) -> int:
        return self.b.size

    @property
    def n_hidden(self) -> int:
        return self.c.size

    def replace(self, **changes: typing.Any) -> 'RbmModel':
        return dataclasses.replace(self, **changes)

    def hidden_inputs(self, v: npt.ArrayLike) -> FloatArray:
        """隠れ層への入力 I = W^T v。v は形状 (..., N)。"""
        v = np.asarray(v, dtype=np.float64)
        assert v.shape[-1] == self.n_visible
        return typing.cast(FloatArray, v @ self.w)


class InteractionModel:
    """二値変数の相互作用モデル。

    log P(v) = Σ_S I_S Π_{i∈S} v_i - log Z' の係数 I_S を、昇順の添字
    タプル S をキーとして保持します。挿入順が保たれます。

    Examples:
        >>> model = InteractionModel(2, {(0,): 0.2, (0, 1): -0.5})
        >>> model[(0, 1)]
        -0.5
        >>> model.max_order
        2
    """

    def __init__(self, n_visible: int,
                 terms: typing.Optional[typing.Mapping[Subset, float]] = None
                 ) -> None:
        assert 1 <= n_visible

        self._n = n_visible
        self._terms: typing.Dict[Subset, float] = {}
        if terms is not None:
            for subset, value in terms.items():
                self[subset] = value

    @property
    def n_visible(self) -> int:
        return self._n

    @property
    def max_order(self) -> int:
        return max((len(subset) for subset in self._terms), default=0)

    def __setitem__(self, subset: Subset, value: float) -> None:
        subset = tuple(int(i) for i in subset)
        assert 1 <= len(subset)
        assert all(0 <= i < self._n for i in subset)
        assert all(a < b for a, b in zip(subset, subset[1:]))
        assert math.isfinite(value)

        self._terms[subset] = float(value)

    def __getitem__(self, subset: Subset) -> float:
        return self._terms.get(tuple(subset), 0.0)

    def __contains__(self, subset: object) -> bool:
        return subset in self._terms

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> typing.Iterator[Subset]:
        return iter(self._terms)

    def items(self) -> typing.ItemsView[Subset, float]:
        return self._terms.items()

    def order(self, s: int) -> typing.Dict[Subset, float]:
        """s 次の項だけを取り出します。"""
        return {subset: value for subset, value in self._terms.items()
                if len(subset) == s}

    def __repr__(self) -> str:
        return (f'InteractionModel(n_visible={self._n}, '
                f'terms={self._terms!r})')


def energy_argument(model: InteractionModel,
                    v: npt.ArrayLike) -> FloatArray:
    """相互作用モデルの指数部 Σ_S I_S Π_{i∈S} v_i を計算します。

    Args:
        model (InteractionModel): 相互作用モデル。
        v: 形状 (..., N) の 0/1 配列。

    Returns:
        ndarray: 形状 (...) の値。

    計算量: O(項数 × 最大次数) (状態あたり)
    """
    v = np.asarray(v)
    assert v.shape[-1] == model.n_visible

    active = v != 0
    result = np.zeros(v.shape[:-1])
    for subset, value in model.items():
        result += value * np.all(active[..., list(subset)], axis=-1)
    return result


def rbm_log_weight(model: RbmModel, v: npt.ArrayLike) -> FloatArray:
    """隠れ層を周辺化した非正規化対数確率 b^T v + Σ_μ K((W^T v)_μ)。

    Args:
        model (RbmModel): RBM。
        v: 形状 (..., N) の 0/1 配列。

    Returns:
        ndarray: 形状 (...) の値。v = 0 では 0 です。

    Raises:
        RangeError: Exponential で K がオーバーフローする場合。
    """
    v = np.asarray(v, dtype=np.float64)
    inputs = model.hidden_inputs(v)
    return typing.cast(FloatArray,
                       v @ model.b
                       + cgf_eval(model.activation, model.c,
                                  inputs).sum(axis=-1))


def random_model(kind: ActivationKind, n_visible: int, n_hidden: int,
                 rng: np.random.Generator,
                 coupling: str = 'low') -> RbmModel:
    """ランダムな RBM を生成します。

    coupling = 'low' では W ~ N(0, 1/√M)、b, c ~ N(0, 0.1) です。
    coupling = 'high' では W ~ N(0, 1)、c = 5 とし、すべての 1 次の相互作用
    が 0 になるように b_i = -Σ_μ K(w_iμ) を選びます。

    Args:
        kind (ActivationKind): 隠れ層のポテンシャル。
        n_visible (int): N
        n_hidden (int): M
        rng (Generator): 乱数生成器。
        coupling (str): 'low' または 'high'。

    Raises:
        ValueError: coupling が不明な場合。
        RangeError: 'high' の Exponential で K がオーバーフローする場合。
    """
    assert 1 <= n_visible and 1 <= n_hidden

    if coupling == 'low':
        w = rng.normal(scale=1 / math.sqrt(n_hidden),
                       size=(n_visible, n_hidden))
        b = rng.normal(scale=0.1, size=n_visible)
        c = rng.normal(scale=0.1, size=n_hidden)
    elif coupling == 'high':
        w = rng.normal(size=(n_visible, n_hidden))
        c = np.full(n_hidden, 5.0)
        b = -cgf_eval(kind, c, w).sum(axis=1)
    else:
        raise ValueError(f'unknown coupling regime {coupling!r}')
    return RbmModel(kind, b, c, w)


def format_model(model: RbmModel) -> str:
    """モデルをテキスト形式に変換します。

    1 行目は ``boltzmap-rbm v1``、2 行目は ``N M activation``、続いて
    b を N 行、c を M 行、W を N 行 (各行 M 個) 書きます。数値は 17 桁
    です。
    """
    lines = [MODEL_HEADER,
             f'{model.n_visible} {model.n_hidden} {model.activation}']
    lines.extend(f'{x:.17g}' for x in model.b)
    lines.extend(f'{x:.17g}' for x in model.c)
    lines.extend(' '.join(f'{x:.17g}' for x in row) for row in model.w)
    return '\n'.join(lines) + '\n'


def _parse_floats(tokens: typing.Sequence[str], line: int
                  ) -> typing.List[float]:
    try:
        values = [float(token) for token in tokens]
    except ValueError as e:
        raise ModelFormatError(str(e), line) from None
    if not all(math.isfinite(x) for x in values):
        raise ModelFormatError('non-finite value', line)
    return values


def parse_model(text: str) -> RbmModel:
    """format_model の出力を読み込みます。

    Raises:
        ModelFormatError: 形式が不正な場合 (行番号付き)。
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise ModelFormatError(f'expected header {MODEL_HEADER!r}', 1)
    if len(lines) < 2:
        raise ModelFormatError('missing dimension line', 2)

    fields = lines[1].split()
    if len(fields) != 3:
        raise ModelFormatError('expected "N M activation"', 2)
    try:
        n, m = int(fields[0]), int(fields[1])
        activation = ActivationKind.parse(fields[2])
    except ValueError as e:
        raise ModelFormatError(str(e), 2) from None
    if n < 1 or m < 1:
        raise ModelFormatError('N and M must be positive', 2)

    body = lines[2:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != n + m + n:
        raise ModelFormatError(
            f'expected {n + m + n} parameter lines, got {len(body)}',
            3 + min(len(body), n + m + n))

    def scalar(k: int) -> float:
        tokens = body[k].split()
        if len(tokens) != 1:
            raise ModelFormatError('expected one value', 3 + k)
        return _parse_floats(tokens, 3 + k)[0]

    b = [scalar(k) for k in range(n)]
    c = [scalar(n + k) for k in range(m)]
    w = []
    for k in range(n + m, n + m + n):
        tokens = body[k].split()
        if len(tokens) != m:
            raise ModelFormatError(f'expected {m} weights', 3 + k)
        w.append(_parse_floats(tokens, 3 + k))
    return RbmModel(activation, np.array(b), np.array(c), np.array(w))


def save_model(path: str, model: RbmModel) -> None:
    with open(path, 'w', encoding='ascii', newline='\n') as f:
        f.write(format_model(model))


def load_model(path: str) -> RbmModel:
    with open(path, encoding='ascii') as f:
        return parse_model(f.read())


def format_interactions(model: InteractionModel) -> str:
    """相互作用モデルを CSV (order,indices,value) に変換します。

    添字はセミコロン区切りです。項は格納順に書かれます。
    """
    out = io.StringIO()
    out.write(INTERACTION_HEADER + '\n')
    for subset, value in model.items():
        indices = ';'.join(str(i) for i in subset)
        out.write(f'{len(subset)},{indices},{value:.17g}\n')
    return out.getvalue()


def parse_interactions(text: str,
                       n_visible: typing.Optional[int] = None
                       ) -> InteractionModel:
    """format_interactions の出力を読み込みます。

    ``#`` で始まる行は読み飛ばします。n_visible を省略した場合は
    最大の添字 + 1 とします。

    Raises:
        ModelFormatError: 形式が不正な場合 (行番号付き)。
    """
    rows: typing.List[typing.Tuple[Subset, float]] = []
    seen_header = False
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if not seen_header:
            if line != INTERACTION_HEADER:
                raise ModelFormatError(
                    f'expected header {INTERACTION_HEADER!r}', number)
            seen_header = True
            continue
        fields = line.split(',')
        if len(fields) != 3:
            raise ModelFormatError('expected 3 columns', number)
        try:
            order = int(fields[0])
            subset = tuple(int(i) for i in fields[1].split(';'))
        except ValueError as e:
            raise ModelFormatError(str(e), number) from None
        value = _parse_floats([fields[2]], number)[0]
        if len(subset) != order:
            raise ModelFormatError(
                f'order {order} does not match {len(subset)} indices', number)
        if any(i < 0 for i in subset) or any(
                a >= b for a, b in zip(subset, subset[1:])):
            raise ModelFormatError('indices must be strictly increasing '
                                   'and nonnegative', number)
        rows.append((subset, value))
    if not seen_header:
        raise ModelFormatError('empty interaction file', 1)

    largest = max((subset[-1] for subset, _ in rows), default=0) + 1
    if n_visible is None:
        n_visible = largest
    elif largest > n_visible:
        raise ModelFormatError(
            f'index {largest - 1} out of range for N = {n_visible}')
    model = InteractionModel(n_visible)
    for subset, value in rows:
        if subset in model:
            raise ModelFormatError(f'duplicate subset {subset}')
        model[subset] = value
    return model


def save_interactions(path: str, model: InteractionModel,
                      comment: typing.Optional[str] = None) -> None:
    with open(path, 'w', encoding='ascii', newline='\n') as f:
        if comment is not None:
            f.write(f'# {comment}\n')
        f.write(format_interactions(model))


def load_interactions(path: str, n_visible: typing.Optional[int] = None
                      ) -> InteractionModel:
    with open(path, encoding='ascii') as f:
        return parse_interactions(f.read(), n_visible)
