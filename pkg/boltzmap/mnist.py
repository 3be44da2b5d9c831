import dataclasses
import hashlib
import logging
import typing

import numpy as np
import numpy.typing as npt

from boltzmap.errors import (BadMagicError, DataError, DimensionMismatchError,
                             TruncatedFileError)


logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DEFAULT_THRESHOLD = 128


def parse_idx(raw: bytes, expected_magic: typing.Optional[int] = None
              ) -> npt.NDArray[np.uint8]:
    """IDX 形式 (ビッグエンディアン、要素は unsigned byte) を読み込みます。

    先頭 4 バイトがマジックナンバー (下位 1 バイトが次元数)、続いて
    各次元の大きさが 4 バイトずつ並び、その後にデータが続きます。

    Args:
        raw (bytes): ファイルの内容。
        expected_magic (int, optional): 期待するマジックナンバー。

    Returns:
        ndarray: 形状が各次元の大きさの uint8 配列。

    Raises:
        BadMagicError: マジックナンバーが不正な場合。
        TruncatedFileError: ファイルが短すぎる場合。
        DimensionMismatchError: データ長が次元と合わない場合。
    """
    if len(raw) < 4:
        raise TruncatedFileError(4, len(raw))
    magic = int.from_bytes(raw[:4], 'big')
    if raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08 or raw[3] == 0:
        raise BadMagicError(f'bad IDX magic 0x{magic:08x}', 0)
    if expected_magic is not None and magic != expected_magic:
        raise BadMagicError(f'expected magic 0x{expected_magic:08x}, got '
                            f'0x{magic:08x}', 0)

    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(header, len(raw))
    shape = tuple(int(x) for x in np.frombuffer(raw, dtype='>u4',
                                                count=ndim, offset=4))
    expected = header + int(np.prod(shape, dtype=np.int64))
    if len(raw) < expected:
        raise TruncatedFileError(expected, len(raw))
    if len(raw) > expected:
        raise DimensionMismatchError(
            f'{len(raw) - expected} trailing bytes after {shape} data',
            expected)
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(shape)


def load_idx(path: str, expected_magic: typing.Optional[int] = None
             ) -> npt.NDArray[np.uint8]:
    with open(path, 'rb') as f:
        return parse_idx(f.read(), expected_magic)


def load_images(path: str) -> npt.NDArray[np.uint8]:
    """画像ファイル (magic 0x00000803) を (枚数, 行, 列) で読み込みます。"""
    images = load_idx(path, IMAGES_MAGIC)
    if images.ndim != 3:
        raise DimensionMismatchError(
            f'images must have 3 dimensions, got {images.ndim}', 3)
    return images


def load_labels(path: str) -> npt.NDArray[np.uint8]:
    """ラベルファイル (magic 0x00000801) を読み込みます。"""
    labels = load_idx(path, LABELS_MAGIC)
    if labels.ndim != 1:
        raise DimensionMismatchError(
            f'labels must have 1 dimension, got {labels.ndim}', 3)
    return labels


@dataclasses.dataclass(frozen=True, eq=False)
class BinaryDataset:
    """0/1 のデータ行列。行は 1 ピクセル 1 ビットで詰めて保持します。

    Attributes:
        n_items (int): データ点の数。
        n_features (int): 特徴量の数 (MNIST では 784)。
        rows (ndarray): np.packbits で詰めた行、形状
            (n_items, ceil(n_features / 8))。
        source_digest (str): 元ファイルの SHA-256 (16 進)。
    """

    n_items: int
    n_features: int
    rows: npt.NDArray[np.uint8]
    source_digest: str = ''

    @classmethod
    def from_array(cls, bits: npt.ArrayLike,
                   source_digest: str = '') -> 'BinaryDataset':
        bits = np.asarray(bits)
        assert bits.ndim == 2
        if not np.all((bits == 0) | (bits == 1)):
            raise DataError('dataset entries must be 0 or 1')
        rows = np.packbits(bits.astype(np.uint8), axis=1)
        rows.setflags(write=False)
        return cls(bits.shape[0], bits.shape[1], rows, source_digest)

    def to_array(self) -> npt.NDArray[np.float64]:
        """(n_items, n_features) の float64 配列に展開します。"""
        return np.unpackbits(self.rows, axis=1,
                             count=self.n_features).astype(np.float64)

    def subset(self, indices: npt.ArrayLike) -> 'BinaryDataset':
        rows = self.rows[np.asarray(indices, dtype=np.int64)]
        rows.setflags(write=False)
        return BinaryDataset(rows.shape[0], self.n_features, rows,
                             self.source_digest)

    def head(self, n: int) -> 'BinaryDataset':
        return self.subset(np.arange(min(n, self.n_items)))

    def mean_activity(self) -> float:
        return float(self.to_array().mean())


def binarize(images: npt.ArrayLike, threshold: int = DEFAULT_THRESHOLD,
             source_digest: str = '') -> BinaryDataset:
    """画素値が threshold 以上なら 1、未満なら 0 として行ごとに平坦化します。

    Examples:
        >>> binarize(np.array([[[0, 127], [128, 255]]])).to_array()
        array([[0., 0., 1., 1.]])
    """
    images = np.asarray(images)
    assert images.ndim >= 2
    flat = images.reshape(images.shape[0], -1)
    return BinaryDataset.from_array((flat >= threshold).astype(np.uint8),
                                    source_digest)


def load_dataset(path: str, threshold: int = DEFAULT_THRESHOLD,
                 limit: typing.Optional[int] = None) -> BinaryDataset:
    """IDX 画像ファイルまたは 0/1 の CSV を読み込みます。

    先頭が IDX 画像のマジックナンバーなら IDX として二値化し、そうで
    なければ ``,`` 区切りの 0/1 の行として読みます (``#`` 行は無視)。

    Raises:
        DataError: 内容が不正な場合。
    """
    with open(path, 'rb') as f:
        raw = f.read()
    digest = hashlib.sha256(raw).hexdigest()

    if raw[:4] == IMAGES_MAGIC.to_bytes(4, 'big'):
        images = parse_idx(raw, IMAGES_MAGIC)
        if images.ndim != 3:
            raise DimensionMismatchError(
                f'images must have 3 dimensions, got {images.ndim}', 3)
        if limit is not None:
            images = images[:limit]
        dataset = binarize(images, threshold, digest)
    else:
        dataset = _parse_csv(raw.decode('ascii', errors='replace'), digest)
        if limit is not None:
            dataset = dataset.head(limit)
    logger.info('loaded %s: %d items x %d features', path, dataset.n_items,
                dataset.n_features)
    return dataset


def _parse_csv(text: str, digest: str) -> BinaryDataset:
    rows = []
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        try:
            rows.append([int(token) for token in line.split(',')])
        except ValueError:
            raise DataError(f'line {number}: expected 0/1 values') from None
        if len(rows[-1]) != len(rows[0]):
            raise DataError(f'line {number}: expected {len(rows[0])} '
                            f'columns, got {len(rows[-1])}')
    if not rows:
        raise DataError('empty dataset')
    return BinaryDataset.from_array(np.array(rows), digest)


def iter_minibatches(data: npt.NDArray[np.float64], size: int,
                     rng: np.random.Generator
                     ) -> typing.Iterator[npt.NDArray[np.float64]]:
    """データを並べ替え、size 点ずつのミニバッチを順に返します。

    最後のミニバッチは size より小さいことがあります。
    """
    assert 1 <= size

    order = rng.permutation(data.shape[0])
    for start in range(0, data.shape[0], size):
        yield data[order[start:start + size]]
