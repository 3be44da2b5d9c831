import numpy as np


# Purpose keys for rng_stream.  A stream is identified by the master seed
# and a key tuple (purpose, index...), so adding a consumer never shifts
# the draws of another one.
STREAM_SAMPLE = 1
STREAM_AIS = 2
STREAM_TRAIN = 3
STREAM_INIT = 4
STREAM_EVAL = 5
STREAM_SUBSETS = 6


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """マスターシードと用途キーから独立な乱数ストリームを作ります。

    Philox (カウンタベース) のビット生成器を SeedSequence の spawn_key で
    分岐させるため、同じ (seed, key) からは常に同じ系列が得られ、異なる
    key の系列は互いに独立です。

    Args:
        seed (int): マスターシード (0 以上)。
        key (int): 用途と番号 (例: STREAM_SAMPLE, chain_id)。

    Returns:
        numpy.random.Generator: 乱数生成器。

    Examples:
        >>> a = rng_stream(7, STREAM_SAMPLE, 0).random()
        >>> b = rng_stream(7, STREAM_SAMPLE, 0).random()
        >>> a == b
        True
    """
    assert 0 <= seed
    assert all(0 <= k for k in key)

    sequence = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(sequence))

