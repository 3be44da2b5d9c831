import itertools

import numpy as np
import pytest

from boltzmap._bit import (_bits_to_masks, _bsf, _gray, _indices_to_mask,
                           _mask_to_indices, _moebius_transform, _popcount,
                           _state_bits, _subset_order, _subset_signs,
                           _subset_sums, _zeta_transform)


class TestInternalBit:

    @pytest.mark.parametrize((
        'n', 'expected'
        ), [
        (1, 0),
        (2, 1),
        (3, 0),
        (4, 2),
        (5, 0),
        (6, 1),
        (7, 0),
        (8, 3),
        (10, 1),
        (1 << 23, 23),
        ((1 << 23) + (1 << 5), 5),
    ])
    def test_bsf(self, n: int, expected: int) -> None:
        assert _bsf(n) == expected

    def test_gray_flips_one_bit_at_bsf(self) -> None:
        '''
        GIVEN consecutive t in [1, 2^10)
        WHEN the Gray codes of t - 1 and t are compared
        THEN they differ exactly in bit _bsf(t)
        '''

        for t in range(1, 1 << 10):
            assert _gray(t - 1) ^ _gray(t) == 1 << _bsf(t)

        assert sorted(_gray(t) for t in range(1 << 10)) == list(
            range(1 << 10))

    @pytest.mark.parametrize((
        'mask', 'indices'
        ), [
        (0, ()),
        (1, (0,)),
        (0b1011, (0, 1, 3)),
        (1 << 23, (23,)),
    ])
    def test_mask_indices(self, mask: int, indices: tuple) -> None:
        assert _mask_to_indices(mask) == indices
        assert _indices_to_mask(indices) == mask

    def test_state_bits(self) -> None:
        bits = _state_bits(np.arange(8), 3)

        assert bits.tolist()[5] == [1.0, 0.0, 1.0]
        assert _bits_to_masks(bits).tolist() == list(range(8))

    def test_subset_sums(self) -> None:
        '''
        GIVEN rows of shape (s, M)
        WHEN _subset_sums is called
        THEN entry t of the last axis is the sum of the rows whose bit is
            set in t
        '''

        rng = np.random.default_rng(1)
        rows = rng.normal(size=(4, 3))

        sums = _subset_sums(rows)

        assert sums.shape == (3, 16)
        for t in range(16):
            expected = sum((rows[j] for j in _mask_to_indices(t)),
                           np.zeros(3))
            np.testing.assert_allclose(sums[:, t], expected, atol=1e-14)

    @pytest.mark.parametrize('s', [1, 2, 3, 5])
    def test_subset_signs(self, s: int) -> None:
        signs = _subset_signs(s)

        assert signs.shape == (1 << s,)
        for t in range(1 << s):
            assert signs[t] == (-1) ** (s - bin(t).count('1'))

    def test_zeta_moebius(self) -> None:
        rng = np.random.default_rng(2)
        a = rng.normal(size=32)

        f = _zeta_transform(a)

        for mask in range(32):
            expected = sum(a[sub] for sub in range(32) if sub & ~mask == 0)
            assert f[mask] == pytest.approx(expected, abs=1e-12)
        np.testing.assert_allclose(_moebius_transform(f), a, atol=1e-12)

    def test_subset_order(self) -> None:
        n = 5
        expected = [_indices_to_mask(c)
                    for s in range(1, n + 1)
                    for c in itertools.combinations(range(n), s)]

        assert _subset_order(n).tolist() == expected
        assert _popcount(np.array([0, 7, 1 << 20]), 21).tolist() == [0, 3, 1]
