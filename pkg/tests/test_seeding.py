"""Tests for the seeding.py module."""

import hashlib

import numpy as np
import pytest

from rplab.seeding import PURPOSE_TAGS, derive_seed, stream


class TestDeriveSeed:
    def test_matches_hash_prefix(self):
        digest = hashlib.sha256(b"42:3:potential").digest()
        assert derive_seed(42, 3, "potential") == int.from_bytes(digest[:8], "little")

    def test_purposes_and_realizations_differ(self):
        seeds = {derive_seed(1, r, p) for r in range(4) for p in PURPOSE_TAGS}
        assert len(seeds) == 4 * len(PURPOSE_TAGS)

    def test_unknown_purpose(self):
        with pytest.raises(AssertionError, match="Unknown seed purpose"):
            derive_seed(1, 0, "weather")


class TestStream:
    def test_same_key_same_draws(self):
        a = stream(99, 2, 5).standard_normal(8)
        b = stream(99, 2, 5).standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_keys_are_independent(self):
        a = stream(99, 2, 5).standard_normal(1000)
        b = stream(99, 2, 6).standard_normal(1000)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.15

    def test_uses_philox(self):
        assert isinstance(stream(1).bit_generator, np.random.Philox)
