"""Dense math primitives and a portable seeded random source.

Everything is float64 numpy arrays. Matrices are 2-d arrays, vectors 1-d.
"""

import math

import numpy as np

_MASK64 = (1 << 64) - 1


class DimensionError(ValueError):
    """Raised when operand shapes do not line up."""

    def __init__(self, op, left_shape, right_shape):
        self.op = op
        self.left_shape = tuple(left_shape)
        self.right_shape = tuple(right_shape)
        super().__init__(
            f"{op}: incompatible shapes {self.left_shape} and {self.right_shape}")


def as_matrix(data, rows=None, cols=None):
    m = np.asarray(data, dtype=np.float64)
    if rows is not None:
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def matvec(m, v):
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError("matvec", m.shape, v.shape)
    return m @ v


def tanh_forward(v):
    return np.tanh(v)


def tanh_backward(y, dy):
    """Gradient through tanh given its output ``y``."""
    return dy * (1.0 - y * y)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_cross_entropy(logits, label):
    """Return ``(loss, probs, dlogits)`` for one example.

    The max logit is subtracted before exponentiating so magnitudes around
    1e3 neither overflow nor lose the loss to cancellation.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if not 0 <= label < n:
        raise IndexError(f"label {label} out of range for {n} classes")
    shifted = logits - logits.max()
    e = np.exp(shifted)
    total = e.sum()
    probs = e / total
    loss = math.log(total) - shifted[label]
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    return float(loss), probs, dlogits


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK64


class RandomSource:
    """xoshiro256** seeded through SplitMix64.

    Implemented in pure Python integer arithmetic so that a seed yields the
    same stream on every platform and numpy version.
    """

    def __init__(self, seed):
        self.seed = int(seed) & _MASK64
        sm = self.seed
        s = []
        for _ in range(4):
            sm, z = _splitmix64(sm)
            s.append(z)
        self._s = s

    def next_u64(self):
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self):
        """Uniform double in the open interval (0, 1)."""
        return ((self.next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0)

    def uniform(self, low, high, size):
        n = int(np.prod(size)) if np.ndim(size) else int(size)
        u = np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n)
        return (low + (high - low) * u).reshape(size)

    def symmetric(self, r, size):
        """Uniform on (-r, r), centred exactly on zero."""
        n = int(np.prod(size)) if np.ndim(size) else int(size)
        u = np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n)
        return (r * (2.0 * u - 1.0)).reshape(size)

    def randbelow(self, n):
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        bound = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < bound:
                return x % n

    def shuffle(self, items):
        """Fisher-Yates in place."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def permutation(self, n):
        return self.shuffle(list(range(n)))

    def fork(self, tag):
        """Independent stream derived from this seed and a string tag."""
        h = self.seed
        for ch in str(tag).encode("utf-8"):
            h, _ = _splitmix64(h ^ ch)
        _, z = _splitmix64(h)
        return RandomSource(z)
