"""Counter-based random streams.

Every replication owns an independent Philox-4x64 stream. The 128-bit key
is ``(global seed, experiment hash)`` and the 256-bit counter starts at
``[0, 0, stream, rep]``; draws advance the low word only, so two
replications can never overlap. Results do not depend on the number of
workers or on the order in which replications run.

Uniforms are ``((x >> 11) + 0.5) * 2**-53`` for raw 64-bit outputs ``x``,
which lands strictly inside (0, 1). Normals are the inverse normal CDF of
those uniforms.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1


def stable_hash(*parts) -> int:
    """64-bit hash of ``repr`` of the parts; stable across processes and runs."""
    h = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def stream(seed: int, key: int, rep: int, stream_index: int = 0) -> np.random.Philox:
    return np.random.Philox(counter=[0, 0, stream_index & _MASK64, rep & _MASK64],
                            key=[seed & _MASK64, key & _MASK64])


def uniforms(bitgen: np.random.Philox, size) -> np.ndarray:
    raw = bitgen.random_raw(int(np.prod(size)))
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return u.reshape(size)


def normals(bitgen: np.random.Philox, size) -> np.ndarray:
    return ndtri(uniforms(bitgen, size))
