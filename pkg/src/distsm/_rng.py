"""Random streams.

Every stream is a Philox-4x64 counter-based generator keyed through
``numpy.random.SeedSequence``.  A stream is identified by a root seed plus a
tuple of integer keys (trajectory index, training step, ...), so independent
streams can be created in any order or in parallel and always reproduce the
same draws.
"""

import numpy as np

ALGORITHM = "Philox-4x64 (numpy.random.Philox) keyed by SeedSequence(seed, *keys)"


def stream(seed, *keys):
    """Return the generator for stream ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_generator(rng):
    """Coerce ``None``, an int seed or a Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return stream(0)
    return stream(int(rng))
