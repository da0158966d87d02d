"""Keyed, counter-based random streams.

Every random draw in a run comes from a Philox generator whose key is derived from
(master seed, component tag, extra key words). Per-user draws inside a timestep sit at a
fixed offset of the counter stream, so they depend only on (seed, tag, timestep, user).
"""

import numpy as np

TAG_TOPOLOGY = 1
TAG_MOBILITY = 2
TAG_APPLICATIONS = 3
TAG_PRIVACY = 4


def epsilon_key(epsilon: float) -> int:
    """Integer key word for an epsilon value (its IEEE-754 bit pattern)."""
    return int(np.array(epsilon, dtype=np.float64).view(np.uint64))


def stream(seed: int, tag: int, *extra: int) -> np.random.Generator:
    """
    Build an independent generator for a component.

    Args:
        seed: Master seed of the run
        tag: Component tag (TAG_*)
        *extra: Further non-negative key words (timestep, epsilon key, ...)

    Returns:
        np.random.Generator: Philox-backed generator
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, tag, *extra])))


def user_uniforms(seed: int, tag: int, timestep: int, user_ids: np.ndarray, draws: int, *extra: int) -> np.ndarray:
    """
    Uniform [0, 1) draws for a set of users at one timestep.

    Row i holds the `draws` values of user_ids[i]; they are read from block user_ids[i]
    of the timestep's counter stream, so other users never shift them.

    Returns:
        np.ndarray: Array of shape (len(user_ids), draws)
    """
    user_ids = np.asarray(user_ids, dtype=np.int64)
    if user_ids.size == 0:
        return np.empty((0, draws))
    block = stream(seed, tag, timestep, *extra).random((int(user_ids.max()) + 1, draws))
    return block[user_ids]
