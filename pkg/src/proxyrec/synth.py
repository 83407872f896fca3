"""Synthetic session corpus with planted long- and short-term structure.

Every user owns a fixed pool of catalog items, their general interest
vector over the catalog: each item belongs to a small number of users'
pools (owners_per_item), so pools overlap and single items are ambiguous
about who is browsing, while whole sessions mostly are not. The pool is
deliberately a random subset with no geometric coherence; the only way to
score it well is to consolidate a user's many sessions, which is exactly
what a per-session anchor bank can do and a context-to-point encoder
cannot.

Short-term structure lives inside the pool: each user's pool is arranged
on a ring in a fixed random order, and a session is a forward walk along
that ring. The walk advances a few slots per step with jitter around the
landing slot, so the recent context reveals the current ring
neighborhood, which is worth more than the pool alone. The defaults are
tuned so that the successor window of one item across all of its owners'
rings is wider than a top-20 cutoff, while the window within a single
known ring is narrower: identity is then worth real recall, and identity
is precisely what session-level anchors consolidate and a prefix-only
encoder cannot see. A session is therefore long-term identity (which
pool) times short-term position (where on the ring):

    owners(item) = owners_per_item distinct users, balanced over users
    ring(user)   = seeded permutation of the user's pool
    pos(t+1)     = pos(t) + Uniform{1..step_max}
    item(t)      = ring[(pos(t) + Uniform{-ring_jitter..ring_jitter}) mod pool]

Each user contributes one session per synthetic day, so a chronological
split puts every user in train, validation and test alike. All randomness
comes from one seeded generator; a given (seed, shape) pair always yields
the identical corpus.
"""

from __future__ import annotations

import numpy as np

from .data import SECONDS_PER_DAY, Session
from .errors import ConfigError


def planted_corpus(
    n_users: int = 20,
    n_items: int = 500,
    sessions_per_user: int = 100,
    length_range: tuple[int, int] = (4, 8),
    owners_per_item: int = 3,
    step_max: int = 8,
    ring_jitter: int = 2,
    seed: int = 0,
) -> list[Session]:
    """Generate the corpus; item ids are already dense 1..n_items."""
    if n_users < 1 or n_items < 2 or sessions_per_user < 1:
        raise ConfigError("corpus shape parameters must be positive")
    if not 2 <= length_range[0] <= length_range[1]:
        raise ConfigError(f"bad length_range {length_range}")
    if not 1 <= owners_per_item <= n_users:
        raise ConfigError(f"owners_per_item must be in 1..{n_users}")
    if (n_items * owners_per_item) % n_users != 0:
        raise ConfigError("n_items * owners_per_item must divide evenly over users")
    if step_max < 1 or ring_jitter < 0:
        raise ConfigError("step_max must be >= 1 and ring_jitter >= 0")
    rng = np.random.default_rng([seed, 977])

    # Balanced ownership: every owner slot cycles through all users, then
    # collisions (an item drawing the same user twice) are repaired by
    # swapping with another row, keeping per-user pool sizes exact.
    owners = np.empty((n_items, owners_per_item), dtype=np.int64)
    for slot in range(owners_per_item):
        col = np.tile(np.arange(n_users), -(-n_items // n_users))[:n_items]
        owners[:, slot] = rng.permutation(col)
    for i in range(n_items):
        while len(set(owners[i])) < owners_per_item:
            j = int(rng.integers(n_items))
            slot = int(rng.integers(owners_per_item))
            owners[i, slot], owners[j, slot] = owners[j, slot], owners[i, slot]

    rings = []
    for u in range(n_users):
        pool = np.where((owners == u).any(axis=1))[0]
        rings.append(rng.permutation(pool))

    sessions = []
    lo, hi = length_range
    for day in range(sessions_per_user):
        for user in range(n_users):
            ring = rings[user]
            size = ring.shape[0]
            length = int(rng.integers(lo, hi + 1))
            pos = int(rng.integers(size))
            items = []
            for _ in range(length):
                slot = (pos + int(rng.integers(-ring_jitter, ring_jitter + 1))) % size
                items.append(int(ring[slot]) + 1)
                pos += int(rng.integers(1, step_max + 1))
            sessions.append(
                Session(
                    items=tuple(items),
                    start_ts=day * SECONDS_PER_DAY + user * 60,
                    user_tag=f"u{user:03d}",
                )
            )
    return sessions
