"""Trial scheduling with a fixed trial -> seed map.

Trial ``t`` of a batch with root seed ``s`` always uses
``derive_seed(s, t)``; results come back in trial order whatever the worker
count, so aggregates are schedule independent.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial

from .point_process import derive_seed


def trial_seed(root_seed: int, t: int) -> int:
    return derive_seed(root_seed, t)


def _chunk(fn, root_seed, ts):
    return [fn(trial_seed(root_seed, t)) for t in ts]


def map_trials(fn, trials: int, root_seed: int, threads: int = 1) -> list:
    """``[fn(seed_0), ..., fn(seed_{trials-1})]``; ``fn`` must be picklable for threads > 1."""
    if threads is None or threads <= 0:
        threads = os.cpu_count() or 1
    if threads == 1 or trials < 2:
        return _chunk(fn, root_seed, range(trials))
    size = max(1, -(-trials // (4 * threads)))
    blocks = [range(i, min(i + size, trials)) for i in range(0, trials, size)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(partial(_chunk, fn, root_seed), blocks)
        return [r for part in parts for r in part]
