"""
随机流派生

所有随机数都从主种子派生：同一组 (主种子, 键) 永远得到同一条流，
不同键的流互相独立，与并行 worker 数和完成顺序无关。
"""
import hashlib
from typing import Union

import numpy as np

Key = Union[int, str, float]


def cell_salt(*parts: Key) -> int:
    """把任意键（如扫描轴名和取值）哈希成 32 位整数"""
    combined = "-".join(str(p) for p in parts)
    return int(hashlib.sha256(combined.encode("utf-8")).hexdigest(), 16) % (2**32 - 1)


def derive_seed_sequence(master_seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), *(int(k) for k in keys)])


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """由主种子和整数键得到独立的 Generator"""
    return np.random.default_rng(derive_seed_sequence(master_seed, *keys))
