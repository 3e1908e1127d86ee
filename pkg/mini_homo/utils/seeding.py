"""确定性种子派生"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, pair_id: str, iteration: int) -> int:
    """seed = hash(master_seed, pair_id, iteration)，与处理顺序无关。

    Returns:
        [0, 2^63) 内的整数种子
    """
    key = f"{master_seed}:{pair_id}:{iteration}".encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def child_seed(seed: int, tag: str) -> int:
    """从已有种子派生一个用途不同的子种子。"""
    digest = hashlib.blake2b(f"{seed}/{tag}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
