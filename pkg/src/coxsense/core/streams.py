"""
命名随机数流

所有随机性都来自一个根种子：每个名字（sampler、simulator、algorithm、nmf …）
通过 SeedSequence 的 spawn_key 派生出独立的 Generator，不触碰任何全局状态。
"""

import zlib
from typing import Dict

import numpy as np


class RandomStreams:
    """根种子 → 命名子流"""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[str, np.random.Generator] = {}

    @staticmethod
    def _key(name: str) -> int:
        return zlib.crc32(name.encode("utf-8"))

    def get(self, name: str) -> np.random.Generator:
        """同一名字在一次运行内返回同一个Generator"""
        if name not in self._streams:
            self._streams[name] = self.fresh(name)
        return self._streams[name]

    def fresh(self, name: str) -> np.random.Generator:
        """重新从根种子派生，不影响已取出的流"""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self._key(name),))
        return np.random.default_rng(sequence)

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.get(name)

    def names(self):
        return sorted(self._streams)
