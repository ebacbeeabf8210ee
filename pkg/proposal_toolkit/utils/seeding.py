from typing import Union
import numpy as np

SeedKey = Union[int, str]


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, int):
        return key
    return int.from_bytes(key.encode("utf-8"), "little") % (2 ** 63)


def derive_seed(seed: int, *keys: SeedKey) -> int:
    """Child seed for (seed, keys...); stable across platforms and Python versions."""
    sequence = np.random.SeedSequence([seed, *(_key_to_int(k) for k in keys)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, *keys: SeedKey) -> np.random.Generator:
    """Counter-based Philox generator for (seed, keys...)."""
    return np.random.Generator(np.random.Philox(derive_seed(seed, *keys)))
