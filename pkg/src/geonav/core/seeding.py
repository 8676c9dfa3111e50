"""Named random substreams derived from one root seed."""

import hashlib
from typing import Union

import numpy as np

NamePart = Union[str, int]


def _key(part: NamePart) -> int:
    if isinstance(part, int) and part >= 0:
        return part
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def substream_seed(root_seed: int, *names: NamePart) -> np.random.SeedSequence:
    """Seed sequence for the substream addressed by ``names`` under ``root_seed``.

    The same root seed and names always give the same stream, independent of
    the order in which other substreams were requested.
    """
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(_key(n) for n in names))


def substream(root_seed: int, *names: NamePart) -> np.random.Generator:
    """Independent generator for one named substream."""
    return np.random.Generator(np.random.PCG64(substream_seed(root_seed, *names)))


def derive_seed(root_seed: int, *names: NamePart) -> int:
    """A plain integer seed for the named substream (for APIs taking ints)."""
    return int(substream_seed(root_seed, *names).generate_state(1, dtype=np.uint32)[0])
