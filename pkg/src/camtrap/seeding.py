"""Named sub-seeds derived from one global seed."""
import hashlib


def derive_seed(seed, *labels):
    """Stable 63-bit seed for (seed, labels...); distinct labels never collide in practice."""
    key = ":".join([str(seed), *map(str, labels)]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1
