"""Counter-based uniform generator shared by the compiled and numpy kernels.

Both backends must consume exactly the same uniforms so that walk tallies are
bit-identical whichever one is loaded. The mixer is splitmix64's finalizer.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
STEP = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def mix(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def walk_keys(seed, walks):
    """Per-walk stream keys for walk indices ``walks``."""
    seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    w = np.asarray(walks, dtype=np.uint64)
    return mix(seed ^ mix(w * GOLDEN + GOLDEN))


def uniforms(keys, step):
    """Uniform in [0, 1) for each key at the given step counter."""
    z = mix(keys + np.uint64(((step + 1) * int(STEP)) & 0xFFFFFFFFFFFFFFFF))
    return (z >> _S11).astype(np.float64) * _INV53
