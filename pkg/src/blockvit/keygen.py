"""Secret-key generation: an orthogonal pixel-mixing matrix and a block
permutation, both reproducible from a single 64-bit seed.

The seed is split into two independent sub-streams (fixed XOR constants)
so the mixing matrix and the permutation could be rotated independently:

    mixing matrix stream:  seed ^ 0x9E3779B97F4A7C15
    permutation stream:    seed ^ 0xC2B2AE3D27D4EB4F
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64
from .tensorio import atomic_write

EA_STREAM_XOR = 0x9E3779B97F4A7C15
LT_STREAM_XOR = 0xC2B2AE3D27D4EB4F

ORTHOGONAL = "orthogonal"
PERMUTATION = "permutation"

ORTHO_TOL = 1e-10
_SINGULAR_TOL = 1e-8
_MAX_REGEN = 16

KEY_VERSION = 1


class KeyMaterialError(ValueError):
    """Invalid or corrupted key material."""


@dataclass(frozen=True)
class KeyMaterial:
    seed: int
    p: int            # block / patch size in pixels
    c: int            # channels
    n: int            # number of blocks
    matrix_mode: str
    ea: np.ndarray    # L x L invertible mixing matrix
    lt: np.ndarray    # length-n permutation, values 1..n

    @property
    def L(self) -> int:
        return self.p * self.p * self.c


def derive_rng_stream(seed: int) -> SplitMix64:
    """The documented deterministic generator for a seed."""
    return SplitMix64(seed)


def gram_schmidt_orthogonal(seed: int, L: int) -> np.ndarray:
    """Random L x L orthogonal matrix via seeded normals + row-wise
    modified Gram-Schmidt (with one re-orthogonalization pass).

    A numerically singular draw (residual row norm < 1e-8, the working
    stand-in for a zero determinant) is discarded and the matrix is
    redrawn from the continuing stream.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    stream = SplitMix64(seed)
    for _ in range(_MAX_REGEN):
        q = stream.normals(L * L).reshape(L, L)
        ok = True
        for _pass in range(2):
            for i in range(L):
                if i > 0:
                    q[i] -= q[:i].T @ (q[:i] @ q[i])
                norm = np.linalg.norm(q[i])
                if norm < _SINGULAR_TOL:
                    ok = False
                    break
                q[i] /= norm
            if not ok:
                break
        if ok:
            err = np.abs(q @ q.T - np.eye(L)).max()
            if err < ORTHO_TOL:
                return q
    raise KeyMaterialError(f"could not draw a non-singular {L}x{L} matrix "
                    f"after {_MAX_REGEN} attempts (seed {seed})")


def random_permutation_matrix(seed: int, L: int) -> np.ndarray:
    """Random L x L 0/1 permutation matrix (the sparse alternative to the
    dense orthogonal mixing matrix; its inverse is also its transpose)."""
    if L < 1:
        raise ValueError("L must be >= 1")
    perm = SplitMix64(seed).shuffle(list(range(L)))
    m = np.zeros((L, L))
    m[np.arange(L), perm] = 1.0
    return m


def make_permutation(seed: int, n: int) -> np.ndarray:
    """Length-n permutation vector with values 1..n (Fisher-Yates)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    perm = SplitMix64(seed).shuffle(list(range(1, n + 1)))
    return np.array(perm, dtype=np.int64)


def build_eb(lt: np.ndarray) -> np.ndarray:
    """(n+1) x (n+1) block-position permutation matrix.

    Slot 0 (the classification token) is fixed; row i >= 1 carries a 1 in
    column lt[i-1], so left-multiplying a token stack moves token lt[i]
    into slot i.
    """
    lt = np.asarray(lt, dtype=np.int64)
    n = len(lt)
    if sorted(lt.tolist()) != list(range(1, n + 1)):
        raise KeyMaterialError("lt is not a permutation of 1..n")
    eb = np.zeros((n + 1, n + 1))
    eb[0, 0] = 1.0
    eb[np.arange(1, n + 1), lt] = 1.0
    return eb


def generate_key(seed: int, p: int, c: int, n: int,
                 matrix_mode: str = ORTHOGONAL) -> KeyMaterial:
    if p < 1 or c < 1 or n < 1:
        raise KeyMaterialError("p, c, n must all be >= 1")
    if matrix_mode not in (ORTHOGONAL, PERMUTATION):
        raise KeyMaterialError(f"unknown matrix_mode {matrix_mode!r}")
    seed &= (1 << 64) - 1
    L = p * p * c
    if matrix_mode == ORTHOGONAL:
        ea = gram_schmidt_orthogonal(seed ^ EA_STREAM_XOR, L)
    else:
        ea = random_permutation_matrix(seed ^ EA_STREAM_XOR, L)
    lt = make_permutation(seed ^ LT_STREAM_XOR, n)
    return KeyMaterial(seed=seed, p=p, c=c, n=n,
                       matrix_mode=matrix_mode, ea=ea, lt=lt)


def null_key(p: int, c: int, n: int) -> KeyMaterial:
    """Degenerate key whose encryption is the identity map (test fixture)."""
    L = p * p * c
    return KeyMaterial(seed=0, p=p, c=c, n=n, matrix_mode=ORTHOGONAL,
                       ea=np.eye(L), lt=np.arange(1, n + 1, dtype=np.int64))


def invert_ea(key: KeyMaterial) -> np.ndarray:
    """Inverse of the mixing matrix; the transpose, in both modes."""
    inv = key.ea.T.copy()
    err = np.abs(key.ea @ inv - np.eye(key.L)).max()
    if err >= 1e-8:
        raise KeyMaterialError(f"mixing matrix fails inverse check (err {err:.3e})")
    return inv


def save_key(key: KeyMaterial, path: str) -> None:
    manifest = {
        "version": KEY_VERSION,
        "seed": key.seed,
        "p": key.p,
        "c": key.c,
        "n": key.n,
        "matrix_mode": key.matrix_mode,
    }
    atomic_write(path, (json.dumps(manifest, sort_keys=True) + "\n").encode())


def load_key(path: str) -> KeyMaterial:
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("version") != KEY_VERSION:
        raise KeyMaterialError(f"{path}: unsupported key version")
    key = generate_key(
        seed=int(manifest["seed"]),
        p=int(manifest["p"]),
        c=int(manifest["c"]),
        n=int(manifest["n"]),
        matrix_mode=manifest["matrix_mode"],
    )
    check_key(key)
    return key


def check_key(key: KeyMaterial) -> None:
    """Invariant audit; raises on corrupted material."""
    if key.ea.shape != (key.L, key.L):
        raise KeyMaterialError("mixing matrix shape mismatch")
    if key.matrix_mode == PERMUTATION:
        if not (np.isin(key.ea, (0.0, 1.0)).all()
                and (key.ea.sum(axis=0) == 1).all()
                and (key.ea.sum(axis=1) == 1).all()):
            raise KeyMaterialError("permutation-mode matrix is not a permutation")
    else:
        err = np.abs(key.ea @ key.ea.T - np.eye(key.L)).max()
        if err >= ORTHO_TOL:
            raise KeyMaterialError(f"mixing matrix not orthogonal (err {err:.3e})")
    if sorted(key.lt.tolist()) != list(range(1, key.n + 1)):
        raise KeyMaterialError("block permutation is not a bijection")
