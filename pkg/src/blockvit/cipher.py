"""Applying key material to images and to model embeddings.

Image encryption: split into p x p x c blocks, permute block positions,
flatten each block, right-multiply by the inverse mixing matrix, rebuild,
reassemble.  Model encryption: left-multiply the patch embedding by the
mixing matrix and row-permute the position embedding.  The two cancel
exactly in the token sequence, up to the block permutation, which the
transformer encoder is equivariant to.

Flattening order is the contract both sides must share: an element at
(row, col, channel) within a block lands at flat index
row * (p * c) + col * c + channel.  This is C-order flattening of a
(p, p, c) array; the forward engine imports its patch flattening from
here so the two cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .keygen import KeyMaterial, build_eb, invert_ea
from .tensorio import ENCRYPTED, PLAIN, ImageTensor

# (row, col, channel), C order. Asserted by cross-module tests.
FLATTEN_ORDER = "row-col-channel"


@dataclass(frozen=True)
class BlockSequence:
    """Ordered p x p x c blocks in raster order (left-to-right, top-down)."""

    blocks: np.ndarray  # (n, p, p, c)
    grid_h: int         # blocks per column
    grid_w: int         # blocks per row

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def p(self) -> int:
        return self.blocks.shape[1]

    @property
    def c(self) -> int:
        return self.blocks.shape[3]


def split_blocks(img: ImageTensor, p: int) -> BlockSequence:
    h, w, c = img.data.shape
    if h % p or w % p:
        raise ValueError(f"image {h}x{w} not divisible by block size {p}")
    gh, gw = h // p, w // p
    blocks = (img.data.reshape(gh, p, gw, p, c)
              .transpose(0, 2, 1, 3, 4)
              .reshape(gh * gw, p, p, c))
    return BlockSequence(blocks=blocks, grid_h=gh, grid_w=gw)


def merge_blocks(bs: BlockSequence, range_tag: str) -> ImageTensor:
    gh, gw, p, c = bs.grid_h, bs.grid_w, bs.p, bs.c
    data = (bs.blocks.reshape(gh, gw, p, p, c)
            .transpose(0, 2, 1, 3, 4)
            .reshape(gh * p, gw * p, c))
    return ImageTensor(data=data.copy(), range_tag=range_tag)


def flatten_blocks(bs: BlockSequence) -> np.ndarray:
    """(n, L) matrix of flattened blocks in the shared element order."""
    return bs.blocks.reshape(bs.n, -1)


def flatten_patches(img: ImageTensor, p: int) -> np.ndarray:
    """Patch matrix (n, L) as consumed by the forward engine."""
    return flatten_blocks(split_blocks(img, p)).copy()


def permute_blocks(bs: BlockSequence, key: KeyMaterial,
                   inverse: bool = False) -> BlockSequence:
    """Block-position action of the key: output slot i receives input
    block lt[i] (gather).  ``inverse=True`` scatters back."""
    if bs.n != key.n:
        raise ValueError(f"block count {bs.n} != key n {key.n}")
    idx = key.lt - 1
    if inverse:
        out = np.empty_like(bs.blocks)
        out[idx] = bs.blocks
    else:
        out = bs.blocks[idx]
    return replace(bs, blocks=out)


def transform_blocks(bs: BlockSequence, key: KeyMaterial,
                     direction: str) -> BlockSequence:
    """Mix pixel values within each block: flatten, right-multiply by the
    inverse mixing matrix (encrypt) or the mixing matrix (decrypt),
    rebuild."""
    if bs.p != key.p or bs.c != key.c:
        raise ValueError("block geometry does not match key")
    if direction == "encrypt":
        m = invert_ea(key)
    elif direction == "decrypt":
        m = key.ea
    else:
        raise ValueError(f"bad direction {direction!r}")
    flat = flatten_blocks(bs) @ m
    return replace(bs, blocks=flat.reshape(bs.blocks.shape))


def encrypt_image(img: ImageTensor, key: KeyMaterial) -> ImageTensor:
    bs = split_blocks(img, key.p)
    bs = permute_blocks(bs, key)
    bs = transform_blocks(bs, key, "encrypt")
    return merge_blocks(bs, ENCRYPTED)


def decrypt_image(enc: ImageTensor, key: KeyMaterial) -> ImageTensor:
    bs = split_blocks(enc, key.p)
    bs = transform_blocks(bs, key, "decrypt")
    bs = permute_blocks(bs, key, inverse=True)
    data = np.clip(merge_blocks(bs, ENCRYPTED).data, 0.0, 1.0)
    return ImageTensor(data=data, range_tag=PLAIN)


def decrypt_image_raw(enc: ImageTensor, key: KeyMaterial) -> np.ndarray:
    """Unclipped inverse, for error measurement against the original."""
    bs = split_blocks(enc, key.p)
    bs = transform_blocks(bs, key, "decrypt")
    bs = permute_blocks(bs, key, inverse=True)
    return merge_blocks(bs, ENCRYPTED).data


def encrypt_patch_embedding(e: np.ndarray, key: KeyMaterial) -> np.ndarray:
    if e.shape[0] != key.L:
        raise ValueError(f"patch embedding rows {e.shape[0]} != key L {key.L}")
    return key.ea @ e


def encrypt_position_embedding(epos: np.ndarray, key: KeyMaterial) -> np.ndarray:
    if epos.shape[0] != key.n + 1:
        raise ValueError(f"position embedding rows {epos.shape[0]} != n+1")
    return build_eb(key.lt) @ epos


def encrypt_model(model, key: KeyMaterial):
    """Encrypted copy of a forward-engine model: only the two embeddings
    change; encoder weights, class token, and head stay untouched."""
    if model.L != key.L or model.n != key.n:
        raise ValueError("model geometry does not match key")
    return replace(
        model,
        patch_embed=encrypt_patch_embedding(model.patch_embed, key),
        pos_embed=encrypt_position_embedding(model.pos_embed, key),
    )
