"""Minimal vision-transformer forward engine.

Serves as the numerical oracle for the cipher's equivalence claim: the
token sequence of (encrypted model, encrypted image) must equal a
class-token-fixing row permutation of the plain sequence, and the logits
must match exactly because the encoder is equivariant to such
permutations.  Pre-norm blocks, multi-head self-attention, GELU MLP, no
dropout; everything float64 and deterministic.

Only the linear classification head is ever trained (full-batch gradient
descent on softmax cross-entropy over frozen class-token features); the
encoder keeps its random initialization, which is all the equivalence
identity requires.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf

from .cipher import encrypt_image, encrypt_model, flatten_patches
from .keygen import KeyMaterial, build_eb
from .rng import SplitMix64
from .tensorio import ImageTensor, atomic_write, load_blobs, save_blobs

LN_EPS = 1e-6

TOKEN_TOL = 1e-9
LOGIT_TOL = 1e-8


@dataclass(frozen=True)
class EncoderLayer:
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray


@dataclass(frozen=True)
class ViTModel:
    p: int
    c: int
    n: int
    d: int
    heads: int
    num_classes: int
    patch_embed: np.ndarray    # L x D
    pos_embed: np.ndarray      # (n+1) x D
    class_token: np.ndarray    # D
    encoder: tuple             # of EncoderLayer
    head_w: np.ndarray         # D x num_classes
    head_b: np.ndarray         # num_classes

    @property
    def L(self) -> int:
        return self.p * self.p * self.c

    @property
    def depth(self) -> int:
        return len(self.encoder)

    @property
    def d_ff(self) -> int:
        return self.encoder[0].mlp_w1.shape[1] if self.encoder else 4 * self.d


def _layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * scale + shift


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def embed(model: ViTModel, img: ImageTensor) -> np.ndarray:
    """Initial token sequence: class token, then one token per patch,
    plus position information.  Accepts plain or encrypted images."""
    patches = flatten_patches(img, model.p)  # (n, L)
    if patches.shape != (model.n, model.L):
        raise ValueError(
            f"image yields {patches.shape[0]} patches of length "
            f"{patches.shape[1]}; model expects {model.n} x {model.L}")
    tokens = np.vstack([model.class_token, patches @ model.patch_embed])
    return tokens + model.pos_embed


def _attention(x: np.ndarray, layer: EncoderLayer, heads: int) -> np.ndarray:
    t, d = x.shape
    dh = d // heads
    q = (x @ layer.wq).reshape(t, heads, dh)
    k = (x @ layer.wk).reshape(t, heads, dh)
    v = (x @ layer.wv).reshape(t, heads, dh)
    scores = np.einsum("ihd,jhd->hij", q, k) / np.sqrt(dh)
    attn = _softmax(scores)
    out = np.einsum("hij,jhd->ihd", attn, v).reshape(t, d)
    return out @ layer.wo


def encoder_forward(model: ViTModel, z: np.ndarray) -> np.ndarray:
    if z.shape != (model.n + 1, model.d):
        raise ValueError(f"token sequence shape {z.shape} invalid")
    with np.errstate(invalid="ignore", over="ignore"):
        for layer in model.encoder:
            z = z + _attention(
                _layer_norm(z, layer.ln1_scale, layer.ln1_shift),
                layer, model.heads)
            h = _layer_norm(z, layer.ln2_scale, layer.ln2_shift)
            z = z + (_gelu(h @ layer.mlp_w1 + layer.mlp_b1) @ layer.mlp_w2
                     + layer.mlp_b2)
    if not np.isfinite(z).all():
        raise FloatingPointError("non-finite values in encoder output")
    return z


def class_features(model: ViTModel, img: ImageTensor) -> np.ndarray:
    """Class-token output of the encoder (the frozen feature vector)."""
    return encoder_forward(model, embed(model, img))[0]


def classify(model: ViTModel, img: ImageTensor) -> np.ndarray:
    return class_features(model, img) @ model.head_w + model.head_b


def init_random_model(seed: int, p: int, c: int, n: int, d: int,
                      depth: int, heads: int, num_classes: int,
                      d_ff: int | None = None) -> ViTModel:
    """Random weights from the seeded stream, normals scaled by 1/sqrt(D).

    Draw order is fixed (embeddings, class token, then per layer the
    attention and MLP matrices); layer norms start at identity and biases
    at zero, so the draw count is exactly the matrix element count.
    """
    if heads < 1 or d % heads:
        raise ValueError(f"heads {heads} must divide dim {d}")
    if min(p, c, n, d, depth + 1, num_classes) < 1:
        raise ValueError("invalid hyperparameters")
    if d_ff is None:
        d_ff = 4 * d
    L = p * p * c
    stream = SplitMix64(seed)
    scale = 1.0 / np.sqrt(d)

    def draw(*shape):
        return stream.normals(int(np.prod(shape))).reshape(shape) * scale

    patch_embed = draw(L, d)
    pos_embed = draw(n + 1, d)
    class_token = draw(d)
    layers = []
    for _ in range(depth):
        layers.append(EncoderLayer(
            ln1_scale=np.ones(d), ln1_shift=np.zeros(d),
            wq=draw(d, d), wk=draw(d, d), wv=draw(d, d), wo=draw(d, d),
            ln2_scale=np.ones(d), ln2_shift=np.zeros(d),
            mlp_w1=draw(d, d_ff), mlp_b1=np.zeros(d_ff),
            mlp_w2=draw(d_ff, d), mlp_b2=np.zeros(d),
        ))
    head_w = draw(d, num_classes)
    head_b = np.zeros(num_classes)
    return ViTModel(p=p, c=c, n=n, d=d, heads=heads, num_classes=num_classes,
                    patch_embed=patch_embed, pos_embed=pos_embed,
                    class_token=class_token, encoder=tuple(layers),
                    head_w=head_w, head_b=head_b)


def head_loss_and_grad(features: np.ndarray, labels: np.ndarray,
                       head_w: np.ndarray, head_b: np.ndarray):
    """Mean softmax cross-entropy over precomputed features, with the
    analytic gradient for (head_w, head_b)."""
    nsamp = features.shape[0]
    logits = features @ head_w + head_b
    probs = _softmax(logits)
    ll = np.log(probs[np.arange(nsamp), labels])
    loss = -ll.mean()
    delta = probs.copy()
    delta[np.arange(nsamp), labels] -= 1.0
    delta /= nsamp
    return loss, features.T @ delta, delta.sum(axis=0)


def train_linear_head(model: ViTModel, images: list, labels,
                      epochs: int, lr: float) -> tuple[ViTModel, list]:
    """Full-batch gradient descent on the head only; encoder frozen.

    Descent runs in standardized feature space (per-dimension mean/scale
    of this batch) and the affine transform is folded back into the head
    afterwards, so the result is still a plain linear head on raw
    features; the standardization is only a preconditioner.  Returns the
    updated model and the per-epoch loss trace.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("empty dataset")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError("label out of range")
    if epochs == 0:
        return model, []
    feats = np.stack([class_features(model, img) for img in images])
    mu = feats.mean(axis=0)
    sigma = np.maximum(feats.std(axis=0), 1e-8)
    feats_std = (feats - mu) / sigma
    # fold the current raw head into standardized space...
    w = sigma[:, None] * model.head_w
    b = model.head_b + mu @ model.head_w
    losses = []
    for _ in range(epochs):
        loss, gw, gb = head_loss_and_grad(feats_std, labels, w, b)
        w -= lr * gw
        b -= lr * gb
        losses.append(loss)
    # ...and back: identical logits on raw features
    w_raw = w / sigma[:, None]
    b_raw = b - (mu / sigma) @ w
    return replace(model, head_w=w_raw, head_b=b_raw), losses


def verify_equivalence(model: ViTModel, key: KeyMaterial,
                       images: list,
                       token_tol: float = TOKEN_TOL,
                       logit_tol: float = LOGIT_TOL,
                       enc_model: ViTModel | None = None) -> dict:
    """Measure, over an image set, how far the encrypted pipeline's token
    sequence is from the permuted plain sequence, and the logit gap.
    Errors are compared against tolerance x largest magnitude seen.

    ``enc_model`` defaults to encrypting ``model`` with ``key``; pass an
    externally produced encrypted model to audit a file pipeline (a model
    encrypted under a different key is the natural negative control)."""
    if len(images) == 0:
        raise ValueError("empty image set")
    if enc_model is None:
        enc_model = encrypt_model(model, key)
    eb = build_eb(key.lt)
    max_z0_err = 0.0
    max_logit_err = 0.0
    z0_scale = 0.0
    logit_scale = 0.0
    for img in images:
        z0 = embed(model, img)
        z0_tilde = embed(enc_model, encrypt_image(img, key))
        ref = eb @ z0
        max_z0_err = max(max_z0_err, np.abs(z0_tilde - ref).max())
        z0_scale = max(z0_scale, np.abs(ref).max())
        lg_plain = classify(model, img)
        lg_enc = classify(enc_model, encrypt_image(img, key))
        max_logit_err = max(max_logit_err, np.abs(lg_enc - lg_plain).max())
        logit_scale = max(logit_scale, np.abs(lg_plain).max())
    passed = (max_z0_err < token_tol * max(z0_scale, 1.0)
              and max_logit_err < logit_tol * max(logit_scale, 1.0))
    return {
        "num_images": len(images),
        "max_z0_error": max_z0_err,
        "max_logit_error": max_logit_err,
        "z0_scale": z0_scale,
        "logit_scale": logit_scale,
        "token_tol": token_tol,
        "logit_tol": logit_tol,
        "passed": bool(passed),
    }


# --- persistence: multi-blob weight container + JSON hyperparameter sidecar

_LAYER_FIELDS = ("ln1_scale", "ln1_shift", "wq", "wk", "wv", "wo",
                 "ln2_scale", "ln2_shift", "mlp_w1", "mlp_b1",
                 "mlp_w2", "mlp_b2")


def model_blobs(model: ViTModel) -> dict:
    blobs = {
        "patch_embed": model.patch_embed,
        "pos_embed": model.pos_embed,
        "class_token": model.class_token,
        "head.weight": model.head_w,
        "head.bias": model.head_b,
    }
    for i, layer in enumerate(model.encoder):
        for name in _LAYER_FIELDS:
            blobs[f"encoder.{i}.{name}"] = getattr(layer, name)
    return blobs


def save_model(model: ViTModel, path: str) -> None:
    save_blobs(model_blobs(model), path)
    meta = {
        "version": 1,
        "p": model.p, "c": model.c, "n": model.n, "d": model.d,
        "depth": model.depth, "heads": model.heads,
        "num_classes": model.num_classes, "d_ff": model.d_ff,
    }
    atomic_write(path + ".json", (json.dumps(meta, sort_keys=True) + "\n").encode())


def load_model(path: str) -> ViTModel:
    blobs = load_blobs(path)
    with open(path + ".json") as f:
        meta = json.load(f)
    layers = []
    for i in range(meta["depth"]):
        layers.append(EncoderLayer(
            **{name: blobs[f"encoder.{i}.{name}"] for name in _LAYER_FIELDS}))
    return ViTModel(
        p=meta["p"], c=meta["c"], n=meta["n"], d=meta["d"],
        heads=meta["heads"], num_classes=meta["num_classes"],
        patch_embed=blobs["patch_embed"], pos_embed=blobs["pos_embed"],
        class_token=blobs["class_token"], encoder=tuple(layers),
        head_w=blobs["head.weight"], head_b=blobs["head.bias"])
