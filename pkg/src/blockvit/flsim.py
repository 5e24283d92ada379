"""In-process federated-averaging simulation with post-integration
model encryption.

Each round every client trains the linear head on its own shard starting
from the current global model; the updates are averaged element-wise
(equal weights) in ascending client-id order.  After the final round the
integrated model is encrypted once per client with an independent key, so
each client queries its own encrypted copy with images encrypted under
its own key.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .keygen import KeyMaterial, generate_key
from .cipher import encrypt_model
from .vit import ViTModel, model_blobs, train_linear_head


@dataclass
class ClientState:
    id: int
    model: ViTModel
    images: list
    labels: np.ndarray
    key: KeyMaterial | None = None


@dataclass(frozen=True)
class RoundLog:
    round_index: int
    client_losses: tuple  # final local loss per client, id ascending
    model_checksum: str

    def to_json(self) -> str:
        return json.dumps({
            "round": self.round_index,
            "client_losses": list(self.client_losses),
            "model_checksum": self.model_checksum,
        }, sort_keys=True)


def model_checksum(model: ViTModel) -> str:
    h = hashlib.sha256()
    blobs = model_blobs(model)
    for name in sorted(blobs):
        h.update(name.encode())
        h.update(np.ascontiguousarray(blobs[name], dtype="<f8").tobytes())
    return h.hexdigest()


def fedavg(models: list) -> ViTModel:
    """Element-wise mean of every weight tensor, equal client weights."""
    if not models:
        raise ValueError("fedavg needs at least one model")
    first = models[0]
    for m in models[1:]:
        if (m.p, m.c, m.n, m.d, m.depth, m.heads, m.num_classes) != \
           (first.p, first.c, first.n, first.d, first.depth,
                first.heads, first.num_classes):
            raise ValueError("client models disagree on geometry")
    stacks = [model_blobs(m) for m in models]
    mean = {name: np.mean([s[name] for s in stacks], axis=0)
            for name in stacks[0]}
    layers = []
    for i, layer in enumerate(first.encoder):
        layers.append(replace(
            layer,
            **{f: mean[f"encoder.{i}.{f}"] for f in
               ("ln1_scale", "ln1_shift", "wq", "wk", "wv", "wo",
                "ln2_scale", "ln2_shift", "mlp_w1", "mlp_b1",
                "mlp_w2", "mlp_b2")}))
    return replace(first,
                   patch_embed=mean["patch_embed"],
                   pos_embed=mean["pos_embed"],
                   class_token=mean["class_token"],
                   encoder=tuple(layers),
                   head_w=mean["head.weight"],
                   head_b=mean["head.bias"])


def run_federation(clients: list, rounds: int, local_epochs: int,
                   lr: float) -> tuple[ViTModel, list]:
    """Synchronous rounds of local head training + averaging.

    The initial global model is the clients' (shared) starting model;
    rounds == 0 returns it unchanged.  Deterministic: clients are
    processed and averaged in id order, training is full batch.
    """
    if not clients:
        raise ValueError("no clients")
    ordered = sorted(clients, key=lambda cl: cl.id)
    global_model = ordered[0].model
    logs = []
    for rnd in range(rounds):
        local_models = []
        losses = []
        for cl in ordered:
            trained, trace = train_linear_head(
                global_model, cl.images, cl.labels, local_epochs, lr)
            cl.model = trained
            local_models.append(trained)
            losses.append(trace[-1] if trace else float("nan"))
        global_model = fedavg(local_models)
        logs.append(RoundLog(round_index=rnd,
                             client_losses=tuple(losses),
                             model_checksum=model_checksum(global_model)))
    return global_model, logs


def finalize_with_encryption(global_model: ViTModel,
                             client_seeds: list) -> list:
    """Per-client independent key + encrypted copy of the integrated
    model.  Re-running with fresh seeds needs no retraining."""
    out = []
    for seed in client_seeds:
        key = generate_key(seed, p=global_model.p, c=global_model.c,
                           n=global_model.n)
        out.append((encrypt_model(global_model, key), key))
    return out
