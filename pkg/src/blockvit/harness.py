"""Access-control and visual-protection evaluation.

Metrics use top-1 agreement with the plain baseline model rather than
labeled accuracy: at desk scale the labels are synthetic, and when the
baseline is accurate the two coincide.  Box-plot statistics follow the
usual Tukey construction: linearly interpolated quartiles, whiskers at
the most extreme data points within 1.5 IQR of the quartiles, outliers
beyond that.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cipher import encrypt_image
from .keygen import KeyMaterial, generate_key
from .rng import SplitMix64
from .tensorio import ImageTensor
from .vit import ViTModel, classify

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class AttackReport:
    num_keys: int
    rates: tuple          # per-key top-1 agreement with the baseline
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple
    positive_control_rate: float  # correct key

    def to_json(self) -> str:
        return json.dumps({
            "num_keys": self.num_keys,
            "rates": list(self.rates),
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "whisker_low": self.whisker_low,
            "whisker_high": self.whisker_high,
            "outliers": list(self.outliers),
            "positive_control_rate": self.positive_control_rate,
        }, sort_keys=True)


def agreement_rate(predictions_a: np.ndarray, predictions_b: np.ndarray) -> float:
    if len(predictions_a) == 0:
        raise ValueError("empty prediction set")
    return float(np.mean(predictions_a == predictions_b))


def predict(model: ViTModel, images: list) -> np.ndarray:
    return np.array([int(np.argmax(classify(model, img))) for img in images])


def plain_image_attack(enc_model: ViTModel, plain_images: list,
                       baseline_model: ViTModel) -> float:
    """Agreement when plain (unencrypted) images hit the encrypted model."""
    base = predict(baseline_model, plain_images)
    attacked = predict(enc_model, plain_images)
    return agreement_rate(attacked, base)


def box_stats(rates: np.ndarray) -> dict:
    """Quartiles by linear interpolation; Tukey whiskers and outliers."""
    rates = np.asarray(rates, dtype=np.float64)
    q1, med, q3 = np.percentile(rates, [25.0, 50.0, 75.0], method="linear")
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = rates[(rates >= lo_fence) & (rates <= hi_fence)]
    outliers = rates[(rates < lo_fence) | (rates > hi_fence)]
    return {
        "q1": float(q1), "median": float(med), "q3": float(q3),
        "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
        "outliers": tuple(float(r) for r in np.sort(outliers)),
    }


def random_key_attack(enc_model: ViTModel, key_true: KeyMaterial,
                      num_keys: int, test_images: list,
                      baseline_model: ViTModel,
                      attack_seed: int = 0xD1CE) -> AttackReport:
    """Query the encrypted model with images encrypted under wrong keys.

    Wrong keys come from a seeded stream (skipping any collision with the
    true key's seed); the correct key is run separately as the positive
    control.  Keys are processed in draw order.
    """
    if num_keys < 1:
        raise ValueError("num_keys must be >= 1")
    base = predict(baseline_model, test_images)
    stream = SplitMix64(attack_seed)
    rates = []
    for _ in range(num_keys):
        seed = stream.next_word()
        while seed == key_true.seed:
            seed = stream.next_word()
        wrong = generate_key(seed, p=key_true.p, c=key_true.c, n=key_true.n,
                             matrix_mode=key_true.matrix_mode)
        preds = predict(enc_model,
                        [encrypt_image(img, wrong) for img in test_images])
        rates.append(agreement_rate(preds, base))
    control = predict(enc_model,
                      [encrypt_image(img, key_true) for img in test_images])
    stats = box_stats(np.array(rates))
    return AttackReport(num_keys=num_keys, rates=tuple(rates),
                        positive_control_rate=agreement_rate(control, base),
                        **stats)


def visual_protection_metrics(plain: ImageTensor,
                              encrypted: ImageTensor) -> dict:
    """Pearson correlation of pixel values plus PSNR after mapping each
    image affinely onto [0, 1].  Constant images get correlation 0 with a
    flag; identical images hit the PSNR cap."""
    if plain.data.shape != encrypted.data.shape:
        raise ValueError("image dimensions differ")
    a = plain.data.reshape(-1)
    b = encrypted.data.reshape(-1)
    degenerate = a.std() == 0.0 or b.std() == 0.0
    corr = 0.0 if degenerate else float(np.corrcoef(a, b)[0, 1])

    def normalize(x):
        lo, hi = x.min(), x.max()
        return np.zeros_like(x) if hi == lo else (x - lo) / (hi - lo)

    mse = float(np.mean((normalize(a) - normalize(b)) ** 2))
    psnr = PSNR_CAP_DB if mse == 0.0 else min(PSNR_CAP_DB,
                                              float(-10.0 * np.log10(mse)))
    return {"pearson_corr": corr, "psnr_db": psnr,
            "degenerate_input": bool(degenerate)}
