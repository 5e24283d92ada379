"""Block-wise encryption for vision-transformer models.

Keyed encryption of images (block permutation + within-block orthogonal
mixing) and of model embeddings, built so that the encrypted model on
encrypted inputs reproduces the plain model's outputs exactly, plus
desk-scale access-control and federated-learning harnesses.
"""

from .keygen import KeyMaterial, generate_key, load_key, save_key
from .cipher import decrypt_image, encrypt_image, encrypt_model
from .tensorio import ImageTensor, load_image
from .vit import ViTModel, classify, init_random_model, verify_equivalence

__all__ = [
    "KeyMaterial", "generate_key", "load_key", "save_key",
    "encrypt_image", "decrypt_image", "encrypt_model",
    "ImageTensor", "load_image",
    "ViTModel", "classify", "init_random_model", "verify_equivalence",
]

__version__ = "0.1.0"
