"""Pluggable embedding providers with deterministic fallbacks.

Pretrained text/image backbones are out of scope; the default providers are
hash-seeded so that two processes produce bitwise-identical vectors for the
same input, which is what the graph-build determinism contract needs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import UndecodableImage
from .text import tokenize

IMAGE_SIZE = 64
PATCH = 8
GRID = IMAGE_SIZE // PATCH  # 8x8 grid -> 64 patches
PATCH_DIM = PATCH * PATCH * 3  # 192 raw values per patch
NUM_PATCHES = GRID * GRID

SYNTHETIC_PREFIX = "synthetic://"


def _seed_from(text: str, salt: str) -> int:
    digest = hashlib.blake2b((salt + "\x00" + text).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class HashingTextEmbedder:
    """Bag-of-words embedder: each token hashes to a fixed random direction,
    token vectors are summed and L2-normalized."""

    dim: int = 64
    salt: str = "kale-text-v1"

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text) or [""]
        acc = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            gen = np.random.Generator(np.random.PCG64(_seed_from(tok, self.salt)))
            acc += gen.standard_normal(self.dim)
        norm = np.linalg.norm(acc)
        if norm > 0:
            acc /= norm
        else:
            # Token vectors cancelled out exactly; fall back to a stable direction.
            gen = np.random.Generator(np.random.PCG64(_seed_from(text, self.salt)))
            acc = gen.standard_normal(self.dim)
            acc /= np.linalg.norm(acc)
        return acc

    def describe(self) -> str:
        return f"hashing-text-v1:dim={self.dim},salt={self.salt}"


def load_patch_matrix(image_ref) -> np.ndarray:
    """Resolve an image reference into a (64, 192) patch matrix.

    Accepted forms:
      * ``synthetic://<name>``  -- deterministic pseudo-image derived from the name
      * a path to an image file -- decoded, resized to 64x64 RGB
      * a nested list / array   -- precomputed patch features, shape (64, 192)
      * a flat list / array     -- same, flattened (64 * 192 values)
    """
    if isinstance(image_ref, (list, tuple, np.ndarray)):
        arr = np.asarray(image_ref, dtype=np.float64)
        if arr.ndim == 1 and arr.size == NUM_PATCHES * PATCH_DIM:
            return arr.reshape(NUM_PATCHES, PATCH_DIM)
        if arr.shape == (NUM_PATCHES, PATCH_DIM):
            return arr.copy()
        raise UndecodableImage(
            "<precomputed>",
            f"feature payload must have shape ({NUM_PATCHES}, {PATCH_DIM}), got {arr.shape}",
        )

    ref = str(image_ref)
    if ref.startswith(SYNTHETIC_PREFIX):
        gen = np.random.Generator(np.random.PCG64(_seed_from(ref, "kale-image-v1")))
        pixels = gen.random((IMAGE_SIZE, IMAGE_SIZE, 3))
    else:
        try:
            from PIL import Image

            with Image.open(ref) as im:
                im = im.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
                pixels = np.asarray(im, dtype=np.float64) / 255.0
        except FileNotFoundError:
            raise UndecodableImage(ref, "file not found") from None
        except Exception as exc:  # PIL raises a zoo of decode errors
            raise UndecodableImage(ref, str(exc)) from exc
    return pixels_to_patches(pixels)


def pixels_to_patches(pixels: np.ndarray) -> np.ndarray:
    """Split a (64, 64, 3) image into a (64, 192) row-per-patch matrix."""
    if pixels.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise UndecodableImage("<pixels>", f"expected (64, 64, 3), got {pixels.shape}")
    patches = pixels.reshape(GRID, PATCH, GRID, PATCH, 3)
    patches = patches.transpose(0, 2, 1, 3, 4).reshape(NUM_PATCHES, PATCH_DIM)
    return np.ascontiguousarray(patches)


@dataclass(frozen=True)
class PatchStatsImageEmbedder:
    """Per-patch mean and standard deviation, concatenated: 64 + 64 = 128."""

    dim: int = 128

    def embed(self, image_ref) -> np.ndarray:
        patches = load_patch_matrix(image_ref)
        means = patches.mean(axis=1)
        stds = patches.std(axis=1)
        vec = np.concatenate([means, stds])
        if vec.shape[0] != self.dim:
            raise UndecodableImage(str(image_ref), f"stats dim {vec.shape[0]} != {self.dim}")
        return vec

    def describe(self) -> str:
        return f"patch-stats-v1:dim={self.dim}"


@dataclass(frozen=True)
class EmbeddingProviderSet:
    """The provider pair handed to graph construction and the encoders."""

    text: HashingTextEmbedder = field(default_factory=HashingTextEmbedder)
    image: PatchStatsImageEmbedder = field(default_factory=PatchStatsImageEmbedder)

    def digest(self) -> str:
        blob = "|".join([self.text.describe(), self.image.describe()])
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()
