"""Self-contained demo assets: a tiny randomly-initialized CLIP checkpoint
and synthetic images, so the export pipeline can be exercised end to end
without downloading weights."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from tokenizers import pre_tokenizers
from transformers import (
    CLIPConfig,
    CLIPImageProcessor,
    CLIPModel,
    CLIPTextConfig,
    CLIPTokenizer,
    CLIPVisionConfig,
)

# Merge chain giving "teddy" and "bear" whole-word byte-pair tokens; every
# other word falls back to character-level pieces.
MERGES = [
    ("t", "e"),
    ("te", "d"),
    ("ted", "d"),
    ("tedd", "y</w>"),
    ("b", "e"),
    ("be", "a"),
    ("bea", "r</w>"),
]


def _build_vocab() -> dict[str, int]:
    vocab: dict[str, int] = {}
    chars = sorted(pre_tokenizers.ByteLevel.alphabet())
    for ch in chars:
        vocab[ch] = len(vocab)
    for ch in chars:
        vocab[ch + "</w>"] = len(vocab)
    for a, b in MERGES:
        vocab[a + b] = len(vocab)
    vocab["<|startoftext|>"] = len(vocab)
    vocab["<|endoftext|>"] = len(vocab)
    return vocab


def make_demo_model(out_dir: str | Path, seed: int = 0) -> Path:
    """Write a one-head, two-layer CLIP checkpoint (64px images, 16px patches,
    so a 4x4 patch grid) with a hand-built byte-pair vocabulary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    vocab = _build_vocab()
    tokenizer = CLIPTokenizer(vocab=vocab, merges=list(MERGES))
    tokenizer.save_pretrained(out)

    text_cfg = CLIPTextConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        intermediate_size=64,
        num_hidden_layers=2,
        num_attention_heads=1,
        max_position_embeddings=77,
        bos_token_id=vocab["<|startoftext|>"],
        eos_token_id=vocab["<|endoftext|>"],
    )
    vision_cfg = CLIPVisionConfig(
        hidden_size=32,
        intermediate_size=64,
        num_hidden_layers=2,
        num_attention_heads=1,
        image_size=64,
        patch_size=16,
    )
    config = CLIPConfig(
        text_config=text_cfg.to_dict(),
        vision_config=vision_cfg.to_dict(),
        projection_dim=16,
    )
    torch.manual_seed(seed)
    model = CLIPModel(config)
    model.save_pretrained(out)

    CLIPImageProcessor(
        size={"shortest_edge": 64},
        crop_size={"height": 64, "width": 64},
    ).save_pretrained(out)
    return out


def make_demo_images(out_dir: str | Path, count: int, seed: int = 0, size: int = 64) -> list[Path]:
    """Synthetic RGB images: low-frequency gradients plus noise, one PNG each."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    for i in range(count):
        a, b, c = rng.uniform(-1, 1, 3)
        base = a * xx + b * yy + c * xx * yy
        img = np.stack(
            [base * rng.uniform(0.3, 1.0) + rng.normal(0, 0.15, (size, size)) for _ in range(3)],
            axis=-1,
        )
        img = (img - img.min()) / (img.max() - img.min() + 1e-9)
        path = out / f"demo_{i:03d}.png"
        Image.fromarray((img * 255).astype(np.uint8)).save(path)
        paths.append(path)
    return paths
