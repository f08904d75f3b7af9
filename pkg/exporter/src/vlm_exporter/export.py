"""Tensor extraction from a frozen CLIP-style dual encoder.

Visual bundles carry head-averaged last-layer CLS-to-patch attention
(renormalized over the patch subset), post-LayerNorm patch tokens, the
joint-space global vector and the visual projection. Text bundles carry
per-layer EOT-to-subword attention rows (special positions excluded),
per-layer EOT hidden-state norms, final-LayerNorm token embeddings, the
joint-space query vector and the text projection.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from transformers import CLIPModel, CLIPProcessor

from .container import write_container


class ExportError(RuntimeError):
    pass


def load_model(model_id: str) -> tuple[CLIPModel, CLIPProcessor]:
    try:
        # eager attention keeps per-layer attention maps available
        model = CLIPModel.from_pretrained(model_id, attn_implementation="eager")
        processor = CLIPProcessor.from_pretrained(model_id)
    except Exception as exc:
        raise ExportError(f"cannot load model '{model_id}': {exc}") from exc
    model.eval()
    return model, processor


def _provenance(model_id: str, side: str) -> str:
    return (
        f"model={model_id} side={side} attention=last-layer head-averaged "
        "tokens=post-layernorm projection=weight-transposed"
    )


def _audit_tensors(model: CLIPModel, hidden_in: torch.Tensor) -> dict[str, np.ndarray]:
    """Raw single-head query/key/value rows of the final visual block plus the
    block's CLS attention output, for downstream aggregation audits."""
    layer = model.vision_model.encoder.layers[-1]
    if model.config.vision_config.num_attention_heads != 1:
        raise ExportError("audit tensors require a single-head vision encoder")
    normed = layer.layer_norm1(hidden_in)[0]
    attn = layer.self_attn
    q_cls = attn.q_proj(normed)[0]
    # patch rows only; the CLS column is dropped and the softmax renormalized
    # over patches, matching the downstream single-distribution model
    k = attn.k_proj(normed)[1:]
    v = attn.v_proj(normed)[1:]
    d = k.shape[1]
    probs = torch.softmax((q_cls @ k.T) / (d**0.5), dim=-1)
    cls_out = probs @ v
    return {
        "q_cls": q_cls.numpy(),
        "keys": k.numpy(),
        "values": v.numpy(),
        "cls_out": cls_out.numpy(),
    }


@torch.no_grad()
def export_visual(
    images: list[str | Path],
    model: CLIPModel,
    processor: CLIPProcessor,
    out_dir: str | Path,
    model_id: str = "",
    audit: bool = False,
) -> list[Path]:
    if not images:
        raise ExportError("no images to export")
    out_dir = Path(out_dir)
    written = []
    patch = model.config.vision_config.patch_size
    side = model.config.vision_config.image_size // patch
    for image_path in images:
        image_path = Path(image_path)
        try:
            image = Image.open(image_path).convert("RGB")
        except Exception as exc:
            raise ExportError(f"cannot decode image '{image_path}': {exc}") from exc
        pixel = processor(images=image, return_tensors="pt").pixel_values
        out = model.vision_model(
            pixel, output_attentions=True, output_hidden_states=True
        )
        cls_row = out.attentions[-1][0].mean(dim=0)[0, 1:]
        cls_attention = (cls_row / cls_row.sum()).numpy()
        tokens = model.vision_model.post_layernorm(out.hidden_states[-1])[0, 1:, :]
        cls_joint = model.get_image_features(pixel_values=pixel).pooler_output[0].numpy()
        projection = model.visual_projection.weight.T.numpy()
        tensors = {
            "patch_tokens": tokens.numpy(),
            "cls_attention": cls_attention,
            "cls_joint": cls_joint,
            "visual_projection": projection,
        }
        if audit:
            tensors.update(_audit_tensors(model, out.hidden_states[-2]))
        written.append(
            write_container(
                out_dir / image_path.stem,
                "visual",
                image_path.stem,
                tensors,
                extra={
                    "grid": [side, side],
                    "dims": {"token": tokens.shape[1], "joint": cls_joint.shape[0]},
                    "provenance": _provenance(model_id, "visual"),
                },
            )
        )
    return written


@torch.no_grad()
def export_text(
    captions: list[str],
    model: CLIPModel,
    processor: CLIPProcessor,
    out_dir: str | Path,
    model_id: str = "",
) -> list[Path]:
    if not captions:
        raise ExportError("no captions to export")
    out_dir = Path(out_dir)
    tokenizer = processor.tokenizer
    eot_id = tokenizer.eos_token_id
    written = []
    for q, caption in enumerate(captions):
        if not caption.strip():
            raise ExportError(f"caption {q} is empty")
        enc = tokenizer([caption], return_tensors="pt")
        ids = enc.input_ids
        eot_pos = ids[0].tolist().index(eot_id)
        if eot_pos < 2:
            raise ExportError(f"caption {q!r} produced no subword tokens")
        out = model.text_model(
            input_ids=ids,
            attention_mask=enc.attention_mask,
            output_attentions=True,
            output_hidden_states=True,
        )
        eot_attention = np.stack(
            [
                layer[0].mean(dim=0)[eot_pos, 1:eot_pos].numpy()
                for layer in out.attentions
            ]
        )
        eot_norms = np.asarray(
            [
                float(torch.linalg.norm(out.hidden_states[l + 1][0, eot_pos]))
                for l in range(len(out.attentions))
            ]
        )
        final = model.text_model.final_layer_norm(out.hidden_states[-1])
        token_embeddings = final[0, 1:eot_pos].numpy()
        eot_joint = (
            model.get_text_features(input_ids=ids, attention_mask=enc.attention_mask)
            .pooler_output[0]
            .numpy()
        )
        projection = model.text_projection.weight.T.numpy()
        token_strings = tokenizer.convert_ids_to_tokens(ids[0, 1:eot_pos].tolist())
        bundle_id = f"cap_{q:03d}"
        written.append(
            write_container(
                out_dir / bundle_id,
                "text",
                bundle_id,
                {
                    "token_embeddings": token_embeddings,
                    "eot_attention": eot_attention,
                    "eot_norms": eot_norms,
                    "eot_joint": eot_joint,
                    "text_projection": projection,
                },
                extra={
                    "layers": eot_attention.shape[0],
                    "dims": {
                        "token": token_embeddings.shape[1],
                        "joint": eot_joint.shape[0],
                    },
                    "token_strings": token_strings,
                    "provenance": _provenance(model_id, "text"),
                },
            )
        )
    return written
