"""Checkpoint-backed model wrappers.

Two duck-typed roles:

* a segmenter with ``generate(image, params) -> [(mask, score), ...]``,
  ``predict_points(image, points) -> (mask, score)`` and
  ``predict_box(image, box) -> (mask, score)``;
* a descriptor with ``extract(image) -> (attn, feats, grid)`` where attn
  is (n_heads, n_patches) CLS-to-patch attention with register tokens
  stripped, feats is (n_heads, n_patches, head_dim), and grid is the
  patch layout (rows, cols).

The real implementations wrap a promptable segmentation checkpoint and a
self-supervised ViT descriptor through the ``transformers`` library.
torch/transformers are imported lazily so the fixture writers stay usable
without them.
"""

from __future__ import annotations

import numpy as np

DEFAULT_SEGMENTER = "facebook/sam-vit-huge"
DEFAULT_DESCRIPTOR = "facebook/dinov2-with-registers-base"

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ExtractorError(RuntimeError):
    pass


def _import_torch():
    try:
        import torch
    except ImportError as exc:
        raise ExtractorError(
            "torch is required for model-backed extraction; install the "
            "'models' extra (pip install segextract[models])") from exc
    return torch


def resolve_device(device: str = "auto") -> str:
    torch = _import_torch()
    if device == "auto":
        return "cuda" if torch.cuda.is_available() else "cpu"
    if device.startswith("cuda") and not torch.cuda.is_available():
        raise ExtractorError("GPU requested but CUDA is unavailable; "
                             "pass --device cpu to run on the CPU")
    return device


def _load_pretrained(loader, checkpoint: str, what: str):
    try:
        return loader(checkpoint)
    except (OSError, ValueError, RuntimeError) as exc:
        raise ExtractorError(
            f"{what} checkpoint {checkpoint!r} is not available locally and "
            f"could not be downloaded: {exc}") from exc


class SamSegmenter:
    """Promptable segmentation model (SAM family) via transformers."""

    def __init__(self, checkpoint: str = DEFAULT_SEGMENTER, device: str = "auto"):
        torch = _import_torch()
        try:
            from transformers import SamModel, SamProcessor, pipeline
        except ImportError as exc:
            raise ExtractorError("transformers is required for model-backed "
                                 "extraction (pip install segextract[models])") from exc
        self.device = resolve_device(device)
        self.model = _load_pretrained(SamModel.from_pretrained, checkpoint,
                                      "segmenter").to(self.device).eval()
        self.processor = _load_pretrained(SamProcessor.from_pretrained, checkpoint,
                                          "segmenter processor")
        self._generator = pipeline("mask-generation", model=self.model,
                                   image_processor=self.processor.image_processor,
                                   device=self.device)
        torch.manual_seed(0)

    def generate(self, image: np.ndarray, params: dict) -> list[tuple[np.ndarray, float]]:
        """Automatic mask generation on the (colorized) image.

        box_nms_thresh maps onto the pipeline's crops_nms_thresh, which is
        the single NMS the transformers implementation applies.
        """
        from PIL import Image

        outputs = self._generator(
            Image.fromarray(image),
            points_per_batch=int(params["points_per_batch"]),
            crops_nms_thresh=float(params["box_nms_thresh"]),
            crop_overlap_ratio=float(params["crop_overlap_ratio"]),
            stability_score_thresh=float(params["stability_score_thresh"]),
            mask_threshold=0.0,
        )
        masks = [np.asarray(m, dtype=bool) for m in outputs["masks"]]
        scores = [float(s) for s in outputs["scores"]]
        min_area = int(params["min_mask_region_area"])
        kept = [(m, s) for m, s in zip(masks, scores)
                if int(m.sum()) >= min_area]
        return kept

    def _predict(self, image: np.ndarray, *, points=None, box=None):
        torch = _import_torch()
        from PIL import Image

        kwargs = {}
        if points is not None:
            kwargs["input_points"] = [[[int(x), int(y)] for x, y in points]]
        if box is not None:
            kwargs["input_boxes"] = [[[int(v) for v in box]]]
        inputs = self.processor(Image.fromarray(image), return_tensors="pt",
                                **kwargs).to(self.device)
        with torch.no_grad():
            outputs = self.model(**inputs, multimask_output=True)
        masks = self.processor.image_processor.post_process_masks(
            outputs.pred_masks.cpu(), inputs["original_sizes"].cpu(),
            inputs["reshaped_input_sizes"].cpu())[0][0]
        scores = outputs.iou_scores.cpu().numpy().reshape(-1)
        best = int(np.argmax(scores))
        return np.asarray(masks[best].numpy(), dtype=bool), float(scores[best])

    def predict_points(self, image: np.ndarray, points) -> tuple[np.ndarray, float]:
        return self._predict(image, points=points)

    def predict_box(self, image: np.ndarray, box) -> tuple[np.ndarray, float]:
        return self._predict(image, box=box)


class VitDescriptor:
    """Self-supervised ViT descriptor; emits per-head CLS attention and
    either attention-key projections ("key") or final-layer tokens split
    per head ("token")."""

    def __init__(self, checkpoint: str = DEFAULT_DESCRIPTOR, device: str = "auto",
                 features: str = "key"):
        torch = _import_torch()
        try:
            from transformers import AutoModel
        except ImportError as exc:
            raise ExtractorError("transformers is required for model-backed "
                                 "extraction (pip install segextract[models])") from exc
        if features not in ("key", "token"):
            raise ValueError(f"features must be 'key' or 'token', got {features!r}")
        self.device = resolve_device(device)
        self.features = features
        self.model = _load_pretrained(
            lambda c: AutoModel.from_pretrained(c, attn_implementation="eager"),
            checkpoint, "descriptor").to(self.device).eval()
        cfg = self.model.config
        self.patch_size = int(cfg.patch_size)
        self.n_heads = int(cfg.num_attention_heads)
        self.n_registers = int(getattr(cfg, "num_register_tokens", 0))
        self.head_dim = int(cfg.hidden_size) // self.n_heads
        torch.manual_seed(0)

    def _preprocess(self, image: np.ndarray):
        """Resize to the nearest patch-size multiples and normalize."""
        torch = _import_torch()
        from PIL import Image

        h, w = image.shape[:2]
        rows = max(1, round(h / self.patch_size))
        cols = max(1, round(w / self.patch_size))
        target = (cols * self.patch_size, rows * self.patch_size)
        resized = Image.fromarray(image).resize(target, Image.BILINEAR)
        arr = np.asarray(resized, dtype=np.float32) / 255.0
        arr = (arr - np.array(IMAGENET_MEAN, dtype=np.float32)) \
            / np.array(IMAGENET_STD, dtype=np.float32)
        tensor = torch.from_numpy(arr.transpose(2, 0, 1))[None].to(self.device)
        return tensor, (rows, cols)

    def extract(self, image: np.ndarray):
        torch = _import_torch()
        tensor, grid = self._preprocess(image)
        captured = {}

        layer = self.model.encoder.layer[-1]
        key_module = layer.attention.attention.key

        def hook(_module, _inputs, output):
            captured["key"] = output.detach()

        handle = key_module.register_forward_hook(hook)
        try:
            with torch.no_grad():
                outputs = self.model(tensor, output_attentions=True)
        finally:
            handle.remove()

        skip = 1 + self.n_registers  # CLS + register tokens
        attn = outputs.attentions[-1][0]          # (n_heads, T, T)
        cls_row = attn[:, 0, skip:].cpu().numpy()  # (n_heads, n_patches)

        if self.features == "key":
            tokens = captured["key"][0]           # (T, hidden)
        else:
            tokens = outputs.last_hidden_state[0]
        tokens = tokens[skip:].cpu().numpy()      # (n_patches, hidden)
        n_patches = tokens.shape[0]
        feats = tokens.reshape(n_patches, self.n_heads, self.head_dim)
        feats = np.transpose(feats, (1, 0, 2))    # (n_heads, n_patches, head_dim)

        if grid[0] * grid[1] != n_patches:
            raise ExtractorError(
                f"descriptor emitted {n_patches} patches but the input grid "
                f"is {grid}")
        return cls_row.astype(np.float64), feats.astype(np.float64), grid
