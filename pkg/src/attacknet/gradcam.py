"""Grad-CAM attention maps over the last phase-2 convolution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import encode_ppm_bytes, resize_array, to_uint8
from .model import Model
from .tensor import ShapeError

TARGETS = {"bonafide": 0, "genuine": 0, "attack": 1}


@dataclass
class GradCamMap:
    raw: np.ndarray  # [h,w] at feature resolution, in [0,1]
    upsampled: np.ndarray  # [H,W] at input resolution, in [0,1]
    target_class: int
    unnormalized: np.ndarray  # ReLU(sum_k w_k A_k) before min-max scaling


def weighted_activation_map(activations: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """ReLU(sum_k mean(grads_k) * A_k) for activations/grads shaped [K,h,w]."""
    if activations.shape != grads.shape or activations.ndim != 3:
        raise ShapeError(f"activations {activations.shape} vs gradients {grads.shape}")
    weights = grads.mean(axis=(1, 2))
    return np.maximum(np.tensordot(weights, activations, axes=1), 0.0)


def normalize_map(cam: np.ndarray) -> np.ndarray:
    """Min-max scale to [0,1]; an identically zero map stays zero."""
    hi = cam.max()
    if hi <= 0:
        return np.zeros_like(cam)
    lo = cam.min()
    if hi == lo:
        return np.ones_like(cam)
    return (cam - lo) / (hi - lo)


def cam_from_activations(activations: np.ndarray, grads: np.ndarray, out_hw: tuple[int, int], target: int) -> GradCamMap:
    cam = weighted_activation_map(activations, grads)
    raw = normalize_map(cam)
    up = np.clip(resize_array(raw[None].astype(np.float64), *out_hw)[0], 0.0, 1.0)
    return GradCamMap(raw, up, target, cam)


def _target_index(target) -> int:
    if isinstance(target, str):
        try:
            return TARGETS[target.lower()]
        except KeyError:
            raise ValueError(f"unknown target class {target!r}; use bonafide or attack") from None
    if target not in (0, 1):
        raise ValueError(f"target class must be 0 or 1, got {target!r}")
    return int(target)


def grad_cam(m: Model, x: np.ndarray, target) -> GradCamMap:
    """Grad-CAM of the pre-softmax ``target`` logit for one image ``x`` [3,H,W]."""
    cls = _target_index(target)
    cfg = m.config
    if x.shape != (cfg.input_channels, cfg.input_h, cfg.input_w):
        raise ShapeError(f"image shape {x.shape} does not match model input")
    _, cache = m.forward(x[None].astype(np.float32), "infer")
    dlogits = np.zeros_like(cache["logits"])
    dlogits[0, cls] = 1.0
    _, dtap = m.backward(cache, dlogits, want_tap=True)
    acts = cache["tap"][0].astype(np.float64)
    return cam_from_activations(acts, dtap[0].astype(np.float64), (cfg.input_h, cfg.input_w), cls)


def color_ramp(t: np.ndarray) -> np.ndarray:
    """Blue -> cyan -> yellow -> red ramp (jet-style) for t in [0,1]; returns [3,...].

    t=0 maps to (0, 0, 0.5), t=1 to (0.5, 0, 0).
    """
    t = np.clip(t, 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4 * t - 3), 0, 1)
    g = np.clip(1.5 - np.abs(4 * t - 2), 0, 1)
    b = np.clip(1.5 - np.abs(4 * t - 1), 0, 1)
    return np.stack([r, g, b])


def render_heatmap(cam: GradCamMap | np.ndarray, base: np.ndarray, alpha: float = 0.4) -> np.ndarray:
    """Alpha-blend the colour-mapped attention over ``base`` [3,H,W]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    intensity = cam.upsampled if isinstance(cam, GradCamMap) else np.asarray(cam)
    if intensity.shape != base.shape[1:]:
        intensity = resize_array(intensity[None], *base.shape[1:])[0]
    out = (1.0 - alpha) * base + alpha * color_ramp(intensity)
    return np.clip(out, 0.0, 1.0)


def composite_ppm(base: np.ndarray, overlay: np.ndarray) -> bytes:
    """Side-by-side (input | overlay) P6 image."""
    return encode_ppm_bytes(np.concatenate([to_uint8(base), to_uint8(overlay)], axis=1))
