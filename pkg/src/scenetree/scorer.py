"""Multi-stream convolutional scorer.

Three conv blocks (2x downsampling between them) each feed a (K+1)-channel
1x1 prediction head; the coarse heads are bilinearly upsampled back to the
input size, so E=3 score streams cover three scales.  Per-pixel stream
probabilities are fused by a softmax-parametrized convex combination, which
keeps every fusion weight positive and summing to one.  Region features are
pooled from the final block's feature map with log-sum-exp, a smooth stand-in
for max pooling whose sharpness is set by ``pi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tape import Tape, Tensor, check_finite


@dataclass
class ScoreMaps:
    """Per-stream raw scores, per-stream probabilities, fused probabilities.

    All volumes are (K+1, H, W); channel 0 is background.  Tensors stay
    attached to the tape that produced them.
    """

    streams: list          # raw scores s per stream
    stream_probs: list     # per-pixel softmax of each stream
    fused: Tensor          # convex combination of stream_probs

    @property
    def num_streams(self):
        return len(self.streams)

    @property
    def num_classes(self):
        return self.fused.shape[0] - 1

    @property
    def spatial(self):
        return self.fused.shape[1:]


@dataclass
class EntityFeatures:
    """Pooled feature vector, binary mask, and pixel count per category."""

    features: dict = field(default_factory=dict)   # category id -> Tensor (d,)
    masks: dict = field(default_factory=dict)      # category id -> bool (H,W)
    counts: dict = field(default_factory=dict)     # category id -> int

    @property
    def categories(self):
        return sorted(self.features)

    def __len__(self):
        return len(self.features)


def fuse(tape, stream_probs, fusion_logits):
    """Fused probabilities sum_e alpha_e * sigma_e with alpha = softmax(logits)."""
    if len(stream_probs) < 1:
        raise ContractError("fuse: at least one stream required")
    if fusion_logits.data.size != len(stream_probs):
        raise ContractError(
            f"fuse: {fusion_logits.data.size} logits for {len(stream_probs)} streams")
    alpha = tape.softmax(fusion_logits, axis=0)
    fused = None
    for e, probs in enumerate(stream_probs):
        term = tape.scale(probs, tape.index(alpha, e))
        fused = term if fused is None else tape.add(fused, term)
    return fused


def forward(tape, nodes, image):
    """Run the scorer over one image.

    ``nodes`` is the dict from ModelParams.bind.  ``image`` is (H, W, 3)
    with values in [0, 1].  Returns (ScoreMaps, pixel feature Tensor) where
    the feature volume is the final block's map upsampled to (H, W).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ContractError(f"image must be HxWxC, got shape {image.shape}")
    h, w, _ = image.shape
    if h < 4 or w < 4:
        raise ContractError(f"image too small for the 3-block scorer: {h}x{w}")

    x = tape.leaf(image)
    a1 = tape.relu(tape.conv2d(x, nodes["scorer.conv1.kernel"],
                               nodes["scorer.conv1.bias"], stride=1, padding=1))
    check_finite(a1, "conv block 1")
    a2 = tape.relu(tape.conv2d(a1, nodes["scorer.conv2.kernel"],
                               nodes["scorer.conv2.bias"], stride=2, padding=1))
    check_finite(a2, "conv block 2")
    a3 = tape.relu(tape.conv2d(a2, nodes["scorer.conv3.kernel"],
                               nodes["scorer.conv3.bias"], stride=2, padding=1))
    check_finite(a3, "conv block 3")

    heads = []
    for e, act in enumerate((a1, a2, a3), start=1):
        s = tape.conv2d(act, nodes[f"scorer.head{e}.kernel"],
                        nodes[f"scorer.head{e}.bias"])
        if s.shape[:2] != (h, w):
            s = tape.upsample_bilinear(s, (h, w))
        check_finite(s, f"prediction head {e}")
        heads.append(tape.transpose(s, (2, 0, 1)))

    feats = tape.upsample_bilinear(a3, (h, w))
    stream_probs = [tape.softmax(s, axis=0) for s in heads]
    fused = fuse(tape, stream_probs, nodes["scorer.fusion_logits"])
    return ScoreMaps(heads, stream_probs, fused), feats


def score_image(params, image):
    """Convenience inference pass; returns (ScoreMaps, features) off-tape use."""
    tape = Tape()
    return forward(tape, params.bind(tape), image)


def predict_labels(score_maps):
    """Per-pixel argmax over fused class probabilities; ties pick the
    smallest category id."""
    fused = score_maps.fused.data if isinstance(score_maps.fused, Tensor) \
        else np.asarray(score_maps.fused)
    return np.argmax(fused, axis=0).astype(np.int64)


def pool_entity_features(tape, feats, label_map, pi):
    """Log-sum-exp pool the feature volume per category present in label_map.

    Categories with zero pixels are simply absent from the result.
    """
    if pi <= 0:
        raise ContractError(f"pi must be positive, got {pi}")
    label_map = np.asarray(label_map)
    if label_map.shape != feats.shape[:2]:
        raise ContractError(
            f"label map {label_map.shape} does not match features {feats.shape[:2]}")
    out = EntityFeatures()
    for k in np.unique(label_map):
        k = int(k)
        mask = label_map == k
        out.features[k] = tape.masked_lse(feats, mask, pi)
        out.masks[k] = mask
        out.counts[k] = int(mask.sum())
    return out
