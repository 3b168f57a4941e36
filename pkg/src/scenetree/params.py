"""Model parameter container, initialization, and tape binding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class ModelConfig:
    """Shapes and hyper-parameters of the scorer + recursive parser."""

    num_classes: int            # foreground categories K; channel count is K+1
    num_relations: int
    channels: tuple = (16, 32, 64)
    d_trans: int = 64
    pi: float = 1.0
    image_channels: int = 3

    def __post_init__(self):
        if self.num_classes < 1:
            raise ContractError("num_classes must be >= 1")
        if self.num_relations < 2:
            raise ContractError("at least 2 relation categories required")
        if len(self.channels) != 3:
            raise ContractError("scorer uses exactly 3 conv blocks")
        if self.pi <= 0:
            raise ContractError("pi must be positive")


@dataclass
class ModelParams:
    """All learnable weights plus the pooling sharpness, by name.

    Scorer parameters: three 3x3 conv blocks with a (K+1)-channel 1x1
    prediction head each, and the stream-fusion logits.  Parser parameters:
    the five recursive subnetworks (transition, combiner, interpreter,
    categorizer, scorer).
    """

    tensors: dict = field(default_factory=dict)
    pi: float = 1.0

    def bind(self, tape):
        """Register every tensor as a tape leaf; returns name -> Tensor."""
        return {name: tape.leaf(arr) for name, arr in self.tensors.items()}

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.pi)

    @property
    def num_classes(self):
        return self.tensors["scorer.head1.bias"].size - 1

    @property
    def num_relations(self):
        return self.tensors["rsnn.cat.bias"].size

    @property
    def d_trans(self):
        return self.tensors["rsnn.tran.weight"].shape[1]

    @property
    def d_feat(self):
        return self.tensors["rsnn.tran.weight"].shape[0]


def is_weight(name):
    """Weight matrices/kernels get decay and the norm penalty; biases and
    fusion logits do not."""
    return name.endswith(".weight") or name.endswith(".kernel")


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Glorot-uniform conv stack; small-Gaussian recursive subnetworks."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    c1, c2, c3 = cfg.channels
    k1 = cfg.num_classes + 1
    t = {}

    def conv(name, kh, kw, cin, cout):
        bound = np.sqrt(6.0 / (kh * kw * cin + kh * kw * cout))
        t[f"{name}.kernel"] = rng.uniform(-bound, bound, size=(kh, kw, cin, cout))
        t[f"{name}.bias"] = np.zeros(cout)

    def dense(name, n_in, n_out, std=0.01):
        t[f"{name}.weight"] = rng.normal(0.0, std, size=(n_in, n_out))
        t[f"{name}.bias"] = np.zeros(n_out)

    conv("scorer.conv1", 3, 3, cfg.image_channels, c1)
    conv("scorer.conv2", 3, 3, c1, c2)
    conv("scorer.conv3", 3, 3, c2, c3)
    conv("scorer.head1", 1, 1, c1, k1)
    conv("scorer.head2", 1, 1, c2, k1)
    conv("scorer.head3", 1, 1, c3, k1)
    t["scorer.fusion_logits"] = np.zeros(3)

    d = cfg.d_trans
    dense("rsnn.tran", c3, d)
    dense("rsnn.com", 2 * d, d)
    dense("rsnn.int", d + 3, d)
    dense("rsnn.cat", d, cfg.num_relations)
    dense("rsnn.score", d, 1)
    return ModelParams(t, pi=cfg.pi)


def config_from_params(params: ModelParams) -> ModelConfig:
    """Recover the architecture of a loaded checkpoint from tensor shapes."""
    t = params.tensors
    return ModelConfig(
        num_classes=params.num_classes,
        num_relations=params.num_relations,
        channels=(t["scorer.conv1.kernel"].shape[3],
                  t["scorer.conv2.kernel"].shape[3],
                  t["scorer.conv3.kernel"].shape[3]),
        d_trans=params.d_trans,
        pi=params.pi,
        image_channels=t["scorer.conv1.kernel"].shape[2],
    )
