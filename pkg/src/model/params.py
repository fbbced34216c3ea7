"""
Parameters Module

Named learnable tensors and running statistics of the network, plus their
He-style initialization. Names read `<group>.<modality>.<layer>...`:

    enc.t1.stem.conv.w          encoder stem
    enc.t1.s2.b1.conv1.w        encoder stage 2, block 1
    proj.t1.fc1.w               projection head
    dec.l3.conv1.w              decoder level 3
    dec.head.w                  final 1x1 convolution
"""

import logging
from typing import Dict, Iterator, List, Tuple

import numpy as np

from config import ModelConfig
from data.modality import MODALITIES, ModalityId
from gradcore import RunningStats, Tensor

logger = logging.getLogger(__name__)

KERNEL = 3


class ModelParams:
    """Learnable tensors (insertion-ordered) and normalization running statistics."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.tensors: Dict[str, Tensor] = {}
        self.running: Dict[str, RunningStats] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def __len__(self) -> int:
        return len(self.tensors)

    def count(self) -> int:
        """Number of learnable scalars."""
        return sum(t.size for t in self.tensors.values())

    def names_for(self, modality: ModalityId) -> List[str]:
        """Encoder and projection-head parameters owned by one modality."""
        prefixes = (f"enc.{modality.value}.", f"proj.{modality.value}.")
        return [name for name in self.tensors if name.startswith(prefixes)]

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}


class _Initializer:
    """Adds parameters to a ModelParams from one random stream."""

    def __init__(self, params: ModelParams, rng: np.random.Generator):
        self.params = params
        self.rng = rng

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params.tensors[name] = Tensor(data.astype(np.float32), requires_grad=True, dtype=np.float32)

    def conv(self, name: str, cin: int, cout: int, kernel: int = KERNEL) -> None:
        std = np.sqrt(2.0 / (cin * kernel * kernel))
        self._add(f"{name}.w", self.rng.normal(0.0, std, size=(cout, cin, kernel, kernel)))
        self._add(f"{name}.b", np.zeros(cout))

    def linear(self, name: str, din: int, dout: int) -> None:
        std = np.sqrt(2.0 / din)
        self._add(f"{name}.w", self.rng.normal(0.0, std, size=(dout, din)))
        self._add(f"{name}.b", np.zeros(dout))

    def norm(self, name: str, channels: int) -> None:
        self._add(f"{name}.gamma", np.ones(channels))
        self._add(f"{name}.beta", np.zeros(channels))
        self.params.running[name] = RunningStats(channels)


def _build_encoder(init: _Initializer, cfg: ModelConfig, modality: ModalityId) -> None:
    prefix = f"enc.{modality.value}"
    init.conv(f"{prefix}.stem.conv", 1, cfg.width(1))
    init.norm(f"{prefix}.stem.bn", cfg.width(1))
    cin = cfg.width(1)
    for stage in range(1, cfg.stages + 1):
        cout = cfg.width(stage)
        for block in range(1, cfg.blocks_per_stage + 1):
            name = f"{prefix}.s{stage}.b{block}"
            init.conv(f"{name}.conv1", cin, cout)
            init.norm(f"{name}.bn1", cout)
            init.conv(f"{name}.conv2", cout, cout)
            init.norm(f"{name}.bn2", cout)
            if cin != cout:
                init.conv(f"{name}.down", cin, cout, kernel=1)
                init.norm(f"{name}.down_bn", cout)
            cin = cout


def _build_projection(init: _Initializer, cfg: ModelConfig, modality: ModalityId) -> None:
    prefix = f"proj.{modality.value}"
    init.linear(f"{prefix}.fc1", cfg.width(cfg.stages), cfg.proj_dim)
    init.norm(f"{prefix}.bn1", cfg.proj_dim)
    init.linear(f"{prefix}.fc2", cfg.proj_dim, cfg.proj_dim)
    init.norm(f"{prefix}.bn2", cfg.proj_dim)


def _build_decoder(init: _Initializer, cfg: ModelConfig) -> None:
    for level in range(cfg.stages - 1, 0, -1):
        name = f"dec.l{level}"
        init.conv(f"{name}.conv1", cfg.width(level + 1) + cfg.width(level), cfg.width(level))
        init.norm(f"{name}.bn1", cfg.width(level))
        init.conv(f"{name}.conv2", cfg.width(level), cfg.width(level))
        init.norm(f"{name}.bn2", cfg.width(level))
    init.conv("dec.head", cfg.width(1), cfg.num_classes, kernel=1)


def build_model(cfg: ModelConfig, init_seed: int) -> ModelParams:
    """Initialize every parameter of the network.

    Each encoder, each projection head and the decoder draw from their own
    substream of `init_seed`, so the four encoders start from different
    weights and adding layers to one never shifts another.

    Raises:
        ConfigurationError: Invalid cfg
    """
    cfg.validate()
    streams = np.random.SeedSequence(init_seed).spawn(2 * len(MODALITIES) + 1)
    params = ModelParams(cfg)
    for index, modality in enumerate(MODALITIES):
        _build_encoder(_Initializer(params, np.random.default_rng(streams[index])), cfg, modality)
    for index, modality in enumerate(MODALITIES):
        _build_projection(_Initializer(params, np.random.default_rng(streams[len(MODALITIES) + index])),
                          cfg, modality)
    _build_decoder(_Initializer(params, np.random.default_rng(streams[-1])), cfg)
    logger.debug("Built model with %d tensors, %d scalars", len(params), params.count())
    return params
