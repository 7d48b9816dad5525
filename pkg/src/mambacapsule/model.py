"""Full network: encoder, capsule decoder, reconstruction head."""
from __future__ import annotations

import numpy as np

from .capsule import CapsuleDecoder, CapsuleOutput
from .config import ModelConfig
from .errors import DimensionError
from .module import Module, param
from .ssm import Encoder
from .tensor import Tensor, matmul, no_grad, relu, sigmoid


class Reconstructor(Module):
    """Three dense layers from the masked, flattened class capsules to a beat window."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        sizes = [cfg.n_classes * cfg.class_dim, cfg.recon_hidden1, cfg.recon_hidden2, cfg.recon_len]
        self.weights = [param(rng.normal(0.0, np.sqrt(2.0 / a), (a, b))) for a, b in zip(sizes, sizes[1:])]
        self.biases = [param(np.zeros(b)) for b in sizes[1:]]
        self.n_classes = cfg.n_classes
        self.out_sigmoid = cfg.recon_sigmoid

    def __call__(self, capsules: Tensor, choose) -> Tensor:
        b, k, dh = capsules.shape
        choose = np.asarray(choose, dtype=np.int64).reshape(-1)
        if choose.shape[0] != b:
            raise DimensionError(f"need one class index per example, got {choose.shape[0]} for batch {b}")
        if np.any((choose < 0) | (choose >= k)):
            raise IndexError(f"class index out of range [0, {k}): {choose.tolist()}")
        mask = np.zeros((b, k, 1))
        mask[np.arange(b), choose, 0] = 1.0
        return self.decode((capsules * mask).reshape(b, k * dh))

    def decode(self, flat: Tensor) -> Tensor:
        h = flat
        last = len(self.weights) - 1
        for i, (w, bias) in enumerate(zip(self.weights, self.biases)):
            h = matmul(h, w) + bias
            if i < last:
                h = relu(h)
        return sigmoid(h) if self.out_sigmoid else h


class MambaCapsule(Module):
    def __init__(self, cfg: ModelConfig, seed: int | np.random.Generator = 0):
        cfg.validate()
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.decoder = CapsuleDecoder(cfg, rng)
        self.reconstructor = Reconstructor(cfg, rng)

    def __call__(self, x, training: bool = False, rng: np.random.Generator | None = None) -> CapsuleOutput:
        x = x if isinstance(x, Tensor) else Tensor(x)
        return self.decoder(self.encoder(x, training, rng))

    def reconstruct(self, out: CapsuleOutput, choose) -> Tensor:
        return self.reconstructor(out.capsules, choose)

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        preds = []
        with no_grad():
            for i in range(0, len(x), batch_size):
                preds.append(self(x[i:i + batch_size]).predictions())
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def reconstruct(out: CapsuleOutput, choose, recon: Reconstructor) -> Tensor:
    return recon(out.capsules, choose)
