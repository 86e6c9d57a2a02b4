"""Function approximators and optimizer used by the actor, critic, adversary,
and Q-network: small tanh MLPs in double precision on CPU.

Initialization is driven by an explicit numpy generator so that runs are
reproducible byte-for-byte under a fixed seed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

torch.set_default_dtype(torch.float64)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0

_LOG_2PI = math.log(2.0 * math.pi)


class Mlp(torch.nn.Module):
    """Fully connected network, tanh hidden activations, linear output."""

    def __init__(self, widths: list[int], rng: np.random.Generator | None = None,
                 out_scale: float = 1.0):
        super().__init__()
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError(f"bad layer widths {widths}")
        self.widths = list(widths)
        layers = []
        for k in range(len(widths) - 1):
            layers.append(torch.nn.Linear(widths[k], widths[k + 1]))
        self.layers = torch.nn.ModuleList(layers)
        if rng is not None:
            self._init_params(rng, out_scale)

    def _init_params(self, rng: np.random.Generator, out_scale: float) -> None:
        # Orthogonal init, sqrt(2) gain on hidden layers; the output layer is
        # scaled down (helps keep the initial policy near its prior mean).
        for k, layer in enumerate(self.layers):
            gain = math.sqrt(2.0) if k < len(self.layers) - 1 else out_scale
            a = rng.standard_normal(layer.weight.shape)
            q, r = np.linalg.qr(a.T if a.shape[0] < a.shape[1] else a)
            q = q * np.sign(np.diag(r))
            if a.shape[0] < a.shape[1]:
                q = q.T
            with torch.no_grad():
                layer.weight.copy_(torch.from_numpy(gain * q[: layer.weight.shape[0], : layer.weight.shape[1]]))
                layer.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.widths[0]:
            raise ValueError(f"input dim {x.shape[-1]} != {self.widths[0]}")
        for layer in self.layers[:-1]:
            x = torch.tanh(layer(x))
        x = self.layers[-1](x)
        if not torch.isfinite(x).all():
            raise FloatingPointError("non-finite output in MLP forward")
        return x


def forward(net: Mlp, x: np.ndarray | torch.Tensor) -> np.ndarray:
    """Convenience single-input forward returning numpy."""
    t = torch.as_tensor(np.asarray(x, dtype=float))
    with torch.no_grad():
        return net(t).numpy()


def grad(loss_fn, params: list[torch.Tensor]) -> list[torch.Tensor]:
    """Reverse-mode gradient of a scalar loss w.r.t. the given parameters."""
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    return list(torch.autograd.grad(loss, params))


class GaussianHead(torch.nn.Module):
    """Diagonal Gaussian over raw actions with state-independent log-std."""

    def __init__(self, dim: int, init_std: float = 0.5):
        super().__init__()
        self.dim = dim
        self.log_std = torch.nn.Parameter(torch.full((dim,), math.log(init_std)))

    def std(self) -> torch.Tensor:
        return torch.exp(torch.clamp(self.log_std, LOG_STD_MIN, LOG_STD_MAX))

    def sample(self, mean: torch.Tensor, generator: torch.Generator):
        """Sample raw actions; returns (sample, log_prob, entropy)."""
        std = self.std()
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        action = mean + std * noise
        return action, self.log_prob(mean, action), self.entropy()

    def log_prob(self, mean: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        std = self.std()
        z = (action - mean) / std
        per_dim = -0.5 * z * z - torch.log(std) - 0.5 * _LOG_2PI
        return per_dim.sum(dim=-1)

    def entropy(self) -> torch.Tensor:
        return (0.5 * (1.0 + _LOG_2PI) + torch.log(self.std())).sum()


@dataclass
class OptimState:
    """Adam accumulators for a fixed parameter list."""

    params: list[torch.Tensor]
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [torch.zeros_like(p) for p in self.params]
            self.v = [torch.zeros_like(p) for p in self.params]


def optimize_step(params: list[torch.Tensor], grads: list[torch.Tensor],
                  opt: OptimState) -> list[torch.Tensor]:
    """One Adam update in place; returns the (mutated) parameter list."""
    if len(params) != len(grads) or len(params) != len(opt.m):
        raise ValueError("parameter/gradient/accumulator count mismatch")
    opt.step += 1
    b1c = 1.0 - opt.beta1 ** opt.step
    b2c = 1.0 - opt.beta2 ** opt.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, opt.m, opt.v):
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
            m.mul_(opt.beta1).add_(g, alpha=1.0 - opt.beta1)
            v.mul_(opt.beta2).addcmul_(g, g, value=1.0 - opt.beta2)
            p.addcdiv_(m / b1c, (v / b2c).sqrt().add_(opt.eps), value=-opt.lr)
    return params


# -- checkpoints -----------------------------------------------------------

_MAGIC = b"HVSTCKPT"
_VERSION = 1


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Named float64 arrays, little-endian, with shape headers.

    Scalars are stored as length-1 vectors.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HI", _VERSION, len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<HI", fh.read(6))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(
                fh.read(8 * size), dtype="<f8"
            ).reshape(shape).copy()
        return arrays


def mlp_to_arrays(net: Mlp, prefix: str) -> dict[str, np.ndarray]:
    out = {f"{prefix}.widths": np.array(net.widths, dtype=float)}
    for k, layer in enumerate(net.layers):
        out[f"{prefix}.w{k}"] = layer.weight.detach().numpy()
        out[f"{prefix}.b{k}"] = layer.bias.detach().numpy()
    return out


def mlp_from_arrays(arrays: dict[str, np.ndarray], prefix: str) -> Mlp:
    widths = [int(w) for w in arrays[f"{prefix}.widths"]]
    net = Mlp(widths)
    with torch.no_grad():
        for k, layer in enumerate(net.layers):
            layer.weight.copy_(torch.from_numpy(arrays[f"{prefix}.w{k}"]))
            layer.bias.copy_(torch.from_numpy(arrays[f"{prefix}.b{k}"]))
    return net
