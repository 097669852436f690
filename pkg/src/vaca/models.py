"""Learnable networks: Gamma inference head, graph-conv Gaussian head, decoders, regressor."""

from __future__ import annotations

import functools
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .circuit import GridSpec
from .diffcalc import Tensor, as_tensor, concat, parameter
from .variational import GammaParams, GaussianParams, positive_link

CKPT_MAGIC = b"VACACKPT"


class Module:
    """Minimal parameter container: attributes that are Tensors or Modules are registered in order."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    s = 1.0 / np.sqrt(fan_in)
    return parameter(rng.uniform(-s, s, size=shape))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        if zero:
            self.weight = parameter(np.zeros((n_in, n_out)))
            self.bias = parameter(np.zeros(n_out))
        else:
            self.weight = _uniform(rng, n_in, (n_in, n_out))
            self.bias = _uniform(rng, n_in, (n_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


@functools.lru_cache(maxsize=32)
def _patch_index(H: int, W: int, k: int) -> np.ndarray:
    # rows into the flattened map with one zero row appended at index H*W (padding)
    r = k // 2
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    out = np.empty((H, W, k, k), dtype=np.intp)
    for dy in range(k):
        for dx in range(k):
            rr, cc = rows + dy - r, cols + dx - r
            inside = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
            out[:, :, dy, dx] = np.where(inside, rr * W + cc, H * W)
    out.setflags(write=False)
    return out.reshape(-1)


class Conv2d(Module):
    """Same-size k x k convolution with zero padding on an (H, W, C) map."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, k: int = 3, zero: bool = False):
        self.k, self.n_in, self.n_out = k, n_in, n_out
        fan_in = k * k * n_in
        if zero:
            self.weight = parameter(np.zeros((fan_in, n_out)))
            self.bias = parameter(np.zeros(n_out))
        else:
            self.weight = _uniform(rng, fan_in, (fan_in, n_out))
            self.bias = _uniform(rng, fan_in, (n_out,))

    def __call__(self, x: Tensor) -> Tensor:
        H, W, C = x.shape
        flat = concat([x.reshape(H * W, C), Tensor(np.zeros((1, C)))], axis=0)
        cols = flat.take(_patch_index(H, W, self.k), axis=0).reshape(H * W, self.k * self.k * C)
        return (cols @ self.weight + self.bias).reshape(H, W, self.n_out)


def normalized_adjacency(A: np.ndarray) -> np.ndarray:
    """D^{-1/2} (A + I) D^{-1/2}."""
    A = np.asarray(A, dtype=np.float64) + np.eye(len(A))
    d = 1.0 / np.sqrt(A.sum(axis=1))
    return A * d[:, None] * d[None, :]


def pooling_matrix(cell_bins: np.ndarray, grid: GridSpec) -> np.ndarray:
    """(H*W, C) matrix averaging the cells whose centre falls in each bin."""
    bins = np.asarray(cell_bins, dtype=np.intp)
    P = np.zeros((grid.H * grid.W, len(bins)))
    P[bins, np.arange(len(bins))] = 1.0
    counts = P.sum(axis=1, keepdims=True)
    return np.divide(P, counts, out=np.zeros_like(P), where=counts > 0)


def scatter_latent(Z, cell_bins: np.ndarray, grid: GridSpec) -> Tensor:
    """Mean-pool per-cell latent rows into an (H, W, b) grid; empty bins are zero."""
    Z = as_tensor(Z)
    P = Tensor(pooling_matrix(cell_bins, grid))
    return (P @ Z).reshape(grid.H, grid.W, Z.shape[1])


def _log1p(x: Tensor) -> Tensor:
    return (x + 1.0).log()


@dataclass(frozen=True)
class Arch:
    mode: str = "placement"  # or "logic"
    b: int = 8
    a: int = 1
    geom_hidden: int = 16
    topo_hidden: int = 16
    dec_hidden: int = 16
    reg_hidden: int = 32

    @property
    def window(self) -> int:
        return (2 * self.a + 1) ** 2


class InferGeom(Module):
    """omega_1: (Phi, pooled Z) -> Gamma(alpha, beta) over every neighbourhood window slot."""

    def __init__(self, arch: Arch, rng: np.random.Generator):
        self.a = arch.a
        self.conv1 = Conv2d(3 + arch.b, arch.geom_hidden, rng)
        self.conv2 = Conv2d(arch.geom_hidden, 2 * arch.window, rng, zero=True)

    def __call__(self, geom, z_grid) -> GammaParams:
        geom, z_grid = as_tensor(geom), as_tensor(z_grid)
        H, W, _ = geom.shape
        n = 2 * self.a + 1
        x = concat([_log1p(geom), z_grid], axis=-1)
        out = self.conv2(self.conv1(x).relu())
        K = n * n
        alpha = positive_link(out[:, :, :K]).reshape(H, W, n, n)
        beta = positive_link(out[:, :, K:]).reshape(H, W, n, n)
        return GammaParams(alpha, beta)


class InferTopo(Module):
    """omega_2: two graph-conv layers over the normalized adjacency -> Gaussian(mu, sigma) per cell."""

    def __init__(self, arch: Arch, rng: np.random.Generator):
        self.b = arch.b
        self.lin1 = Linear(arch.b, arch.topo_hidden, rng)
        self.lin2 = Linear(arch.topo_hidden, 2 * arch.b, rng, zero=True)

    def __call__(self, features, adjacency: np.ndarray) -> GaussianParams:
        A_hat = Tensor(normalized_adjacency(adjacency))
        x = _log1p(as_tensor(features))
        h = (A_hat @ self.lin1(x)).relu()
        out = A_hat @ self.lin2(h)
        return GaussianParams(out[:, : self.b], positive_link(out[:, self.b :]))


class ObsModel(Module):
    """eta: MLP decoders for Phi (from the M window and pooled Z) and Psi (from z); adjacency via sigmoid(Z Z^T)."""

    def __init__(self, arch: Arch, rng: np.random.Generator):
        self.geometry = arch.mode == "placement"
        if self.geometry:
            self.geom1 = Linear(arch.window + arch.b, arch.dec_hidden, rng)
            self.geom2 = Linear(arch.dec_hidden, 3, rng)
        self.topo1 = Linear(arch.b, arch.dec_hidden, rng)
        self.topo2 = Linear(arch.dec_hidden, arch.b, rng)

    def decode_geom(self, M: Tensor, z_grid: Tensor) -> Tensor:
        H, W = M.shape[:2]
        x = concat([M.reshape(H * W, -1), z_grid.reshape(H * W, -1)], axis=1)
        return self.geom2(self.geom1(x).relu()).reshape(H, W, 3)

    def decode_topo(self, Z: Tensor) -> Tensor:
        return self.topo2(self.topo1(Z).relu())

    @staticmethod
    def adjacency_logits(Z: Tensor) -> Tensor:
        return Z @ Z.T


class RegModel(Module):
    """theta: three same-size convolutions, softplus output (strictly positive congestion)."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.conv1 = Conv2d(n_in, hidden, rng)
        self.conv2 = Conv2d(hidden, hidden, rng)
        self.conv3 = Conv2d(hidden, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv2(self.conv1(x).relu()).relu()
        out = self.conv3(h).softplus() + 1e-6
        return out.reshape(x.shape[0], x.shape[1])


class VacaModel(Module):
    """All four networks. Logic mode has no Gamma head and no geometry decoder."""

    def __init__(self, arch: Arch = Arch(), seed: int = 0):
        if arch.mode not in ("placement", "logic"):
            raise ValueError(f"unknown mode {arch.mode!r}")
        self.arch = arch
        rng = np.random.default_rng(seed)
        n_in = arch.b if arch.mode == "logic" else 3 + arch.b
        self.theta = RegModel(n_in, arch.reg_hidden, rng)
        self.omega2 = InferTopo(arch, rng)
        self.eta = ObsModel(arch, rng)
        if arch.mode == "placement":
            self.omega1 = InferGeom(arch, rng)

    @property
    def groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        named = list(self.named_parameters())
        return {
            "theta": [(n, p) for n, p in named if n.startswith("theta.")],
            "vi": [(n, p) for n, p in named if not n.startswith("theta.")],
        }

    def infer_gaussian_params(self, topo_features, adjacency) -> GaussianParams:
        return self.omega2(topo_features, adjacency)

    def infer_gamma_params(self, geom, z_grid) -> GammaParams:
        return self.omega1(geom, z_grid)

    def decode(self, M: Tensor, Z: Tensor, cell_bins, grid: GridSpec):
        """Reconstruct (Phi_hat, Psi_hat, adjacency logits) from samples of M and Z."""
        z_grid = scatter_latent(Z, cell_bins, grid)
        phi_hat = self.eta.decode_geom(M, z_grid) if self.eta.geometry else None
        return phi_hat, self.eta.decode_topo(Z), self.eta.adjacency_logits(Z)

    def predict(self, geom, z_grid) -> Tensor:
        return self.theta(concat([_log1p(as_tensor(geom)), as_tensor(z_grid)], axis=-1))

    def predict_latent(self, z_grid) -> Tensor:
        return self.theta(as_tensor(z_grid))

    # -- checkpoint I/O -----------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, p in self.named_parameters():
            if n not in state:
                raise KeyError(f"missing tensor {n!r}")
            if state[n].shape != p.shape:
                raise ValueError(f"shape mismatch for {n!r}: checkpoint {state[n].shape} vs model {p.shape}")
            p.data[...] = state[n]


def write_tensor_file(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    """Magic, u32 header length, JSON header, then (u32 name len, name, u32 ndim, u32 dims, f64 data) records."""
    hdr = json.dumps(header, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<I", len(hdr)), hdr]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        parts += [
            struct.pack("<I", len(nb)),
            nb,
            struct.pack("<I", arr.ndim),
            struct.pack(f"<{arr.ndim}I", *arr.shape),
            arr.tobytes(),
        ]
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_tensor_file(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", buf, 8)
    pos = 12 + hlen
    header = json.loads(buf[12:pos])
    tensors = {}
    while pos < len(buf):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        name = buf[pos + 4 : pos + 4 + nlen].decode()
        pos += 4 + nlen
        (ndim,) = struct.unpack_from("<I", buf, pos)
        shape = struct.unpack_from(f"<{ndim}I", buf, pos + 4)
        pos += 4 + 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    return header, tensors


def arch_header(arch: Arch) -> dict:
    return asdict(arch)
