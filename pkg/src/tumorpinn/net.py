"""MLP parameters, Xavier initialization, flattening and checkpoints.

Flat layout is layer-major; inside a layer the weight matrix comes first
(row-major, shape ``(n_out, n_in)``), then the bias.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ModeError, NumericalError

DEFAULT_ARCH = (3, 64, 64, 64, 1)

CONSTANT_V = "constant_v"
SPATIAL_V1V2 = "spatial_v1v2"
V_AND_A = "v_and_a"
PHYS_MODES = {CONSTANT_V: ("v",), SPATIAL_V1V2: ("v1", "v2"), V_AND_A: ("v", "a")}

CHECKPOINT_FORMAT = "tumorpinn-checkpoint"
CHECKPOINT_VERSION = 1


def check_arch(arch) -> tuple[int, ...]:
    arch = tuple(int(w) for w in arch)
    if len(arch) < 2:
        raise ConfigurationError(f"architecture needs at least two widths, got {arch}")
    if any(w <= 0 for w in arch):
        raise ConfigurationError(f"layer widths must be positive, got {arch}")
    if arch[0] != 3 or arch[-1] != 1:
        raise ConfigurationError(f"architecture must map 3 inputs (t, x, y) to 1 output, got {arch}")
    return arch


@dataclass
class NetworkParams:
    """Weights and biases of a tanh MLP with an ``|.|`` output transform."""

    arch: tuple[int, ...]
    layers: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        self.arch = check_arch(self.arch)
        if len(self.layers) != len(self.arch) - 1:
            raise ConfigurationError(
                f"{len(self.layers)} layers given for architecture {self.arch}")
        for i, (W, b) in enumerate(self.layers):
            n_out, n_in = self.arch[i + 1], self.arch[i]
            if W.shape != (n_out, n_in) or b.shape != (n_out,):
                raise ConfigurationError(
                    f"layer {i}: expected W {(n_out, n_in)} and b {(n_out,)}, "
                    f"got {W.shape} and {b.shape}")

    @property
    def n_params(self) -> int:
        return n_params(self.arch)

    @property
    def dtype(self):
        return self.layers[0][0].dtype

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    @classmethod
    def from_flat(cls, arch, flat) -> "NetworkParams":
        arch = check_arch(arch)
        flat = np.asarray(flat)
        if flat.shape != (n_params(arch),):
            raise ConfigurationError(
                f"flat vector has {flat.size} entries, architecture {arch} needs {n_params(arch)}")
        layers, pos = [], 0
        for n_in, n_out in zip(arch[:-1], arch[1:]):
            W = flat[pos:pos + n_out * n_in].reshape(n_out, n_in).copy()
            pos += n_out * n_in
            b = flat[pos:pos + n_out].copy()
            pos += n_out
            layers.append((W, b))
        return cls(arch, layers)

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.arch, [(W.astype(dtype), b.astype(dtype)) for W, b in self.layers])


def n_params(arch) -> int:
    return sum(n_out * n_in + n_out for n_in, n_out in zip(arch[:-1], arch[1:]))


@dataclass
class PhysicalParams:
    """Trainable physical unknowns: ``v``, ``(v1, v2)`` or ``(v, a)``."""

    mode: str
    values: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        if self.mode not in PHYS_MODES:
            raise ModeError(f"unknown physical mode {self.mode!r}; choose from {sorted(PHYS_MODES)}")
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float)).copy()
        if self.values.shape != (len(PHYS_MODES[self.mode]),):
            raise ModeError(
                f"mode {self.mode} takes {len(PHYS_MODES[self.mode])} values, got {self.values.size}")

    @property
    def names(self) -> tuple[str, ...]:
        return PHYS_MODES[self.mode]

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.names, self.values)}


def init_xavier(arch=DEFAULT_ARCH, seed: int = 0, dtype=np.float64) -> NetworkParams:
    """Glorot-uniform weights, zero biases, reproducible from ``seed``."""
    arch = check_arch(arch)
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(arch[:-1], arch[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        W = rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype)
        layers.append((W, np.zeros(n_out, dtype=dtype)))
    return NetworkParams(arch, layers)


def raw_output(net: NetworkParams, points) -> np.ndarray:
    z = np.asarray(points, dtype=net.dtype)
    for W, b in net.layers[:-1]:
        z = np.tanh(z @ W.T + b)
    W, b = net.layers[-1]
    return (z @ W.T + b)[..., 0]


def forward(net: NetworkParams, points) -> np.ndarray | float:
    """Network density ``|u_raw(t, x, y)|`` at one point ``(t, x, y)`` or an ``(n, 3)`` batch."""
    points = np.asarray(points)
    u = np.abs(raw_output(net, np.atleast_2d(points)))
    if not np.all(np.isfinite(u)):
        raise NumericalError("network output is not finite")
    return float(u[0]) if points.ndim == 1 else u


# -- checkpoints -------------------------------------------------------------

def _floats(a) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=np.float64).ravel()]


def checkpoint_dict(net: NetworkParams, phys: PhysicalParams, epoch: int, seed: int | None = None,
                    optimizer: dict | None = None, extra: dict | None = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": list(net.arch),
        "dtype": np.dtype(net.dtype).name,
        "seed": seed,
        "epoch": int(epoch),
        "physical": {"mode": phys.mode, "values": _floats(phys.values)},
        "params": _floats(net.flatten()),
    }
    if optimizer is not None:
        doc["optimizer"] = optimizer
    if extra:
        doc["extra"] = extra
    return doc


def dumps_checkpoint(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def save_checkpoint(path, net, phys, epoch, seed=None, optimizer=None, extra=None) -> Path:
    """Write a JSON checkpoint; floats are stored with round-trip ``repr`` precision."""
    path = Path(path)
    path.write_text(dumps_checkpoint(checkpoint_dict(net, phys, epoch, seed, optimizer, extra)))
    return path


def load_checkpoint(path) -> dict:
    """Read a checkpoint; returns a dict with ``net``, ``phys``, ``epoch``, ``seed``,
    ``optimizer`` and ``extra`` entries."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {doc.get('version')}")
    dtype = np.dtype(doc.get("dtype", "float64"))
    net = NetworkParams.from_flat(doc["arch"], np.array(doc["params"], dtype=np.float64)).astype(dtype)
    phys = PhysicalParams(doc["physical"]["mode"], doc["physical"]["values"])
    return {"net": net, "phys": phys, "epoch": doc["epoch"], "seed": doc.get("seed"),
            "optimizer": doc.get("optimizer"), "extra": doc.get("extra")}


def params_digest(net: NetworkParams) -> str:
    return hashlib.sha256(np.ascontiguousarray(net.flatten(), dtype=np.float64).tobytes()).hexdigest()
