"""Localizer network: 1D convolutional residual trunk with a 4-layer MLP head.

The network maps one input vector (cluster features or normalized RSS) to
an ``(x, y)`` estimate in meters. Inputs are standardized per position and
targets are learned centered, in units of ``target_unit_m``. Both sets of
statistics are module buffers, so a saved model is self-contained.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import nn

MODEL_MAGIC = b"A2GLMODL"
MODEL_VERSION = 1
BN_MOMENTUM = 0.1  # torch convention: running = 0.9 * running + 0.1 * batch


class ModelConfigError(ValueError):
    pass


class ConfigMismatchError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"epoch {epoch}, batch {batch}: {message}")


class Variant(str, Enum):
    CLUSTERING = "clustering"
    NORMALIZED = "normalized"


class Head(str, Enum):
    GLOBAL_AVERAGE = "global_average"
    FLATTEN = "flatten"


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant = Variant.CLUSTERING
    input_len: int = 60
    stem_filters: int = 32
    block_filters: tuple[int, ...] = (32, 64, 128)
    block_strides: tuple[int, ...] = (1, 2, 2)
    conv_kernel: int = 3
    n_mlp: int = 4
    mlp_dims: tuple[int, ...] = (320, 128, 64, 2)
    pool_stride: int = 2
    head: Head = Head.GLOBAL_AVERAGE
    activation: str = "relu"
    target_scaling: bool = True
    target_unit_m: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "head", Head(self.head))
        object.__setattr__(self, "block_filters", tuple(int(v) for v in self.block_filters))
        object.__setattr__(self, "block_strides", tuple(int(v) for v in self.block_strides))
        object.__setattr__(self, "mlp_dims", tuple(int(v) for v in self.mlp_dims))
        if self.n_mlp != 4 or len(self.mlp_dims) != 4:
            raise ModelConfigError("mlp head: exactly 4 fully connected layers")
        if self.mlp_dims[-1] != 2:
            raise ModelConfigError("mlp head: last width must be 2")
        if self.conv_kernel not in (1, 3):
            raise ModelConfigError("conv_kernel must be 1 or 3")
        if len(self.block_strides) != len(self.block_filters):
            raise ModelConfigError("block_strides and block_filters differ in length")
        if self.input_len < 1 or self.stem_filters < 1 or self.pool_stride < 1:
            raise ModelConfigError("input_len, stem_filters, pool_stride must be positive")
        if self.target_unit_m <= 0:
            raise ModelConfigError("target_unit_m must be positive")
        if self.activation not in ACTIVATIONS:
            raise ModelConfigError(f"activation must be one of {sorted(ACTIVATIONS)}")

    @classmethod
    def clustering(cls, n_clusters: int = 20, **kw) -> "ModelConfig":
        kw.setdefault("head", Head.GLOBAL_AVERAGE)
        return cls(variant=Variant.CLUSTERING, input_len=3 * n_clusters, **kw)

    @classmethod
    def normalized(cls, input_len: int = 10_000, **kw) -> "ModelConfig":
        kw.setdefault("mlp_dims", (165, 128, 64, 2))
        kw.setdefault("head", Head.FLATTEN)
        return cls(variant=Variant.NORMALIZED, input_len=input_len, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["head"] = self.head.value
        for k in ("block_filters", "block_strides", "mlp_dims"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


ACTIVATIONS = {"relu": nn.ReLU, "softplus": nn.Softplus, "tanh": nn.Tanh}


# --- layout walk (shared by the module builder and complexity counting) -----

@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv | bn | linear | pool
    c_in: int
    c_out: int
    kernel: int = 1
    stride: int = 1
    l_in: int = 1
    l_out: int = 1


def _conv_len(length: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (length + 2 * pad - kernel) // stride + 1


def layer_specs(cfg: ModelConfig) -> list[LayerSpec]:
    """Every parameterized (and pooling) layer with its shapes, in build order."""
    k = cfg.conv_kernel
    specs: list[LayerSpec] = []
    L = cfg.input_len
    c = cfg.stem_filters
    lo = _conv_len(L, k, 1)
    specs += [LayerSpec("stem.conv", "conv", 1, c, k, 1, L, lo), LayerSpec("stem.bn", "bn", c, c, l_in=lo, l_out=lo)]
    L = lo
    for i, (f, s) in enumerate(zip(cfg.block_filters, cfg.block_strides)):
        p = f"blocks.{i}"
        l1 = _conv_len(L, k, s)
        specs += [
            LayerSpec(f"{p}.conv1", "conv", c, f, k, s, L, l1),
            LayerSpec(f"{p}.bn1", "bn", f, f, l_in=l1, l_out=l1),
            LayerSpec(f"{p}.conv2", "conv", f, f, k, 1, l1, _conv_len(l1, k, 1)),
            LayerSpec(f"{p}.bn2", "bn", f, f, l_in=l1, l_out=l1),
        ]
        if s != 1 or c != f:
            specs.append(LayerSpec(f"{p}.proj", "conv", c, f, 1, s, L, _conv_len(L, 1, s)))
        L, c = l1, f
        if L >= cfg.pool_stride and cfg.pool_stride > 1:
            lp = L // cfg.pool_stride
            specs.append(LayerSpec(f"{p}.pool", "pool", c, c, cfg.pool_stride, cfg.pool_stride, L, lp))
            L = lp
    width = c if cfg.head is Head.GLOBAL_AVERAGE else c * L
    if width < 1:
        raise ModelConfigError("trunk collapses the input to zero length")
    for j, d in enumerate(cfg.mlp_dims):
        specs.append(LayerSpec(f"mlp.{2 * j}", "linear", width, d))
        width = d
    return specs


@dataclass(frozen=True)
class ComplexityReport:
    parameter_count: int
    flop_count: int


def count_complexity(cfg: ModelConfig) -> ComplexityReport:
    """Analytic parameter and FLOP counts (1 MAC = 2 FLOPs; BN/activations free)."""
    params = 0
    macs = 0
    for s in layer_specs(cfg):
        if s.kind == "conv":
            params += s.kernel * s.c_in * s.c_out + s.c_out
            macs += s.l_out * s.kernel * s.c_in * s.c_out
        elif s.kind == "bn":
            params += 2 * s.c_out
        elif s.kind == "linear":
            params += s.c_in * s.c_out + s.c_out
            macs += s.c_in * s.c_out
    return ComplexityReport(params, 2 * macs)


# --- network -----------------------------------------------------------------

class ResidualBlock(nn.Module):
    def __init__(self, c_in, c_out, stride, kernel, act, pool):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv1d(c_in, c_out, kernel, stride, pad)
        self.bn1 = nn.BatchNorm1d(c_out, momentum=BN_MOMENTUM)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel, 1, pad)
        self.bn2 = nn.BatchNorm1d(c_out, momentum=BN_MOMENTUM)
        self.proj = nn.Conv1d(c_in, c_out, 1, stride) if (stride != 1 or c_in != c_out) else None
        self.act = act()
        self.pool = nn.AvgPool1d(pool) if pool else None

    def forward(self, x):
        skip = x if self.proj is None else self.proj(x)
        y = self.act(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        y = self.act(y + skip)
        return self.pool(y) if self.pool is not None else y


class Stem(nn.Module):
    def __init__(self, c_out, kernel, act):
        super().__init__()
        self.conv = nn.Conv1d(1, c_out, kernel, 1, kernel // 2)
        self.bn = nn.BatchNorm1d(c_out, momentum=BN_MOMENTUM)
        self.act = act()

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


class LocalizerNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        specs = {s.name: s for s in layer_specs(cfg)}
        act = ACTIVATIONS[cfg.activation]
        self.stem = Stem(cfg.stem_filters, cfg.conv_kernel, act)
        blocks = []
        c = cfg.stem_filters
        for i, (f, s) in enumerate(zip(cfg.block_filters, cfg.block_strides)):
            pool = cfg.pool_stride if f"blocks.{i}.pool" in specs else None
            blocks.append(ResidualBlock(c, f, s, cfg.conv_kernel, act, pool))
            c = f
        self.blocks = nn.Sequential(*blocks)
        mlp: list[nn.Module] = []
        width = specs["mlp.0"].c_in
        for j, d in enumerate(cfg.mlp_dims):
            mlp.append(nn.Linear(width, d))
            if j < len(cfg.mlp_dims) - 1:
                mlp.append(act())
            width = d
        self.mlp = nn.Sequential(*mlp)
        self.register_buffer("in_mean", torch.zeros(cfg.input_len))
        self.register_buffer("in_std", torch.ones(cfg.input_len))
        self.register_buffer("target_center", torch.zeros(2))
        self.register_buffer("target_scale", torch.tensor(float(cfg.target_unit_m) if cfg.target_scaling else 1.0))

    def trunk(self, x):
        h = self.blocks(self.stem(x.unsqueeze(1)))
        if self.cfg.head is Head.GLOBAL_AVERAGE:
            return h.mean(dim=-1)
        return h.flatten(1)

    def forward_normalized(self, x):
        """Network output in the internal (standardized) target space."""
        return self.mlp(self.trunk((x - self.in_mean) / self.in_std))

    def forward(self, x):
        return self.forward_normalized(x) * self.target_scale + self.target_center


def build_model(cfg: ModelConfig, seed: int = 0) -> LocalizerNet:
    """Construct a model with seeded He (fan-in) initialization."""
    model = LocalizerNet(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, (nn.Conv1d, nn.Linear)):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu", generator=gen)
                nn.init.zeros_(m.bias)
    return model


def layout(model: nn.Module) -> list[tuple[str, list[int]]]:
    """Stable (name, shape) list of every saved tensor."""
    return [(k, list(v.shape)) for k, v in model.state_dict().items() if not k.endswith("num_batches_tracked")]


def forward(model: LocalizerNet, x) -> np.ndarray:
    """Inference in meters; ``x`` is one vector or a batch.

    Evaluates a float64 copy of the stored float32 weights, so a sample's
    output does not depend on which batch it arrives in.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != model.cfg.input_len:
        raise ValueError(f"input length {arr.shape[1]} != model input_len {model.cfg.input_len}")
    m = copy.deepcopy(model).double().eval()
    with torch.no_grad():
        out = m(torch.from_numpy(arr)).numpy()
    return out[0] if single else out


# --- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    train_fraction: float = 0.9

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate >= 0, batch_size >= 1, epochs >= 1 required")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must be in (0, 1]")


@dataclass
class TrainResult:
    model: LocalizerNet
    history: list = field(default_factory=list)  # (epoch, train_loss_m2, val_loss_m2)

    @property
    def train_loss(self) -> list[float]:
        return [h[1] for h in self.history]


def fit_normalization(model: LocalizerNet, x: np.ndarray, y: np.ndarray, target_center=None) -> None:
    """Set input standardization and target centering from training data."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-6] = 1.0
    center = np.asarray(target_center if target_center is not None else y.mean(axis=0), dtype=np.float32)
    with torch.no_grad():
        model.in_mean.copy_(torch.from_numpy(mean.astype(np.float32)))
        model.in_std.copy_(torch.from_numpy(std.astype(np.float32)))
        model.target_center.copy_(torch.from_numpy(center) if model.cfg.target_scaling else torch.zeros(2))


def _batches(n: int, batch_size: int, gen: torch.Generator):
    perm = torch.randperm(n, generator=gen)
    chunks = list(torch.split(perm, batch_size))
    # a lone trailing sample would give batch norm a single value per channel
    if len(chunks) > 1 and chunks[-1].numel() == 1:
        chunks[-2] = torch.cat([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def train(model: LocalizerNet, x, y, cfg: TrainConfig = TrainConfig(),
          target_center=None, fit_stats: bool = True, log=None) -> TrainResult:
    """Adam on mean squared error; returns a trained copy and the loss curve.

    Losses are reported in square meters.
    """
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)
    if x.ndim != 2 or y.shape != (x.shape[0], 2):
        raise ValueError("x must be (n, input_len) and y (n, 2)")
    if x.shape[0] < 1:
        raise ValueError("empty training set")
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model = copy.deepcopy(model)

    n = x.shape[0]
    perm = torch.randperm(n, generator=gen).numpy()
    n_train = max(1, int(round(cfg.train_fraction * n))) if n > 1 else 1
    tr, va = perm[:n_train], perm[n_train:]
    if fit_stats:
        fit_normalization(model, x[tr], y[tr], target_center)

    xt = torch.from_numpy(x[tr])
    yt = (torch.from_numpy(y[tr]) - model.target_center) / model.target_scale
    xv = torch.from_numpy(x[va])
    yv = torch.from_numpy(y[va])
    scale2 = float(model.target_scale) ** 2
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    result = TrainResult(model)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total = 0.0
        for b, idx in enumerate(_batches(len(tr), cfg.batch_size, gen)):
            opt.zero_grad()
            pred = model.forward_normalized(xt[idx])
            loss = torch.mean((pred - yt[idx]) ** 2)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()}", epoch, b)
            loss.backward()
            opt.step()
            total += loss.item() * idx.numel()
        train_loss = total / len(tr) * scale2
        val_loss = float("nan")
        if len(va):
            model.eval()
            with torch.no_grad():
                val_loss = float(torch.mean((model(xv) - yv) ** 2))
        result.history.append((epoch, train_loss, val_loss))
        if log is not None:
            log(epoch, train_loss, val_loss)
    model.eval()
    return result


def save_loss_curve(history, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for e, t, v in history:
            fh.write(f"{e},{t!r},{v!r}\n")


# --- gradient verification ---------------------------------------------------

def _loss64(model, x, y):
    # same objective as training: localizer nets are scored in normalized target space
    if isinstance(model, LocalizerNet):
        return torch.mean((model.forward_normalized(x) - (y - model.target_center) / model.target_scale) ** 2)
    return torch.mean((model(x) - y) ** 2)


def gradient_check(model: nn.Module, x, y, n_coords: int = 200, step: float = 1e-4,
                   seed: int = 0, eps: float = 1e-6, return_details: bool = False):
    """Max relative error between autograd and central finite differences.

    Runs in float64 on a copy of ``model`` (train mode, so batch-norm uses
    batch statistics) with the training loss. ``n_coords`` parameter
    coordinates are sampled.
    """
    m = copy.deepcopy(model).double()
    m.train()
    xt = torch.as_tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    yt = torch.as_tensor(np.atleast_2d(np.asarray(y, dtype=np.float64)))
    params = [p for p in m.parameters() if p.requires_grad]
    sizes = [p.numel() for p in params]
    total = sum(sizes)

    m.zero_grad()
    _loss64(m, xt, yt).backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).detach().numpy().copy()

    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    numeric = np.empty(coords.size)
    with torch.no_grad():
        for i, flat in enumerate(coords):
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            view = params[k].view(-1)
            j = int(flat - offsets[k])
            orig = view[j].item()
            view[j] = orig + step
            lp = _loss64(m, xt, yt).item()
            view[j] = orig - step
            lm = _loss64(m, xt, yt).item()
            view[j] = orig
            numeric[i] = (lp - lm) / (2 * step)
    a = analytic[coords]
    rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), eps)
    if return_details:
        return float(rel.max()), a, numeric
    return float(rel.max())


# --- persistence --------------------------------------------------------------

def save_model(model: LocalizerNet, path, meta: dict | None = None) -> None:
    """JSON header (config, layout, hash) followed by raw little-endian float32."""
    state = model.state_dict()
    lay = layout(model)
    payload = b"".join(
        state[name].detach().cpu().numpy().astype("<f4").tobytes() for name, _ in lay
    )
    header = {
        "format": "a2gloc-model",
        "version": MODEL_VERSION,
        "config": model.cfg.to_dict(),
        "layout": lay,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "payload_bytes": len(payload),
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def read_model_header(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if not data.startswith(MODEL_MAGIC) or len(data) < len(MODEL_MAGIC) + 8:
        raise ModelFormatError(f"{path}: not a model file")
    (hlen,) = struct.unpack_from("<Q", data, len(MODEL_MAGIC))
    start = len(MODEL_MAGIC) + 8
    if start + hlen > len(data):
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[start:start + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable header ({exc})") from None
    if header.get("format") != "a2gloc-model":
        raise ModelFormatError(f"{path}: unexpected header")
    return header, data[start + hlen:]


def load_model(path, expected: ModelConfig | None = None) -> LocalizerNet:
    header, payload = read_model_header(path)
    if header.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {header.get('version')}")
    cfg = ModelConfig.from_dict(header["config"])
    if expected is not None and cfg != expected:
        diffs = {k: (v, getattr(expected, k)) for k, v in vars(cfg).items() if getattr(expected, k) != v}
        raise ConfigMismatchError(f"{path}: model config differs from expected: {diffs}")
    if len(payload) < header["payload_bytes"]:
        raise ModelFormatError(f"{path}: truncated payload")
    payload = payload[:header["payload_bytes"]]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ModelFormatError(f"{path}: payload checksum mismatch")
    model = LocalizerNet(cfg)
    if [list(x) for x in header["layout"]] != [list(x) for x in layout(model)]:
        raise ConfigMismatchError(f"{path}: tensor layout does not match config")
    state = model.state_dict()
    off = 0
    for name, shape in header["layout"]:
        n = int(math.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(shape)
        state[name] = torch.from_numpy(arr.astype(np.float32))
        off += 4 * n
    model.load_state_dict(state)
    model.eval()
    model.meta = header.get("meta", {})
    return model


def model_meta(model) -> dict:
    return getattr(model, "meta", {})
