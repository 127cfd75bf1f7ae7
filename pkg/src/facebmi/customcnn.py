"""End-to-end BMI regression CNN trained from scratch.

Three conv(3x3, same) -> batchnorm -> ReLU -> maxpool(2x2) blocks with 32, 64
and 128 filters, then flatten -> dense(200) -> ReLU -> dense(1). Trained with
Adam on the mean absolute error.
"""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .exceptions import FaceBMIError, ShapeError
from .modelio import load_model, save_model

log = logging.getLogger(__name__)


class TrainingError(FaceBMIError):
    pass


@dataclass(frozen=True)
class CustomCnnSpec:
    input_size: tuple[int, int] = (224, 224)
    in_channels: int = 3
    conv_channels: tuple[int, ...] = (32, 64, 128)
    kernel: int = 3
    pool: int = 2
    hidden: int | None = 200
    batchnorm: bool = True

    @property
    def flatten_width(self) -> int:
        h, w = self.input_size
        for _ in self.conv_channels:
            h, w = h // self.pool, w // self.pool
        return h * w * self.conv_channels[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CustomCnnSpec":
        d = dict(d)
        d["input_size"] = tuple(d["input_size"])
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


DEFAULT_SPEC = CustomCnnSpec()


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 150
    batch_size: int = 32
    seed: int = 0
    validation_fraction: float = 0.1
    optimizer: str = "adam"
    loss: str = "mae"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.optimizer != "adam" or self.loss != "mae":
            raise ValueError("only the Adam optimizer with MAE loss is supported")


class CustomCNN(nn.Module):
    def __init__(self, spec: CustomCnnSpec = DEFAULT_SPEC):
        super().__init__()
        self.spec = spec
        layers: list[nn.Module] = []
        c_in = spec.in_channels
        for c_out in spec.conv_channels:
            layers.append(nn.Conv2d(c_in, c_out, spec.kernel, padding=spec.kernel // 2))
            if spec.batchnorm:
                layers.append(nn.BatchNorm2d(c_out))
            layers.append(nn.ReLU())
            layers.append(nn.MaxPool2d(spec.pool))
            c_in = c_out
        self.features = nn.Sequential(*layers)
        head: list[nn.Module] = [nn.Flatten()]
        if spec.hidden:
            head += [nn.Linear(spec.flatten_width, spec.hidden), nn.ReLU(), nn.Linear(spec.hidden, 1)]
        else:
            head.append(nn.Linear(spec.flatten_width, 1))
        self.head = nn.Sequential(*head)

    @property
    def output_layer(self) -> nn.Linear:
        return self.head[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x)).squeeze(-1)


def build_custom_cnn(spec: CustomCnnSpec = DEFAULT_SPEC, seed: int = 0) -> CustomCNN:
    """Seeded fan-in-scaled uniform initialization; the output bias starts at zero."""
    torch.manual_seed(seed)
    model = CustomCNN(spec)
    nn.init.zeros_(model.output_layer.bias)
    return model.eval()


@dataclass(frozen=True)
class LayerInfo:
    name: str
    output_shape: tuple[int, ...]  # H, W, C for spatial layers
    params: int


def layer_table(model: CustomCNN) -> list[LayerInfo]:
    """Per-layer output shapes (channels last) and parameter counts.

    Batchnorm counts include the running mean and variance buffers (4 values
    per channel), the usual bookkeeping of Keras-style summaries.
    """
    spec = model.spec
    rows: list[LayerInfo] = []
    x = torch.zeros(1, spec.in_channels, *spec.input_size)
    counters: dict[str, int] = {}
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for module in list(model.features) + list(model.head):
            x = module(x)
            if isinstance(module, nn.ReLU):
                continue
            kind = {
                nn.Conv2d: "conv",
                nn.BatchNorm2d: "batch_normalization",
                nn.MaxPool2d: "max_pooling",
                nn.Flatten: "flatten",
                nn.Linear: "dense",
            }[type(module)]
            counters[kind] = counters.get(kind, 0) + 1
            params = sum(p.numel() for p in module.parameters())
            if isinstance(module, nn.BatchNorm2d):
                params += module.running_mean.numel() + module.running_var.numel()
            shape = tuple(x.shape[1:]) if x.dim() == 2 else (x.shape[2], x.shape[3], x.shape[1])
            rows.append(LayerInfo(f"{kind}{counters[kind]}", tuple(int(v) for v in shape), int(params)))
    model.train(was_training)
    return rows


def conv_param_count(kh: int, kw: int, c_in: int, c_out: int) -> int:
    return kh * kw * c_in * c_out + c_out


def dense_param_count(d_in: int, d_out: int) -> int:
    return d_in * d_out + d_out


def _to_tensor(images: np.ndarray, spec: CustomCnnSpec) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    h, w = spec.input_size
    if arr.ndim != 4 or arr.shape[1:] != (h, w, spec.in_channels):
        raise ShapeError(f"expected N x {h} x {w} x {spec.in_channels} images, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


@dataclass
class TrainResult:
    model: CustomCNN
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def write_history(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_mae", "val_mae"])
            for row in self.history:
                val = "" if row["val_mae"] is None else repr(row["val_mae"])
                writer.writerow([row["epoch"], repr(row["train_mae"]), val])


@torch.no_grad()
def _eval_mae(model: CustomCNN, x: torch.Tensor, y: torch.Tensor, batch: int) -> float:
    model.eval()
    total = 0.0
    for i in range(0, len(x), batch):
        total += float(torch.sum(torch.abs(model(x[i : i + batch]) - y[i : i + batch])))
    return total / len(x)


def train_custom_cnn(model: CustomCNN, images: np.ndarray, bmi: np.ndarray,
                     config: TrainConfig | None = None) -> TrainResult:
    """Train with Adam on MAE and keep the weights of the best validation epoch.

    The output bias is first set to the mean training BMI, so optimization
    starts from the constant-mean predictor instead of zero.
    """
    config = config or TrainConfig()
    y_all = np.asarray(bmi, dtype=np.float32).ravel()
    if len(y_all) == 0:
        raise TrainingError("training set is empty")
    x_all = _to_tensor(images, model.spec)
    if len(x_all) != len(y_all):
        raise ShapeError(f"{len(x_all)} images but {len(y_all)} targets")
    y_all_t = torch.from_numpy(y_all)

    rng = np.random.default_rng(config.seed)
    n = len(y_all)
    n_val = int(round(n * config.validation_fraction)) if n > 1 else 0
    perm = rng.permutation(n)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr = x_all[tr_idx], y_all_t[tr_idx]
    x_val, y_val = x_all[val_idx], y_all_t[val_idx]

    torch.manual_seed(config.seed)
    with torch.no_grad():
        model.output_layer.bias.fill_(float(y_tr.mean()))
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    loss_fn = nn.L1Loss()

    history = []
    best_score, best_epoch, best_state = np.inf, 0, None
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(len(x_tr))
        total, seen = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            if len(idx) == 1 and len(order) > 1:
                continue  # batchnorm needs more than one sample per step
            opt.zero_grad()
            loss = loss_fn(model(x_tr[idx]), y_tr[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {i}: {loss.item()}")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
        train_mae = total / max(seen, 1)
        val_mae = _eval_mae(model, x_val, y_val, config.batch_size) if n_val else None
        history.append({"epoch": epoch, "train_mae": train_mae, "val_mae": val_mae})
        score = val_mae if val_mae is not None else train_mae
        if score < best_score:
            best_score, best_epoch = score, epoch
            best_state = copy.deepcopy(model.state_dict())
        log.debug("epoch %d train_mae %.4f val_mae %s", epoch, train_mae, val_mae)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, best_epoch)


@torch.no_grad()
def predict_cnn(model: CustomCNN, images: np.ndarray, batch_size: int = 32) -> np.ndarray | float:
    """Inference-mode predictions; a single H x W x 3 image returns a float."""
    single = np.asarray(images).ndim == 3
    x = _to_tensor(images, model.spec)
    model.eval()
    out = torch.cat([model(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]).numpy()
    out = out.astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise ValueError("CNN produced a non-finite prediction")
    return float(out[0]) if single else out


def save_custom_cnn(model: CustomCNN, path: str | Path, history: list[dict] | None = None,
                    extra: dict | None = None) -> str:
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    return save_model(
        path,
        "custom_cnn",
        arrays,
        backbone_id="custom_cnn",
        dim=model.spec.flatten_width,
        hyperparams=model.spec.to_dict(),
        extra={**(extra or {}), "history": history or []},
    )


def load_custom_cnn(path: str | Path) -> CustomCNN:
    header, arrays = load_model(path)
    if header["type"] != "custom_cnn":
        raise ValueError(f"{path} holds a {header['type']!r} model, not custom_cnn")
    return custom_cnn_from_arrays(header, arrays)


def custom_cnn_from_arrays(header: dict, arrays: dict) -> CustomCNN:
    model = CustomCNN(CustomCnnSpec.from_dict(header["hyperparams"]))
    reference = model.state_dict()
    state = {k: torch.from_numpy(arrays[k]).to(reference[k].dtype) for k in reference}
    model.load_state_dict(state)
    return model.eval()


class CustomCNNRegressor(RegressorMixin, BaseEstimator):
    """scikit-learn wrapper: ``X`` is an ``N x H x W x 3`` array of preprocessed faces."""

    def __init__(self, learning_rate=0.001, epochs=150, batch_size=32, validation_fraction=0.1,
                 random_state=0, input_size=(224, 224), conv_channels=(32, 64, 128), hidden=200):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.input_size = input_size
        self.conv_channels = conv_channels
        self.hidden = hidden

    def fit(self, X, y):
        spec = CustomCnnSpec(tuple(self.input_size), 3, tuple(self.conv_channels), hidden=self.hidden)
        model = build_custom_cnn(spec, self.random_state)
        cfg = TrainConfig(self.learning_rate, self.epochs, self.batch_size, self.random_state,
                          self.validation_fraction)
        result = train_custom_cnn(model, X, y, cfg)
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return np.atleast_1d(predict_cnn(self.model_, X))


MINIATURE_SPEC = CustomCnnSpec(input_size=(8, 8), conv_channels=(4,), hidden=None)


def gradient_check(model: nn.Module, x: torch.Tensor, y: torch.Tensor, n_params: int = 100,
                   h: float = 1e-5, seed: int = 0, zero_tol: float = 1e-8) -> np.ndarray:
    """Relative error between autograd and central differences of the MAE loss.

    Runs in float64 and samples ``n_params`` scalar parameters uniformly
    across all parameter tensors. Returns one relative error per sample.
    Parameters whose true gradient vanishes (conv biases ahead of batchnorm,
    weights behind dead units) score 0 when both estimates are below
    ``zero_tol`` in absolute value.
    """
    model = model.double().train()
    x, y = x.double(), y.double()
    loss_fn = nn.L1Loss()
    params = [p for p in model.parameters() if p.requires_grad]
    model.zero_grad()
    loss_fn(model(x), y).backward()
    sizes = np.array([p.numel() for p in params])
    flat = np.random.default_rng(seed).choice(int(sizes.sum()), size=min(n_params, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    errors = []
    with torch.no_grad():
        for f in flat:
            t = int(np.searchsorted(bounds, f, side="right"))
            k = int(f - (bounds[t - 1] if t else 0))
            p = params[t].view(-1)
            analytic = float(params[t].grad.view(-1)[k])
            orig = float(p[k])
            p[k] = orig + h
            up = float(loss_fn(model(x), y))
            p[k] = orig - h
            down = float(loss_fn(model(x), y))
            p[k] = orig
            numeric = (up - down) / (2 * h)
            scale = max(abs(analytic), abs(numeric))
            errors.append(0.0 if scale < zero_tol else abs(analytic - numeric) / scale)
    return np.array(errors)
