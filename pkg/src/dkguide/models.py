"""Small differentiable classifiers over a flat parameter vector.

Four kinds are supported: ``LR`` (multinomial logistic regression), ``MoMLP``
(multi-output MLP), ``CNN1D`` (1-D convolutions over the factor sequence in
column order, followed by a dense output layer) and ``WideDeep`` (linear wide
part plus MLP deep tower, summed before the softmax).

Parameters live in one float64 vector ``theta`` and a layout map from layer
name to ``(offset, shape)``, so optimizers and finite-difference checks never
need to know the architecture.
"""

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import CorruptArtifact, DimensionMismatch, InvalidSpec, NonFiniteLoss, SchemaVersionMismatch

KINDS = ("LR", "MoMLP", "CNN1D", "WideDeep")
CHECKPOINT_VERSION = 1


@dataclass
class ClassifierSpec:
    kind: str
    input_dim: int
    num_classes: int
    hidden: tuple = (64, 32)
    channels: int = 16
    kernel: int = 3
    layers: int = 3
    seed: int = 101

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim < 1 or self.num_classes < 2:
            raise InvalidSpec("input_dim must be >= 1 and num_classes >= 2")
        if any(h < 1 for h in self.hidden):
            raise InvalidSpec("hidden widths must be positive")
        if self.kind == "CNN1D":
            if self.channels < 1 or self.kernel < 1 or self.layers < 2:
                raise InvalidSpec("CNN1D needs channels >= 1, kernel >= 1, layers >= 2")
            if self.kernel > self.input_dim:
                raise InvalidSpec(f"kernel width {self.kernel} exceeds input_dim {self.input_dim}")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class ModelState:
    spec: ClassifierSpec
    theta: np.ndarray
    layout: dict
    log: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.theta.size

    def param(self, name, theta=None):
        off, shape = self.layout[name]
        src = self.theta if theta is None else theta
        return src[off:off + int(np.prod(shape))].reshape(shape)

    def copy(self):
        return ModelState(self.spec, self.theta.copy(), dict(self.layout), dict(self.log))

    def with_theta(self, theta):
        return ModelState(self.spec, theta, self.layout, self.log)


def _layer_shapes(spec):
    j, c = spec.input_dim, spec.num_classes
    shapes = []

    def mlp(prefix, widths):
        prev = j
        for i, h in enumerate(widths):
            shapes.extend([(f"{prefix}{i}.w", (prev, h)), (f"{prefix}{i}.b", (h,))])
            prev = h
        shapes.extend([(f"{prefix}out.w", (prev, c)), (f"{prefix}out.b", (c,))])

    if spec.kind == "LR":
        shapes += [("w", (j, c)), ("b", (c,))]
    elif spec.kind == "MoMLP":
        mlp("h", spec.hidden)
    elif spec.kind == "CNN1D":
        c_in = 1
        for i in range(spec.layers - 1):
            shapes += [(f"conv{i}.w", (spec.channels, c_in, spec.kernel)),
                       (f"conv{i}.b", (spec.channels,))]
            c_in = spec.channels
        shapes += [("out.w", (spec.channels * j, c)), ("out.b", (c,))]
    else:
        shapes += [("wide.w", (j, c)), ("wide.b", (c,))]
        mlp("deep.h", spec.hidden)
    return shapes


def _fans(name, shape):
    if len(shape) == 3:  # conv (c_out, c_in, k)
        return shape[1] * shape[2], shape[0] * shape[2]
    return shape[0], shape[1]


def build_model(spec):
    layout, offset = {}, 0
    shapes = _layer_shapes(spec)
    for name, shape in shapes:
        layout[name] = (offset, tuple(shape))
        offset += int(np.prod(shape))
    theta = np.zeros(offset)
    rng = np.random.default_rng(spec.seed)
    for name, shape in shapes:
        if name.endswith(".b") or name == "b":
            continue
        fan_in, fan_out = _fans(name, shape)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        off, _ = layout[name]
        theta[off:off + int(np.prod(shape))] = rng.uniform(-limit, limit, int(np.prod(shape)))
    return ModelState(spec, theta, layout)


def parameter_count(spec):
    return sum(int(np.prod(s)) for _, s in _layer_shapes(spec))


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _mlp_forward(model, prefix, x, n_hidden, cache):
    h = x
    for i in range(n_hidden):
        z = h @ model.param(f"{prefix}{i}.w") + model.param(f"{prefix}{i}.b")
        cache.append(h)
        h = np.maximum(z, 0.0)
    cache.append(h)
    return h @ model.param(f"{prefix}out.w") + model.param(f"{prefix}out.b")


def _mlp_backward(model, prefix, n_hidden, cache, dout, grad):
    h = cache[n_hidden]
    _put(model, grad, f"{prefix}out.w", h.T @ dout)
    _put(model, grad, f"{prefix}out.b", dout.sum(axis=0))
    dh = dout @ model.param(f"{prefix}out.w").T
    for i in range(n_hidden - 1, -1, -1):
        dz = dh * (cache[i + 1] > 0)
        h_in = cache[i]
        _put(model, grad, f"{prefix}{i}.w", h_in.T @ dz)
        _put(model, grad, f"{prefix}{i}.b", dz.sum(axis=0))
        if i > 0:
            dh = dz @ model.param(f"{prefix}{i}.w").T
    return grad


def _put(model, grad, name, value):
    off, shape = model.layout[name]
    grad[off:off + value.size] = value.reshape(-1)


def _forward(model, x):
    spec = model.spec
    kind = spec.kind
    cache = {"x": x}
    if kind == "LR":
        logits = x @ model.param("w") + model.param("b")
    elif kind == "MoMLP":
        cache["mlp"] = []
        logits = _mlp_forward(model, "h", x, len(spec.hidden), cache["mlp"])
    elif kind == "WideDeep":
        cache["mlp"] = []
        logits = (x @ model.param("wide.w") + model.param("wide.b")
                  + _mlp_forward(model, "deep.h", x, len(spec.hidden), cache["mlp"]))
    else:
        pad = (spec.kernel - 1) // 2
        h = x[:, None, :]
        acts = []
        for i in range(spec.layers - 1):
            acts.append(h)
            z = _kernels.active.conv1d_forward(h, model.param(f"conv{i}.w"),
                                               model.param(f"conv{i}.b"), pad)
            h = np.maximum(z, 0.0)
        acts.append(h)
        cache["acts"] = acts
        logits = h.reshape(h.shape[0], -1) @ model.param("out.w") + model.param("out.b")
    return logits, cache


def _backward(model, cache, dlogits):
    spec = model.spec
    grad = np.zeros_like(model.theta)
    x = cache["x"]
    if spec.kind == "LR":
        _put(model, grad, "w", x.T @ dlogits)
        _put(model, grad, "b", dlogits.sum(axis=0))
    elif spec.kind == "MoMLP":
        _mlp_backward(model, "h", len(spec.hidden), cache["mlp"], dlogits, grad)
    elif spec.kind == "WideDeep":
        _put(model, grad, "wide.w", x.T @ dlogits)
        _put(model, grad, "wide.b", dlogits.sum(axis=0))
        _mlp_backward(model, "deep.h", len(spec.hidden), cache["mlp"], dlogits, grad)
    else:
        pad = (spec.kernel - 1) // 2
        acts = cache["acts"]
        top = acts[-1]
        n = top.shape[0]
        _put(model, grad, "out.w", top.reshape(n, -1).T @ dlogits)
        _put(model, grad, "out.b", dlogits.sum(axis=0))
        dh = (dlogits @ model.param("out.w").T).reshape(top.shape)
        for i in range(spec.layers - 2, -1, -1):
            dz = dh * (acts[i + 1] > 0)
            dx, dw, db = _kernels.active.conv1d_backward(acts[i], model.param(f"conv{i}.w"), dz, pad)
            _put(model, grad, f"conv{i}.w", dw)
            _put(model, grad, f"conv{i}.b", db)
            dh = dx
    return grad


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.spec.input_dim:
        raise DimensionMismatch(
            f"expected inputs with {model.spec.input_dim} factors, got shape {np.shape(x)}")
    return x, single


def forward_logits(model, x):
    """Logits for one J-vector (returns C-vector) or an N x J batch (returns N x C)."""
    xb, single = _as_batch(model, x)
    logits, _ = _forward(model, xb)
    return logits[0] if single else logits


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def predict_proba(model, x):
    return softmax(forward_logits(model, x))


def predict(model, x):
    """0-based class predictions."""
    return np.argmax(forward_logits(model, x), axis=-1)


def forward_with_cache(model, x):
    return _forward(model, x)


def backward(model, cache, dlogits):
    return _backward(model, cache, dlogits)


def loss_and_grad(model, x, labels0):
    """Mean cross-entropy on a batch and its gradient w.r.t. ``theta``.

    ``labels0`` are 0-based class codes.
    """
    xb, _ = _as_batch(model, x)
    y = np.asarray(labels0, dtype=np.int64).reshape(-1)
    if y.shape[0] != xb.shape[0]:
        raise DimensionMismatch("labels and rows disagree in length")
    if y.size == 0:
        raise DimensionMismatch("empty batch")
    logits, cache = _forward(model, xb)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    n = y.size
    loss = float(np.mean(logsum - shifted[np.arange(n), y]))
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"cross-entropy is {loss}")
    dlogits = softmax(logits)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, _backward(model, cache, dlogits)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    worst_name: str
    passed: bool
    tol: float


def grad_check(model, x, labels0, h=1e-4, tol=1e-4, loss_fn=None, floor=1e-8):
    """Compare the analytic gradient against central differences.

    ``loss_fn(theta) -> (loss, grad)`` overrides the default label loss. Relative
    error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if loss_fn is None:
        def loss_fn(theta):
            return loss_and_grad(model.with_theta(theta), x, labels0)

    theta = model.theta.copy()
    _, analytic = loss_fn(theta)
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        lp, _ = loss_fn(theta)
        theta[i] = old - h
        lm, _ = loss_fn(theta)
        theta[i] = old
        numeric[i] = (lp - lm) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else -1
    name = ""
    for lname, (off, shape) in model.layout.items():
        if off <= worst < off + int(np.prod(shape)):
            name = lname
    err = float(rel[worst]) if rel.size else 0.0
    return GradCheckReport(err, worst, name, err < tol, tol)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def encode_params(theta):
    return base64.b64encode(np.ascontiguousarray(theta, dtype="<f8").tobytes()).decode("ascii")


def decode_params(text):
    return np.frombuffer(base64.b64decode(text), dtype="<f8").astype(np.float64)


def save_checkpoint(model, path, provenance=None, extra=None):
    doc = {
        "version": CHECKPOINT_VERSION,
        "provenance": provenance or {},
        "spec": model.spec.to_dict(),
        "layout": {k: [off, list(shape)] for k, (off, shape) in model.layout.items()},
        "seed": model.spec.seed,
        "metrics": model.log,
        "params": encode_params(model.theta),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Returns (ModelState, full document)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptArtifact(f"{path}: {exc}") from None
    if doc.get("version") != CHECKPOINT_VERSION:
        raise SchemaVersionMismatch(f"{path}: checkpoint version {doc.get('version')!r}")
    try:
        spec = ClassifierSpec(**doc["spec"])
        layout = {k: (int(v[0]), tuple(v[1])) for k, v in doc["layout"].items()}
        theta = decode_params(doc["params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptArtifact(f"{path}: {exc}") from None
    if theta.size != parameter_count(spec):
        raise CorruptArtifact(f"{path}: parameter count {theta.size} does not match spec")
    return ModelState(spec, theta, layout, doc.get("metrics", {})), doc
