"""Learnable affine augmentation (Augerino) on the Lie algebra of Aff(2).

A transform is drawn as ``expm(sum_i u_i G_i)`` with ``u_i ~ U(-theta_i/2,
theta_i/2)`` and applied by inverse warping: output pixel ``p`` (normalized
[-1, 1] coordinates) reads the input at ``M p``. An algebra value of 1.0 on a
translation generator therefore moves content by half the image width.

Training minimizes ``CE(mean_copies f(g x)) - lam * ||theta * active||_2``
over network weights and ``theta`` jointly with momentum SGD. A coordinate is
inactive (regularizer shut down) while ``theta_i >= threshold_i``; it becomes
active again as soon as it drops below. Gradients are analytic: the conv
backward pass, the bilinear sampler's coordinate derivatives and Frechet
derivatives of the matrix exponential.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embedders import ConvNet, EmbeddingProvider, LinearHead, softmax_cross_entropy
from .errors import CapabilityError, ConfigError, NumericError, ParseError, TrainingDiverged
from .image import normalized_grid, to_pixel

GENERATOR_NAMES = ("translate_x", "translate_y", "rotate", "scale", "stretch", "shear")


def _generators():
    g = np.zeros((6, 3, 3))
    g[0, 0, 2] = 1.0
    g[1, 1, 2] = 1.0
    g[2, :2, :2] = [[0.0, -1.0], [1.0, 0.0]]
    g[3, :2, :2] = np.eye(2)
    g[4, :2, :2] = np.diag([1.0, -1.0])
    g[5, :2, :2] = [[0.0, 1.0], [1.0, 0.0]]
    g.setflags(write=False)
    return g


GENERATORS = _generators()
SCALE = GENERATOR_NAMES.index("scale")
# +-50% translation, +-180 degrees rotation and 20x scale/stretch/shear factors
DEFAULT_THRESHOLDS = (2.0, 2.0, 2.0 * math.pi, 2.0 * math.log(20.0), 2.0 * math.log(20.0), 2.0 * math.log(20.0))


# ------------------------------------------------------------ matrix exponential

_TAYLOR_TERMS = 18


def expm(m):
    """Matrix exponential of one ``(n, n)`` matrix or a stack ``(..., n, n)``.

    Scaling and squaring: the stack is scaled by ``2**-s`` so every 1-norm is
    at most 1/2, an 18-term Taylor series is summed, then squared ``s`` times.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ConfigError(f"expm needs square matrices, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("expm input has non-finite entries")
    norm = float(np.abs(m).sum(axis=-2).max()) if m.size else 0.0
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    a = m / (2.0 ** s)
    eye = np.broadcast_to(np.eye(m.shape[-1]), m.shape)
    term = eye.copy()
    out = eye.copy()
    for k in range(1, _TAYLOR_TERMS + 1):
        term = term @ a / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def expm_frechet(a, e):
    """``(expm(a), L(a, e))`` where ``L`` is the Frechet derivative in direction ``e``.

    Uses the block identity ``expm([[a, e], [0, a]]) = [[expm(a), L], [0, expm(a)]]``.
    Inputs may be stacks with matching leading dimensions.
    """
    a = np.asarray(a, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    a, e = np.broadcast_arrays(a, e)
    n = a.shape[-1]
    block = np.zeros(a.shape[:-2] + (2 * n, 2 * n))
    block[..., :n, :n] = a
    block[..., n:, n:] = a
    block[..., :n, n:] = e
    big = expm(block)
    return big[..., :n, :n], big[..., :n, n:]


def algebra_matrix(u):
    """``sum_i u_i G_i`` for coordinates ``u`` of shape ``(..., 6)``."""
    return np.tensordot(np.asarray(u, dtype=np.float64), GENERATORS, axes=([-1], [0]))


# ------------------------------------------------------------ parameters

@dataclass
class LieAugParams:
    theta: np.ndarray = field(default_factory=lambda: np.zeros(6))
    lam: float = 0.0
    thresholds: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_THRESHOLDS))
    asymmetric_scale: bool = False
    n_train_copies: int = 1
    n_eval_copies: int = 4

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        self.thresholds = np.array(self.thresholds, dtype=np.float64).reshape(-1)
        if self.theta.shape != (6,) or self.thresholds.shape != (6,):
            raise ConfigError("theta and thresholds need 6 entries", "theta")
        if not np.all(np.isfinite(self.theta)) or np.any(self.theta < 0):
            raise ConfigError("theta must be finite and non-negative", "theta")
        if np.any(self.thresholds <= 0):
            raise ConfigError("shutdown thresholds must be positive", "thresholds")
        if not math.isfinite(self.lam):
            raise ConfigError("lambda must be finite", "lam")
        if self.n_train_copies < 1 or self.n_eval_copies < 1:
            raise ConfigError("copy counts must be >= 1", "n_train_copies")

    def active(self):
        """Regularizer mask: coordinates below their shutdown threshold."""
        return self.theta < self.thresholds

    def to_dict(self):
        d = asdict(self)
        d["theta"] = self.theta.tolist()
        d["thresholds"] = self.thresholds.tolist()
        return d


def unit_coords(eps, asymmetric_scale=False):
    """Map uniform draws ``eps`` in [0, 1) to ``c`` with ``u = theta * c``."""
    c = np.asarray(eps, dtype=np.float64) - 0.5
    if asymmetric_scale:
        c[..., SCALE] = (eps[..., SCALE] - 1.0) / 2.0
    return c


def draw_eps(rng, n_copies, n, antithetic=False):
    """Uniform draws of shape ``(n_copies, n, 6)``; antithetic pairs ``(e, 1 - e)``."""
    if not antithetic:
        return rng.random((n_copies, n, 6))
    half = rng.random(((n_copies + 1) // 2, n, 6))
    eps = np.empty((n_copies, n, 6))
    eps[0::2] = half
    eps[1::2] = 1.0 - half[: n_copies // 2]
    return eps


def sample_transform(params, rng):
    """One image-space matrix ``expm(sum_i u_i G_i)``; identity when theta is 0."""
    eps = rng.random(6)
    u = params.theta * unit_coords(eps, params.asymmetric_scale)
    return expm(algebra_matrix(u))


# ------------------------------------------------------------ differentiable warp

def _snap(v):
    r = np.rint(v)
    return np.where(np.abs(v - r) < 1e-9, r, v)


def warp_batch(x, m, mode="fill", keep=False):
    """Inverse-warp each image ``x[n]`` (``(N, H, W, C)``) with its matrix ``m[n]``.

    Output pixel ``p`` samples ``x[n]`` bilinearly at ``m[n] p``. Out-of-range
    taps read 0 (``mode="fill"``) or wrap around (``mode="wrap"``). Values are
    not clipped, so the map is piecewise linear in ``m``.
    """
    n, h, w, _ = x.shape
    gx, gy = normalized_grid(w, h)
    qx = m[:, 0, 0, None, None] * gx + m[:, 0, 1, None, None] * gy + m[:, 0, 2, None, None]
    qy = m[:, 1, 0, None, None] * gx + m[:, 1, 1, None, None] * gy + m[:, 1, 2, None, None]
    px = _snap(to_pixel(qx, w))
    py = _snap(to_pixel(qy, h))
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = (px - x0)[..., None]
    fy = (py - y0)[..., None]
    idx = np.arange(n)[:, None, None]

    def tap(iy, ix):
        if mode == "wrap":
            return x[idx, iy % h, ix % w]
        inside = ((iy >= 0) & (iy < h) & (ix >= 0) & (ix < w))[..., None]
        return np.where(inside, x[idx, np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)], 0.0)

    a, b = tap(y0, x0), tap(y0, x0 + 1)
    c, d = tap(y0 + 1, x0), tap(y0 + 1, x0 + 1)
    out = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)
    if not keep:
        return out
    dpx = (1 - fy) * (b - a) + fy * (d - c)
    dpy = (1 - fx) * (c - a) + fx * (d - b)
    return out, (gx, gy, dpx, dpy, w, h)


def warp_backward(grad_out, cache):
    """Gradient of a scalar loss with respect to the ``(N, 3, 3)`` warp matrices."""
    gx, gy, dpx, dpy, w, h = cache
    gqx = (grad_out * dpx).sum(axis=-1) * (w / 2.0)
    gqy = (grad_out * dpy).sum(axis=-1) * (h / 2.0)
    gm = np.zeros((grad_out.shape[0], 3, 3))
    gm[:, 0, 0] = (gqx * gx).sum(axis=(1, 2))
    gm[:, 0, 1] = (gqx * gy).sum(axis=(1, 2))
    gm[:, 0, 2] = gqx.sum(axis=(1, 2))
    gm[:, 1, 0] = (gqy * gx).sum(axis=(1, 2))
    gm[:, 1, 1] = (gqy * gy).sum(axis=(1, 2))
    gm[:, 1, 2] = gqy.sum(axis=(1, 2))
    return gm


# ------------------------------------------------------------ model

class AugerinoModel:
    """Conv stack with global average pooling and a linear head."""

    def __init__(self, net, head):
        self.net = net
        self.head = head

    @classmethod
    def seeded(cls, seed, n_classes, channels=(8, 8), activation="relu", padding="zero"):
        net = ConvNet.seeded(seed, channels, padding=padding, activation=activation,
                             pooling="gap", activate_last=True)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
        c = net.out_channels
        head = LinearHead(rng.normal(0.0, 1.0 / math.sqrt(c), (c, n_classes)), np.zeros(n_classes))
        return cls(net, head)

    def params(self):
        return self.net.params() + [self.head.weight, self.head.bias]

    def set_params(self, params):
        self.net.set_params(params[:-2])
        self.head = LinearHead(np.asarray(params[-2], dtype=np.float64),
                               np.asarray(params[-1], dtype=np.float64))

    def copy(self):
        m = AugerinoModel(ConvNet(self.net.weights, self.net.biases, self.net.padding,
                                  self.net.activation, self.net.pooling, self.net.activate_last),
                          self.head)
        m.set_params([p.copy() for p in self.params()])
        return m

    def logits(self, x):
        return self.head(self.net.forward(x))

    def forward(self, x):
        feats, cache = self.net.forward(x, keep=True)
        return self.head(feats), (feats, cache)

    def backward(self, grad_logits, cache):
        feats, net_cache = cache
        gw_head = feats.T @ grad_logits
        gb_head = grad_logits.sum(axis=0)
        gx, grads = self.net.backward(grad_logits @ self.head.weight.T, net_cache)
        return gx, grads + [gw_head, gb_head]

    def to_dict(self):
        return {"padding": self.net.padding, "activation": self.net.activation,
                "weights": [w.tolist() for w in self.net.weights],
                "biases": [b.tolist() for b in self.net.biases],
                "head_weight": self.head.weight.tolist(), "head_bias": self.head.bias.tolist()}

    @classmethod
    def from_dict(cls, d):
        net = ConvNet([np.array(w) for w in d["weights"]], [np.array(b) for b in d["biases"]],
                      d["padding"], d["activation"], "gap", True)
        return cls(net, LinearHead(np.array(d["head_weight"]), np.array(d["head_bias"])))


def _plain_logits(model, x):
    if isinstance(model, AugerinoModel):
        return model.logits(x)
    if isinstance(model, EmbeddingProvider):
        return model.classify_batch(x)
    raise CapabilityError("model has no classifier output")


def averaged_forward(model, params, x, rng, n_copies=None, mode="fill"):
    """Monte-Carlo estimate of ``E_g[f(g x)]`` over ``n_copies`` sampled transforms."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if isinstance(model, EmbeddingProvider) and model.classifier_head is None:
        raise CapabilityError(f"provider {model.variant!r} has no classifier head")
    n_copies = params.n_eval_copies if n_copies is None else n_copies
    if not np.any(params.theta):
        return _plain_logits(model, x)
    eps = rng.random((n_copies, len(x), 6))
    total = 0.0
    for k in range(n_copies):
        u = params.theta * unit_coords(eps[k], params.asymmetric_scale)
        total = total + _plain_logits(model, warp_batch(x, expm(algebra_matrix(u)), mode))
    return total / n_copies


# ------------------------------------------------------------ objective

@dataclass
class ObjectiveValue:
    loss: float
    ce: float
    reg: float
    grad_params: list
    grad_theta: np.ndarray
    reg_grad_theta: np.ndarray
    logits: np.ndarray


def objective(model, params, x, y, eps, mode="fill"):
    """Regularized objective and its exact gradient for fixed uniform draws ``eps``.

    ``eps`` has shape ``(copies, N, 6)``; logits are averaged over copies
    before the cross-entropy.
    """
    n_copies = eps.shape[0]
    c = unit_coords(eps, params.asymmetric_scale)
    u = params.theta * c
    a = algebra_matrix(u)
    caches = []
    total = 0.0
    for k in range(n_copies):
        m = expm(a[k])
        xw, wcache = warp_batch(x, m, mode, keep=True)
        logits, fcache = model.forward(xw)
        total = total + logits
        caches.append((wcache, fcache))
    logits = total / n_copies
    ce, g_logits = softmax_cross_entropy(logits, y)
    g_logits = g_logits / n_copies
    grad_params = None
    grad_theta = np.zeros(6)
    gen = np.broadcast_to(GENERATORS, (len(x), 6, 3, 3))
    for k, (wcache, fcache) in enumerate(caches):
        gx, gp = model.backward(g_logits, fcache)
        grad_params = gp if grad_params is None else [p + q for p, q in zip(grad_params, gp)]
        gm = warp_backward(gx, wcache)
        _, frechet = expm_frechet(np.broadcast_to(a[k][:, None], gen.shape), gen)
        gu = np.einsum("nab,niab->ni", gm, frechet)
        grad_theta += (gu * c[k]).sum(axis=0)
    active = params.active()
    masked = params.theta * active
    norm = float(np.linalg.norm(masked))
    reg = params.lam * norm
    reg_grad = -params.lam * masked / norm if norm > 0 else np.zeros(6)
    return ObjectiveValue(ce - reg, ce, reg, grad_params, grad_theta + reg_grad, reg_grad, logits)


def gradient_check(model, params, x, y, eps, rng, n_weights=12, h=1e-6, mode="fill"):
    """Relative error of analytic versus central-difference gradients.

    Checks every theta coordinate and ``n_weights`` random network weights;
    returns ``(err_theta, err_weights)`` as ``||a - n|| / ||n||``.
    """
    val = objective(model, params, x, y, eps, mode)
    base_theta = params.theta.copy()

    def loss_at(theta=None, plist=None):
        p = LieAugParams(base_theta if theta is None else theta, params.lam, params.thresholds,
                         params.asymmetric_scale, params.n_train_copies, params.n_eval_copies)
        m = model
        if plist is not None:
            m = model.copy()
            m.set_params(plist)
        return objective(m, p, x, y, eps, mode).loss

    num_t = np.zeros(6)
    for i in range(6):
        tp, tm = base_theta.copy(), base_theta.copy()
        tp[i] += h
        tm[i] -= h
        num_t[i] = (loss_at(theta=tp) - loss_at(theta=tm)) / (2 * h)
    plist = model.params()
    sizes = [p.size for p in plist]
    flat_idx = rng.choice(sum(sizes), size=min(n_weights, sum(sizes)), replace=False)
    ana_w, num_w = [], []
    offsets = np.cumsum([0] + sizes)
    for fi in flat_idx:
        t = int(np.searchsorted(offsets, fi, side="right") - 1)
        j = int(fi - offsets[t])
        plus = [p.copy() for p in plist]
        minus = [p.copy() for p in plist]
        plus[t].flat[j] += h
        minus[t].flat[j] -= h
        num_w.append((loss_at(plist=plus) - loss_at(plist=minus)) / (2 * h))
        ana_w.append(val.grad_params[t].flat[j])
    ana_w, num_w = np.array(ana_w), np.array(num_w)
    err_t = float(np.linalg.norm(val.grad_theta - num_t) / max(np.linalg.norm(num_t), 1e-12))
    err_w = float(np.linalg.norm(ana_w - num_w) / max(np.linalg.norm(num_w), 1e-12))
    return err_t, err_w


# ------------------------------------------------------------ training

@dataclass
class TrainConfig:
    lam: float = 0.1
    theta_init: tuple = (0.2, 0.2, 0.2, 0.2, 0.2, 0.2)
    thresholds: tuple = DEFAULT_THRESHOLDS
    asymmetric_scale: bool = False
    n_train_copies: int = 2
    n_eval_copies: int = 4
    antithetic: bool = True
    lr: float = 0.05
    lr_theta: float = 0.02
    momentum: float = 0.9
    schedule: str = "constant"
    epochs: int = 25
    batch_size: int = 32
    seed: int = 0
    mode: str = "fill"
    channels: tuple = (8, 8)
    activation: str = "relu"

    def __post_init__(self):
        self.theta_init = tuple(float(v) for v in self.theta_init)
        self.thresholds = tuple(float(v) for v in self.thresholds)
        self.channels = tuple(int(v) for v in self.channels)
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"schedule must be constant or cosine, got {self.schedule!r}", "schedule")
        if self.mode not in ("fill", "wrap"):
            raise ConfigError(f"mode must be fill or wrap, got {self.mode!r}", "mode")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1", "epochs")
        for key in ("lr", "lr_theta", "momentum"):
            v = getattr(self, key)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{key} must be finite and non-negative", key)

    def params(self):
        return LieAugParams(np.array(self.theta_init), self.lam, np.array(self.thresholds),
                            self.asymmetric_scale, self.n_train_copies, self.n_eval_copies)

    def to_dict(self):
        d = asdict(self)
        for k in ("theta_init", "thresholds", "channels"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown training config key {unknown[0]!r}", unknown[0])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def read_train_config(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.pos) from None
    if not isinstance(doc, dict):
        raise ConfigError("training config must be a JSON object")
    return TrainConfig.from_dict(doc)


LOG_FIELDS = ["epoch", "loss", "ce", "reg", "train_acc", "lr"] + [f"theta_{n}" for n in GENERATOR_NAMES] + [
    "active", "events"]


@dataclass
class TrainResult:
    model: AugerinoModel
    params: LieAugParams
    log: list

    def log_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.log:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def train(model, params, images, labels, config):
    """Momentum SGD on weights and theta; theta is projected to >= 0 each step."""
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 7]))
    model = model.copy()
    params = LieAugParams(params.theta.copy(), params.lam, params.thresholds.copy(),
                          params.asymmetric_scale, params.n_train_copies, params.n_eval_copies)
    vel = [np.zeros_like(p) for p in model.params()]
    vel_t = np.zeros(6)
    n = len(x)
    steps_per_epoch = max(1, math.ceil(n / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    log = []
    step = 0
    prev_active = params.active()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses, ces, regs, correct = [], [], [], 0
        events = []
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            eps = draw_eps(rng, params.n_train_copies, len(idx), config.antithetic)
            val = objective(model, params, x[idx], y[idx], eps, config.mode)
            if not math.isfinite(val.loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step}",
                    {"epoch": epoch, "step": step, "theta": params.theta.tolist(), "loss": val.loss})
            scale = 1.0
            if config.schedule == "cosine":
                scale = 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
            plist = model.params()
            new = []
            for p, g, v in zip(plist, val.grad_params, vel):
                v *= config.momentum
                v -= config.lr * scale * g
                new.append(p + v)
            model.set_params(new)
            vel_t *= config.momentum
            vel_t -= config.lr_theta * scale * val.grad_theta
            params.theta = np.maximum(params.theta + vel_t, 0.0)
            act = params.active()
            for i in np.flatnonzero(act != prev_active):
                events.append(f"{GENERATOR_NAMES[i]}:{'on' if act[i] else 'off'}@{step}")
            prev_active = act
            losses.append(val.loss)
            ces.append(val.ce)
            regs.append(val.reg)
            correct += int((val.logits.argmax(axis=1) == y[idx]).sum())
            step += 1
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "ce": float(np.mean(ces)),
               "reg": float(np.mean(regs)), "train_acc": correct / n, "lr": config.lr * scale}
        for name, t in zip(GENERATOR_NAMES, params.theta):
            row[f"theta_{name}"] = float(t)
        row["active"] = "".join("1" if a else "0" for a in params.active())
        row["events"] = ";".join(events)
        log.append(row)
    return TrainResult(model, params, log)


@dataclass
class EvalResult:
    accuracy: float
    sem: float
    per_seed: list


def evaluate(model, params, images, labels, use_augerino=True, n_eval_copies=None, seeds=(0, 1, 2, 3, 4),
             mode="fill"):
    """Accuracy averaged over test seeds, with its standard error."""
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels)
    accs = []
    for s in seeds:
        if use_augerino:
            rng = np.random.default_rng(np.random.SeedSequence([int(s), 11]))
            logits = averaged_forward(model, params, x, rng, n_eval_copies, mode)
        else:
            logits = _plain_logits(model, x)
        accs.append(float((logits.argmax(axis=1) == y).mean()))
    accs_arr = np.array(accs)
    sem = float(accs_arr.std(ddof=1) / math.sqrt(len(accs))) if len(accs) > 1 else 0.0
    return EvalResult(float(accs_arr.mean()), sem, accs)


# ------------------------------------------------------------ synthetic task

def stripe_task(n, size=16, seed=0, angles=(0.0, math.pi / 6), jitter=0.05, freq=(2.5, 3.5)):
    """Two classes of stripes that differ only in orientation.

    The label survives any horizontal translation (up to the zero-filled band
    it exposes) but a rotation of half the angle gap already mixes the
    classes.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    gx, gy = normalized_grid(size, size)
    labels = rng.integers(0, len(angles), n)
    images = np.empty((n, size, size, 3))
    for k in range(n):
        ang = angles[labels[k]] + rng.normal(0.0, jitter)
        f = rng.uniform(*freq)
        phase = rng.uniform(0, 2 * np.pi)
        v = 0.5 + 0.5 * np.cos(np.pi * f * (-np.sin(ang) * gx + np.cos(ang) * gy) + phase)
        images[k] = v[..., None]
    return images, labels
