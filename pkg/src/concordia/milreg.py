"""Attention-based multiple-instance regression over tile embeddings.

Per instance: standardize, then an FC stack (ReLU, dropout in train mode).
Gated attention pools the instances:

    score_k = w . (tanh(V h_k + b_V) * sigmoid(U h_k + b_U))
    a = softmax(score);  bag = sum_k a_k h_k

and an affine head maps the bag vector to one output (regression) or two
logits (binary classification).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import SGD, he_normal, relu, sigmoid

log = logging.getLogger(__name__)

FULL_SCALE_WIDTHS = (1024, 1024, 512, 512)


@dataclass
class EmbeddingBag:
    specimen_id: str
    instances: np.ndarray  # (K, D)
    label: float
    split: str = "train"
    site: str | None = None

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=np.float64)
        if self.instances.ndim != 2 or self.instances.shape[0] < 1:
            raise ValueError(f"bag {self.specimen_id!r} needs at least one instance")
        if not np.isfinite(self.instances).all():
            raise ValueError(f"bag {self.specimen_id!r} has non-finite entries")


@dataclass
class RegressorConfig:
    input_dim: int = 64
    widths: tuple = (64, 64, 32, 32)
    attention_dim: int = 1
    attention: str = "gated"  # or "sigmoid": mean of sigmoid-gated instances, no softmax
    n_outputs: int = 1
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.attention not in ("gated", "sigmoid"):
            raise ValueError("attention must be 'gated' or 'sigmoid'")


@dataclass
class TrainConfig:
    dropout_prob: float = 0.2
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 100
    seed: int = 0
    loss: str = "rmse"  # or "ce"
    accumulation: int = 8  # bags per optimizer step
    augment_embeddings: bool = True
    augment_mode: str = "jitter"  # "jitter" or "reembed"
    jitter_sigma: float = 0.1  # in standardized-embedding units
    model: RegressorConfig = field(default_factory=RegressorConfig)

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must lie in [0, 1)")
        if self.loss not in ("rmse", "ce"):
            raise ValueError("loss must be 'rmse' or 'ce'")
        if self.augment_mode not in ("jitter", "reembed"):
            raise ValueError("augment_mode must be 'jitter' or 'reembed'")


@dataclass
class RegressorParams:
    config: RegressorConfig
    arrays: dict
    mean: np.ndarray
    std: np.ndarray

    def copy(self):
        return RegressorParams(self.config, {k: v.copy() for k, v in self.arrays.items()}, self.mean.copy(), self.std.copy())

    def save(self, path):
        meta = {"config": asdict(self.config)}
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), np.uint8),
                 __mean__=self.mean, __std__=self.std, **self.arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            arrays = {k: z[k].copy() for k in z.files if not k.startswith("__")}
            mean, std = z["__mean__"].copy(), z["__std__"].copy()
        return cls(RegressorConfig(**meta["config"]), arrays, mean, std)


def init_regressor(config, mean=None, std=None):
    rng = np.random.default_rng(config.seed)
    arrays = {}
    d = config.input_dim
    for i, w in enumerate(config.widths):
        arrays[f"fc{i}.w"] = he_normal(rng, d, (d, w))
        arrays[f"fc{i}.b"] = np.zeros(w)
        d = w
    a = config.attention_dim
    arrays["att.V"] = rng.standard_normal((a, d)) * np.sqrt(1.0 / d)
    arrays["att.bV"] = np.zeros(a)
    arrays["att.U"] = rng.standard_normal((a, d)) * np.sqrt(1.0 / d)
    arrays["att.bU"] = np.zeros(a)
    arrays["att.w"] = rng.standard_normal(a) * np.sqrt(1.0 / a)
    arrays["out.w"] = rng.standard_normal((d, config.n_outputs)) * np.sqrt(1.0 / d)
    arrays["out.b"] = np.zeros(config.n_outputs)
    mean = np.zeros(config.input_dim) if mean is None else np.asarray(mean, float)
    std = np.ones(config.input_dim) if std is None else np.asarray(std, float)
    return RegressorParams(config, arrays, mean, std)


def attention_pool(h, params):
    """Gated-attention pooling of a (K, F) feature matrix.

    Returns ``(bag_vector, weights, cache)``; weights are nonnegative and sum
    to one for the gated variant.
    """
    a = params.arrays if isinstance(params, RegressorParams) else params
    mode = params.config.attention if isinstance(params, RegressorParams) else "gated"
    zv = h @ a["att.V"].T + a["att.bV"]
    zu = h @ a["att.U"].T + a["att.bU"]
    tv = np.tanh(zv)
    su = sigmoid(zu)
    g = tv * su
    s = g @ a["att.w"]
    if mode == "gated":
        e = np.exp(s - s.max())
        w = e / e.sum()
    else:
        w = sigmoid(s) / len(s)
    bag = w @ h
    return bag, w, {"tv": tv, "su": su, "g": g, "s": s, "w": w}


def _attention_backward(h, a, mode, c, dbag, grads):
    w = c["w"]
    dh = np.outer(w, dbag)
    dw_k = h @ dbag
    if mode == "gated":
        ds = w * (dw_k - w @ dw_k)
    else:
        sg = w * len(w)
        ds = dw_k * sg * (1 - sg) / len(w)
    grads["att.w"] = c["g"].T @ ds
    dg = np.outer(ds, a["att.w"])
    dzv = dg * c["su"] * (1 - c["tv"] ** 2)
    dzu = dg * c["tv"] * c["su"] * (1 - c["su"])
    grads["att.V"] = dzv.T @ h
    grads["att.bV"] = dzv.sum(axis=0)
    grads["att.U"] = dzu.T @ h
    grads["att.bU"] = dzu.sum(axis=0)
    return dh + dzv @ a["att.V"] + dzu @ a["att.U"]


def regressor_forward(params, instances, train=False, rng=None, dropout_prob=0.0):
    """Raw model output for one bag (scalar for regression, 2 logits for CE).

    In train mode dropout (inverted scaling) follows each FC ReLU.
    """
    a = params.arrays
    cfg = params.config
    x = np.asarray(instances.instances if isinstance(instances, EmbeddingBag) else instances, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected (K, {cfg.input_dim}) instances, got {x.shape}")
    h = (x - params.mean) / params.std
    layers = []
    for i in range(len(cfg.widths)):
        z = h @ a[f"fc{i}.w"] + a[f"fc{i}.b"]
        hin = h
        h = relu(z)
        drop = None
        if train and dropout_prob > 0:
            drop = (rng.random(h.shape) >= dropout_prob) / (1.0 - dropout_prob)
            h = h * drop
        layers.append((hin, z > 0, drop))
    bag, w, att = attention_pool(h, params)
    out = bag @ a["out.w"] + a["out.b"]
    cache = {"layers": layers, "h": h, "bag": bag, "att": att}
    if cfg.n_outputs == 1:
        return float(out[0]), cache
    return out, cache


def regressor_backward(params, cache, dout):
    a = params.arrays
    cfg = params.config
    dout = np.atleast_1d(np.asarray(dout, dtype=np.float64))
    g = {"out.w": np.outer(cache["bag"], dout), "out.b": dout.copy()}
    dbag = a["out.w"] @ dout
    dh = _attention_backward(cache["h"], a, cfg.attention, cache["att"], dbag, g)
    for i in reversed(range(len(cfg.widths))):
        hin, mask, drop = cache["layers"][i]
        if drop is not None:
            dh = dh * drop
        dz = dh * mask
        g[f"fc{i}.w"] = hin.T @ dz
        g[f"fc{i}.b"] = dz.sum(axis=0)
        dh = dz @ a[f"fc{i}.w"].T
    return g


def rmse_loss(preds, labels):
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.size != y.size:
        raise ValueError("length mismatch")
    if p.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((p - y) ** 2)))


def rmse_grad(preds, labels):
    """dRMSE/dpreds; zero where the loss itself is zero."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    r = rmse_loss(p, y)
    if r == 0:
        return np.zeros_like(p)
    return (p - y) / (p.size * r)


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def predict(params, bags):
    """Eval-mode predictions: clamped concordance, or P(malignant) for CE heads."""
    out = []
    for b in bags:
        y, _ = regressor_forward(params, b)
        out.append(float(_softmax(y)[1]) if params.config.n_outputs == 2 else min(1.0, max(0.0, y)))
    return np.array(out)


@dataclass
class TrainResult:
    params: RegressorParams
    train_curve: list
    val_curve: list
    best_epoch: int


def _standardizer(bags):
    x = np.concatenate([b.instances for b in bags])
    return x.mean(axis=0), x.std(axis=0) + 1e-6


def _target(bag, cfg, threshold):
    if cfg.loss == "ce":
        return int(bag.label > threshold)
    return bag.label


def _eval_curve(params, bags, cfg, threshold):
    if cfg.loss == "rmse":
        return rmse_loss(predict(params, bags), [b.label for b in bags])
    total = 0.0
    for b in bags:
        y, _ = regressor_forward(params, b)
        total -= np.log(_softmax(y)[_target(b, cfg, threshold)] + 1e-12)
    return total / len(bags)


def train_regressor(bags, cfg=None, reembed=None, threshold=0.85):
    """SGD over bags with gradient accumulation; keeps the min-val checkpoint.

    ``bags`` carry their split tag; train and val must be non-empty.  With
    ``augment_mode == "reembed"`` the callable ``reembed(bag, rng)`` must
    return fresh instances from augmented tiles.
    """
    cfg = cfg or TrainConfig()
    train = [b for b in bags if b.split == "train"]
    val = [b for b in bags if b.split == "val"]
    if not train or not val:
        raise ValueError("train and val splits must be non-empty")
    if cfg.augment_embeddings and cfg.augment_mode == "reembed" and reembed is None:
        raise ValueError("reembed augmentation needs a reembed callable")
    mcfg = RegressorConfig(**{**asdict(cfg.model), "input_dim": train[0].instances.shape[1],
                              "n_outputs": 2 if cfg.loss == "ce" else 1})
    mean, std = _standardizer(train)
    params = init_regressor(mcfg, mean, std)
    opt = SGD(params.arrays, cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    train_curve = [_eval_curve(params, train, cfg, threshold)]
    val_curve = [_eval_curve(params, val, cfg, threshold)]
    best, best_epoch = params.copy(), 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        for lo in range(0, len(order), cfg.accumulation):
            chunk = [train[j] for j in order[lo : lo + cfg.accumulation]]
            outs, caches = [], []
            for b in chunk:
                x = b.instances
                if cfg.augment_embeddings:
                    if cfg.augment_mode == "reembed":
                        x = reembed(b, rng)
                    else:
                        x = x + cfg.jitter_sigma * std * rng.standard_normal(x.shape)
                y, c = regressor_forward(params, x, train=True, rng=rng, dropout_prob=cfg.dropout_prob)
                outs.append(y)
                caches.append(c)
            if cfg.loss == "rmse":
                douts = rmse_grad(np.array(outs), [b.label for b in chunk])
            else:
                douts = []
                for y, b in zip(outs, chunk):
                    p = _softmax(y)
                    p[_target(b, cfg, threshold)] -= 1.0
                    douts.append(p / len(chunk))
            grads = None
            for c, d in zip(caches, douts):
                g = regressor_backward(params, c, d)
                if grads is None:
                    grads = g
                else:
                    for k in grads:
                        grads[k] += g[k]
            opt.step(params.arrays, grads)
        train_curve.append(_eval_curve(params, train, cfg, threshold))
        val_curve.append(_eval_curve(params, val, cfg, threshold))
        if val_curve[-1] < val_curve[best_epoch]:
            best, best_epoch = params.copy(), epoch
        if epoch % 10 == 0 or epoch == cfg.epochs:
            log.info("train epoch %d train %.4f val %.4f", epoch, train_curve[-1], val_curve[-1])
    return TrainResult(best, train_curve, val_curve, best_epoch)


def train_binary_classifier(bags, threshold=0.85, cfg=None):
    """Same architecture with a two-logit head and cross-entropy on (label > threshold).

    Returns ``(TrainResult, metrics)`` with metrics on the test split when
    both classes are present there.
    """
    from .stats import pr_metrics, roc_auc

    cfg = cfg or TrainConfig()
    cfg = TrainConfig(**{**cfg.__dict__, "loss": "ce"})
    ys = {int(b.label > threshold) for b in bags if b.split == "train"}
    if len(ys) < 2:
        raise ValueError("single-class training set after binarizing labels")
    res = train_regressor(bags, cfg, threshold=threshold)
    test = [b for b in bags if b.split == "test"]
    metrics = {}
    yt = np.array([int(b.label > threshold) for b in test])
    if test and 0 < yt.sum() < len(yt):
        scores = predict(res.params, test)
        metrics["auc"] = roc_auc(scores, yt)[1]
        pm = pr_metrics(scores, yt, 0.5)
        metrics.update(average_precision=pm["average_precision"], precision=pm["precision"],
                       recall=pm["recall"], specificity=pm["specificity"])
    return res, metrics


def bags_from_store(store, records):
    """Join embedding-store rows with manifest records into bags."""
    by_id = {r.specimen_id: r for r in records}
    out = []
    for sid, vecs in store.bags().items():
        rec = by_id.get(sid)
        if rec is None:
            continue
        out.append(EmbeddingBag(sid, vecs, float(rec.label), rec.split, rec.site))
    return out
