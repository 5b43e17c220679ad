"""Per-pixel detector with a gradient-reversed domain classifier.

Three parameter spaces, each with its own Adam state:

* backbone ``theta_f``: pixel features -> tanh embedding (d dims)
* task head ``theta_h``: embedding -> sigmoid text score
* domain classifier ``theta_d``: pooled embedding -> tanh MLP -> P(target)

The domain classifier reads the embedding through a gradient reversal
layer, so one backward pass gives the head the task gradient, the
classifier the domain gradient, and the backbone the task gradient minus
``lambda`` times the domain gradient.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import expit

from textadapt.core import GrayImage, ScoreMap
from textadapt.losses import (
    LossConfig,
    balanced_score_loss,
    domain_loss_from_logits,
    weak_score_loss,
)

N_FEATURES = 5
EMBED_DIM = 8
DOMAIN_HIDDEN = 16
GATE_THRESHOLD = 0.5


class NumericError(RuntimeError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


# ---------------------------------------------------------------- features


def extract_features(image: GrayImage) -> np.ndarray:
    """(h, w, 5) features in [-1, 1].

    Channels and their fixed normalizations:
      0 intensity            2*I - 1
      1 3x3 local mean       2*m - 1
      2 3x3 local std        2*s        (s <= 0.5)
      3 Sobel magnitude      |g| / (4*sqrt(2))
      4 Laplacian (4-nbr)    L / 4
    """
    img = np.asarray(image.data, dtype=np.float64)
    mean = ndimage.uniform_filter(img, size=3, mode="nearest")
    sq = ndimage.uniform_filter(img * img, size=3, mode="nearest")
    var = sq - mean * mean
    # uniform_filter round-off leaves var ~1e-17 on flat regions
    var[var < 1e-12] = 0.0
    std = np.sqrt(var)
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    grad = np.hypot(gx, gy) / (4.0 * math.sqrt(2.0))
    lap = ndimage.laplace(img, mode="nearest") / 4.0
    feats = np.stack([2 * img - 1, 2 * mean - 1, 2 * std, grad, lap], axis=-1)
    return np.clip(feats, -1.0, 1.0)


# ---------------------------------------------------------------- model


@dataclass(frozen=True)
class ToyModel:
    w_f: np.ndarray  # (k, d)
    b_f: np.ndarray  # (d,)
    w_h: np.ndarray  # (d,)
    b_h: np.ndarray  # (1,)
    w_d1: np.ndarray  # (d, H)
    b_d1: np.ndarray  # (H,)
    w_d2: np.ndarray  # (H,)
    b_d2: np.ndarray  # (1,)

    @property
    def n_features(self) -> int:
        return self.w_f.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.w_f.shape[1]

    @property
    def hidden(self) -> int:
        return self.w_d1.shape[1]

    def parameter_spaces(self):
        return (
            [self.w_f, self.b_f],
            [self.w_h, self.b_h],
            [self.w_d1, self.b_d1, self.w_d2, self.b_d2],
        )

    def astype(self, dtype) -> "ToyModel":
        return ToyModel(*(np.asarray(p, dtype=dtype) for p in self._params()))

    def _params(self):
        f, h, d = self.parameter_spaces()
        return [*f, *h, *d]

    def with_spaces(self, theta_f=None, theta_h=None, theta_d=None) -> "ToyModel":
        f, h, d = self.parameter_spaces()
        f = theta_f if theta_f is not None else f
        h = theta_h if theta_h is not None else h
        d = theta_d if theta_d is not None else d
        return ToyModel(*f, *h, *d)

    def equals(self, other: "ToyModel") -> bool:
        return all(
            a.dtype == b.dtype and np.array_equal(a, b)
            for a, b in zip(self._params(), other._params())
        )

    @classmethod
    def from_flat(cls, theta_f, theta_h, theta_d) -> "ToyModel":
        n_f, n_h, n_d = len(theta_f), len(theta_h), len(theta_d)
        d = n_h - 1
        if d < 1 or n_f % (d) or n_f // d < 2:
            raise ValueError(f"inconsistent parameter counts ({n_f}, {n_h}, {n_d})")
        k = n_f // d - 1
        if (n_d - 1) % (d + 2) or n_d < d + 3:
            raise ValueError(f"inconsistent parameter counts ({n_f}, {n_h}, {n_d})")
        hid = (n_d - 1) // (d + 2)
        f = np.asarray(theta_f)
        h = np.asarray(theta_h)
        dd = np.asarray(theta_d)
        return cls(
            w_f=f[: k * d].reshape(k, d).copy(),
            b_f=f[k * d :].copy(),
            w_h=h[:d].copy(),
            b_h=h[d:].copy(),
            w_d1=dd[: d * hid].reshape(d, hid).copy(),
            b_d1=dd[d * hid : d * hid + hid].copy(),
            w_d2=dd[d * hid + hid : d * hid + 2 * hid].copy(),
            b_d2=dd[d * hid + 2 * hid :].copy(),
        )


def init_model(
    seed: int,
    n_features: int = N_FEATURES,
    embed_dim: int = EMBED_DIM,
    hidden: int = DOMAIN_HIDDEN,
    dtype=np.float32,
) -> ToyModel:
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out, shape):
        return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=shape)

    return ToyModel(
        w_f=glorot(n_features, embed_dim, (n_features, embed_dim)),
        b_f=np.zeros(embed_dim),
        w_h=glorot(embed_dim, 1, (embed_dim,)),
        b_h=np.zeros(1),
        w_d1=glorot(embed_dim, hidden, (embed_dim, hidden)),
        b_d1=np.zeros(hidden),
        w_d2=glorot(hidden, 1, (hidden,)),
        b_d2=np.zeros(1),
    ).astype(dtype)


def zero_model(n_features=N_FEATURES, embed_dim=EMBED_DIM, hidden=DOMAIN_HIDDEN) -> ToyModel:
    z = np.zeros
    return ToyModel(
        z((n_features, embed_dim)), z(embed_dim), z(embed_dim), z(1),
        z((embed_dim, hidden)), z(hidden), z(hidden), z(1),
    )


def grl_forward(x):
    return x


def grl_backward(upstream, lam: float):
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return -lam * np.asarray(upstream, dtype=np.float64)


# Arithmetic runs in the parameter dtype: float32 for trained models,
# float64 when a test casts the model up for finite differences.


def _embed(model: ToyModel, x: np.ndarray):
    dt = model.w_f.dtype
    z = np.asarray(x, dt) @ model.w_f + model.b_f
    return np.tanh(z)


def _score(model: ToyModel, h: np.ndarray):
    return expit(h @ model.w_h + model.b_h[0])


def _domain_logit(model: ToyModel, m: np.ndarray):
    dt = model.w_d1.dtype
    q = np.tanh(np.asarray(m, dt) @ model.w_d1 + model.b_d1)
    return q, q @ model.w_d2 + model.b_d2[0]


def pool_gate(scores: np.ndarray) -> np.ndarray:
    """Pixels whose score exceeds 0.5, or every pixel when none does."""
    gate = scores > GATE_THRESHOLD
    if not gate.any():
        gate = np.ones_like(gate)
    return gate


def forward(model: ToyModel, features: np.ndarray, gate: Optional[np.ndarray] = None):
    """Return ``(scores (h, w), embedding (h, w, d), domain_prob)``."""
    feats = np.asarray(features, dtype=model.w_f.dtype)
    if feats.ndim != 3 or feats.shape[-1] != model.n_features:
        raise ValueError(
            f"features must be (h, w, {model.n_features}), got {feats.shape}"
        )
    hgt, wid, k = feats.shape
    h = _embed(model, feats.reshape(-1, k))
    y = _score(model, h)
    g = pool_gate(y) if gate is None else np.asarray(gate, dtype=bool).ravel()
    m = grl_forward(h[g].mean(axis=0))
    _, logit = _domain_logit(model, m[None, :])
    p = float(expit(logit[0]))
    return y.reshape(hgt, wid), h.reshape(hgt, wid, -1), p


def predict_scoremap(model: ToyModel, image: GrayImage, features: Optional[np.ndarray] = None):
    feats = extract_features(image) if features is None else features
    hgt, wid, k = feats.shape
    y = _score(model, _embed(model, feats.reshape(-1, k)))
    return ScoreMap(y.reshape(hgt, wid))


def pooled_embedding(model: ToyModel, features: np.ndarray) -> np.ndarray:
    """Score-gated mean embedding, the instance-level feature seen by the classifier."""
    k = features.shape[-1]
    h = _embed(model, np.asarray(features).reshape(-1, k))
    return h[pool_gate(_score(model, h))].mean(axis=0)


# ---------------------------------------------------------------- training


@dataclass
class Sample:
    """One training image.

    ``gt`` is the binary score target; ``partition`` restricts which
    pixels count (pseudo-labels). Target images without either only feed
    the domain classifier.
    """

    image_id: str
    features: np.ndarray
    gt: Optional[np.ndarray] = None
    partition: Optional[np.ndarray] = None

    @property
    def labeled(self) -> bool:
        return self.gt is not None


@dataclass(frozen=True)
class AtaConfig:
    lam: float = 0.2
    lr: float = 1e-2
    iters: int = 2000
    batch_source: int = 6
    batch_target: int = 6
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    domain_branch: bool = True
    crop: Optional[int] = None  # train on random crop x crop windows of each image
    lr_anneal: bool = False  # lr / (1 + 10 p) ** 0.75 over the run, p = progress in [0, 1)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_source < 1 or self.batch_target < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.crop is not None and self.crop < 3:
            raise ValueError("crop must be >= 3")


class Adam:
    """Adam over a list of arrays; moments kept in float64."""

    def __init__(self, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Optional[List[np.ndarray]] = None
        self.v: Optional[List[np.ndarray]] = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
        if self.m is None:
            self.m = [np.zeros(np.shape(p)) for p in params]
            self.v = [np.zeros(np.shape(p)) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            g = np.asarray(g, dtype=np.float64)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            upd = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            out.append((np.asarray(p, dtype=np.float64) - upd).astype(np.asarray(p).dtype))
        return out


@dataclass
class Optimizers:
    f: Adam
    h: Adam
    d: Adam

    @classmethod
    def from_config(cls, cfg: AtaConfig) -> "Optimizers":
        def mk():
            return Adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

        return cls(mk(), mk(), mk())


@dataclass
class Gradients:
    theta_f: List[np.ndarray]
    theta_h: List[np.ndarray]
    theta_d: List[np.ndarray]
    loss_task_src: float
    loss_task_tgt: Optional[float]
    loss_domain: Optional[float]
    domain_acc: Optional[float]
    gates: List[np.ndarray] = field(default_factory=list)

    @property
    def loss_task(self) -> float:
        return self.loss_task_src + (self.loss_task_tgt or 0.0)


def _task_loss(y_img: np.ndarray, sample: Sample, loss_cfg: LossConfig):
    if sample.partition is None:
        loss, g = balanced_score_loss(y_img, sample.gt, loss_cfg)
    else:
        loss, g = weak_score_loss(y_img, sample.gt, sample.partition, loss_cfg)
    n = y_img.size
    return loss / n, g / n


def compute_gradients(
    model: ToyModel,
    source: Sequence[Sample],
    target: Sequence[Sample],
    lam: float,
    loss_cfg: LossConfig = LossConfig(),
    domain_branch: bool = True,
    gates: Optional[Sequence[np.ndarray]] = None,
) -> Gradients:
    """Routed gradients of the adversarial objective for one batch.

    Task losses are per-pixel means per image, averaged over the labeled
    images of each domain. ``gates`` pins the pooling masks (one flat bool
    array per image, source first) so finite differences see a smooth
    objective.
    """
    if not source:
        raise ValueError("source batch must be non-empty")
    images = list(source) + list(target)
    sizes = [s.features.shape[0] * s.features.shape[1] for s in images]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    k = model.n_features
    dt = model.w_f.dtype
    x = np.concatenate([np.asarray(s.features, dt).reshape(-1, k) for s in images])

    w_h = model.w_h
    h = _embed(model, x)
    y = _score(model, h)

    # task losses
    ds = np.zeros_like(y)
    n_src = len(source)
    tgt_labeled = [i for i, s in enumerate(target) if s.labeled]
    loss_src = 0.0
    loss_tgt = 0.0
    for i, s in enumerate(images):
        if not s.labeled:
            continue
        a, b = offsets[i], offsets[i + 1]
        hgt, wid = s.features.shape[:2]
        y_img = y[a:b].reshape(hgt, wid)
        loss, gy = _task_loss(y_img, s, loss_cfg)
        weight = 1.0 / n_src if i < n_src else 1.0 / len(tgt_labeled)
        if i < n_src:
            loss_src += weight * loss
        else:
            loss_tgt += weight * loss
        yy = y[a:b]
        ds[a:b] = (weight * gy.ravel()).astype(dt, copy=False) * yy * (1 - yy)
    grad_w_h = h.T @ ds
    grad_b_h = np.array([ds.sum()])
    dh = ds[:, None] * w_h[None, :]

    grad_d = [np.zeros(np.shape(p)) for p in model.parameter_spaces()[2]]
    loss_d = None
    acc = None
    used_gates: List[np.ndarray] = []
    if domain_branch:
        pooled = []
        for i in range(len(images)):
            a, b = offsets[i], offsets[i + 1]
            gate = pool_gate(y[a:b]) if gates is None else np.asarray(gates[i], dtype=bool)
            used_gates.append(gate)
            pooled.append(grl_forward(h[a:b][gate].mean(axis=0)))
        m = np.stack(pooled)
        dom = np.array([0.0] * n_src + [1.0] * len(target))
        q, logit = _domain_logit(model, m)
        loss_d, dlogit = domain_loss_from_logits(logit, dom)
        acc = float(np.mean((logit > 0) == (dom == 1)))
        w_d1, w_d2 = model.w_d1, model.w_d2
        da = (dlogit[:, None] * w_d2[None, :]) * (1.0 - q * q)
        grad_d = [m.T @ da, da.sum(axis=0), q.T @ dlogit, np.array([dlogit.sum()])]
        dm = grl_backward(da @ w_d1.T, lam)
        for i, gate in enumerate(used_gates):
            a, b = offsets[i], offsets[i + 1]
            dh[a:b] += gate[:, None] * (dm[i] / gate.sum()).astype(dt)

    dz = dh * (1.0 - h * h)
    grad_f = [x.T @ dz, dz.sum(axis=0)]
    return Gradients(
        theta_f=grad_f,
        theta_h=[grad_w_h, grad_b_h],
        theta_d=grad_d,
        loss_task_src=loss_src,
        loss_task_tgt=loss_tgt if tgt_labeled else None,
        loss_domain=loss_d,
        domain_acc=acc,
        gates=used_gates,
    )


def train_step(
    model: ToyModel,
    opt: Optimizers,
    source_batch: Sequence[Sample],
    target_batch: Sequence[Sample],
    cfg: AtaConfig,
    loss_cfg: LossConfig = LossConfig(),
    step: int = 0,
):
    """One Adam update per parameter space. Returns ``(new_model, diagnostics)``."""
    if not target_batch and cfg.domain_branch:
        raise ValueError("target batch must be non-empty")
    g = compute_gradients(
        model, source_batch, target_batch, cfg.lam, loss_cfg, domain_branch=cfg.domain_branch
    )
    for name, v in (("L_task_src", g.loss_task_src), ("L_task_tgt", g.loss_task_tgt),
                    ("L_d", g.loss_domain)):
        if v is not None and not math.isfinite(v):
            raise NumericError(step, name)
    for grads in (g.theta_f, g.theta_h, g.theta_d):
        if not all(np.all(np.isfinite(a)) for a in grads):
            raise NumericError(step, "gradient")
    theta_f, theta_h, theta_d = model.parameter_spaces()
    new = model.with_spaces(
        theta_f=opt.f.step(theta_f, g.theta_f),
        theta_h=opt.h.step(theta_h, g.theta_h),
        theta_d=opt.d.step(theta_d, g.theta_d) if cfg.domain_branch else theta_d,
    )
    diag = {
        "iter": step,
        "L_task_src": g.loss_task_src,
        "L_task_tgt": g.loss_task_tgt,
        "L_d": g.loss_domain,
        "domain_acc": g.domain_acc,
        "L_total": g.loss_task + cfg.lam * (g.loss_domain or 0.0),
    }
    return new, diag


def diagnostics_csv_line(diag: dict) -> str:
    def fmt(v):
        return "" if v is None else repr(float(v))

    return ",".join(
        [str(diag["iter"])]
        + [fmt(diag[k]) for k in ("L_task_src", "L_task_tgt", "L_d", "domain_acc")]
    )


DIAGNOSTICS_HEADER = "iter,L_task_src,L_task_tgt,L_d,domain_acc"


@dataclass
class TrainResult:
    model: ToyModel
    history: List[dict]
    optimizers: Optional[Optimizers] = None

    def csv(self) -> str:
        return "\n".join([DIAGNOSTICS_HEADER] + [diagnostics_csv_line(d) for d in self.history]) + "\n"


def random_crop(sample: Sample, size: int, rng: np.random.Generator) -> Sample:
    """A size x size window of a sample (whole sample if it is smaller)."""
    h, w = sample.features.shape[:2]
    ch, cw = min(size, h), min(size, w)
    y = int(rng.integers(0, h - ch + 1))
    x = int(rng.integers(0, w - cw + 1))
    win = (slice(y, y + ch), slice(x, x + cw))
    return Sample(
        sample.image_id,
        sample.features[win],
        None if sample.gt is None else sample.gt[win],
        None if sample.partition is None else sample.partition[win],
    )


def train_loop(
    model: ToyModel,
    source_set: Sequence[Sample],
    target_set: Sequence[Sample],
    cfg: AtaConfig,
    loss_cfg: LossConfig = LossConfig(),
    callback=None,
    optimizers: Optional[Optimizers] = None,
) -> TrainResult:
    """``cfg.iters`` steps of ``train_step`` on seeded random batches.

    Passing the ``optimizers`` of an earlier run continues its Adam moments
    instead of starting cold.
    """
    if not source_set:
        raise ValueError("source set is empty")
    rng = np.random.default_rng(cfg.seed)
    if optimizers is None:
        opt = Optimizers.from_config(cfg)
    else:
        opt = copy.deepcopy(optimizers)
        for o in (opt.f, opt.h, opt.d):
            o.lr = cfg.lr
    history = []
    for it in range(cfg.iters):
        si = rng.choice(len(source_set), size=min(cfg.batch_source, len(source_set)), replace=False)
        src = [source_set[i] for i in np.sort(si)]
        if target_set:
            ti = rng.choice(
                len(target_set), size=min(cfg.batch_target, len(target_set)), replace=False
            )
            tgt = [target_set[i] for i in np.sort(ti)]
        else:
            tgt = []
        if cfg.crop is not None:
            src = [random_crop(s, cfg.crop, rng) for s in src]
            tgt = [random_crop(s, cfg.crop, rng) for s in tgt]
        if cfg.lr_anneal:
            lr = cfg.lr / (1.0 + 10.0 * it / cfg.iters) ** 0.75
            for o in (opt.f, opt.h, opt.d):
                o.lr = lr
        model, diag = train_step(model, opt, src, tgt, cfg, loss_cfg, step=it)
        history.append(diag)
        if callback is not None:
            callback(diag)
    return TrainResult(model, history, opt)


def pretrain(
    source_set: Sequence[Sample],
    target_set: Sequence[Sample],
    cfg: AtaConfig = AtaConfig(),
    loss_cfg: LossConfig = LossConfig(),
    model: Optional[ToyModel] = None,
    callback=None,
) -> TrainResult:
    """Stage one: source supervision plus adversarial alignment; target labels unused."""
    if model is None:
        model = init_model(cfg.seed)
    unlabeled = [replace(s, gt=None, partition=None) for s in target_set]
    return train_loop(model, source_set, unlabeled, cfg, loss_cfg, callback)


def make_samples(items: Iterable, with_labels: bool = True) -> List[Sample]:
    """Build samples from ``(image_id, GrayImage, gt_mask_or_None)`` triples."""
    out = []
    for image_id, image, gt in items:
        gt_arr = None if (gt is None or not with_labels) else np.asarray(gt, np.float64)
        out.append(Sample(image_id, extract_features(image), gt_arr))
    return out
