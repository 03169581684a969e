"""Fitting a Gaussian-mixture color model to a target mapping.

Losses (l1 reconstruction, chroma-weighted hue cosine in CIELab, opacity
entropy), explicitly derived reverse-mode gradients for every raw parameter,
Adam with cosine-annealed learning rate, curriculum hard-sample mining, and
grid initialization.

The backward pass is written by hand rather than taken from an autodiff
framework. The chain, per batch sample:

    x -> (whitened residual z, log weight numerator q) -> weights w
      -> y_pre = sum_i w_i (M_i x + b_i) + G x + g -> clamp -> losses.

Three identities keep it compact:
  * eps-softmax:  dq_k = w_k (dw_k - sum_i w_i dw_i)  (the log-sum-exp shift
    cancels algebraically, so it needs no gradient of its own);
  * Mahalanobis:  with L z = x - mu and v = L^{-T} z,
    d(d)/d(mu) = -2v  and  d(d)/dL[j,k] = -2 v_j z_k (lower triangle);
  * log-determinant:  d(-log L_kk)/dL_kk = -1/L_kk.

Clamp gradient is pass-through inside [0,1] and zero outside; the l1
subgradient at exactly 0 is 0.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import color
from .glut_core import (
    GlutModel,
    WEIGHT_EPS,
    _log_q,
    _weights_from_q,
    evaluate,
    sigmoid,
    softplus_inv,
)
from .lut_io import ColorPairSet, CubeLut, lattice_colors, sublattice_colors, trilinear_sample

OPACITY_EPS = 1e-6  # eps inside the entropy regularizer logs
INIT_SIGMA = 0.15
INIT_OPACITY_RAW = 6.0  # sigmoid(6) ~ 0.9975, standing in for opacity 1.0


class DivergenceError(RuntimeError):
    """Non-finite loss or gradient encountered during fitting."""


@dataclass
class MiningSchedule:
    """Hard-sample curriculum: ratio ramps linearly between the two epochs."""

    start_epoch: int = 5
    end_epoch: int = 20
    start_ratio: float = 0.10
    end_ratio: float = 0.40

    def __post_init__(self):
        if not (0.0 <= self.start_ratio <= 1.0 and 0.0 <= self.end_ratio <= 1.0):
            raise ValueError("mining ratios must be in [0,1]")
        if self.start_epoch >= self.end_epoch:
            raise ValueError("mining start_epoch must precede end_epoch")

    def ratio(self, epoch: float) -> float:
        if epoch < self.start_epoch:
            return 0.0
        if epoch >= self.end_epoch:
            return self.end_ratio
        t = (epoch - self.start_epoch) / (self.end_epoch - self.start_epoch)
        return self.start_ratio + t * (self.end_ratio - self.start_ratio)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 1024
    base_lr: float = 1e-3
    lambda_hc: float = 10.0
    lambda_sparse: float = 0.001
    mining: MiningSchedule = field(default_factory=MiningSchedule)
    seed: int = 0
    # artifact knobs (not part of the published recipe):
    train_q: int = 128       # per-axis density when densifying a grid LUT
    holdout_size: int = 4096  # held-out probe count for per-epoch metrics

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.train_q, self.holdout_size) <= 0:
            raise ValueError("config sizes must be positive")
        if min(self.base_lr, self.lambda_hc, self.lambda_sparse) < 0:
            raise ValueError("rates and loss weights must be non-negative")


@dataclass
class GradientBundle:
    """d(total loss)/d(raw parameter), same layout as the model arrays."""

    means: np.ndarray
    chol_raw: np.ndarray
    opacity_raw: np.ndarray
    local_mats: np.ndarray
    local_biases: np.ndarray
    global_mat: np.ndarray
    global_bias: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "means": self.means,
            "chol_raw": self.chol_raw,
            "opacity_raw": self.opacity_raw,
            "local_mats": self.local_mats,
            "local_biases": self.local_biases,
            "global_mat": self.global_mat,
            "global_bias": self.global_bias,
        }

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())


# --- loss terms -------------------------------------------------------------

def loss_rec(pred, target) -> np.ndarray:
    """l1 reconstruction: sum of |pred - target| over components."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.abs(d).sum(axis=-1)

def loss_hc(pred, target) -> np.ndarray:
    """Hue-cosine loss weighted by target chroma, in CIELab.

    C_target * (1 - <h_pred, h_target>) with eps-regularized unit hue vectors;
    zero-chroma targets contribute ~nothing by construction.
    """
    lab_p = color.srgb_to_lab(pred)
    lab_t = color.srgb_to_lab(target)
    c_t = color.chroma(lab_t)
    hp = color.hue_vector(lab_p)
    ht = color.hue_vector(lab_t)
    return c_t * (1.0 - np.sum(hp * ht, axis=-1))

def reg_sparse(model: GlutModel) -> float:
    """Mean binary entropy of the opacities (drives them toward 0 or 1)."""
    o = sigmoid(model.opacity_raw)
    e = OPACITY_EPS
    ent = o * np.log(o + e) + (1.0 - o) * np.log(1.0 - o + e)
    return float(-np.mean(ent))

def total_loss(model: GlutModel, batch: ColorPairSet, cfg: TrainConfig) -> float:
    """mean(L_rec + lambda_hc * L_hc) + lambda_sparse * R_sparse."""
    loss, _ = _loss_and_grad(model, batch.inputs, batch.targets, cfg,
                             want_grad=False)
    return loss


# --- fused forward/backward -------------------------------------------------

def _solve_upper_t(L: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Back substitution: v with L^T v = z. L: (..., 3, 3) lower."""
    v2 = z[..., 2] / L[..., 2, 2]
    v1 = (z[..., 1] - L[..., 2, 1] * v2) / L[..., 1, 1]
    v0 = (z[..., 0] - L[..., 1, 0] * v1 - L[..., 2, 0] * v2) / L[..., 0, 0]
    return np.stack([v0, v1, v2], axis=-1)


def _loss_and_grad(model: GlutModel, x: np.ndarray, y: np.ndarray,
                   cfg: TrainConfig, want_grad: bool = True):
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    prep = model.prepared
    nb = x.shape[0]

    # forward
    z, q = _log_q(prep, model.means, x, None)        # (B,N,3), (B,N)
    w = _weights_from_q(q, model.epsilon)            # (B,N)
    fi = np.einsum("nij,bj->bni", model.local_mats, x) + model.local_biases
    y_pre = (np.einsum("bn,bnc->bc", w, fi)
             + x @ model.global_mat.T + model.global_bias)
    y_hat = np.clip(y_pre, 0.0, 1.0)

    lab_p = color.srgb_to_lab(y_hat)
    lab_t = color.srgb_to_lab(y)
    c_t = color.chroma(lab_t)
    hp = color.hue_vector(lab_p)
    ht = color.hue_vector(lab_t)
    rec = np.abs(y_hat - y).sum(axis=-1)
    hc = c_t * (1.0 - np.sum(hp * ht, axis=-1))
    loss = float(np.mean(rec + cfg.lambda_hc * hc)
                 + cfg.lambda_sparse * reg_sparse(model))
    if not want_grad:
        return loss, None

    # backward: d(loss)/d(y_hat)
    dy_hat = np.sign(y_hat - y) / nb
    # hue branch: h = ab / sqrt(|ab|^2 + eps); dL/dh = -c_t * ht
    dh = (-cfg.lambda_hc / nb) * c_t[:, None] * ht
    ab = lab_p[..., 1:]
    nrm = np.sqrt(np.sum(ab * ab, axis=-1, keepdims=True) + color.HUE_EPS)
    dab = dh / nrm - ab * np.sum(ab * dh, axis=-1, keepdims=True) / nrm**3
    dlab = np.zeros_like(lab_p)
    dlab[..., 1:] = dab
    dy_hat = dy_hat + color.srgb_to_lab_vjp(y_hat, dlab)

    # clamp: pass-through inside [0,1], zero outside
    inside = (y_pre >= 0.0) & (y_pre <= 1.0)
    dy = np.where(inside, dy_hat, 0.0)               # (B,3)

    # mixture
    dg = dy.sum(axis=0)
    dG = dy.T @ x
    dw = np.einsum("bc,bnc->bn", dy, fi)
    dfi = w[:, :, None] * dy[:, None, :]             # (B,N,3)
    db = dfi.sum(axis=0)
    dM = np.einsum("bnc,bd->ncd", dfi, x)

    # eps-softmax
    dq = w * (dw - np.sum(dw * w, axis=1, keepdims=True))

    # Mahalanobis + log-determinant
    v = _solve_upper_t(prep.chol[None, :, :, :], z)  # (B,N,3)
    dmu = np.einsum("bn,bnc->nc", dq, v)
    dL = np.einsum("bn,bnj,bnk->njk", dq, v, z)
    dq_tot = dq.sum(axis=0)                          # (N,)
    diag = np.arange(3)
    dL[:, diag, diag] -= dq_tot[:, None] / prep.chol[:, diag, diag]

    dchol = np.zeros_like(model.chol_raw)
    dchol[:, :3] = dL[:, diag, diag] * sigmoid(model.chol_raw[:, :3])
    dchol[:, 3] = dL[:, 1, 0]
    dchol[:, 4] = dL[:, 2, 0]
    dchol[:, 5] = dL[:, 2, 1]

    # opacity: log-sigmoid term in q, plus the entropy regularizer
    o = prep.opacity
    e = OPACITY_EPS
    dent = (np.log(o + e) + o / (o + e)
            - np.log(1.0 - o + e) - (1.0 - o) / (1.0 - o + e))
    do = cfg.lambda_sparse * (-dent / model.n)
    doraw = dq_tot * sigmoid(-model.opacity_raw) + do * o * (1.0 - o)

    grads = GradientBundle(
        means=dmu, chol_raw=dchol, opacity_raw=doraw,
        local_mats=dM, local_biases=db, global_mat=dG, global_bias=dg,
    )
    return loss, grads


def backward(model: GlutModel, batch: ColorPairSet,
             cfg: TrainConfig) -> GradientBundle:
    """Exact gradient of total_loss w.r.t. every raw model parameter."""
    _, grads = _loss_and_grad(model, batch.inputs, batch.targets, cfg)
    if not grads.is_finite():
        raise DivergenceError("non-finite gradient")
    return grads


# --- optimizer and schedule ---------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators over a named parameter dict."""

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            params=params,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(state: AdamState, grads: dict[str, np.ndarray],
              lr: float) -> AdamState:
    """One bias-corrected Adam update, applied to the params in place."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for k, p in state.params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return state


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine anneal from base_lr at step 0 to exactly 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


# --- initialization -----------------------------------------------------------

def init_glut(n: int, seed: int | None = None,
              epsilon: float = WEIGHT_EPS) -> GlutModel:
    """Grid-initialized model: means on the smallest lattice with >= n points,
    isotropic covariances (sigma = 0.15), near-1 opacities, identity local
    transforms, zero global branch.

    Placement is deterministic; `seed` is accepted for interface symmetry with
    the stochastic fitting entry points.
    """
    del seed
    if n < 1:
        raise ValueError("need at least one primitive")
    c = 1
    while c**3 < n:
        c += 1
    if c == 1:
        means = np.array([[0.5, 0.5, 0.5]])
    else:
        means = lattice_colors(c)[:n]
    chol_raw = np.zeros((n, 6))
    chol_raw[:, :3] = softplus_inv(INIT_SIGMA)
    return GlutModel(
        means=means,
        chol_raw=chol_raw,
        opacity_raw=np.full(n, INIT_OPACITY_RAW),
        local_mats=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
        local_biases=np.zeros((n, 3)),
        global_mat=np.zeros((3, 3)),
        global_bias=np.zeros(3),
        epsilon=epsilon,
    )


# --- batching / mining --------------------------------------------------------

def mine_batches(errors: np.ndarray | None, epoch: int, schedule: MiningSchedule,
                 batch_size: int, rng: np.random.Generator, n_samples: int):
    """Yield index batches for one epoch.

    Base order is a full permutation sliced into batches (final partial batch
    kept). With mining ratio r > 0, the first round(r * len(batch)) entries of
    each batch are replaced by draws from the top-r-fraction highest-error
    pool. r = 0 consumes only the permutation draw, so it reproduces plain
    uniform shuffling on the same rng stream.
    """
    perm = rng.permutation(n_samples)
    r = 0.0 if epoch == 0 else schedule.ratio(epoch)
    pool = None
    if r > 0.0:
        if errors is None or len(errors) != n_samples:
            raise ValueError("mining requires per-sample errors for the full set")
        pool_size = max(1, int(round(r * n_samples)))
        pool = np.argpartition(-errors, pool_size - 1)[:pool_size]
    for s in range(0, n_samples, batch_size):
        idx = perm[s:s + batch_size]
        if pool is not None:
            n_hard = int(round(r * len(idx)))
            if n_hard:
                idx = idx.copy()
                idx[:n_hard] = pool[rng.integers(0, len(pool), n_hard)]
        yield idx


def per_sample_l1(model: GlutModel, inputs: np.ndarray, targets: np.ndarray,
                  chunk: int = 1 << 16) -> np.ndarray:
    """Full-pass l1 error per sample, chunked; feeds the mining pool."""
    out = np.empty(inputs.shape[0])
    for s in range(0, inputs.shape[0], chunk):
        e = min(s + chunk, inputs.shape[0])
        out[s:e] = np.abs(evaluate(model, inputs[s:e]) - targets[s:e]).sum(axis=-1)
    return out


def sample_complement(rng: np.random.Generator, count: int, q_train: int,
                      full: int = 256) -> np.ndarray:
    """Random colors from the full code lattice minus the train sublattice."""
    stride = full // q_train
    out = np.empty((0, 3), dtype=np.int64)
    while out.shape[0] < count:
        cand = rng.integers(0, full, size=(2 * count, 3))
        keep = ~np.all(cand % stride == 0, axis=1)
        out = np.concatenate([out, cand[keep]])
    return out[:count].astype(np.float64) / (full - 1)


# --- fitting ------------------------------------------------------------------

def _holdout_metrics(model: GlutModel, inputs: np.ndarray,
                     targets: np.ndarray) -> dict:
    pred = evaluate(model, inputs)
    lab_p = color.srgb_to_lab(pred)
    lab_t = color.srgb_to_lab(targets)
    return {
        "holdout_psnr": color.psnr(pred, targets),
        "holdout_de76": float(np.mean(color.delta_e76(lab_p, lab_t))),
        "holdout_de00": float(np.mean(color.delta_e00(lab_p, lab_t))),
    }


def _train_data(target, cfg: TrainConfig, rng: np.random.Generator):
    """(train X, train Y, holdout X, holdout Y) for a LUT or explicit pairs."""
    if isinstance(target, CubeLut):
        x = sublattice_colors(cfg.train_q)
        y = np.clip(trilinear_sample(target, x), 0.0, 1.0)
        hx = sample_complement(rng, cfg.holdout_size, cfg.train_q)
        hy = np.clip(trilinear_sample(target, hx), 0.0, 1.0)
        return x, y, hx, hy
    if isinstance(target, ColorPairSet):
        if len(target) == 0:
            raise ValueError("empty pair set")
        # no oracle for unseen colors: hold out a seeded in-sample probe
        k = min(cfg.holdout_size, len(target))
        idx = rng.choice(len(target), size=k, replace=False)
        return target.inputs, target.targets, target.inputs[idx], target.targets[idx]
    raise TypeError(f"cannot fit against {type(target).__name__}")


def fit_glut(target, n: int = 32, cfg: TrainConfig | None = None,
             log_path: str | None = None) -> tuple[GlutModel, list[dict]]:
    """Fit an n-primitive model to a CubeLut or ColorPairSet.

    Returns the trained model plus one metrics record per epoch; the same
    records are appended to `log_path` as JSON lines when given. Deterministic
    for a fixed config seed.
    """
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    x, y, hx, hy = _train_data(target, cfg, rng)

    model = init_glut(n, epsilon=WEIGHT_EPS)
    state = AdamState.init(model.param_arrays())
    batches_per_epoch = max(1, math.ceil(x.shape[0] / cfg.batch_size))
    total_steps = cfg.epochs * batches_per_epoch

    records: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        step = 0
        errors = None
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            if epoch > 0 and cfg.mining.ratio(epoch) > 0.0:
                errors = per_sample_l1(model, x, y)
            losses = []
            lr = cfg.base_lr
            for idx in mine_batches(errors, epoch, cfg.mining,
                                    cfg.batch_size, rng, x.shape[0]):
                lr = cosine_lr(step, total_steps, cfg.base_lr)
                loss, grads = _loss_and_grad(model, x[idx], y[idx], cfg)
                if not math.isfinite(loss):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch} step {step}")
                if not grads.is_finite():
                    raise DivergenceError(
                        f"non-finite gradient at epoch {epoch} step {step}")
                adam_step(state, grads.arrays(), lr)
                model.invalidate_cache()
                losses.append(loss)
                step += 1
            rec = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": float(np.mean(losses)),
                **_holdout_metrics(model, hx, hy),
                "wall_ms": (time.perf_counter() - t0) * 1000.0,
            }
            records.append(rec)
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
    finally:
        if log_file:
            log_file.close()
    return model, records
