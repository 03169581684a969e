"""Conditional multi-style model: one generator network materializes a full
Gaussian-mixture color model per learnable style embedding.

Architecture: a shared 3-layer MLP encoder (width H) reads a D-dim style
embedding, then parameter-specific heads emit raw model parameters — mean
(3N), cholesky (6N), opacity (N), local_color (12N = matrices then biases),
global (12). Heads are 2 linear layers except local_color with 3; every
intermediate layer is followed by ReLU, head outputs are raw (squashing
happens in the materialized model, identical to single-model semantics).

The Shared Geometry variant drops the mean/cholesky heads and instead learns
one set of means and Cholesky factors common to all styles, so every style
partitions color space identically and only opacities/color transforms vary.

Blending two styles is linear interpolation of their embeddings followed by
ordinary generation.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass

import numpy as np

from .glut_core import (
    GlutModel,
    KIND_CGLUT_FULL,
    KIND_CGLUT_SHARED,
    KIND_GLUT,
    MAGIC,
    FORMAT_VERSION,
    ModelFormatError,
    ModelKindError,
    WEIGHT_EPS,
    deserialize as deserialize_glut,
    read_header,
)
from .glut_train import (
    DivergenceError,
    AdamState,
    TrainConfig,
    _loss_and_grad,
    _train_data,
    _holdout_metrics,
    adam_step,
    cosine_lr,
    init_glut,
    mine_batches,
    per_sample_l1,
)

MODE_FULL = "full"
MODE_SHARED = "shared"
EMBED_DIM = 64
EMBED_INIT_STD = 0.1
SLOW_LR_SCALE = 0.1  # embeddings + shared geometry train at 0.1x the base rate

HEAD_ORDER = ("mean", "cholesky", "opacity", "local_color", "global")


def head_specs(n: int, mode: str) -> dict[str, tuple[int, int]]:
    """Head name -> (layer count, output width) for N primitives."""
    specs = {
        "mean": (2, 3 * n),
        "cholesky": (2, 6 * n),
        "opacity": (2, n),
        "local_color": (3, 12 * n),
        "global": (2, 12),
    }
    if mode == MODE_SHARED:
        del specs["mean"]
        del specs["cholesky"]
    elif mode != MODE_FULL:
        raise ValueError(f"unknown mode {mode!r}")
    return specs


def generator_keys(n: int, mode: str, h: int, d: int) -> list[tuple[str, int, int]]:
    """Canonical (key, out_dim, in_dim) listing of all generator layers."""
    keys = [(f"enc.{i}", h, d if i == 0 else h) for i in range(3)]
    for name, (depth, out) in head_specs(n, mode).items():
        for j in range(depth):
            keys.append((f"{name}.{j}", out if j == depth - 1 else h, h))
    return keys


@dataclass(eq=False)
class CglutModel:
    """Style embedding table + generator weights (+ optional shared geometry)."""

    embeddings: np.ndarray      # (L, D)
    gen: dict[str, np.ndarray]  # "<layer>.w" (out,in) and "<layer>.b" (out,)
    n: int
    h: int
    mode: str = MODE_FULL
    shared_means: np.ndarray | None = None     # (N, 3), shared mode only
    shared_chol_raw: np.ndarray | None = None  # (N, 6), shared mode only
    epsilon: float = WEIGHT_EPS

    def __post_init__(self):
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ValueError("embeddings must be (L, D)")
        for key, out, inp in generator_keys(self.n, self.mode, self.h, self.d):
            w = self.gen.get(key + ".w")
            b = self.gen.get(key + ".b")
            if w is None or b is None or w.shape != (out, inp) or b.shape != (out,):
                raise ValueError(f"generator layer {key} missing or mis-shaped")
        shared = self.mode == MODE_SHARED
        has_geo = self.shared_means is not None and self.shared_chol_raw is not None
        if shared != has_geo:
            raise ValueError("shared geometry arrays present iff mode is shared")
        if shared:
            self.shared_means = np.ascontiguousarray(self.shared_means,
                                                     dtype=np.float64)
            self.shared_chol_raw = np.ascontiguousarray(self.shared_chol_raw,
                                                        dtype=np.float64)
            if self.shared_means.shape != (self.n, 3) \
                    or self.shared_chol_raw.shape != (self.n, 6):
                raise ValueError("shared geometry arrays mis-shaped")

    @property
    def l(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    @property
    def generator_param_count(self) -> int:
        return sum(a.size for a in self.gen.values())

    @property
    def param_count(self) -> int:
        total = self.embeddings.size + self.generator_param_count
        if self.mode == MODE_SHARED:
            total += self.shared_means.size + self.shared_chol_raw.size
        return total

    def param_arrays(self) -> dict[str, np.ndarray]:
        out = {"embeddings": self.embeddings, **self.gen}
        if self.mode == MODE_SHARED:
            out["shared_means"] = self.shared_means
            out["shared_chol_raw"] = self.shared_chol_raw
        return out


def init_cglut(l: int, n: int, d: int = EMBED_DIM, h: int = 64,
               mode: str = MODE_FULL, seed: int = 0,
               epsilon: float = WEIGHT_EPS) -> CglutModel:
    """Fan-in uniform hidden layers; each head's final layer starts at zero
    weights with its bias set to the grid-initialized single-model raw
    parameters, so every style (and every blend) begins as the same
    identity-like mapping.
    """
    if l < 1:
        raise ValueError("need at least one style")
    rng = np.random.default_rng(seed)
    base = init_glut(n, epsilon=epsilon)
    final_bias = {
        "mean": base.means.reshape(-1),
        "cholesky": base.chol_raw.reshape(-1),
        "opacity": base.opacity_raw.copy(),
        "local_color": np.concatenate([base.local_mats.reshape(-1),
                                       base.local_biases.reshape(-1)]),
        "global": np.concatenate([base.global_mat.reshape(-1),
                                  base.global_bias]),
    }
    gen: dict[str, np.ndarray] = {}
    for key, out, inp in generator_keys(n, mode, h, d):
        name, j = key.rsplit(".", 1)
        depth = 3 if name == "enc" else head_specs(n, mode)[name][0]
        is_final_head = name != "enc" and int(j) == depth - 1
        if is_final_head:
            gen[key + ".w"] = np.zeros((out, inp))
            gen[key + ".b"] = final_bias[name].astype(np.float64).copy()
        else:
            bound = 1.0 / math.sqrt(inp)
            gen[key + ".w"] = rng.uniform(-bound, bound, (out, inp))
            gen[key + ".b"] = rng.uniform(-bound, bound, out)
    shared_means = shared_chol = None
    if mode == MODE_SHARED:
        shared_means = base.means.copy()
        shared_chol = base.chol_raw.copy()
    return CglutModel(
        embeddings=rng.normal(0.0, EMBED_INIT_STD, (l, d)),
        gen=gen, n=n, h=h, mode=mode,
        shared_means=shared_means, shared_chol_raw=shared_chol,
        epsilon=epsilon,
    )


# --- generator forward/backward ----------------------------------------------

def _gen_forward(model: CglutModel, e_rows: np.ndarray):
    """Run the generator on (S, D) embedding rows.

    Returns (head outputs dict name -> (S, out), cache for backward).
    """
    cache = {"layers": {}}
    a = e_rows
    for i in range(3):
        key = f"enc.{i}"
        pre = a @ model.gen[key + ".w"].T + model.gen[key + ".b"]
        cache["layers"][key] = (a, pre)
        a = np.maximum(pre, 0.0)
    cache["feat"] = a
    outs = {}
    for name, (depth, _) in head_specs(model.n, model.mode).items():
        t = a
        for j in range(depth):
            key = f"{name}.{j}"
            pre = t @ model.gen[key + ".w"].T + model.gen[key + ".b"]
            cache["layers"][key] = (t, pre)
            t = np.maximum(pre, 0.0) if j < depth - 1 else pre
        outs[name] = t
    return outs, cache


def _gen_backward(model: CglutModel, cache, d_outs: dict[str, np.ndarray]):
    """Backprop head-output gradients to generator weights and embeddings."""
    grads = {k: np.zeros_like(v) for k, v in model.gen.items()}
    d_feat = np.zeros_like(cache["feat"])
    for name, (depth, _) in head_specs(model.n, model.mode).items():
        dt = d_outs[name]
        for j in reversed(range(depth)):
            key = f"{name}.{j}"
            x_in, pre = cache["layers"][key]
            if j < depth - 1:
                dt = dt * (pre > 0.0)  # ReLU mask on this layer's output
            grads[key + ".w"] += dt.T @ x_in
            grads[key + ".b"] += dt.sum(axis=0)
            dt = dt @ model.gen[key + ".w"]
        d_feat += dt
    da = d_feat
    for i in reversed(range(3)):
        key = f"enc.{i}"
        x_in, pre = cache["layers"][key]
        da = da * (pre > 0.0)
        grads[key + ".w"] += da.T @ x_in
        grads[key + ".b"] += da.sum(axis=0)
        da = da @ model.gen[key + ".w"]
    return grads, da  # da: (S, D) embedding-row gradients


def _materialize(model: CglutModel, outs: dict[str, np.ndarray],
                 row: int) -> GlutModel:
    """GlutModel from one generated row; raw semantics match the single model."""
    n = model.n
    if model.mode == MODE_FULL:
        means = outs["mean"][row].reshape(n, 3)
        chol = outs["cholesky"][row].reshape(n, 6)
    else:
        means = model.shared_means
        chol = model.shared_chol_raw
    local = outs["local_color"][row]
    glob = outs["global"][row]
    return GlutModel(
        means=means,
        chol_raw=chol,
        opacity_raw=outs["opacity"][row],
        local_mats=local[: 9 * n].reshape(n, 3, 3),
        local_biases=local[9 * n:].reshape(n, 3),
        global_mat=glob[:9].reshape(3, 3),
        global_bias=glob[9:],
        epsilon=model.epsilon,
    )


def generate_params(model: CglutModel, e: np.ndarray) -> GlutModel:
    """Materialize the color model for one embedding vector."""
    e = np.asarray(e, dtype=np.float64)
    if e.shape != (model.d,):
        raise ValueError(f"embedding must have dimension {model.d}")
    outs, _ = _gen_forward(model, e[None, :])
    return _materialize(model, outs, 0)


def evaluate_style(model: CglutModel, l: int, x) -> np.ndarray:
    """evaluate(generate_params(model, e_l), x) — no separate code path."""
    from .glut_core import evaluate

    return evaluate(materialize_style(model, l), x)


def materialize_style(model: CglutModel, l: int) -> GlutModel:
    if not 0 <= l < model.l:
        raise IndexError(f"style index {l} out of range [0, {model.l})")
    return generate_params(model, model.embeddings[l])


def blend(model: CglutModel, l1: int, l2: int, alpha: float) -> GlutModel:
    """Materialize the interpolated embedding (1-alpha) e_l1 + alpha e_l2."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    for l in (l1, l2):
        if not 0 <= l < model.l:
            raise IndexError(f"style index {l} out of range [0, {model.l})")
    e = (1.0 - alpha) * model.embeddings[l1] + alpha * model.embeddings[l2]
    return generate_params(model, e)


# --- joint training -----------------------------------------------------------

@dataclass
class StyleBatch:
    """(style, input, target) triples; styles index the embedding table."""

    style_ids: np.ndarray  # (B,) int
    inputs: np.ndarray     # (B, 3)
    targets: np.ndarray    # (B, 3)

    def __post_init__(self):
        self.style_ids = np.asarray(self.style_ids, dtype=np.int64)
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        b = self.style_ids.shape[0]
        if self.inputs.shape != (b, 3) or self.targets.shape != (b, 3):
            raise ValueError("style_ids, inputs and targets must share length")


def backward_cglut(model: CglutModel, batch: StyleBatch, cfg: TrainConfig):
    """Total loss over the batch and gradients for every trainable array.

    Per-sample objective is the single-model objective under the sample's
    style (each sample carries the opacity regularizer of its own style);
    the batch loss is the plain mean. Embeddings of styles absent from the
    batch receive exactly zero gradient.
    """
    styles = np.unique(batch.style_ids)
    e_rows = model.embeddings[styles]
    outs, cache = _gen_forward(model, e_rows)

    nb = batch.inputs.shape[0]
    d_outs = {name: np.zeros_like(o) for name, o in outs.items()}
    d_shared_means = d_shared_chol = None
    if model.mode == MODE_SHARED:
        d_shared_means = np.zeros_like(model.shared_means)
        d_shared_chol = np.zeros_like(model.shared_chol_raw)

    total = 0.0
    n = model.n
    for row, s in enumerate(styles):
        sel = batch.style_ids == s
        sub_x = batch.inputs[sel]
        sub_y = batch.targets[sel]
        glut = _materialize(model, outs, row)
        loss, g = _loss_and_grad(glut, sub_x, sub_y, cfg)
        scale = sub_x.shape[0] / nb
        total += scale * loss
        if model.mode == MODE_FULL:
            d_outs["mean"][row] = scale * g.means.reshape(-1)
            d_outs["cholesky"][row] = scale * g.chol_raw.reshape(-1)
        else:
            d_shared_means += scale * g.means
            d_shared_chol += scale * g.chol_raw
        d_outs["opacity"][row] = scale * g.opacity_raw
        d_outs["local_color"][row] = scale * np.concatenate(
            [g.local_mats.reshape(-1), g.local_biases.reshape(-1)])
        d_outs["global"][row] = scale * np.concatenate(
            [g.global_mat.reshape(-1), g.global_bias])

    gen_grads, d_rows = _gen_backward(model, cache, d_outs)
    d_embed = np.zeros_like(model.embeddings)
    d_embed[styles] = d_rows

    grads = {"embeddings": d_embed, **gen_grads}
    if model.mode == MODE_SHARED:
        grads["shared_means"] = d_shared_means
        grads["shared_chol_raw"] = d_shared_chol
    return total, grads


def cglut_loss(model: CglutModel, batch: StyleBatch, cfg: TrainConfig) -> float:
    """Forward-only counterpart of backward_cglut (finite-difference probes)."""
    styles = np.unique(batch.style_ids)
    outs, _ = _gen_forward(model, model.embeddings[styles])
    total = 0.0
    nb = batch.inputs.shape[0]
    for row, s in enumerate(styles):
        sel = batch.style_ids == s
        glut = _materialize(model, outs, row)
        loss, _ = _loss_and_grad(glut, batch.inputs[sel], batch.targets[sel],
                                 cfg, want_grad=False)
        total += loss * np.count_nonzero(sel) / nb
    return total


def default_cglut_config(**overrides) -> TrainConfig:
    """Published multi-style recipe: 40 epochs, batch 8192."""
    merged = {"epochs": 40, "batch_size": 8192, **overrides}
    return TrainConfig(**merged)


def fit_cglut(targets, n: int = 32, cfg: TrainConfig | None = None,
              mode: str = MODE_FULL, h: int = 64, d: int = EMBED_DIM,
              log_path: str | None = None) -> tuple[CglutModel, list[dict]]:
    """Jointly fit one conditional model to L >= 2 target mappings.

    `targets` is a sequence of CubeLut or ColorPairSet, one per style, indexed
    in order. The generator and heads train at cfg.base_lr; embeddings and
    shared-geometry parameters at 0.1x. Deterministic given cfg.seed.
    """
    targets = list(targets)
    if len(targets) < 2:
        raise ValueError("conditional fitting needs at least two styles")
    cfg = cfg or default_cglut_config()
    rng = np.random.default_rng(cfg.seed)

    xs, ys, hxs, hys = [], [], [], []
    for t in targets:
        x, y, hx, hy = _train_data(t, cfg, rng)
        xs.append(x)
        ys.append(y)
        hxs.append(hx)
        hys.append(hy)
    style_ids = np.concatenate([np.full(len(x), s, dtype=np.int64)
                                for s, x in enumerate(xs)])
    sample_idx = np.concatenate([np.arange(len(x)) for x in xs])
    pool_n = style_ids.shape[0]

    model = init_cglut(len(targets), n, d=d, h=h, mode=mode, seed=cfg.seed)
    params = model.param_arrays()
    slow_keys = {"embeddings", "shared_means", "shared_chol_raw"}
    state_fast = AdamState.init({k: v for k, v in params.items()
                                 if k not in slow_keys})
    state_slow = AdamState.init({k: v for k, v in params.items()
                                 if k in slow_keys})

    batches_per_epoch = max(1, math.ceil(pool_n / cfg.batch_size))
    total_steps = cfg.epochs * batches_per_epoch

    def gather(idx):
        s = style_ids[idx]
        j = sample_idx[idx]
        x = np.empty((len(idx), 3))
        y = np.empty((len(idx), 3))
        for st in np.unique(s):
            m = s == st
            x[m] = xs[st][j[m]]
            y[m] = ys[st][j[m]]
        return StyleBatch(s, x, y)

    records: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        step = 0
        errors = None
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            if epoch > 0 and cfg.mining.ratio(epoch) > 0.0:
                errors = np.concatenate([
                    per_sample_l1(materialize_style(model, s), xs[s], ys[s])
                    for s in range(len(targets))])
            losses = []
            lr = cfg.base_lr
            for idx in mine_batches(errors, epoch, cfg.mining,
                                    cfg.batch_size, rng, pool_n):
                lr = cosine_lr(step, total_steps, cfg.base_lr)
                loss, grads = backward_cglut(model, gather(idx), cfg)
                if not math.isfinite(loss):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch} step {step}")
                if not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise DivergenceError(
                        f"non-finite gradient at epoch {epoch} step {step}")
                adam_step(state_fast,
                          {k: grads[k] for k in state_fast.params}, lr)
                adam_step(state_slow,
                          {k: grads[k] for k in state_slow.params},
                          lr * SLOW_LR_SCALE)
                losses.append(loss)
                step += 1
            per_style = [_holdout_metrics(materialize_style(model, s),
                                          hxs[s], hys[s])
                         for s in range(len(targets))]
            rec = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": float(np.mean(losses)),
                "holdout_psnr": float(np.mean([m["holdout_psnr"]
                                               for m in per_style])),
                "holdout_de76": float(np.mean([m["holdout_de76"]
                                               for m in per_style])),
                "holdout_de00": float(np.mean([m["holdout_de00"]
                                               for m in per_style])),
                "per_style_psnr": [m["holdout_psnr"] for m in per_style],
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


# --- binary format (kinds 1 and 2) ---------------------------------------------
# magic "GLUT" | version u16 | kind u8 | L, D, N, H as u32 | f32 embeddings
# (L*D) | f32 generator layers in canonical order (each weight row-major, then
# bias) | shared mode only: f32 shared means (3N) + shared chol (6N).

_CG_HEAD = struct.Struct("<4sHB")
_CG_DIMS = struct.Struct("<IIII")


def serialize_cglut(model: CglutModel) -> bytes:
    kind = KIND_CGLUT_FULL if model.mode == MODE_FULL else KIND_CGLUT_SHARED
    parts = [_CG_HEAD.pack(MAGIC, FORMAT_VERSION, kind),
             _CG_DIMS.pack(model.l, model.d, model.n, model.h)]
    parts.append(np.ascontiguousarray(model.embeddings, dtype="<f4").tobytes())
    for key, _, _ in generator_keys(model.n, model.mode, model.h, model.d):
        parts.append(np.ascontiguousarray(model.gen[key + ".w"],
                                          dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(model.gen[key + ".b"],
                                          dtype="<f4").tobytes())
    if model.mode == MODE_SHARED:
        parts.append(np.ascontiguousarray(model.shared_means,
                                          dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(model.shared_chol_raw,
                                          dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize_cglut(data: bytes) -> CglutModel:
    _, kind, _ = read_header(data)
    if kind not in (KIND_CGLUT_FULL, KIND_CGLUT_SHARED):
        raise ModelKindError(kind, "a conditional model file")
    mode = MODE_FULL if kind == KIND_CGLUT_FULL else MODE_SHARED
    off = _CG_HEAD.size
    if len(data) < off + _CG_DIMS.size:
        raise ModelFormatError("truncated model file (no dimensions)")
    l, d, n, h = _CG_DIMS.unpack_from(data, off)
    off += _CG_DIMS.size
    if min(l, d, n, h) < 1:
        raise ModelFormatError("conditional model declares a zero dimension")

    keys = generator_keys(n, mode, h, d)
    count = l * d + sum(out * inp + out for _, out, inp in keys)
    if mode == MODE_SHARED:
        count += 9 * n
    expected = off + 4 * count
    if len(data) < expected:
        raise ModelFormatError(f"truncated model file: {len(data)} of "
                               f"{expected} bytes")
    if len(data) > expected:
        raise ModelFormatError(f"trailing data after model payload "
                               f"({len(data) - expected} bytes)")
    vals = np.frombuffer(data, dtype="<f4", offset=off).astype(np.float64)
    pos = 0

    def take(cnt, shape):
        nonlocal pos
        out = vals[pos:pos + cnt].reshape(shape)
        pos += cnt
        return out

    embeddings = take(l * d, (l, d))
    gen = {}
    for key, out, inp in keys:
        gen[key + ".w"] = take(out * inp, (out, inp))
        gen[key + ".b"] = take(out, (out,))
    shared_means = shared_chol = None
    if mode == MODE_SHARED:
        shared_means = take(3 * n, (n, 3))
        shared_chol = take(6 * n, (n, 6))
    return CglutModel(embeddings=embeddings, gen=gen, n=n, h=h, mode=mode,
                      shared_means=shared_means, shared_chol_raw=shared_chol)


def load_any_model(data: bytes):
    """Dispatch a model file to the single or conditional reader by kind."""
    _, kind, _ = read_header(data)
    if kind == KIND_GLUT:
        return deserialize_glut(data)
    if kind in (KIND_CGLUT_FULL, KIND_CGLUT_SHARED):
        return deserialize_cglut(data)
    raise ModelFormatError(f"unknown model kind {kind}")
