"""Gaussian-mixture color transform: density weighting, affine mixing, baking.

A model is N Gaussian primitives in RGB space plus a global affine branch.
Each primitive contributes a local affine transform weighted by its
opacity-scaled normalized density:

    w_i(x) = p_i(x) o_i / (sum_j p_j(x) o_j + eps)
    f(x)   = sum_i w_i(x) (M_i x + b_i) + G x + g, clamped to [0,1]^3

Covariances are parameterized by Cholesky factors (softplus on the diagonal)
so they stay positive definite under unconstrained optimization; Mahalanobis
distances are computed by forward substitution, never by matrix inversion.
Weight normalization is carried out in log space with a max-shift so the
mixture stays finite arbitrarily far from every mean.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .lut_io import CubeLut, lattice_colors

WEIGHT_EPS = 1e-6  # default eps in the weight normalization denominator
MAGIC = b"GLUT"
FORMAT_VERSION = 1
KIND_GLUT = 0
KIND_CGLUT_FULL = 1
KIND_CGLUT_SHARED = 2

_LOG_NORM_3D = -1.5 * math.log(2.0 * math.pi)  # log (2*pi)^(-3/2)


class ModelFormatError(ValueError):
    """Raised for bad magic/version/size when reading a model file."""


class ModelKindError(ModelFormatError):
    """File is a valid model container but of a different kind than expected."""

    def __init__(self, kind: int, expected: str):
        self.kind = kind
        super().__init__(f"model kind {kind} cannot be read as {expected}")


def softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x), overflow-safe for large |x|
    return np.logaddexp(0.0, x)


def softplus_inv(y) -> float:
    return float(np.log(np.expm1(y)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -softplus(-np.asarray(x, dtype=np.float64))


@dataclass
class GaussianPrimitive:
    """One mixture component; arrays may be views into a model's storage."""

    mean: np.ndarray          # (3,)
    chol_raw: np.ndarray      # (6,): 3 diagonal raws (softplus), then L10, L20, L21
    opacity_raw: float
    local_matrix: np.ndarray  # (3, 3)
    local_bias: np.ndarray    # (3,)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_raw))

    def chol(self) -> np.ndarray:
        """Lower-triangular L with Sigma = L L^T."""
        return cholesky_factors(np.asarray(self.chol_raw, dtype=np.float64)[None])[0]

    def covariance(self) -> np.ndarray:
        L = self.chol()
        return L @ L.T


def cholesky_factors(chol_raw: np.ndarray) -> np.ndarray:
    """(N, 6) raw params -> (N, 3, 3) lower-triangular factors."""
    n = chol_raw.shape[0]
    L = np.zeros((n, 3, 3), dtype=np.float64)
    diag = softplus(chol_raw[:, :3])
    L[:, 0, 0] = diag[:, 0]
    L[:, 1, 1] = diag[:, 1]
    L[:, 2, 2] = diag[:, 2]
    L[:, 1, 0] = chol_raw[:, 3]
    L[:, 2, 0] = chol_raw[:, 4]
    L[:, 2, 1] = chol_raw[:, 5]
    return L


@dataclass
class _Prepared:
    """Per-model quantities computed once per evaluation call site."""

    chol: np.ndarray       # (N, 3, 3)
    log_const: np.ndarray  # (N,) = log norm + log opacity
    opacity: np.ndarray    # (N,)


@dataclass(eq=False)
class GlutModel:
    """N Gaussian primitives plus a global affine branch; the mapping f."""

    means: np.ndarray          # (N, 3)
    chol_raw: np.ndarray       # (N, 6)
    opacity_raw: np.ndarray    # (N,)
    local_mats: np.ndarray     # (N, 3, 3) row-major
    local_biases: np.ndarray   # (N, 3)
    global_mat: np.ndarray     # (3, 3)
    global_bias: np.ndarray    # (3,)
    epsilon: float = WEIGHT_EPS

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64)
        self.chol_raw = np.ascontiguousarray(self.chol_raw, dtype=np.float64)
        self.opacity_raw = np.ascontiguousarray(self.opacity_raw, dtype=np.float64)
        self.local_mats = np.ascontiguousarray(self.local_mats, dtype=np.float64)
        self.local_biases = np.ascontiguousarray(self.local_biases, dtype=np.float64)
        self.global_mat = np.ascontiguousarray(self.global_mat, dtype=np.float64)
        self.global_bias = np.ascontiguousarray(self.global_bias, dtype=np.float64)
        n = self.means.shape[0]
        if n < 1:
            raise ValueError("model needs at least one primitive")
        wrong = (
            self.means.shape != (n, 3)
            or self.chol_raw.shape != (n, 6)
            or self.opacity_raw.shape != (n,)
            or self.local_mats.shape != (n, 3, 3)
            or self.local_biases.shape != (n, 3)
            or self.global_mat.shape != (3, 3)
            or self.global_bias.shape != (3,)
        )
        if wrong:
            raise ValueError("parameter array shapes are inconsistent")
        for arr in (self.means, self.chol_raw, self.opacity_raw, self.local_mats,
                    self.local_biases, self.global_mat, self.global_bias):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model parameters must be finite")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def param_count(self) -> int:
        """Learnable scalar count, summed from actual storage (= 22N + 12)."""
        return sum(a.size for a in (self.means, self.chol_raw, self.opacity_raw,
                                    self.local_mats, self.local_biases,
                                    self.global_mat, self.global_bias))

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            mean=self.means[i],
            chol_raw=self.chol_raw[i],
            opacity_raw=float(self.opacity_raw[i]),
            local_matrix=self.local_mats[i],
            local_bias=self.local_biases[i],
        )

    @property
    def primitives(self) -> list[GaussianPrimitive]:
        return [self.primitive(i) for i in range(self.n)]

    @classmethod
    def from_primitives(cls, prims, global_mat, global_bias,
                        epsilon: float = WEIGHT_EPS) -> "GlutModel":
        return cls(
            means=np.stack([p.mean for p in prims]),
            chol_raw=np.stack([p.chol_raw for p in prims]),
            opacity_raw=np.array([p.opacity_raw for p in prims]),
            local_mats=np.stack([p.local_matrix for p in prims]),
            local_biases=np.stack([p.local_bias for p in prims]),
            global_mat=np.asarray(global_mat),
            global_bias=np.asarray(global_bias),
            epsilon=epsilon,
        )

    def copy(self) -> "GlutModel":
        return GlutModel(
            means=self.means.copy(),
            chol_raw=self.chol_raw.copy(),
            opacity_raw=self.opacity_raw.copy(),
            local_mats=self.local_mats.copy(),
            local_biases=self.local_biases.copy(),
            global_mat=self.global_mat.copy(),
            global_bias=self.global_bias.copy(),
            epsilon=self.epsilon,
        )

    def with_biases(self, local_biases: np.ndarray) -> "GlutModel":
        """New model sharing all arrays except the local biases.

        Biases never enter the weights, so density-side state is unaffected.
        """
        m = GlutModel(
            means=self.means,
            chol_raw=self.chol_raw,
            opacity_raw=self.opacity_raw,
            local_mats=self.local_mats,
            local_biases=np.array(local_biases, dtype=np.float64),
            global_mat=self.global_mat,
            global_bias=self.global_bias,
            epsilon=self.epsilon,
        )
        if "prepared" in self.__dict__:  # share the density-side cache
            m.__dict__["prepared"] = self.prepared
        return m

    def param_arrays(self) -> dict[str, np.ndarray]:
        """Live views of the learnable arrays, keyed by field name."""
        return {
            "means": self.means,
            "chol_raw": self.chol_raw,
            "opacity_raw": self.opacity_raw,
            "local_mats": self.local_mats,
            "local_biases": self.local_biases,
            "global_mat": self.global_mat,
            "global_bias": self.global_bias,
        }

    def invalidate_cache(self) -> None:
        """Drop derived state after in-place parameter mutation (training)."""
        self.__dict__.pop("prepared", None)

    @cached_property
    def prepared(self) -> _Prepared:
        L = cholesky_factors(self.chol_raw)
        log_det_half = (np.log(L[:, 0, 0]) + np.log(L[:, 1, 1])
                        + np.log(L[:, 2, 2]))  # log |Sigma|^(1/2)
        log_const = _LOG_NORM_3D - log_det_half + log_sigmoid(self.opacity_raw)
        return _Prepared(chol=L, log_const=log_const,
                         opacity=sigmoid(self.opacity_raw))


def _as_batch(x) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        return a[None, :], True
    return a.reshape(-1, 3), False


def _solve_lower(L: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Forward substitution: z with L z = r. L: (..., 3, 3), r: (..., 3)."""
    z0 = r[..., 0] / L[..., 0, 0]
    z1 = (r[..., 1] - L[..., 1, 0] * z0) / L[..., 1, 1]
    z2 = (r[..., 2] - L[..., 2, 0] * z0 - L[..., 2, 1] * z1) / L[..., 2, 2]
    return np.stack([z0, z1, z2], axis=-1)


def mahalanobis_sq(prim: GaussianPrimitive, x) -> float:
    """(x - mu)^T Sigma^{-1} (x - mu) via triangular solve."""
    r = np.asarray(x, dtype=np.float64) - np.asarray(prim.mean, dtype=np.float64)
    z = _solve_lower(prim.chol(), r)
    return float(np.dot(z, z))


def gaussian_density(prim: GaussianPrimitive, x) -> float:
    """Normalized Gaussian pdf (2pi)^{-3/2} |Sigma|^{-1/2} exp(-d/2) at x."""
    L = prim.chol()
    log_det_half = math.log(L[0, 0]) + math.log(L[1, 1]) + math.log(L[2, 2])
    d = mahalanobis_sq(prim, x)
    return math.exp(_LOG_NORM_3D - log_det_half - 0.5 * d)


def _log_q(prep: _Prepared, means: np.ndarray, x: np.ndarray,
           idx: np.ndarray | None):
    """log(p_i(x) o_i) for all primitives (idx None) or a gathered subset.

    Returns (z, q): the whitened residuals (B, K, 3) and log numerators (B, K).
    """
    if idx is None:
        mu = means[None, :, :]           # (1, N, 3)
        L = prep.chol[None, :, :, :]     # (1, N, 3, 3)
        c = prep.log_const[None, :]      # (1, N)
    else:
        mu = means[idx]                  # (B, K, 3)
        L = prep.chol[idx]               # (B, K, 3, 3)
        c = prep.log_const[idx]          # (B, K)
    r = x[:, None, :] - mu
    z = _solve_lower(L, r)
    d = np.einsum("bkc,bkc->bk", z, z)
    return z, c - 0.5 * d


def _weights_from_q(q: np.ndarray, eps: float) -> np.ndarray:
    """Exact eps-regularized normalization of exp(q), max-shifted.

    w_k = e^{q_k} / (sum_j e^{q_j} + eps); the shift a cancels algebraically,
    so any a gives the same value — max(q, log eps) keeps every exponent <= 0
    on one side and e^{-a} <= 1/eps on the other.
    """
    a = np.maximum(q.max(axis=1), math.log(eps))  # (B,)
    e = np.exp(q - a[:, None])
    denom = e.sum(axis=1) + eps * np.exp(-a)
    return e / denom[:, None]


def influence_weights(model: GlutModel, x) -> np.ndarray:
    """Normalized influence weights w_i(x); (N,) for one color, (B, N) batched."""
    xb, single = _as_batch(x)
    _, q = _log_q(model.prepared, model.means, xb, None)
    w = _weights_from_q(q, model.epsilon)
    return w[0] if single else w


def _mix(model: GlutModel, xb: np.ndarray, w: np.ndarray,
         idx: np.ndarray | None) -> np.ndarray:
    """sum_i w_i (M_i x + b_i) + G x + g for kept primitives."""
    if idx is None:
        fi = np.einsum("nij,bj->bni", model.local_mats, xb) + model.local_biases
    else:
        fi = (np.einsum("bkij,bj->bki", model.local_mats[idx], xb)
              + model.local_biases[idx])
    local = np.einsum("bk,bkc->bc", w, fi)
    return local + xb @ model.global_mat.T + model.global_bias


def evaluate_unclamped(model: GlutModel, x) -> np.ndarray:
    """The mixture output before the [0,1] clamp (used by editing)."""
    xb, single = _as_batch(x)
    _, q = _log_q(model.prepared, model.means, xb, None)
    w = _weights_from_q(q, model.epsilon)
    y = _mix(model, xb, w, None)
    return y[0] if single else y


def evaluate(model: GlutModel, x) -> np.ndarray:
    """f(x), clamped componentwise to [0,1]. Accepts (3,) or (..., 3)."""
    a = np.asarray(x, dtype=np.float64)
    y = evaluate_unclamped(model, a.reshape(-1, 3) if a.ndim > 1 else a)
    return np.clip(y, 0.0, 1.0).reshape(a.shape)


def evaluate_sparse(model: GlutModel, x, keep_fraction: float) -> np.ndarray:
    """evaluate with only the ceil(keep_fraction*N) strongest primitives.

    Ranking is by log numerator (log density + log opacity), i.e. exactly the
    K largest unnormalized weights survive; dropped primitives contribute
    zero before normalization. With keep_fraction = 1 there is nothing to
    prune and this is evaluate itself.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    k = math.ceil(keep_fraction * model.n)
    if k >= model.n:
        return evaluate(model, x)

    a = np.asarray(x, dtype=np.float64)
    xb, single = _as_batch(a)
    _, q_all = _log_q(model.prepared, model.means, xb, None)
    idx = np.argpartition(-q_all, k - 1, axis=1)[:, :k]
    idx.sort(axis=1)  # canonical summation order

    q = np.take_along_axis(q_all, idx, axis=1)
    w = _weights_from_q(q, model.epsilon)
    y = np.clip(_mix(model, xb, w, idx), 0.0, 1.0)
    return (y[0] if single else y).reshape(a.shape)


_CHUNK = 1 << 16  # fixed pixel chunk size: results never depend on thread count


def apply_to_image(model: GlutModel, img: np.ndarray, threads: int = 1,
                   keep_fraction: float = 1.0) -> np.ndarray:
    """Per-pixel evaluate over an (H, W, 3) image.

    Work is split into fixed-size pixel chunks written to disjoint output
    slices, so outputs are bit-identical for any thread count.
    """
    flat = np.asarray(img, dtype=np.float64).reshape(-1, 3)
    out = np.empty_like(flat)
    model.prepared  # build shared per-model state once, outside the workers
    spans = [(s, min(s + _CHUNK, flat.shape[0]))
             for s in range(0, flat.shape[0], _CHUNK)]

    def run(span):
        s, e = span
        out[s:e] = evaluate_sparse(model, flat[s:e], keep_fraction)

    if threads <= 1 or len(spans) == 1:
        for span in spans:
            run(span)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, spans))
    return out.reshape(np.asarray(img).shape)


def bake_to_cube(model: GlutModel, size: int, title: str | None = None) -> CubeLut:
    """Sample the model on the size^3 lattice (red-fastest order)."""
    if size < 2:
        raise ValueError(f"bake size must be >= 2, got {size}")
    entries = evaluate(model, lattice_colors(size))
    return CubeLut(size=size, entries=entries, title=title)


# --- binary model format (little-endian) -----------------------------------
# magic "GLUT" | version u16 | kind u8 | N u32 | f32 payload:
# means 3N, chol_raw 6N, opacity_raw N, local mats row-major 9N,
# local biases 3N, global mat row-major 9, global bias 3, epsilon.

_HEADER = struct.Struct("<4sHBI")


def serialize(model: GlutModel) -> bytes:
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, KIND_GLUT, model.n)]
    for arr in (model.means, model.chol_raw, model.opacity_raw,
                model.local_mats, model.local_biases,
                model.global_mat, model.global_bias):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(struct.pack("<f", model.epsilon))
    return b"".join(parts)


def read_header(data: bytes) -> tuple[int, int, int]:
    """Validate magic/version; return (version, kind, count field)."""
    if len(data) < _HEADER.size:
        raise ModelFormatError("truncated model file (no header)")
    magic, version, kind, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ModelFormatError("bad magic; not a model file")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    return version, kind, n


def peek_kind(data: bytes) -> int:
    return read_header(data)[1]


def deserialize(data: bytes) -> GlutModel:
    _, kind, n = read_header(data)
    if kind != KIND_GLUT:
        raise ModelKindError(kind, "a single-model file")
    if n < 1:
        raise ModelFormatError("model file declares zero primitives")
    expected = _HEADER.size + 4 * (22 * n + 13)
    if len(data) < expected:
        raise ModelFormatError(f"truncated model file: {len(data)} of "
                               f"{expected} bytes")
    if len(data) > expected:
        raise ModelFormatError(f"trailing data after model payload "
                               f"({len(data) - expected} bytes)")
    vals = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    o = 0

    def take(count, shape):
        nonlocal o
        out = vals[o:o + count].reshape(shape)
        o += count
        return out

    return GlutModel(
        means=take(3 * n, (n, 3)),
        chol_raw=take(6 * n, (n, 6)),
        opacity_raw=take(n, (n,)),
        local_mats=take(9 * n, (n, 3, 3)),
        local_biases=take(3 * n, (n, 3)),
        global_mat=take(9, (3, 3)),
        global_bias=take(3, (3,)),
        epsilon=float(vals[o]),
    )
