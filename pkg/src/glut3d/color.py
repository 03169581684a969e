"""Color space conversions and color difference metrics.

sRGB <-> CIELab uses the IEC 61966-2-1 transfer function and the D65 white
point. The Lab nonlinearity keeps the standard linear branch below (6/29)^3,
so the whole conversion is C1 and safe to differentiate through.

All functions accept arrays of shape (..., 3) and broadcast over leading
dimensions.
"""

from __future__ import annotations

import numpy as np

# sRGB (linear) -> XYZ, D65, 2 degree observer
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
# reference white = image of (1,1,1): using the exact row sums (vs the rounded
# published 0.95047/1.0/1.08883) keeps the gray axis at a = b = 0 identically
_WHITE_D65 = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0
_DELTA3 = _DELTA**3

# regularizer for hue unit vectors near the gray axis (C ~ 0)
HUE_EPS = 1e-8

PSNR_CAP_DB = 100.0


def srgb_decode(c: np.ndarray) -> np.ndarray:
    """sRGB-encoded values -> linear light (per component)."""
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def srgb_decode_deriv(c: np.ndarray) -> np.ndarray:
    """Derivative of srgb_decode, used by the training backward pass."""
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, 1.0 / 12.92, (2.4 / 1.055) * ((c + 0.055) / 1.055) ** 1.4)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0)


def _lab_f_deriv(t: np.ndarray) -> np.ndarray:
    safe = np.maximum(t, _DELTA3)
    return np.where(t > _DELTA3, np.cbrt(safe) ** -2 / 3.0, 1.0 / (3.0 * _DELTA**2))


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert sRGB in nominal [0,1] to CIELab (D65).

    Out-of-gamut inputs pass through the same formulas; no clipping is
    performed here.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    xyz = srgb_decode(rgb) @ _RGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE_D65)
    lum = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([lum, a, b], axis=-1)


def srgb_to_lab_vjp(rgb: np.ndarray, lab_grad: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of srgb_to_lab at `rgb` applied to `lab_grad`.

    Returns d(loss)/d(rgb) given d(loss)/d(lab). The conversion is a chain of
    componentwise maps and two fixed linear maps, so the VJP is exact.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    lin = srgb_decode(rgb)
    t = (lin @ _RGB_TO_XYZ.T) / _WHITE_D65

    df = np.empty_like(t)
    df[..., 0] = 500.0 * lab_grad[..., 1]
    df[..., 1] = 116.0 * lab_grad[..., 0] - 500.0 * lab_grad[..., 1] + 200.0 * lab_grad[..., 2]
    df[..., 2] = -200.0 * lab_grad[..., 2]

    dxyz = df * _lab_f_deriv(t) / _WHITE_D65
    dlin = dxyz @ _RGB_TO_XYZ
    return dlin * srgb_decode_deriv(rgb)


def chroma(lab: np.ndarray) -> np.ndarray:
    """C = sqrt(a^2 + b^2)."""
    return np.hypot(lab[..., 1], lab[..., 2])


def hue_vector(lab: np.ndarray) -> np.ndarray:
    """Unit hue vector (a, b)/sqrt(a^2 + b^2 + eps); finite on the gray axis."""
    ab = lab[..., 1:]
    norm = np.sqrt(np.sum(ab * ab, axis=-1, keepdims=True) + HUE_EPS)
    return ab / norm


def delta_e76(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """CIE 1976 color difference: Euclidean distance in Lab."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return np.sqrt(np.sum(d * d, axis=-1))


def delta_e00(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """CIEDE2000 color difference with kL = kC = kH = 1."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    l1, a1, b1 = x[..., 0], x[..., 1], x[..., 2]
    l2, a2, b2 = y[..., 0], y[..., 1], y[..., 2]

    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    cbar = 0.5 * (c1 + c2)
    cbar7 = cbar**7
    g = 0.5 * (1.0 - np.sqrt(cbar7 / (cbar7 + 25.0**7)))

    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)

    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    h1p = np.where((b1 == 0) & (a1p == 0), 0.0, h1p)
    h2p = np.where((b2 == 0) & (a2p == 0), 0.0, h2p)

    dlp = l2 - l1
    dcp = c2p - c1p

    zero_chroma = (c1p * c2p) == 0
    hdiff = h2p - h1p
    dhp = np.where(hdiff > 180.0, hdiff - 360.0, np.where(hdiff < -180.0, hdiff + 360.0, hdiff))
    dhp = np.where(zero_chroma, 0.0, dhp)
    dHp = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dhp) / 2.0)

    lbar = 0.5 * (l1 + l2)
    cbarp = 0.5 * (c1p + c2p)

    hsum = h1p + h2p
    habs = np.abs(h1p - h2p)
    hbar = np.where(
        habs <= 180.0,
        0.5 * hsum,
        np.where(hsum < 360.0, 0.5 * (hsum + 360.0), 0.5 * (hsum - 360.0)),
    )
    hbar = np.where(zero_chroma, hsum, hbar)

    t = (
        1.0
        - 0.17 * np.cos(np.radians(hbar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * hbar))
        + 0.32 * np.cos(np.radians(3.0 * hbar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * hbar - 63.0))
    )
    dtheta = 30.0 * np.exp(-(((hbar - 275.0) / 25.0) ** 2))
    cbarp7 = cbarp**7
    rc = 2.0 * np.sqrt(cbarp7 / (cbarp7 + 25.0**7))
    rt = -np.sin(np.radians(2.0 * dtheta)) * rc

    lm50 = (lbar - 50.0) ** 2
    sl = 1.0 + 0.015 * lm50 / np.sqrt(20.0 + lm50)
    sc = 1.0 + 0.045 * cbarp
    sh = 1.0 + 0.015 * cbarp * t

    tl = dlp / sl
    tc = dcp / sc
    th = dHp / sh
    return np.sqrt(tl * tl + tc * tc + th * th + rt * tc * th)


def psnr(pred: np.ndarray, target: np.ndarray, cap_db: float = PSNR_CAP_DB) -> float:
    """PSNR in dB over sRGB-encoded values in [0,1], capped when MSE = 0."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse <= 0.0:
        return cap_db
    return min(10.0 * np.log10(1.0 / mse), cap_db)
