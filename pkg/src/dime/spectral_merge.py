"""Merge two adapters in the shared SVD basis of their concatenated weights.

For a base matrix ``M_B`` and a new matrix ``M_t`` of the same shape, the
columns ``[M_B  M_t]`` are decomposed as ``U diag(sigma) V^T``. The coefficient
block of the new matrix is blended into the base block with class-count
weights, the resulting update is gated per singular direction, and the merged
matrix is rebuilt from the shared ``U`` and ``sigma``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adapter_model import AdapterParams
from .linalg import as_matrix, concat_columns, reconstruct, split_columns, thin_svd, SvdFactors


@dataclass(frozen=True)
class MergeConfig:
    c_old: int
    c_new: int
    head_ratio: float = 0.3
    gamma_head: float = 0.2
    gamma_tail: float = 0.9

    def __post_init__(self):
        if self.c_old < 0 or self.c_new < 1:
            raise ValueError(f"need c_old >= 0 and c_new >= 1, got {self.c_old}, {self.c_new}")
        if not 0.0 < self.head_ratio <= 1.0:
            raise ValueError(f"head_ratio must lie in (0, 1], got {self.head_ratio}")
        for name in ("gamma_head", "gamma_tail"):
            g = getattr(self, name)
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {g}")


@dataclass(frozen=True)
class GatingMask:
    gains: np.ndarray
    head_rank: int


def class_count_weights(c_old: int, c_new: int) -> tuple[float, float]:
    if c_old < 0 or c_new < 0:
        raise ValueError("class counts must be nonnegative")
    total = c_old + c_new
    if total == 0:
        raise ValueError("at least one class count must be positive")
    return c_old / total, c_new / total


def split_coefficients(vt, left_cols: int) -> tuple[np.ndarray, np.ndarray]:
    return split_columns(vt, left_cols)


def blend_coefficients(vb_t, vt_t, w_b: float, w_t: float) -> np.ndarray:
    vb_t = np.asarray(vb_t, dtype=np.float64)
    vt_t = np.asarray(vt_t, dtype=np.float64)
    if vb_t.shape != vt_t.shape:
        raise ValueError(f"coefficient blocks differ in shape: {vb_t.shape} vs {vt_t.shape}")
    return w_b * vb_t + w_t * vt_t


def make_gating_mask(r: int, cfg: MergeConfig) -> GatingMask:
    if r < 1:
        raise ValueError("rank must be positive")
    r_h = max(1, math.floor(cfg.head_ratio * r))
    gains = np.full(r, cfg.gamma_tail, dtype=np.float64)
    gains[:r_h] = cfg.gamma_head
    return GatingMask(gains=gains, head_rank=min(r_h, r))


def apply_gated_update(vb_t, v_blend_t, mask: GatingMask) -> np.ndarray:
    vb_t = np.asarray(vb_t, dtype=np.float64)
    v_blend_t = np.asarray(v_blend_t, dtype=np.float64)
    if vb_t.shape != v_blend_t.shape:
        raise ValueError(f"shape mismatch: {vb_t.shape} vs {v_blend_t.shape}")
    if mask.gains.shape != (vb_t.shape[0],):
        raise ValueError(f"mask length {mask.gains.shape[0]} != rank {vb_t.shape[0]}")
    g = mask.gains[:, None]
    # vb + g * (v_blend - vb), arranged to be exact at g = 0 and g = 1
    return (1.0 - g) * vb_t + g * v_blend_t


def merge_matrix(m_base, m_new, cfg: MergeConfig) -> np.ndarray:
    m_base = as_matrix(m_base, "m_base")
    m_new = as_matrix(m_new, "m_new")
    if m_base.shape != m_new.shape:
        raise ValueError(f"cannot merge matrices of shapes {m_base.shape} and {m_new.shape}")
    d2 = m_base.shape[1]
    f = thin_svd(concat_columns(m_base, m_new))
    vb_t, vt_t = split_coefficients(f.vt, d2)
    w_b, w_t = class_count_weights(cfg.c_old, cfg.c_new)
    v_blend = blend_coefficients(vb_t, vt_t, w_b, w_t)
    v_final = apply_gated_update(vb_t, v_blend, make_gating_mask(f.r, cfg))
    return reconstruct(SvdFactors(f.u, f.sigma, v_final))


def merge_vector(v_base, v_new, cfg: MergeConfig) -> np.ndarray:
    v_base = np.asarray(v_base, dtype=np.float64)
    v_new = np.asarray(v_new, dtype=np.float64)
    if v_base.shape != v_new.shape:
        raise ValueError(f"vector length mismatch: {v_base.shape} vs {v_new.shape}")
    w_b, w_t = class_count_weights(cfg.c_old, cfg.c_new)
    return w_b * v_base + w_t * v_new


def _check_same_arch(base: AdapterParams, new: AdapterParams) -> None:
    if base.w_down.shape != new.w_down.shape:
        raise ValueError(
            f"adapter architectures differ: d_hat x d = {base.w_down.shape} vs {new.w_down.shape}"
        )


def merge_adapter(base: AdapterParams, new: AdapterParams, cfg: MergeConfig) -> AdapterParams:
    """Spectral merge of every matrix, class-count average of every vector.

    The scale factor is a shared hyperparameter and is carried over from ``base``.
    """
    _check_same_arch(base, new)
    return AdapterParams(
        w_down=merge_matrix(base.w_down, new.w_down, cfg),
        w_up=merge_matrix(base.w_up, new.w_up, cfg),
        ln_gain=merge_vector(base.ln_gain, new.ln_gain, cfg),
        ln_bias=merge_vector(base.ln_bias, new.ln_bias, cfg),
        scale=base.scale,
    )


def average_adapters(base: AdapterParams, new: AdapterParams) -> AdapterParams:
    """Unweighted elementwise average of all parameters (direct merge)."""
    _check_same_arch(base, new)
    return AdapterParams(
        w_down=0.5 * (base.w_down + new.w_down),
        w_up=0.5 * (base.w_up + new.w_up),
        ln_gain=0.5 * (base.ln_gain + new.ln_gain),
        ln_bias=0.5 * (base.ln_bias + new.ln_bias),
        scale=base.scale,
    )
