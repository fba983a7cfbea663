"""
Attention guidance mathematics: mask energy, its analytic gradient, the guided
latent update and masked latent blending. Everything runs in float64.
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from ..codecs.mask_codec import SemanticMask
from ..errors import DimMismatch, ZeroAttentionMass


TokenSelection = int | Sequence[int] | None


@dataclass(frozen=True)
class GuidanceConfig:
    """
    Parameters:
        eta (float): Step size of the energy-gradient update.
        t_threshold (int): Guidance runs at timesteps t > t_threshold.
        token_index (int | Sequence[int] | None): Guided token(s); None guides every token.
    """
    eta: float = 1.0
    t_threshold: int = 25
    token_index: TokenSelection = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.t_threshold < 0:
            raise ValueError(f"t_threshold must be non-negative, got {self.t_threshold}")


# --- Helpers ---


def _mask_vector(mask: SemanticMask | np.ndarray, n_locations: int) -> np.ndarray:
    bits = mask.bits if isinstance(mask, SemanticMask) else np.asarray(mask, dtype=bool)
    flat = bits.ravel()
    if flat.size != n_locations:
        raise DimMismatch(f"mask has {flat.size} locations, attention map has {n_locations}")
    return flat


def _tokens(k: TokenSelection, n_tokens: int) -> list[int]:
    tokens = list(range(n_tokens)) if k is None else [k] if np.isscalar(k) else list(k)
    for token in tokens:
        if not 0 <= int(token) < n_tokens:
            raise DimMismatch(f"token index {token} outside attention map with {n_tokens} tokens")
    return [int(token) for token in tokens]


def _token_mass(attention: np.ndarray, inside: np.ndarray, token: int) -> tuple[float, float]:
    column = attention[:, token]
    total = float(column.sum())
    if not total > 0:
        raise ZeroAttentionMass(f"token {token} has no attention mass")
    return float(column[inside].sum()), total


def _as_attention(attention) -> np.ndarray:
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim != 2:
        raise DimMismatch(f"attention map must be 2-D (locations, tokens), got shape {attention.shape}")
    return attention


# --- Energy ---


def attention_energy(attention: np.ndarray, mask: SemanticMask | np.ndarray, k: TokenSelection = 0) -> float:
    """
    Squared deficit of token-k attention mass inside the mask: (1 - s_in / s_tot)^2.

    Several tokens (or k=None for all) sum their per-token energies.

    Parameters:
        attention (np.ndarray): Nonnegative map of shape (S, K).
        mask (SemanticMask | np.ndarray): Latent-resolution mask with S locations.
        k (int | Sequence[int] | None): Token selection.

    Returns:
        float: Energy, in [0, 1] for a single token.

    Raises:
        DimMismatch: If the mask size does not match S or a token is out of range.
        ZeroAttentionMass: If a selected token has zero total attention.
    """
    attention = _as_attention(attention)
    inside = _mask_vector(mask, attention.shape[0])
    energy = 0.0
    for token in _tokens(k, attention.shape[1]):
        s_in, s_tot = _token_mass(attention, inside, token)
        energy += (1.0 - s_in / s_tot) ** 2
    return energy


def attention_energy_grad(attention: np.ndarray, mask: SemanticMask | np.ndarray, k: TokenSelection = 0) -> np.ndarray:
    """
    Analytic dE/dA, same shape as the attention map; zero for unselected tokens.

    For a selected token: -2 (1 - r) (1[m in M] s_tot - s_in) / s_tot^2 with r = s_in / s_tot.
    """
    attention = _as_attention(attention)
    inside = _mask_vector(mask, attention.shape[0])
    grad = np.zeros_like(attention)
    for token in _tokens(k, attention.shape[1]):
        s_in, s_tot = _token_mass(attention, inside, token)
        ratio = s_in / s_tot
        grad[:, token] += -2.0 * (1.0 - ratio) * (inside * s_tot - s_in) / s_tot ** 2
    return grad


# --- Latent updates ---


def guided_update(z: np.ndarray, grad_z: np.ndarray, eta: float) -> np.ndarray:
    """Energy-gradient step z - eta * grad_z."""
    z = np.asarray(z, dtype=np.float64)
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if z.shape != grad_z.shape:
        raise DimMismatch(f"latent shape {z.shape} does not match gradient shape {grad_z.shape}")
    return z - eta * grad_z


def blend_latents(z_cur: np.ndarray, z_prev: np.ndarray, mask: SemanticMask | np.ndarray) -> np.ndarray:
    """
    Masked compositing M * z_cur + (1 - M) * z_prev, the mask broadcast across channels.

    Values are selected, not mixed, so both sides are reproduced bit-exactly.

    Parameters:
        z_cur (np.ndarray): Current stage latent, shape (H, W, C).
        z_prev (np.ndarray): Previous stage latent at the same timestep, shape (H, W, C).
        mask (SemanticMask | np.ndarray): Latent-resolution mask, shape (H, W).
    """
    z_cur = np.asarray(z_cur, dtype=np.float64)
    z_prev = np.asarray(z_prev, dtype=np.float64)
    bits = mask.bits if isinstance(mask, SemanticMask) else np.asarray(mask, dtype=bool)
    if z_cur.shape != z_prev.shape or z_cur.shape[:2] != bits.shape:
        raise DimMismatch(f"cannot blend latents {z_cur.shape} and {z_prev.shape} with mask {bits.shape}")
    return np.where(bits[..., None], z_cur, z_prev)


# --- Gradient checking ---


def central_differences(fun: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1.0e-6) -> np.ndarray:
    """Numerical gradient of a scalar function by central differences, same shape as x."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel().copy()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = fun(flat.reshape(x.shape))
        flat[i] = original - h
        f_minus = fun(flat.reshape(x.shape))
        flat[i] = original
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |a|, max |n|), 0 when both gradients vanish."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric))) / scale


def finite_difference_check(
    fun: Callable[[np.ndarray], float], grad: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1.0e-6
) -> float:
    """Relative error between an analytic gradient and central differences at x."""
    return relative_error(grad(x), central_differences(fun, x, h))
