"""State-space sequence layers: ZOH discretisation, recurrent and convolutional
evaluation of a time-invariant SSM, the selective (input-dependent) scan, and
the Mamba-style translation model built from it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from ..audio.features import FEATURE_DIM
from ..autodiff import Dropout, FeedForward, LayerNorm, Linear, Module, make_op, parameter
from ..autodiff import ops as T
from .base import POSE_DIM, PoseHead, SequenceModel, WindowBatch

_SERIES_CUTOFF = 1e-4


def _phi1(z, expm1_z=None):
    """(e^z - 1) / z with its limit 1 at z = 0."""
    z = np.asarray(z, dtype=np.float64) if np.isscalar(z) else z
    expm1_z = np.expm1(z) if expm1_z is None else expm1_z
    small = np.abs(z) < _SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.asarray(expm1_z / z)
    if small.any():
        zs = z[small]
        out[small] = 1.0 + zs / 2.0 + zs * zs / 6.0
    return out


def _phi1_prime(z, exp_z=None, phi=None):
    """d/dz of (e^z - 1) / z, i.e. (e^z - phi1(z)) / z."""
    z = np.asarray(z, dtype=np.float64) if np.isscalar(z) else z
    exp_z = np.exp(z) if exp_z is None else exp_z
    phi = _phi1(z) if phi is None else phi
    small = np.abs(z) < _SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.asarray((exp_z - phi) / z)
    if small.any():
        zs = z[small]
        out[small] = 0.5 + zs / 3.0 + zs * zs / 8.0
    return out


def zoh_discretize(A, B, delta):
    """Zero-order-hold discretisation of ``h' = A h + B x`` with step ``delta``.

    A 1-D ``A`` is read as the diagonal of the state matrix and the result is
    computed elementwise (``a_n -> 0`` uses the limit ``b_bar = delta * b``).
    A 2-D ``A`` uses the matrix exponential.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if np.any(np.asarray(delta) <= 0):
        raise ValueError("delta must be positive")
    if A.ndim <= 1:
        z = delta * A
        return np.exp(z), delta * _phi1(z) * B
    n = A.shape[0]
    dA = delta * A
    A_bar = scipy.linalg.expm(dA)
    # (dA)^-1 (e^{dA} - I) dB via the augmented-matrix exponential, valid for singular A
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = dA
    aug[:n, n:] = np.eye(n)
    phi = scipy.linalg.expm(aug)[:n, n:]
    return A_bar, phi @ (delta * B.reshape(n, -1))


def scan_recurrent(A_bar, B_bar, C, x) -> np.ndarray:
    """``h_t = A_bar h_{t-1} + B_bar x_t``, ``y_t = C h_t``, from ``h_0 = 0``."""
    A_bar = np.asarray(A_bar, dtype=np.float64)
    B_bar = np.asarray(B_bar, dtype=np.float64).reshape(-1)
    C = np.asarray(C, dtype=np.float64).reshape(-1)
    h = np.zeros_like(B_bar)
    y = np.empty(len(x))
    for t, xt in enumerate(np.asarray(x, dtype=np.float64)):
        h = (A_bar * h if A_bar.ndim == 1 else A_bar @ h) + B_bar * xt
        y[t] = C @ h
    return y


def ssm_kernel(A_bar, B_bar, C, length: int) -> np.ndarray:
    """``(C B_bar, C A_bar B_bar, ..., C A_bar^{L-1} B_bar)``."""
    A_bar = np.asarray(A_bar, dtype=np.float64)
    v = np.asarray(B_bar, dtype=np.float64).reshape(-1)
    C = np.asarray(C, dtype=np.float64).reshape(-1)
    kernel = np.empty(length)
    for i in range(length):
        kernel[i] = C @ v
        v = A_bar * v if A_bar.ndim == 1 else A_bar @ v
    return kernel


def kernel_convolution(A_bar, B_bar, C, x) -> np.ndarray:
    """Causal convolution of ``x`` with the length-``len(x)`` SSM kernel."""
    x = np.asarray(x, dtype=np.float64)
    kernel = ssm_kernel(A_bar, B_bar, C, len(x))
    return np.convolve(x, kernel)[:len(x)]


def selective_scan(u, delta, A, B, C, D=None):
    """Input-dependent diagonal SSM scan as a single differentiable op.

    Shapes: ``u`` and ``delta`` are ``(batch, L, E)``, ``A`` is ``(E, N)``,
    ``B`` and ``C`` are ``(batch, L, N)``, ``D`` is ``(E,)``. Per channel ``e``
    and step ``t``::

        A_bar = exp(delta_t * A_e)
        B_bar = (exp(delta_t * A_e) - 1) / A_e * B_t
        h_t = A_bar * h_{t-1} + B_bar * u_t
        y_t = <C_t, h_t> + D_e * u_t
    """
    u, delta, A, B, C = (T.as_tensor(t) for t in (u, delta, A, B, C))
    if D is not None:
        D = T.as_tensor(D)
    ud, dd, Ad, Bd, Cd = u.data, delta.data, A.data, B.data, C.data
    batch, length, channels = ud.shape
    states = Ad.shape[1]
    # discretise every step up front, time-major so each recurrence step reads
    # contiguous memory; only the recurrence itself is sequential
    ut, dt_, Bt, Ct = (np.ascontiguousarray(np.swapaxes(a, 0, 1)) for a in (ud, dd, Bd, Cd))
    z = dt_[..., None] * Ad
    expm1_z = np.expm1(z)
    a_bar = expm1_z + 1.0
    phi = _phi1(z, expm1_z)
    b_term = dt_[..., None] * phi  # B_bar / B
    hs = np.zeros((length + 1, batch, channels, states), dtype=ud.dtype)
    np.multiply(b_term, Bt[:, :, None, :], out=hs[1:])
    hs[1:] *= ut[..., None]
    for t in range(length):
        hs[t + 1] += a_bar[t] * hs[t]
    y = np.swapaxes(np.einsum("lben,lbn->lbe", hs[1:], Ct), 0, 1)
    if D is not None:
        y = y + D.data * ud
    parents = (u, delta, A, B, C) if D is None else (u, delta, A, B, C, D)

    def backward(gy):
        gyt = np.ascontiguousarray(np.swapaxes(gy, 0, 1))
        gC = np.swapaxes(np.einsum("lbe,lben->lbn", gyt, hs[1:]), 0, 1)
        gh = gyt[..., None] * Ct[:, :, None, :]
        for t in range(length - 2, -1, -1):
            gh[t] += gh[t + 1] * a_bar[t + 1]
        # d(a_bar)/d(delta) = A a_bar ; d(a_bar)/dA = delta a_bar
        # d(b_term)/d(delta) = a_bar ; d(b_term)/dA = delta^2 phi1'(z)
        g_drive = gh * b_term
        gu = np.einsum("lben,lbn->lbe", g_drive, Bt)
        gB = np.einsum("lben,lbe->lbn", g_drive, ut)
        g_bterm = gh * ut[..., None]
        g_bterm *= Bt[:, :, None, :]
        g_abar = gh
        g_abar *= hs[:-1]
        g_abar *= a_bar
        gdelta = np.einsum("lben,en->lbe", g_abar, Ad) + np.einsum("lben,lben->lbe", g_bterm, a_bar)
        g_bterm *= _phi1_prime(z, a_bar, phi)
        gA = np.einsum("lben,lbe->en", g_abar, dt_) + \
            np.einsum("lben,lbe->en", g_bterm, dt_ * dt_)
        gu, gdelta, gB = (np.swapaxes(g, 0, 1) for g in (gu, gdelta, gB))
        grads = [gu, gdelta, gA, gB, gC]
        if D is not None:
            gu += gy * D.data
            grads.append((gy * ud).reshape(-1, channels).sum(axis=0))
        return tuple(grads)

    return make_op(y.astype(ud.dtype), parents, backward)


@dataclass
class MambaConfig:
    layers: int = 6
    embed_dim: int = 128
    ff_dim: int = 2048
    dropout: float = 0.1
    window: int = 120
    state_size: int = 16
    expand: int = 2
    conv_width: int = 4
    dt_min: float = 0.001
    dt_max: float = 0.1

    def __post_init__(self):
        for name in ("layers", "embed_dim", "ff_dim", "window", "state_size", "expand",
                     "conv_width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def inner_dim(self) -> int:
        return self.expand * self.embed_dim

    @property
    def dt_rank(self) -> int:
        return math.ceil(self.embed_dim / 16)


class SelectiveSSM(Module):
    """Expansion, causal conv, selective scan, SiLU gate and contraction."""

    def __init__(self, cfg: MambaConfig, rng: np.random.Generator):
        d, e, n, r = cfg.embed_dim, cfg.inner_dim, cfg.state_size, cfg.dt_rank
        self.state_size, self.dt_rank, self.inner_dim = n, r, e
        self.in_proj = Linear(d, 2 * e, rng)
        bound = 1.0 / math.sqrt(cfg.conv_width)
        self.conv_weight = parameter(rng.uniform(-bound, bound, size=(e, cfg.conv_width)))
        self.conv_bias = parameter(rng.uniform(-bound, bound, size=e))
        self.x_proj = Linear(e, r + 2 * n, rng, bias=False)
        self.dt_proj = Linear(r, e, rng)
        self.dt_proj.weight.data = rng.uniform(-r ** -0.5, r ** -0.5, size=(r, e)).astype(np.float32)
        dt = np.exp(rng.uniform(math.log(cfg.dt_min), math.log(cfg.dt_max), size=e))
        # inverse softplus so that softplus(bias) == dt at initialisation
        self.dt_proj.bias.data = (dt + np.log(-np.expm1(-dt))).astype(np.float32)
        self.A_log = parameter(np.log(np.tile(np.arange(1, n + 1, dtype=np.float64), (e, 1))))
        self.D = parameter(np.ones(e))
        self.out_proj = Linear(e, d, rng)

    def forward(self, x):
        e, n, r = self.inner_dim, self.state_size, self.dt_rank
        xz = self.in_proj(x)
        xs, gate = xz[..., :e], xz[..., e:]
        xs = T.silu(T.conv1d_causal(xs, self.conv_weight, self.conv_bias))
        proj = self.x_proj(xs)
        delta = T.softplus(self.dt_proj(proj[..., :r]))
        A = T.exp(self.A_log) * -1.0
        y = selective_scan(xs, delta, A, proj[..., r:r + n], proj[..., r + n:], self.D)
        return self.out_proj(y * T.silu(gate))


class MambaBlock(Module):
    """Pre-norm residual block: selective SSM mixer followed by a feed-forward layer."""

    def __init__(self, cfg: MambaConfig, rng: np.random.Generator):
        self.norm_mix = LayerNorm(cfg.embed_dim)
        self.mixer = SelectiveSSM(cfg, rng)
        self.norm_ff = LayerNorm(cfg.embed_dim)
        self.ff = FeedForward(cfg.embed_dim, cfg.ff_dim, cfg.dropout, rng)
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, x):
        x = x + self.drop(self.mixer(self.norm_mix(x)))
        return x + self.drop(self.ff(self.norm_ff(x)))


class MambaTranslator(SequenceModel):
    """Audio and shifted-pose embeddings summed and run through a stack of Mamba blocks.

    There are no attention masks and no positional embeddings: the scan is
    causal, so right padding never influences valid positions.
    """

    variant = "mamba"

    def __init__(self, config: MambaConfig | None = None, seed: int = 0):
        self.config = cfg = config or MambaConfig()
        rng = np.random.default_rng(seed)
        self.audio_embed = Linear(FEATURE_DIM, cfg.embed_dim, rng)
        self.pose_embed = Linear(POSE_DIM, cfg.embed_dim, rng)
        self.drop = Dropout(cfg.dropout, rng)
        self.blocks = [MambaBlock(cfg, rng) for _ in range(cfg.layers)]
        self.norm = LayerNorm(cfg.embed_dim)
        self.head = PoseHead(cfg.embed_dim, rng)

    def architecture(self) -> dict:
        return {"variant": self.variant, **asdict(self.config)}

    def forward(self, batch: WindowBatch):
        dtype = self.audio_embed.weight.dtype
        x = self.audio_embed(T.Tensor(batch.audio, dtype=dtype))
        x = x + self.pose_embed(T.Tensor(batch.shifted_poses, dtype=dtype))
        x = self.drop(x)
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x))
