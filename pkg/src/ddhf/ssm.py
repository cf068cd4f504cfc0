"""Discrete selective state-space primitive.

Zero-order-hold discretization, the sequential scan and its chunked form
(identical results, chunk-parallel structure), and the bidirectional block
with input-dependent (B, C, Delta) generation that every Mamba-style module
in the pipeline instantiates.

Scans run internally in float64 and return float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MASK64, fnv1a64, init_param, prng_fill
from .ops import layer_norm, silu, softplus

_SMALL = 1e-8
DELTA_FLOOR = 1e-30


def softplus_delta(x: np.ndarray) -> np.ndarray:
    """Softplus clamped to a tiny positive floor.

    Generated step sizes must stay strictly positive; for inputs below about
    -104 the float32 softplus underflows to exactly zero, so the floor keeps
    the discretization precondition intact (and exp(1e-30 * a) == 1 anyway).
    """
    return np.maximum(softplus(x), DELTA_FLOOR)


@dataclass(frozen=True)
class ScanParams:
    """Per-step scan inputs: b, c are (n, d_state); delta is (n, C), positive."""

    b: np.ndarray
    c: np.ndarray
    delta: np.ndarray

    def reversed(self) -> "ScanParams":
        return ScanParams(self.b[::-1], self.c[::-1], self.delta[::-1])


def discretize(
    a: np.ndarray, b: np.ndarray, delta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order hold: Abar = exp(delta*a); Bbar = phi(delta*a) * delta * b.

    phi(z) = (e^z - 1)/z, replaced by its limit 1 when |z| < 1e-8, so the
    small-step value is exactly delta*b. Shapes broadcast elementwise.
    """
    if np.any(delta <= 0):
        raise ValueError("discretize: delta must be positive")
    za = np.asarray(delta, dtype=np.float64) * np.asarray(a, dtype=np.float64)
    abar = np.exp(za)
    small = np.abs(za) < _SMALL
    safe = np.where(small, 1.0, za)
    phi = np.where(small, 1.0, np.expm1(safe) / safe)
    bbar = phi * delta * b
    return abar, bbar


def _precompute(
    x: np.ndarray, a: np.ndarray, params: ScanParams, lo: int, hi: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Discretized (abar, bbar*x, c) for steps [lo, hi) as float64 arrays."""
    delta = params.delta[lo:hi].astype(np.float64)  # (m, C)
    abar, bbar = discretize(
        a[None, :, :], params.b[lo:hi, None, :].astype(np.float64), delta[:, :, None]
    )
    bx = bbar * x[lo:hi, :, None].astype(np.float64)  # (m, C, d_state)
    return abar, bx, params.c[lo:hi].astype(np.float64)


def _scan_steps(
    abar: np.ndarray, bx: np.ndarray, c: np.ndarray, h: np.ndarray, out: np.ndarray
) -> np.ndarray:
    """Run the recurrence h = abar*h + bx over precomputed steps; fills out."""
    for i in range(abar.shape[0]):
        h = abar[i] * h + bx[i]
        out[i] = h @ c[i]
    return h


def selective_scan(x: np.ndarray, a: np.ndarray, params: ScanParams) -> np.ndarray:
    """h_i = Abar_i h_{i-1} + Bbar_i x_i with h_0 = 0; out_i = C_i . h_i + x_i.

    x: (n, C); a: (C, d_state) continuous diagonal (negative); returns (n, C).
    """
    n, c_width = x.shape
    a = np.asarray(a, dtype=np.float64)
    out = np.empty((n, c_width), dtype=np.float64)
    abar, bx, c_seq = _precompute(x, a, params, 0, n)
    _scan_steps(abar, bx, c_seq, np.zeros_like(a), out)
    return (out + x).astype(np.float32)


def selective_scan_chunked(
    x: np.ndarray, a: np.ndarray, params: ScanParams, chunk: int
) -> np.ndarray:
    """Blocked form of selective_scan: same recurrence, chunk-level structure.

    Pass 1 scans each chunk from a zero state and takes the chunk's Abar
    product; entering states are then combined across chunks with the same
    multiply-add expression the scan uses, so chunk=1 and chunk=n reproduce
    selective_scan bit-for-bit, and interior sizes agree to roundoff.
    """
    if chunk < 1:
        raise ValueError("selective_scan_chunked: chunk must be >= 1")
    n, c_width = x.shape
    a = np.asarray(a, dtype=np.float64)
    starts = list(range(0, n, chunk))

    finals, prods = [], []
    cached = []
    for lo in starts:
        hi = min(lo + chunk, n)
        abar, bx, c_seq = _precompute(x, a, params, lo, hi)
        cached.append((abar, bx, c_seq))
        local = np.empty((hi - lo, c_width), dtype=np.float64)
        finals.append(_scan_steps(abar, bx, c_seq, np.zeros_like(a), local))
        prods.append(np.prod(abar, axis=0))

    entering = np.zeros_like(a)
    out = np.empty((n, c_width), dtype=np.float64)
    for t, lo in enumerate(starts):
        hi = min(lo + chunk, n)
        abar, bx, c_seq = cached[t]
        _scan_steps(abar, bx, c_seq, entering, out[lo:hi])
        entering = prods[t] * entering + finals[t]
    return (out + x).astype(np.float32)


# ---------------------------------------------------------------------------
# Bidirectional block
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SsmBlockWeights:
    """Weights of one bidirectional selective-scan block (shared fwd/bwd)."""

    a: np.ndarray  # (C, d_state), strictly negative
    norm_scale: np.ndarray  # (C,)
    norm_shift: np.ndarray  # (C,)
    in_w: np.ndarray  # (C, C)
    in_b: np.ndarray  # (C,)
    b_w: np.ndarray  # (C, d_state)
    c_w: np.ndarray  # (C, d_state)
    dt_w: np.ndarray  # (C, C)
    dt_b: np.ndarray  # (C,)
    y_w: np.ndarray  # (C, C)
    y_b: np.ndarray  # (C,)
    out_w: np.ndarray  # (C, C)
    out_b: np.ndarray  # (C,)

    def __post_init__(self):
        if np.any(self.a >= 0):
            raise ValueError("SsmBlockWeights: A entries must be strictly negative")

    @property
    def width(self) -> int:
        return self.a.shape[0]

    def identity_configured(self) -> "SsmBlockWeights":
        """Zero the output projection and gate: block becomes the identity."""
        z = np.zeros_like
        return SsmBlockWeights(
            self.a, self.norm_scale, self.norm_shift, self.in_w, self.in_b,
            self.b_w, self.c_w, self.dt_w, self.dt_b,
            z(self.y_w), z(self.y_b), z(self.out_w), z(self.out_b),
        )


def init_dt_bias(name: str, c: int, global_seed: int) -> np.ndarray:
    """Bias such that softplus(bias) lands uniformly in [0.01, 0.1]."""
    seed = fnv1a64(name) ^ (global_seed & MASK64)
    _, u = prng_fill(seed, c)
    target = 0.01 + u * 0.09
    return np.log(np.expm1(target)).astype(np.float32)


def init_ssm_block(name: str, c: int, d_state: int, global_seed: int) -> SsmBlockWeights:
    """Seed-derived block weights; A is the S4D-real diagonal -(1..d_state)."""
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, global_seed)
    return SsmBlockWeights(
        a=-np.tile(np.arange(1, d_state + 1, dtype=np.float32), (c, 1)),
        norm_scale=np.ones(c, dtype=np.float32),
        norm_shift=np.zeros(c, dtype=np.float32),
        in_w=p("in_proj.weight", (c, c)),
        in_b=p("in_proj.bias", (c,)),
        b_w=p("b_proj.weight", (c, d_state)),
        c_w=p("c_proj.weight", (c, d_state)),
        dt_w=p("dt_proj.weight", (c, c)),
        dt_b=init_dt_bias(f"{name}.dt_proj.floor", c, global_seed),
        y_w=p("y_gate.weight", (c, c)),
        y_b=p("y_gate.bias", (c,)),
        out_w=p("out_proj.weight", (c, c)),
        out_b=p("out_proj.bias", (c,)),
    )


def generate_scan_params(x: np.ndarray, w: SsmBlockWeights) -> ScanParams:
    """Input-specific (B, C, Delta); Delta through softplus so it stays positive."""
    return ScanParams(
        b=x @ w.b_w,
        c=x @ w.c_w,
        delta=softplus_delta(x @ w.dt_w + w.dt_b),
    )


def bidirectional_block(
    seq: np.ndarray, w: SsmBlockWeights, chunk: int = 256
) -> np.ndarray:
    """Forward + backward selective scans, gated and residually added.

    Scan weights are shared between directions, so palindromic inputs give
    palindromic outputs. Zeroing out_proj and y_gate makes this the identity.
    """
    n = seq.shape[0]
    if n == 0:
        return seq.astype(np.float32)
    u = layer_norm(seq, w.norm_scale, w.norm_shift)
    x = (u @ w.in_w + w.in_b).astype(np.float32)
    params = generate_scan_params(x, w)
    fwd = selective_scan_chunked(x, w.a, params, chunk)
    xr = np.ascontiguousarray(x[::-1])
    bwd = selective_scan_chunked(xr, w.a, params.reversed(), chunk)[::-1]
    gate = silu(seq @ w.y_w + w.y_b)
    y = (fwd + bwd) * gate
    return (seq + y @ w.out_w + w.out_b).astype(np.float32)
