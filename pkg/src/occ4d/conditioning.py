"""Conditioning math: positional encodings, action embedding, expert
adaptive layer norm, and visual-condition fusion.

Everything here is a pure forward computation over numpy arrays. Weights
either come from a tensor archive (see :mod:`occ4d.fileio`) or from a
seeded normal initializer, so property tests can run without any trained
checkpoint.

Token convention: the vision stream holds ``S = S_a * num_patches`` tokens,
grouped by temporal chunk (all patches of chunk 0, then chunk 1, ...). The
text stream holds ``S_txt`` tokens modulated uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .validation import as_float_array, require

LN_EPS = 1e-5
INIT_STD = 0.02


def silu(x: np.ndarray) -> np.ndarray:
    """Sigmoid-weighted linear unit, ``x * sigmoid(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return x / (1.0 + np.exp(-x))


def layer_norm(x: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Zero-mean unit-variance normalization over the last axis, no affine."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


@dataclass(frozen=True)
class TokenLayout:
    """Token bookkeeping for one batch (spec of the attention layouts).

    ``batch``/``action_chunks``/``num_patches``/``vision_tokens``/
    ``text_tokens``/``dim`` correspond to B, S_a, num_patches,
    S = S_a * num_patches, S_txt, and D. ``view_tokens``/``patch_tokens``
    are the group sizes for cross-view attention (tokens of one patch level
    across all views) and per-view attention; both default to the
    single-view value S.
    """

    batch: int
    action_chunks: int
    num_patches: int
    text_tokens: int
    dim: int
    view_tokens: int | None = None
    patch_tokens: int | None = None

    def __post_init__(self):
        for name in ("batch", "action_chunks", "num_patches", "text_tokens", "dim"):
            v = int(getattr(self, name))
            require(v >= 1, f"{name} must be >= 1, got {v}")
            object.__setattr__(self, name, v)
        s = self.action_chunks * self.num_patches
        vt = s if self.view_tokens is None else int(self.view_tokens)
        pt = s if self.patch_tokens is None else int(self.patch_tokens)
        require(vt >= 1 and pt >= 1, "token counts must be >= 1")
        object.__setattr__(self, "view_tokens", vt)
        object.__setattr__(self, "patch_tokens", pt)

    @property
    def vision_tokens(self) -> int:
        return self.action_chunks * self.num_patches


def sincos_pe(positions, axis_dims: Sequence[int]) -> np.ndarray:
    """Multi-axis sin/cos positional encoding.

    Parameters
    ----------
    positions : array-like, shape (S, A)
        Integer coordinates, one column per axis, ordered (t | v, x, y).
    axis_dims : sequence of int
        Even channel count per axis; the output width is their sum.

    Returns
    -------
    numpy.ndarray, shape (S, sum(axis_dims))
        Per axis: ``[sin(p * f_0..f_{h-1}) | cos(...)]`` with geometric
        frequencies ``f_j = 10000 ** (-j / h)``, ``h = d_axis / 2``,
        concatenated in axis order. All entries lie in [-1, 1].
    """
    pos = as_float_array(positions, "positions", ndim=2)
    dims = [int(d) for d in axis_dims]
    require(len(dims) >= 1, "need at least one axis")
    require(
        pos.shape[1] == len(dims),
        f"positions have {pos.shape[1]} axes but {len(dims)} dims given",
    )
    blocks = []
    for a, d in enumerate(dims):
        require(d >= 2 and d % 2 == 0, f"axis {a} channel count must be even and >= 2, got {d}")
        half = d // 2
        freqs = 10000.0 ** (-np.arange(half, dtype=np.float64) / half)
        ang = pos[:, a : a + 1] * freqs[None, :]
        blocks.append(np.concatenate([np.sin(ang), np.cos(ang)], axis=1))
    return np.concatenate(blocks, axis=1)


@dataclass(frozen=True)
class MlpWeights:
    """Two-layer MLP weights: affine -> SiLU -> affine."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        w1 = as_float_array(self.w1, "w1", ndim=2)
        b1 = as_float_array(self.b1, "b1", ndim=1)
        w2 = as_float_array(self.w2, "w2", ndim=2)
        b2 = as_float_array(self.b2, "b2", ndim=1)
        require(b1.shape[0] == w1.shape[0], "b1 must match w1 rows")
        require(w2.shape[1] == w1.shape[0], "w2 columns must match w1 rows")
        require(b2.shape[0] == w2.shape[0], "b2 must match w2 rows")
        for arr in (w1, b1, w2, b2):
            arr.setflags(write=False)
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "b2", b2)

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d_out(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def seeded(
        cls, d_in: int, d_out: int, *, d_hidden: int | None = None, seed: int = 0,
        std: float = INIT_STD,
    ) -> "MlpWeights":
        """Normal(0, std) weights drawn in order w1, b1, w2, b2."""
        d_hidden = d_out if d_hidden is None else int(d_hidden)
        rng = np.random.default_rng(seed)
        return cls(
            rng.normal(0.0, std, (d_hidden, int(d_in))),
            rng.normal(0.0, std, d_hidden),
            rng.normal(0.0, std, (int(d_out), d_hidden)),
            rng.normal(0.0, std, int(d_out)),
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        h = silu(x @ self.w1.T + self.b1)
        return h @ self.w2.T + self.b2


def action_embed(chunks, weights: MlpWeights) -> np.ndarray:
    """Embed chunked actions row-wise through the shallow MLP.

    ``chunks`` is (S_a, r * d_action) (a :class:`~occ4d.actions.ChunkedActions`
    is accepted directly) and must match ``weights.d_in``. Rows are embedded
    independently.
    """
    values = getattr(chunks, "chunks", chunks)
    arr = as_float_array(values, "chunks", ndim=2, allow_empty=False)
    require(
        arr.shape[1] == weights.d_in,
        f"chunk width {arr.shape[1]} does not match embedder input {weights.d_in}",
    )
    return weights.forward(arr)


@dataclass(frozen=True)
class AdaLNWeights:
    """Shared expert-AdaLN head: one linear layer serving both streams.

    ``weight`` is (6D, D), ``bias`` is (6D,). Rows [0, 3D) produce the
    vision (shift, scale, gate); rows [3D, 6D) produce the text
    (shift, scale, gate). The norm itself has no learned affine.
    """

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = as_float_array(self.weight, "weight", ndim=2)
        b = as_float_array(self.bias, "bias", ndim=1)
        d = w.shape[1]
        require(w.shape[0] == 6 * d, f"weight must be (6D, D), got {w.shape}")
        require(b.shape[0] == 6 * d, f"bias must be (6D,), got {b.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def zeros(cls, dim: int) -> "AdaLNWeights":
        dim = int(dim)
        return cls(np.zeros((6 * dim, dim)), np.zeros(6 * dim))

    @classmethod
    def seeded(cls, dim: int, *, seed: int = 0, std: float = INIT_STD) -> "AdaLNWeights":
        """Normal(0, std) weights drawn in order weight, bias."""
        dim = int(dim)
        rng = np.random.default_rng(seed)
        return cls(
            rng.normal(0.0, std, (6 * dim, dim)),
            rng.normal(0.0, std, 6 * dim),
        )


class AdaLNResult(NamedTuple):
    """Modulated streams plus the unapplied residual gates."""

    hidden: np.ndarray  # (B, S, D)
    text_hidden: np.ndarray  # (B, S_txt, D)
    gate: np.ndarray  # (B, S_a, D), per chunk
    text_gate: np.ndarray  # (B, D)


def adaln_modulate(
    hidden, text_hidden, temb, action_emb, w: AdaLNWeights
) -> AdaLNResult:
    """Expert adaptive layer norm over a vision stream and a text stream.

    The vision expert conditions on timestep + action: per chunk j,
    ``(shift, scale, gate) = W_v @ silu(temb + action_emb[:, j]) + b_v``,
    each chunk's shift/scale repeated over its ``num_patches`` tokens, and
    ``hidden <- LN(hidden) * (1 + scale) + shift``. The text expert uses
    ``silu(temb)`` through the text rows, one modulation per batch element
    broadcast over all text tokens. Gates are returned unapplied, at chunk
    resolution for vision and batch resolution for text.

    ``hidden`` is (B, S, D) with ``S`` an exact multiple of the number of
    action chunks ``S_a = action_emb.shape[1]``.
    """
    hidden = as_float_array(hidden, "hidden", ndim=3)
    text_hidden = as_float_array(text_hidden, "text_hidden", ndim=3)
    temb = as_float_array(temb, "temb", ndim=2)
    action_emb = as_float_array(action_emb, "action_emb", ndim=3)

    b, s, d = hidden.shape
    require(w.dim == d, f"weights are for D={w.dim}, hidden has D={d}")
    require(temb.shape == (b, d), f"temb must be ({b}, {d}), got {temb.shape}")
    require(
        action_emb.shape[0] == b and action_emb.shape[2] == d,
        f"action_emb must be ({b}, S_a, {d}), got {action_emb.shape}",
    )
    s_a = action_emb.shape[1]
    require(
        s % s_a == 0,
        f"token count {s} is not a multiple of the {s_a} action chunks",
    )
    num_patches = s // s_a
    require(
        text_hidden.shape[0] == b and text_hidden.shape[2] == d,
        f"text_hidden must be ({b}, S_txt, {d}), got {text_hidden.shape}",
    )

    w_vis, b_vis = w.weight[: 3 * d], w.bias[: 3 * d]
    w_txt, b_txt = w.weight[3 * d :], w.bias[3 * d :]

    vis_in = silu(temb[:, None, :] + action_emb)  # (B, S_a, D)
    vis_mod = vis_in @ w_vis.T + b_vis  # (B, S_a, 3D)
    shift, scale, gate = np.split(vis_mod, 3, axis=-1)

    txt_mod = silu(temb) @ w_txt.T + b_txt  # (B, 3D)
    t_shift, t_scale, t_gate = np.split(txt_mod, 3, axis=-1)

    scale_rep = np.repeat(scale, num_patches, axis=1)
    shift_rep = np.repeat(shift, num_patches, axis=1)
    out_hidden = layer_norm(hidden) * (1.0 + scale_rep) + shift_rep
    out_text = layer_norm(text_hidden) * (1.0 + t_scale[:, None, :]) + t_shift[:, None, :]

    return AdaLNResult(
        hidden=out_hidden,
        text_hidden=out_text,
        gate=gate,
        text_gate=t_gate,
    )


@dataclass(frozen=True)
class FusionWeights:
    """Residual condition projector, plus optional per-condition embedders.

    ``proj_weight`` is (D, D + sum of condition widths); ``proj_bias`` is
    (D,). ``embed`` carries the upstream visual-embedder weights when the
    conditions still need embedding; :func:`fuse_conditions` itself only
    applies the projector.
    """

    proj_weight: np.ndarray
    proj_bias: np.ndarray
    embed: tuple[MlpWeights, ...] = ()

    def __post_init__(self):
        w = as_float_array(self.proj_weight, "proj_weight", ndim=2)
        b = as_float_array(self.proj_bias, "proj_bias", ndim=1)
        require(w.shape[0] == b.shape[0], "proj bias must match proj rows")
        require(w.shape[1] >= w.shape[0], "projector input cannot be narrower than D")
        embed = tuple(self.embed)
        for e in embed:
            require(isinstance(e, MlpWeights), "embed entries must be MlpWeights")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "proj_weight", w)
        object.__setattr__(self, "proj_bias", b)
        object.__setattr__(self, "embed", embed)

    @property
    def dim(self) -> int:
        return self.proj_weight.shape[0]

    @property
    def cond_width(self) -> int:
        return self.proj_weight.shape[1] - self.proj_weight.shape[0]

    @classmethod
    def zero_init(cls, dim: int, cond_dims: Sequence[int] = ()) -> "FusionWeights":
        """The training-start state: an all-zero projector (exact identity)."""
        dim = int(dim)
        total = dim + sum(int(c) for c in cond_dims)
        return cls(np.zeros((dim, total)), np.zeros(dim))


def fuse_conditions(z_in, cond_latents: Sequence, w: FusionWeights) -> np.ndarray:
    """Merge condition latents into the noise latent with a residual projector.

    Computes ``proj(concat(z_in, c_1, c_2, ..., axis=-1)) + z_in``. The
    source equation writes the merge as ``MLP(z_in + Concat([c_1, c_2, ...]))
    + z_in``; dimensionally the "+" must itself be channel concatenation
    (the condition stack does not share z_in's width), which is what this
    implements. A zero projector therefore leaves ``z_in`` untouched.
    """
    z = as_float_array(z_in, "z_in", ndim=3)
    b, s, d = z.shape
    require(w.dim == d, f"projector is for D={w.dim}, z_in has D={d}")
    parts = [z]
    total = d
    for i, c in enumerate(cond_latents):
        c = as_float_array(c, f"cond_latents[{i}]", ndim=3)
        require(
            c.shape[0] == b and c.shape[1] == s,
            f"cond_latents[{i}] must share batch and token count with z_in",
        )
        parts.append(c)
        total += c.shape[2]
    require(
        w.proj_weight.shape[1] == total,
        f"projector expects input width {w.proj_weight.shape[1]}, conditions give {total}",
    )
    stacked = np.concatenate(parts, axis=-1)
    return stacked @ w.proj_weight.T + w.proj_bias + z
