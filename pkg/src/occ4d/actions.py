"""Action-track preparation: padding, chunking, and token accounting.

A clip of T frames carries T action rows. Temporal compression by a rate r
groups rows into chunks of r * D values; the track is first extended by the
next action after the clip (or a repeat of the last row) and then padded
with r - 1 zero rows so its length is an exact multiple of r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import as_float_array, require

# Clip lengths the temporal VAE accepts: 8N + 1 frames, N in [1, 6].
VAE_LENGTH_STRIDE = 8
VAE_MAX_MULTIPLE = 6


@dataclass(frozen=True)
class ActionTrack:
    """Per-frame robot actions, shape (T, D), one row per video frame."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_float_array(self.values, "action values", ndim=2, allow_empty=False)
        require(arr.shape[0] >= 1 and arr.shape[1] >= 1, "track must be (T>=1, D>=1)")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ChunkedActions:
    """Rate-r chunked actions: C rows of r * d_action values."""

    rate: int
    d_action: int
    chunks: np.ndarray

    def __post_init__(self):
        rate = int(self.rate)
        d_action = int(self.d_action)
        require(rate >= 1, f"rate must be >= 1, got {rate}")
        require(d_action >= 1, f"d_action must be >= 1, got {d_action}")
        arr = as_float_array(self.chunks, "chunks", ndim=2, allow_empty=False)
        require(
            arr.shape[1] == rate * d_action,
            f"chunk width {arr.shape[1]} != rate * d_action = {rate * d_action}",
        )
        arr.setflags(write=False)
        object.__setattr__(self, "rate", rate)
        object.__setattr__(self, "d_action", d_action)
        object.__setattr__(self, "chunks", arr)

    @property
    def n_chunks(self) -> int:
        return self.chunks.shape[0]

    @property
    def padded_length(self) -> int:
        return self.n_chunks * self.rate

    def unchunk(self) -> np.ndarray:
        """Undo the chunk reshape, back to (C * rate, d_action) rows."""
        return self.chunks.reshape(self.padded_length, self.d_action).copy()


def pad_track(track: ActionTrack, rate: int, next_action=None) -> np.ndarray:
    """Extend a track for rate-r chunking.

    Appends the action of the frame after the clip (``next_action``; the
    last row is repeated when it is unavailable), then ``rate - 1`` zero
    rows, giving ``T + rate`` rows. For the standard clip lengths (T a
    multiple of ``rate``) that equals ``ceil((T + 1) / rate) * rate``, so
    chunking yields exactly ``ceil((T + 1) / rate)`` chunks.

    Returns
    -------
    numpy.ndarray, shape (T + rate, D)
    """
    require(isinstance(track, ActionTrack), "track must be an ActionTrack")
    rate = int(rate)
    require(rate >= 1, f"rate must be >= 1, got {rate}")
    if next_action is None:
        nxt = track.values[-1]
    else:
        nxt = as_float_array(next_action, "next_action", shape=(track.dim,))
    zeros = np.zeros((rate - 1, track.dim))
    return np.concatenate([track.values, nxt[None, :], zeros], axis=0)


def chunk_actions(values, rate: int, d_action: int) -> ChunkedActions:
    """Group action rows into chunks of ``rate`` consecutive rows.

    ``values`` is (L, d_action); when L is not a multiple of ``rate`` the
    tail is zero-filled. Each chunk row is the row-major concatenation of
    its ``rate`` action rows, so C = ceil(L / rate).
    """
    arr = as_float_array(values, "values", ndim=2, allow_empty=False)
    rate = int(rate)
    require(rate >= 1, f"rate must be >= 1, got {rate}")
    require(
        arr.shape[1] == int(d_action),
        f"values have dim {arr.shape[1]}, expected d_action={d_action}",
    )
    length = arr.shape[0]
    n_chunks = -(-length // rate)
    padded = np.zeros((n_chunks * rate, arr.shape[1]))
    padded[:length] = arr
    chunks = padded.reshape(n_chunks, rate * arr.shape[1])
    return ChunkedActions(rate=rate, d_action=int(d_action), chunks=chunks)


@dataclass(frozen=True)
class LengthCheck:
    """Outcome of the clip-length rule ``frames = 8N + 1, 1 <= N <= 6``."""

    ok: bool
    n: int | None
    reason: str | None


def validate_length(frames: int) -> LengthCheck:
    """Check a padded clip length against the 8N + 1 rule."""
    frames = int(frames)
    require(frames >= 1, f"frames must be >= 1, got {frames}")
    if frames % VAE_LENGTH_STRIDE != 1:
        return LengthCheck(
            ok=False,
            n=None,
            reason=f"{frames} frames is not of the form 8N + 1",
        )
    n = frames // VAE_LENGTH_STRIDE
    if n < 1:
        return LengthCheck(ok=False, n=None, reason=f"{frames} frames gives N=0, below 1")
    if n > VAE_MAX_MULTIPLE:
        return LengthCheck(
            ok=False,
            n=n,
            reason=f"{frames} frames gives N={n}, above {VAE_MAX_MULTIPLE}",
        )
    return LengthCheck(ok=True, n=n, reason=None)


def token_count(
    frames: int, latent_h: int, latent_w: int, patch: int, rate: int
) -> int:
    """Transformer token count for a clip.

    ``ceil((frames + 1) / rate)`` temporal slots times the patch grid of the
    ``latent_h x latent_w`` latent (which must divide evenly by ``patch``).
    ``frames=0`` is the single-image case: one latent slot.
    """
    frames, latent_h, latent_w, patch, rate = (
        int(frames), int(latent_h), int(latent_w), int(patch), int(rate),
    )
    require(frames >= 0, "frames must be >= 0")
    require(latent_h >= 1 and latent_w >= 1, "latent size must be positive")
    require(patch >= 1 and rate >= 1, "patch and rate must be >= 1")
    require(
        latent_h % patch == 0 and latent_w % patch == 0,
        f"latent {latent_h}x{latent_w} not divisible by patch {patch}",
    )
    slots = math.ceil((frames + 1) / rate)
    return slots * (latent_h // patch) * (latent_w // patch)


@dataclass(frozen=True)
class TokenBudget:
    """Token accounting for one clip configuration."""

    frames: int
    latent_h: int
    latent_w: int
    patch: int
    rate: int

    def __post_init__(self):
        # Reuse the op's validation; result is recomputed on demand.
        token_count(self.frames, self.latent_h, self.latent_w, self.patch, self.rate)
        for f in ("frames", "latent_h", "latent_w", "patch", "rate"):
            object.__setattr__(self, f, int(getattr(self, f)))

    @property
    def temporal_slots(self) -> int:
        return math.ceil((self.frames + 1) / self.rate)

    @property
    def tokens(self) -> int:
        return token_count(self.frames, self.latent_h, self.latent_w, self.patch, self.rate)


class ActionChunker(TransformerMixin, BaseEstimator):
    """Transformer applying pad-then-chunk with a fixed rate.

    Parameters
    ----------
    rate : int
        Temporal compression rate r.
    """

    def __init__(self, rate: int = 4):
        self.rate = rate

    def fit(self, X=None, y=None):
        require(int(self.rate) >= 1, "rate must be >= 1")
        return self

    def transform(self, X: ActionTrack, next_action=None) -> ChunkedActions:
        """Pad a track (see :func:`pad_track`) and chunk it."""
        self.fit()
        padded = pad_track(X, self.rate, next_action=next_action)
        return chunk_actions(padded, self.rate, X.dim)
