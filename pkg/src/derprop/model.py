"""Tiny per-pixel feature extractor with hand-written gradients.

Architecture: 3x3 windowed linear layer -> tanh -> 1x1 linear producing D
feature channels, L1-normalized per pixel; a linear classifier head on
the normalized features produces C logit channels.  Parameters live in
one flat float64 vector (layer weights are views into it) so momentum
averaging and SGD are plain vector arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ZERO_COLUMN_TOL
from .seeding import make_rng

_PATCH_INDEX_CACHE: dict = {}


def _patch_index(c: int, h: int, w: int) -> np.ndarray:
    """(9c, M) gather indices into a zero-padded flattened image."""
    key = (c, h, w)
    if key not in _PATCH_INDEX_CACHE:
        hp, wp = h + 2, w + 2
        ys, xs = np.mgrid[0:h, 0:w]
        rows = []
        for ch in range(c):
            for dy in range(3):
                for dx in range(3):
                    rows.append((ch * hp * wp + (ys + dy) * wp + (xs + dx)).ravel())
        _PATCH_INDEX_CACHE[key] = np.stack(rows)
    return _PATCH_INDEX_CACHE[key]


def im2col(image: np.ndarray) -> np.ndarray:
    """(9c, M) matrix of 3x3 neighborhoods (zero padding, stride 1)."""
    c, h, w = image.shape
    padded = np.pad(image, ((0, 0), (1, 1), (1, 1)))
    return padded.ravel()[_patch_index(c, h, w)]


@dataclass(frozen=True)
class ToyModelConfig:
    in_channels: int = 3
    hidden_channels: int = 16
    feature_channels: int = 8
    num_classes: int = 4


@dataclass
class ForwardState:
    """Intermediate activations kept for the backward pass."""

    patches: np.ndarray   # (9c, M)
    hidden: np.ndarray    # (K, M) tanh outputs
    features_raw: np.ndarray  # (D, M) before normalization
    features: np.ndarray  # (D, M) L1-normalized
    logits: np.ndarray    # (C, M)


class ToyModel:
    """Flat-parameter model; see the module docstring for the layout."""

    def __init__(self, config: ToyModelConfig, seed: int = 0, params: np.ndarray | None = None):
        self.config = config
        k, d, c = config.hidden_channels, config.feature_channels, config.num_classes
        win = 9 * config.in_channels
        self._shapes = [("w1", (k, win)), ("b1", (k,)), ("w2", (d, k)), ("b2", (d,)),
                        ("wc", (c, d)), ("bc", (c,))]
        total = sum(int(np.prod(s)) for _, s in self._shapes)
        if params is None:
            self.params = np.zeros(total)
            rng = make_rng(seed, "model-init")
            views = self._views(self.params)
            views["w1"][:] = rng.normal(scale=1.0 / np.sqrt(win), size=(k, win))
            views["w2"][:] = rng.normal(scale=1.0 / np.sqrt(k), size=(d, k))
            views["wc"][:] = rng.normal(scale=1.0 / np.sqrt(d), size=(c, d))
        else:
            if params.shape != (total,):
                raise ValueError(f"expected {total} parameters, got {params.shape}")
            self.params = np.asarray(params, dtype=np.float64).copy()

    def _views(self, flat: np.ndarray) -> dict:
        views = {}
        offset = 0
        for name, shape in self._shapes:
            size = int(np.prod(shape))
            views[name] = flat[offset : offset + size].reshape(shape)
            offset += size
        return views

    @property
    def num_params(self) -> int:
        return self.params.size

    def with_params(self, params: np.ndarray) -> "ToyModel":
        return ToyModel(self.config, params=params)

    def forward(self, image: np.ndarray) -> ForwardState:
        p = self._views(self.params)
        patches = im2col(np.asarray(image, dtype=np.float64))
        hidden = np.tanh(p["w1"] @ patches + p["b1"][:, None])
        features_raw = p["w2"] @ hidden + p["b2"][:, None]
        # Uniform fallback for collapsed pixels, as in l1_normalize_columns.
        norms = np.abs(features_raw).sum(axis=0)
        dead = norms < ZERO_COLUMN_TOL
        safe = np.where(dead, 1.0, norms)
        features = features_raw / safe[None, :]
        if dead.any():
            features[:, dead] = 1.0 / features_raw.shape[0]
        logits = p["wc"] @ features + p["bc"][:, None]
        return ForwardState(patches, hidden, features_raw, features, logits)

    def features_logits(self, image: np.ndarray):
        st = self.forward(image)
        return st.features, st.logits

    def backward(self, st: ForwardState, grad_features: np.ndarray,
                 grad_logits: np.ndarray) -> np.ndarray:
        """Flat parameter gradient given upstream gradients on (V, L)."""
        p = self._views(self.params)
        grad = np.zeros_like(self.params)
        g = self._views(grad)
        g["wc"][:] = grad_logits @ st.features.T
        g["bc"][:] = grad_logits.sum(axis=1)
        gv = grad_features + p["wc"].T @ grad_logits
        # Through the L1 normalization y = v / sum|v|:
        # dv_j = (g_j - (g . y) sign(v_j)) / sum|v|; fallback columns are constant.
        norms = np.abs(st.features_raw).sum(axis=0)
        dead = norms < ZERO_COLUMN_TOL
        safe = np.where(dead, 1.0, norms)
        gy = (gv * st.features).sum(axis=0)
        graw = (gv - np.sign(st.features_raw) * gy[None, :]) / safe[None, :]
        if dead.any():
            graw[:, dead] = 0.0
        g["w2"][:] = graw @ st.hidden.T
        g["b2"][:] = graw.sum(axis=1)
        gz = p["w2"].T @ graw
        gpre = gz * (1.0 - st.hidden**2)
        g["w1"][:] = gpre @ st.patches.T
        g["b1"][:] = gpre.sum(axis=1)
        return grad


@dataclass
class MomentumState:
    """Shadow parameter vector updated by halving toward the live model."""

    params: np.ndarray
    epoch: int = 0


def momentum_update(state: MomentumState, theta_b: np.ndarray) -> MomentumState:
    """Exact elementwise average of the shadow and live parameters."""
    live = np.asarray(theta_b, dtype=np.float64)
    if live.shape != state.params.shape:
        raise ValueError(
            f"parameter length mismatch: momentum has {state.params.shape}, live {live.shape}"
        )
    return MomentumState(params=(state.params + live) / 2.0, epoch=state.epoch + 1)
