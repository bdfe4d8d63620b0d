"""C-MADE: a causally masked feed-forward network producing affine parameters.

All computations are batched over rows: inputs are ``(N, D)`` arrays.
"""
from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeError
from .graph import MaskSet

S_CAP = 5.0


class CMade:
    """Masked conditioner mapping ``m`` to per-variable ``(s, b)``.

    Parameters are kept in one flat list (see :meth:`params`) so optimizers and
    the persistence layer can treat every conditioner uniformly. Weight matrices
    use the ``(out, in)`` layout and are stored pre-multiplied by their masks.
    """

    def __init__(self, mask_set: MaskSet, source_flags, *, s_cap: float = S_CAP,
                 freeze_sources: bool = True):
        self.mask_set = mask_set
        self.source_flags = np.asarray(source_flags, dtype=bool)
        self.s_cap = float(s_cap)
        self.freeze_sources = bool(freeze_sources)
        D, H = mask_set.dim, mask_set.hidden_width
        if self.source_flags.shape != (D,):
            raise ShapeError(f"source_flags must have length {D}")
        self.weights = [np.zeros(M.shape) for M in mask_set.layers()]
        self.biases = [np.zeros(M.shape[0]) for M in mask_set.layers()]
        self.scale_w = np.zeros((D, H))
        self.scale_b = np.zeros(D)
        self.shift_w = np.zeros((D, H))
        self.shift_b = np.zeros(D)
        # conditioner-input standardization; never touches the transformed coordinate
        self.in_mean = np.zeros(D)
        self.in_std = np.ones(D)
        self._out_gate = np.where(self.source_flags & self.freeze_sources, 0.0, 1.0)

    @property
    def dim(self) -> int:
        return self.mask_set.dim

    def params(self) -> list[np.ndarray]:
        out = []
        for W, c in zip(self.weights, self.biases):
            out += [W, c]
        return out + [self.scale_w, self.scale_b, self.shift_w, self.shift_b]

    def set_params(self, values) -> None:
        values = list(values)
        L = len(self.weights)
        if len(values) != 2 * L + 4:
            raise ShapeError(f"expected {2 * L + 4} parameter arrays, got {len(values)}")
        for p, v in zip(self.params(), values):
            if p.shape != np.shape(v):
                raise ShapeError(f"parameter shape {np.shape(v)} != {p.shape}")
        for k in range(L):
            self.weights[k] = np.array(values[2 * k], dtype=np.float64)
            self.biases[k] = np.array(values[2 * k + 1], dtype=np.float64)
        self.scale_w, self.scale_b, self.shift_w, self.shift_b = (
            np.array(v, dtype=np.float64) for v in values[2 * L:]
        )

    def param_masks(self) -> list[np.ndarray]:
        """Binary arrays marking trainable positions, aligned with :meth:`params`."""
        out_mask = self.mask_set.hidden_to_output
        gate = self._out_gate
        masks = []
        for M in self.mask_set.layers():
            masks += [M, np.ones(M.shape[0])]
        return masks + [out_mask * gate[:, None], gate, out_mask * gate[:, None], gate]

    def num_params(self) -> int:
        return int(sum(m.sum() for m in self.param_masks()))

    # -- batched passes ---------------------------------------------------
    def _forward(self, m):
        h = (m - self.in_mean) / self.in_std
        acts = [h]
        for W, c in zip(self.weights, self.biases):
            h = np.tanh(h @ W.T + c)
            acts.append(h)
        raw = h @ self.scale_w.T + self.scale_b
        t = np.tanh(raw / self.s_cap)
        s = self.s_cap * t * self._out_gate
        b = (h @ self.shift_w.T + self.shift_b) * self._out_gate
        return s, b, (acts, t)

    def _backward(self, cache, grad_s, grad_b):
        acts, t = cache
        gate = self._out_gate
        g_raw = grad_s * gate * (1.0 - t * t)
        g_shift = grad_b * gate
        h = acts[-1]
        grads_tail = [g_raw.T @ h, g_raw.sum(0), g_shift.T @ h, g_shift.sum(0)]
        out_mask = self.mask_set.hidden_to_output
        grads_tail[0] *= out_mask
        grads_tail[2] *= out_mask
        g_h = g_raw @ self.scale_w + g_shift @ self.shift_w
        grads = []
        for k in range(len(self.weights) - 1, -1, -1):
            h = acts[k + 1]
            g_pre = g_h * (1.0 - h * h)
            gW = (g_pre.T @ acts[k]) * self.mask_set.layers()[k]
            grads = [gW, g_pre.sum(0)] + grads
            g_h = g_pre @ self.weights[k]
        grad_m = g_h / self.in_std
        return grads + grads_tail, grad_m


def init_cmade(mask_set: MaskSet, seed: int, source_flags=None, **kwargs) -> CMade:
    """Random masked weights, zero output heads (so the initial flow is the identity)."""
    if source_flags is None:
        # recover sources from the output mask: a source output row has no connections
        source_flags = ~mask_set.hidden_to_output.any(axis=1)
    net = CMade(mask_set, source_flags, **kwargs)
    rng = np.random.default_rng(np.uint64(seed))
    for k, M in enumerate(mask_set.layers()):
        fan_in = np.maximum(M.sum(axis=1, keepdims=True), 1.0)
        bound = 1.0 / np.sqrt(fan_in)
        net.weights[k] = rng.uniform(-1.0, 1.0, size=M.shape) * bound * M
    return net


def _as_batch(cmade: CMade, m) -> tuple[np.ndarray, bool]:
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 1
    m2 = m[None, :] if single else m
    if m2.ndim != 2 or m2.shape[1] != cmade.dim:
        raise ShapeError(f"expected input with {cmade.dim} columns, got shape {m.shape}")
    return m2, single


def conditioner_forward(cmade: CMade, m):
    """Return ``(s, b)`` for one vector or a batch of rows."""
    m2, single = _as_batch(cmade, m)
    if not np.all(np.isfinite(m2)):
        raise NonFiniteError("non-finite conditioner input")
    s, b, _ = cmade._forward(m2)
    return (s[0], b[0]) if single else (s, b)


def conditioner_backward(cmade: CMade, m, grad_s, grad_b):
    """Reverse-mode pass: returns (parameter gradients aligned with params(), grad wrt m).

    Parameter gradients are summed over rows when ``m`` is a batch.
    """
    m2, single = _as_batch(cmade, m)
    gs = np.atleast_2d(np.asarray(grad_s, dtype=np.float64))
    gb = np.atleast_2d(np.asarray(grad_b, dtype=np.float64))
    if gs.shape != m2.shape or gb.shape != m2.shape:
        raise ShapeError(f"gradient shapes {gs.shape}, {gb.shape} do not match input {m2.shape}")
    _, _, cache = cmade._forward(m2)
    grads, grad_m = cmade._backward(cache, gs, gb)
    return grads, (grad_m[0] if single else grad_m)
