"""LSTM cell, linear head, softmax, and exact reverse-mode gradients.

The recurrence is the standard one-layer LSTM: logistic input/forget/output
gates, tanh candidate and output squash, separate input and recurrent bias
vectors. All 4H-row tensors stack the gate blocks in the order
(input, forget, candidate, output); checkpoints rely on this order.

Everything runs in float64. Step functions are rank-generic: a step input
may be a single vector of shape (D,) or a batch (B, D), and outputs follow
the input rank. Single-sample and batched execution share the same code
path, so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linalg import ShapeError

GATE_ORDER = ("input", "forget", "candidate", "output")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmParams:
    """Gate weights for one LSTM. Also used as the container for their gradients."""

    w_ih: np.ndarray  # (4H, D) input weights
    w_hh: np.ndarray  # (4H, H) recurrent weights
    b_ih: np.ndarray  # (4H,) input bias
    b_hh: np.ndarray  # (4H,) recurrent bias

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_ih.shape[1]

    @classmethod
    def zeros(cls, input_dim: int, hidden: int) -> "LstmParams":
        return cls(
            w_ih=np.zeros((4 * hidden, input_dim)),
            w_hh=np.zeros((4 * hidden, hidden)),
            b_ih=np.zeros(4 * hidden),
            b_hh=np.zeros(4 * hidden),
        )


@dataclass
class LstmState:
    """Hidden and cell state; shapes (H,) or (B, H)."""

    h: np.ndarray
    c: np.ndarray


def zero_state(hidden: int, leading: tuple = ()) -> LstmState:
    shape = tuple(leading) + (hidden,)
    return LstmState(h=np.zeros(shape), c=np.zeros(shape))


@dataclass
class StepCache:
    """Everything the backward pass of one step needs.

    Replaying `lstm_step(params, LstmState(h_prev, c_prev), x)` reproduces
    (h, c) bit for bit.
    """

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray


def lstm_init(seed: int, input_dim: int, hidden: int) -> LstmParams:
    """Draw all weights and biases i.i.d. uniform on [-1/sqrt(H), +1/sqrt(H)].

    Uses a PCG64 generator seeded with `seed`; draw order is
    w_ih, w_hh, b_ih, b_hh, so identical seeds give identical parameters.
    """
    if input_dim < 1 or hidden < 1:
        raise ValueError(f"dimensions must be positive, got D={input_dim}, H={hidden}")
    rng = np.random.Generator(np.random.PCG64(seed))
    bound = 1.0 / np.sqrt(hidden)
    return LstmParams(
        w_ih=rng.uniform(-bound, bound, size=(4 * hidden, input_dim)),
        w_hh=rng.uniform(-bound, bound, size=(4 * hidden, hidden)),
        b_ih=rng.uniform(-bound, bound, size=4 * hidden),
        b_hh=rng.uniform(-bound, bound, size=4 * hidden),
    )


def lstm_step(params: LstmParams, state: LstmState, x) -> tuple[LstmState, StepCache]:
    """One LSTM update: c' = f*c + i*g, h' = o*tanh(c')."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"input has dim {x.shape[-1]}, parameters expect {params.input_dim}")
    if state.h.shape[-1] != params.hidden:
        raise ShapeError(f"state has dim {state.h.shape[-1]}, parameters expect {params.hidden}")
    gates = x @ params.w_ih.T + state.h @ params.w_hh.T + params.b_ih + params.b_hh
    ai, af, ag, ao = np.split(gates, 4, axis=-1)
    i = sigmoid(ai)
    f = sigmoid(af)
    g = np.tanh(ag)
    o = sigmoid(ao)
    c = f * state.c + i * g
    h = o * np.tanh(c)
    cache = StepCache(x=x, h_prev=state.h, c_prev=state.c, i=i, f=f, g=g, o=o, c=c, h=h)
    return LstmState(h=h, c=c), cache


def lstm_forward(
    params: LstmParams, x_seq, state0: LstmState | None = None
) -> tuple[LstmState, list[StepCache]]:
    """Run the cell over a sequence; x_seq has shape (T, D) or (B, T, D)."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim < 2:
        raise ShapeError(f"sequence input must be at least 2-D, got shape {x_seq.shape}")
    state = state0 if state0 is not None else zero_state(params.hidden, x_seq.shape[:-2])
    caches = []
    for t in range(x_seq.shape[-2]):
        state, cache = lstm_step(params, state, x_seq[..., t, :])
        caches.append(cache)
    return state, caches


def lstm_step_backward(
    params: LstmParams,
    cache: StepCache,
    dh: np.ndarray,
    dc: np.ndarray,
    grads: LstmParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward through one cached step.

    `dh`/`dc` are the loss gradients w.r.t. this step's h and c outputs.
    Parameter gradients accumulate into `grads`; returns (dx, dh_prev, dc_prev).
    """
    tc = np.tanh(cache.c)
    do = dh * tc
    dc_total = dc + dh * cache.o * (1.0 - tc * tc)
    di = dc_total * cache.g
    dg = dc_total * cache.i
    df = dc_total * cache.c_prev
    dc_prev = dc_total * cache.f
    da = np.concatenate(
        [
            di * cache.i * (1.0 - cache.i),
            df * cache.f * (1.0 - cache.f),
            dg * (1.0 - cache.g * cache.g),
            do * cache.o * (1.0 - cache.o),
        ],
        axis=-1,
    )
    if da.ndim == 1:
        grads.w_ih += np.outer(da, cache.x)
        grads.w_hh += np.outer(da, cache.h_prev)
        db = da
    else:
        flat = da.reshape(-1, da.shape[-1])
        grads.w_ih += flat.T @ cache.x.reshape(-1, cache.x.shape[-1])
        grads.w_hh += flat.T @ cache.h_prev.reshape(-1, cache.h_prev.shape[-1])
        db = flat.sum(axis=0)
    grads.b_ih += db
    grads.b_hh += db
    dx = da @ params.w_ih
    dh_prev = da @ params.w_hh
    return dx, dh_prev, dc_prev


def lstm_backward(
    params: LstmParams,
    caches: Sequence[StepCache],
    grad_h_last=None,
    per_step_grads: Sequence | None = None,
    grad_c_last=None,
) -> tuple[LstmParams, list[np.ndarray], LstmState]:
    """Exact backpropagation through time for a cached forward run.

    `grad_h_last`/`grad_c_last` are the loss gradients on the final hidden
    and cell state; `per_step_grads`, when given, supplies an additional
    hidden-state gradient for every step. Returns parameter gradients (as an
    LstmParams container), gradients w.r.t. each step input, and the gradient
    w.r.t. the initial state.
    """
    if len(caches) == 0:
        raise ShapeError("lstm_backward needs at least one cached step")
    if per_step_grads is not None and len(per_step_grads) != len(caches):
        raise ShapeError(
            f"{len(per_step_grads)} per-step gradients for {len(caches)} steps"
        )
    last = caches[-1]
    grads = LstmParams.zeros(params.input_dim, params.hidden)
    carry_h = np.zeros_like(last.h)
    carry_c = np.zeros_like(last.c)
    if grad_h_last is not None:
        gh = np.asarray(grad_h_last, dtype=np.float64)
        if gh.shape != last.h.shape:
            raise ShapeError(f"grad_h_last shape {gh.shape} != state shape {last.h.shape}")
        carry_h = carry_h + gh
    if grad_c_last is not None:
        carry_c = carry_c + np.asarray(grad_c_last, dtype=np.float64)
    grad_x: list[np.ndarray] = [np.empty(0)] * len(caches)
    for t in reversed(range(len(caches))):
        dh = carry_h
        if per_step_grads is not None:
            dh = dh + np.asarray(per_step_grads[t], dtype=np.float64)
        grad_x[t], carry_h, carry_c = lstm_step_backward(params, caches[t], dh, carry_c, grads)
    return grads, grad_x, LstmState(h=carry_h, c=carry_c)


@dataclass
class Affine:
    """Linear head y = x @ w.T + b. Like LstmParams, doubles as its gradient container."""

    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int) -> "Affine":
        return cls(w=np.zeros((out_dim, in_dim)), b=np.zeros(out_dim))


def affine_init(seed: int, in_dim: int, out_dim: int) -> Affine:
    """Uniform init on [-1/sqrt(in_dim), +1/sqrt(in_dim)], PCG64 stream, w then b."""
    if in_dim < 1 or out_dim < 1:
        raise ValueError(f"dimensions must be positive, got in={in_dim}, out={out_dim}")
    rng = np.random.Generator(np.random.PCG64(seed))
    bound = 1.0 / np.sqrt(in_dim)
    return Affine(
        w=rng.uniform(-bound, bound, size=(out_dim, in_dim)),
        b=rng.uniform(-bound, bound, size=out_dim),
    )


def affine_apply(fc: Affine, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != fc.in_dim:
        raise ShapeError(f"input has dim {x.shape[-1]}, head expects {fc.in_dim}")
    return x @ fc.w.T + fc.b


def softmax(z) -> np.ndarray:
    """Max-subtracted softmax along the last axis; rows sum to 1."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ValueError("softmax of empty input")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def grad_check(
    loss_fn: Callable[[dict], tuple[float, dict]],
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Compare analytic gradients against central finite differences.

    `loss_fn(params)` must return (scalar loss, gradients keyed like params)
    and must read the parameter arrays fresh on every call; the check
    perturbs them in place entry by entry. Returns the worst relative error
    max |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    _, analytic = loss_fn(params)
    worst = 0.0
    for name in sorted(params):
        arr = params[name]
        grad = np.asarray(analytic[name]).reshape(-1)
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            loss_plus, _ = loss_fn(params)
            flat[idx] = orig - eps
            loss_minus, _ = loss_fn(params)
            flat[idx] = orig
            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise ValueError(f"non-finite loss when perturbing {name}[{idx}]")
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            a = grad[idx]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst
