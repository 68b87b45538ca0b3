"""Poincare-ball geometry kernels and the hyperbolic graph layers.

Convention used throughout: the ball with curvature magnitude ``k > 0``
is the open set {x : sqrt(k) * ||x|| < 1}, i.e. radius 1/sqrt(k). Points
are rows of a matrix; every kernel is vectorized over rows. All tape
kernels accept ``k`` either as a float or as a scalar Tensor, so layers
with learnable curvature get curvature gradients for free.

Two parallel surfaces exist on purpose:

* Tensor-level kernels (``mobius_add``, ``exp_map_origin``, ...) compose
  registered autodiff primitives and are what the layers are built from.
* ``*_np`` kernels operate on raw ndarrays and back the Riemannian
  optimizer, which must not record anything on the tape.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ManifoldError
from .tensor import Parameter, Tensor

BALL_MARGIN = 1e-5        # projection keeps sqrt(k)*||x|| <= 1 - BALL_MARGIN
ATANH_CLAMP = 1.0 - 1e-7  # atanh argument ceiling
MIN_NORM = 1e-15


class PoincareBall:
    """Ball descriptor attached to on-manifold Parameters.

    ``k`` is either a positive float or a zero-argument callable returning
    one, so a parameter can follow a live learnable curvature.
    """

    def __init__(self, k=1.0):
        self._k = k

    def k(self) -> float:
        value = self._k() if callable(self._k) else self._k
        if value <= 0:
            raise ManifoldError(f"curvature magnitude must be positive, got {value}")
        return float(value)


class ProjectionCounter:
    """Counts how many rows the layers had to pull back inside the ball."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)


# ---------------------------------------------------------------------------
# ndarray kernels (optimizer side, no tape)
# ---------------------------------------------------------------------------

def project_np(x: np.ndarray, k: float) -> np.ndarray:
    """Pull rows with sqrt(k)*||row|| > 1 - margin back onto that shell."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    max_norm = (1.0 - BALL_MARGIN) / np.sqrt(k)
    factor = np.where(norms > max_norm, max_norm / np.maximum(norms, MIN_NORM), 1.0)
    return x * factor


def inside_ball_np(x: np.ndarray, k: float) -> bool:
    norms = np.linalg.norm(x, axis=-1)
    return bool(np.all(np.sqrt(k) * norms < 1.0))


def conformal_factor_np(x: np.ndarray, k: float) -> np.ndarray:
    """lambda_x = 2 / (1 - k ||x||^2), one value per row (keepdims)."""
    sq = np.sum(x * x, axis=-1, keepdims=True)
    return 2.0 / np.maximum(1.0 - k * sq, MIN_NORM)


def mobius_add_np(x: np.ndarray, y: np.ndarray, k: float) -> np.ndarray:
    xy = np.sum(x * y, axis=-1, keepdims=True)
    xx = np.sum(x * x, axis=-1, keepdims=True)
    yy = np.sum(y * y, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * k * xy + k * yy) * x + (1.0 - k * xx) * y
    den = 1.0 + 2.0 * k * xy + k * k * xx * yy
    return project_np(num / np.maximum(den, MIN_NORM), k)


def exp_map_np(x: np.ndarray, v: np.ndarray, k: float) -> np.ndarray:
    """Exponential map at ``x`` applied to tangent rows ``v``."""
    sk = np.sqrt(k)
    vnorm = np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), MIN_NORM)
    lam = conformal_factor_np(x, k)
    second = np.tanh(sk * lam * vnorm / 2.0) * v / (sk * vnorm)
    return mobius_add_np(x, second, k)


def expmap0_np(v: np.ndarray, k: float) -> np.ndarray:
    sk = np.sqrt(k)
    vnorm = np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), MIN_NORM)
    return project_np(np.tanh(sk * vnorm) * v / (sk * vnorm), k)


def logmap0_np(x: np.ndarray, k: float) -> np.ndarray:
    sk = np.sqrt(k)
    xnorm = np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), MIN_NORM)
    arg = np.clip(sk * xnorm, None, ATANH_CLAMP)
    return np.arctanh(arg) * x / (sk * xnorm)


# ---------------------------------------------------------------------------
# Tensor kernels (layer side)
# ---------------------------------------------------------------------------

def _coerce_k(k) -> Tensor:
    return k if isinstance(k, Tensor) else Tensor(np.asarray(float(k)))


def _row_norm(x: Tensor) -> Tensor:
    """Row L2 norms with a tiny floor so zero rows stay differentiable."""
    sq = T.tensor_sum(T.square(x), axis=-1, keepdims=True)
    return T.sqrt(T.clip_min(sq, MIN_NORM * MIN_NORM))


def project(x: Tensor, k, counter: ProjectionCounter | None = None) -> Tensor:
    """Differentiable in-ball projection; the clip decision itself is
    taken on values and treated as constant."""
    kt = _coerce_k(k)
    kv = float(kt.data)
    norms_np = np.linalg.norm(x.data, axis=-1, keepdims=True)
    max_norm_v = (1.0 - BALL_MARGIN) / np.sqrt(kv)
    mask = (norms_np > max_norm_v).astype(np.float64)
    if counter is not None:
        counter.add(mask.sum())
    if not mask.any():
        return x
    max_norm = T.div(1.0 - BALL_MARGIN, T.sqrt(kt))
    factor = T.add(T.mul(T.div(max_norm, _row_norm(x)), mask), 1.0 - mask)
    return T.mul(x, factor)


def mobius_add(x: Tensor, y: Tensor, k) -> Tensor:
    """Gyro-addition of row points; result re-projected inside the ball."""
    kt = _coerce_k(k)
    xy = T.tensor_sum(T.mul(x, y), axis=-1, keepdims=True)
    xx = T.tensor_sum(T.square(x), axis=-1, keepdims=True)
    yy = T.tensor_sum(T.square(y), axis=-1, keepdims=True)
    two_k_xy = T.mul(T.mul(xy, kt), 2.0)
    num = T.add(
        T.mul(T.add(T.add(two_k_xy, T.mul(yy, kt)), 1.0), x),
        T.mul(T.sub(1.0, T.mul(xx, kt)), y),
    )
    den = T.add(T.add(two_k_xy, T.mul(T.mul(T.square(kt), xx), yy)), 1.0)
    return project(T.div(num, T.clip_min(den, MIN_NORM)), kt)


def mobius_scalar_mul(r, x: Tensor, k) -> Tensor:
    """tanh(r * atanh(sqrt(k)||x||)) * x / (sqrt(k)||x||), rows."""
    kt = _coerce_k(k)
    sk = T.sqrt(kt)
    norm = _row_norm(x)
    scaled = T.mul(norm, sk)
    new_mag = T.tanh(T.mul(T.atanh(scaled, clamp=ATANH_CLAMP), r))
    return project(T.mul(x, T.div(new_mag, scaled)), kt)


def exp_map_origin(v: Tensor, k) -> Tensor:
    """Lift tangent rows at the origin onto the ball."""
    kt = _coerce_k(k)
    sk = T.sqrt(kt)
    vnorm = _row_norm(v)
    scaled = T.mul(vnorm, sk)
    return project(T.mul(v, T.div(T.tanh(scaled), scaled)), kt)


def log_map_origin(x: Tensor, k) -> Tensor:
    """Exact inverse of exp_map_origin on the open ball."""
    kt = _coerce_k(k)
    sk = T.sqrt(kt)
    xnorm = _row_norm(x)
    scaled = T.mul(xnorm, sk)
    return T.mul(x, T.div(T.atanh(scaled, clamp=ATANH_CLAMP), scaled))


def tangent_aggregate(points: Tensor, weights, k) -> Tensor:
    """Weighted combination in the origin tangent space, mapped back.

    ``points`` is (m, d) with one row per neighbor, ``weights`` a length-m
    vector summing to 1. One-shot tangent averaging stands in for the
    intrinsic (Karcher) mean: it is differentiable and exact at the origin.
    """
    if points.shape[0] == 0:
        raise ValueError("tangent_aggregate needs at least one neighbor")
    w = weights if isinstance(weights, Tensor) else Tensor(weights)
    tang = log_map_origin(points, k)
    combined = T.matmul(T.reshape(w, (1, -1)), tang)
    return T.reshape(exp_map_origin(combined, k), (-1,))


def hyperbolic_activation(x: Tensor, k_in, k_out, activation) -> Tensor:
    """Apply a Euclidean nonlinearity between balls of different curvature:
    log at k_in, activate, exp at k_out."""
    return exp_map_origin(activation(log_map_origin(x, k_in)), k_out)


# ---------------------------------------------------------------------------
# learnable curvature
# ---------------------------------------------------------------------------

class CurvatureSchedule:
    """Per-layer positive curvature magnitudes K_0 ... K_L.

    Each K_i = softplus(kappa_i) + 1e-4 with kappa_i trainable when
    ``learnable``; initialization solves for K_i = init.
    """

    K_FLOOR = 1e-4

    def __init__(self, depth: int, init: float = 1.0, learnable: bool = True):
        kappa0 = float(np.log(np.expm1(init - self.K_FLOOR)))
        self.learnable = learnable
        self.kappas = [
            Parameter(np.asarray(kappa0), name=f"curvature_{i}")
            for i in range(depth + 1)
        ]
        if not learnable:
            for p in self.kappas:
                p.requires_grad = False

    def k(self, i: int) -> Tensor:
        return T.add(T.softplus(self.kappas[i]), self.K_FLOOR)

    def k_value(self, i: int) -> float:
        return float(np.logaddexp(0.0, self.kappas[i].data) + self.K_FLOOR)

    def parameters(self) -> list[Parameter]:
        return list(self.kappas) if self.learnable else []


# ---------------------------------------------------------------------------
# hyperbolic message-passing layers
# ---------------------------------------------------------------------------

class HyGcnLayer:
    """Ball-valued graph convolution.

    Tangent-space linear transform, ball-point bias via gyro-addition,
    neighborhood averaging in the tangent space with row-stochastic
    weights, then a curvature-changing activation.
    """

    def __init__(self, in_dim, out_dim, schedule: CurvatureSchedule, layer_index,
                 activation=T.relu, rng=None, name=""):
        rng = rng or np.random.default_rng(0)
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        self.weight = Parameter(
            rng.uniform(-bound, bound, size=(in_dim, out_dim)), name=f"{name}.weight"
        )
        self.schedule = schedule
        self.layer_index = layer_index
        self.activation = activation
        self.bias = Parameter(
            np.zeros(out_dim), name=f"{name}.bias",
            manifold=PoincareBall(lambda: schedule.k_value(layer_index - 1)),
        )
        self.projections = ProjectionCounter()

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, view, x: Tensor) -> Tensor:
        k_in = self.schedule.k(self.layer_index - 1)
        k_out = self.schedule.k(self.layer_index)
        tang = log_map_origin(x, k_in)
        h = project(exp_map_origin(T.matmul(tang, self.weight), k_in), k_in,
                    self.projections)
        h = mobius_add(h, T.reshape(self.bias, (1, -1)), k_in)
        agg = exp_map_origin(
            T.spmm(view.diagonal_enhanced().matrix, log_map_origin(h, k_in)), k_in
        )
        agg = project(agg, k_in, self.projections)
        return hyperbolic_activation(agg, k_in, k_out, self.activation)


class HyGatLayer:
    """Ball-valued attention layer; logits are tangent-space dot products."""

    def __init__(self, in_dim, out_dim, schedule: CurvatureSchedule, layer_index,
                 activation=T.elu, rng=None, name="", leaky_slope=0.2):
        rng = rng or np.random.default_rng(0)
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        self.weight = Parameter(
            rng.uniform(-bound, bound, size=(in_dim, out_dim)), name=f"{name}.weight"
        )
        a_bound = np.sqrt(6.0 / (out_dim + 1))
        self.attn_src = Parameter(
            rng.uniform(-a_bound, a_bound, size=(out_dim, 1)), name=f"{name}.attn_src"
        )
        self.attn_dst = Parameter(
            rng.uniform(-a_bound, a_bound, size=(out_dim, 1)), name=f"{name}.attn_dst"
        )
        self.bias = Parameter(
            np.zeros(out_dim), name=f"{name}.bias",
            manifold=PoincareBall(lambda: schedule.k_value(layer_index - 1)),
        )
        self.schedule = schedule
        self.layer_index = layer_index
        self.activation = activation
        self.leaky_slope = leaky_slope
        self.projections = ProjectionCounter()

    def parameters(self):
        return [self.weight, self.attn_src, self.attn_dst, self.bias]

    def forward(self, view, x: Tensor, attn_rng=None, attn_dropout=0.0,
                training=False) -> Tensor:
        k_in = self.schedule.k(self.layer_index - 1)
        k_out = self.schedule.k(self.layer_index)
        n = x.shape[0]
        tang = log_map_origin(x, k_in)
        h = project(exp_map_origin(T.matmul(tang, self.weight), k_in), k_in,
                    self.projections)
        h = mobius_add(h, T.reshape(self.bias, (1, -1)), k_in)
        th = log_map_origin(h, k_in)

        dst, src = view.attention_edges()
        alpha_src = T.reshape(T.matmul(th, self.attn_src), (-1,))
        alpha_dst = T.reshape(T.matmul(th, self.attn_dst), (-1,))
        logits = T.leaky_relu(
            T.add(T.gather_rows(alpha_dst, dst), T.gather_rows(alpha_src, src)),
            slope=self.leaky_slope,
        )
        coef = T.segment_softmax(logits, dst, n)
        if training and attn_dropout > 0.0 and attn_rng is not None:
            coef = T.dropout(coef, attn_dropout, attn_rng, training)
        weighted = T.mul(T.gather_rows(th, src), T.reshape(coef, (-1, 1)))
        agg_t = T.segment_sum(weighted, dst, n)
        agg = project(exp_map_origin(agg_t, k_in), k_in, self.projections)
        return hyperbolic_activation(agg, k_in, k_out, self.activation)
