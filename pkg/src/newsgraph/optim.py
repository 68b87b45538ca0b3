"""Optimizers: decoupled-weight-decay Adam and its Riemannian variant.

Weight decay is decoupled in both: the decay term is subtracted from the
parameter directly and never enters the moment estimates. The Riemannian
variant keeps moment buffers in the origin tangent space (no parallel
transport between points) and moves ball parameters along the exponential
map at their current position.
"""

from __future__ import annotations

import numpy as np

from .errors import ManifoldError, NumericError
from .hyperbolic import (
    conformal_factor_np,
    exp_map_np,
    inside_ball_np,
    project_np,
)
from .tensor import Parameter

__all__ = ["AdamW", "RiemannianAdam", "clip_grad_norm"]


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if max_norm is not None and norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    update: p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * weight_decay * p
    """

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params: list[Parameter] = list(params)
        for p in self.params:
            if getattr(p, "manifold", None) is not None:
                raise ManifoldError(
                    f"AdamW cannot update on-manifold parameter {p.name!r}; "
                    "use RiemannianAdam"
                )
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {id(p): np.zeros_like(p.data) for p in self.params}
        self._v = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def _validate_grads(self):
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(
                    f"non-finite gradient for {getattr(p, 'name', '?')!r}; "
                    "update aborted"
                )

    def step(self):
        self._validate_grads()
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[id(p)]
            v = self._v[id(p)]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.lr * self.weight_decay * p.data
            p.data = p.data - update


class RiemannianAdam(AdamW):
    """AdamW that also handles parameters constrained to a Poincare ball.

    Euclidean parameters follow the AdamW rule exactly. For a ball
    parameter the Euclidean gradient is rescaled by the inverse metric
    (grad / lambda_x^2), the Adam direction is computed from origin-tangent
    moment buffers, and the step is taken along the exponential map at the
    current point, re-projected inside the ball. Weight decay is applied to
    Euclidean parameters only (shrinking toward the origin is not a
    meaningful penalty for ball points).
    """

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        plist = list(params)
        self.ball_params = [p for p in plist if getattr(p, "manifold", None) is not None]
        euclidean = [p for p in plist if getattr(p, "manifold", None) is None]
        super().__init__(euclidean, lr, betas, eps, weight_decay)
        self.params = plist
        for p in self.ball_params:
            self._m[id(p)] = np.zeros_like(p.data)
            self._v[id(p)] = np.zeros_like(p.data)

    def step(self):
        self._validate_grads()
        for p in self.ball_params:
            if p.grad is None:
                continue
            k = p.manifold.k()
            point = np.atleast_2d(p.data)
            if not inside_ball_np(point, k):
                raise ManifoldError(
                    f"parameter {p.name!r} lies outside its ball (k={k})"
                )
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p in self.params:
            if p.grad is None:
                continue
            ball = getattr(p, "manifold", None)
            m = self._m[id(p)]
            v = self._v[id(p)]
            if ball is None:
                g = p.grad
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                if self.weight_decay:
                    update = update + self.lr * self.weight_decay * p.data
                p.data = p.data - update
            else:
                k = ball.k()
                point = np.atleast_2d(p.data)
                lam = conformal_factor_np(point, k)
                rgrad = np.atleast_2d(p.grad) / (lam * lam)
                m2, v2 = np.atleast_2d(m), np.atleast_2d(v)
                m2 *= self.beta1
                m2 += (1.0 - self.beta1) * rgrad
                v2 *= self.beta2
                v2 += (1.0 - self.beta2) * rgrad * rgrad
                direction = -self.lr * (m2 / bc1) / (np.sqrt(v2 / bc2) + self.eps)
                moved = project_np(exp_map_np(point, direction, k), k)
                p.data = moved.reshape(p.data.shape)
