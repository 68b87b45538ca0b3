"""Message-passing layers and the two-layer encoder with its MLP head.

Every layer is a plain class holding Parameters and exposing
``forward(view, x, ...)`` where ``view`` is a GraphView and ``x`` is
either a Tensor or a constant feature matrix (ndarray or CSR). Passing
constants lets the first layer run its input transform at sparse-matrix
speed; gradients only ever flow to parameters and to Tensor inputs.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import hyperbolic as hyp
from . import tensor as T
from .graph import USER_ARTICLE, USER_USER, GraphView
from .tensor import Parameter, Tensor

LEAKY_SLOPE = 0.2
RELATIONS = (USER_ARTICLE, USER_USER)


def glorot(rng, fan_in, fan_out, shape=None):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def node_mask(features, p: float, training: bool, rng) -> object:
    """Zero entire node rows with probability p during training.

    No inverse rescaling: a masked node simulates a missing user, and
    rescaling would distort the degree-normalized aggregations.
    Works on dense arrays and CSR matrices alike.
    """
    if not training or p <= 0.0:
        return features
    n = features.shape[0]
    keep = (rng.random(n) >= p).astype(np.float64)
    if sp.issparse(features):
        return sp.diags(keep) @ features
    return features * keep[:, None]


def _affine(x, weight: Tensor) -> Tensor:
    """x @ weight with x a Tensor, ndarray, or sparse constant."""
    if isinstance(x, Tensor):
        return T.matmul(x, weight)
    if sp.issparse(x):
        return T.spmm(x.tocsr(), weight)
    return T.matmul(Tensor(x), weight)


def _propagate(adj: sp.csr_matrix, x) -> object:
    """adj @ x when x is still a constant (keeps the result constant)."""
    out = adj @ x
    return out.tocsr() if sp.issparse(out) else np.asarray(out)


class GcnLayer:
    """sigma(A_hat @ x @ W + b) with a configurable normalization.

    Default normalization is the row-stochastic (D+I)^{-1}(A+I) form; the
    classic symmetric D^{-1/2}(A+I)D^{-1/2} is available via
    ``normalization='symmetric'``.
    """

    def __init__(self, in_dim, out_dim, rng, activation=T.relu,
                 normalization: str = "diagonal-enhanced", name="gcn"):
        self.weight = Parameter(glorot(rng, in_dim, out_dim), name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim), name=f"{name}.bias")
        self.activation = activation
        self.normalization = normalization

    def parameters(self):
        return [self.weight, self.bias]

    def _adjacency(self, view: GraphView):
        if self.normalization == "symmetric":
            return view.symmetric(self_loops=True)
        return view.diagonal_enhanced()

    def forward(self, view, x, rng=None, training=False) -> Tensor:
        adj = self._adjacency(view).matrix
        h = T.spmm(adj, _affine(x, self.weight))
        return self.activation(T.add(h, self.bias))


class GatLayer:
    """Multi-head attention layer; head outputs are concatenated.

    Per head: shared linear transform, additive attention logits
    LeakyReLU(a_src . h_u + a_dst . h_v) over each node's first-order
    neighborhood including a self-loop, softmax, weighted combination.
    """

    def __init__(self, in_dim, out_dim, rng, heads=3, activation=T.elu,
                 name="gat"):
        self.heads = heads
        self.weights = [
            Parameter(glorot(rng, in_dim, out_dim), name=f"{name}.w{h}")
            for h in range(heads)
        ]
        a_bound = np.sqrt(6.0 / (out_dim + 1))
        self.attn_src = [
            Parameter(rng.uniform(-a_bound, a_bound, (out_dim, 1)),
                      name=f"{name}.asrc{h}")
            for h in range(heads)
        ]
        self.attn_dst = [
            Parameter(rng.uniform(-a_bound, a_bound, (out_dim, 1)),
                      name=f"{name}.adst{h}")
            for h in range(heads)
        ]
        self.bias = Parameter(np.zeros(heads * out_dim), name=f"{name}.bias")
        self.activation = activation

    def parameters(self):
        return [*self.weights, *self.attn_src, *self.attn_dst, self.bias]

    def attention_coefficients(self, view, x, head=0) -> np.ndarray:
        """Evaluated coefficients for one head (diagnostics/tests)."""
        with T.no_grad():
            dst, src = view.attention_edges()
            h = _affine(x, self.weights[head])
            coef = _attention(h, dst, src, self.attn_src[head],
                              self.attn_dst[head], view.n)
        return coef.data

    def forward(self, view, x, rng=None, training=False, attn_dropout=0.0) -> Tensor:
        dst, src = view.attention_edges()
        outs = []
        for W, a_s, a_d in zip(self.weights, self.attn_src, self.attn_dst):
            h = _affine(x, W)
            coef = _attention(h, dst, src, a_s, a_d, view.n)
            if training and attn_dropout > 0.0 and rng is not None:
                coef = T.dropout(coef, attn_dropout, rng, training)
            weighted = T.mul(T.gather_rows(h, src), T.reshape(coef, (-1, 1)))
            outs.append(T.segment_sum(weighted, dst, view.n))
        return self.activation(T.add(T.concat(outs, axis=1), self.bias))


def _attention(h: Tensor, dst, src, attn_src, attn_dst, n) -> Tensor:
    alpha_src = T.reshape(T.matmul(h, attn_src), (-1,))
    alpha_dst = T.reshape(T.matmul(h, attn_dst), (-1,))
    logits = T.leaky_relu(
        T.add(T.gather_rows(alpha_dst, dst), T.gather_rows(alpha_src, src)),
        slope=LEAKY_SLOPE,
    )
    return T.segment_softmax(logits, dst, n)


class SageLayer:
    """x' = x @ W_self + mean_neighbors(x) @ W_neigh, rows L2-normalized.

    The mean over an empty neighborhood is the zero vector; zero output
    rows stay zero after normalization.
    """

    def __init__(self, in_dim, out_dim, rng, name="sage"):
        self.w_self = Parameter(glorot(rng, in_dim, out_dim), name=f"{name}.w_self")
        self.w_neigh = Parameter(glorot(rng, in_dim, out_dim), name=f"{name}.w_neigh")
        self.bias = Parameter(np.zeros(out_dim), name=f"{name}.bias")

    def parameters(self):
        return [self.w_self, self.w_neigh, self.bias]

    def forward(self, view, x, rng=None, training=False) -> Tensor:
        mean_adj = view.neighbor_mean().matrix
        if isinstance(x, Tensor):
            neigh = T.spmm(mean_adj, T.matmul(x, self.w_neigh))
        else:
            neigh = _affine(_propagate(mean_adj, x), self.w_neigh)
        h = T.add(T.add(_affine(x, self.w_self), neigh), self.bias)
        sq = T.tensor_sum(T.square(h), axis=1, keepdims=True)
        norm = T.sqrt(T.clip_min(sq, 1e-30))
        return T.div(h, norm)


class RgcnLayer:
    """Relation-wise normalized sums plus a self transform.

    out_u = sigma( sum_r mean_{v in N_r(u)} x_v @ W_r + x_u @ W_0 + b );
    a relation with no neighbors at u contributes zero.
    """

    def __init__(self, in_dim, out_dim, rng, activation=T.relu, name="rgcn"):
        self.rel_weights = {
            r: Parameter(glorot(rng, in_dim, out_dim), name=f"{name}.w_rel{r}")
            for r in RELATIONS
        }
        self.w_self = Parameter(glorot(rng, in_dim, out_dim), name=f"{name}.w_self")
        self.bias = Parameter(np.zeros(out_dim), name=f"{name}.bias")
        self.activation = activation

    def parameters(self):
        return [*self.rel_weights.values(), self.w_self, self.bias]

    def forward(self, view, x, rng=None, training=False) -> Tensor:
        total = T.add(_affine(x, self.w_self), self.bias)
        for r in RELATIONS:
            adj = view.relation(r).matrix
            if isinstance(x, Tensor):
                part = T.spmm(adj, T.matmul(x, self.rel_weights[r]))
            else:
                part = _affine(_propagate(adj, x), self.rel_weights[r])
            total = T.add(total, part)
        return self.activation(total)


class RgatLayer:
    """Per-relation single-head attention, summed, plus a self transform."""

    def __init__(self, in_dim, out_dim, rng, activation=T.elu, name="rgat"):
        self.rel_weights = {}
        self.attn_src = {}
        self.attn_dst = {}
        a_bound = np.sqrt(6.0 / (out_dim + 1))
        for r in RELATIONS:
            self.rel_weights[r] = Parameter(
                glorot(rng, in_dim, out_dim), name=f"{name}.w_rel{r}"
            )
            self.attn_src[r] = Parameter(
                rng.uniform(-a_bound, a_bound, (out_dim, 1)), name=f"{name}.asrc{r}"
            )
            self.attn_dst[r] = Parameter(
                rng.uniform(-a_bound, a_bound, (out_dim, 1)), name=f"{name}.adst{r}"
            )
        self.w_self = Parameter(glorot(rng, in_dim, out_dim), name=f"{name}.w_self")
        self.bias = Parameter(np.zeros(out_dim), name=f"{name}.bias")
        self.activation = activation

    def parameters(self):
        return [
            *self.rel_weights.values(), *self.attn_src.values(),
            *self.attn_dst.values(), self.w_self, self.bias,
        ]

    def forward(self, view, x, rng=None, training=False, attn_dropout=0.0) -> Tensor:
        total = T.add(_affine(x, self.w_self), self.bias)
        for r in RELATIONS:
            dst, src = view.relation_attention_edges(r)
            if len(dst) == 0:
                continue
            h = _affine(x, self.rel_weights[r])
            coef = _attention(h, dst, src, self.attn_src[r], self.attn_dst[r], view.n)
            if training and attn_dropout > 0.0 and rng is not None:
                coef = T.dropout(coef, attn_dropout, rng, training)
            weighted = T.mul(T.gather_rows(h, src), T.reshape(coef, (-1, 1)))
            total = T.add(total, T.segment_sum(weighted, dst, view.n))
        return self.activation(total)


class MlpHead:
    """Two-layer classification head emitting one logit per node."""

    def __init__(self, in_dim, hidden_dim, rng, name="head"):
        self.w1 = Parameter(glorot(rng, in_dim, hidden_dim), name=f"{name}.w1")
        self.b1 = Parameter(np.zeros(hidden_dim), name=f"{name}.b1")
        self.w2 = Parameter(glorot(rng, hidden_dim, 1), name=f"{name}.w2")
        self.b2 = Parameter(np.zeros(1), name=f"{name}.b2")

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(T.add(T.matmul(x, self.w1), self.b1))
        return T.reshape(T.add(T.matmul(h, self.w2), self.b2), (-1,))


VARIANTS = ("gcn", "gat", "sage", "rgcn", "rgat", "hygcn", "hygat")


class GnnEncoder:
    """Two message-passing layers plus the MLP head.

    ``forward`` returns node embeddings (the social representation fed to
    fusion); ``logits`` additionally applies the head. Hyperbolic
    variants lift the input onto the ball and log their final points back
    to the origin tangent space, so downstream consumers always see
    Euclidean vectors.
    """

    def __init__(self, variant: str, in_dim: int, hidden_dim: int, rng=None,
                 heads: int = 3, dropout: float = 0.1,
                 attention_dropout: float = 0.1,
                 curvature_init: float = 1.0, learnable_curvature: bool = True):
        if variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant {variant!r}")
        rng = rng or np.random.default_rng(0)
        self.variant = variant
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.attention_dropout = attention_dropout
        self.schedule = None
        if variant == "gcn":
            self.layers = [
                GcnLayer(in_dim, hidden_dim, rng, name="gcn0"),
                GcnLayer(hidden_dim, hidden_dim, rng, name="gcn1"),
            ]
            self.out_dim = hidden_dim
        elif variant == "gat":
            self.layers = [
                GatLayer(in_dim, hidden_dim, rng, heads=heads, name="gat0"),
                GatLayer(heads * hidden_dim, hidden_dim, rng, heads=heads,
                         name="gat1"),
            ]
            self.out_dim = heads * hidden_dim
        elif variant == "sage":
            self.layers = [
                SageLayer(in_dim, hidden_dim, rng, name="sage0"),
                SageLayer(hidden_dim, hidden_dim, rng, name="sage1"),
            ]
            self.out_dim = hidden_dim
        elif variant == "rgcn":
            self.layers = [
                RgcnLayer(in_dim, hidden_dim, rng, name="rgcn0"),
                RgcnLayer(hidden_dim, hidden_dim, rng, name="rgcn1"),
            ]
            self.out_dim = hidden_dim
        elif variant == "rgat":
            self.layers = [
                RgatLayer(in_dim, hidden_dim, rng, name="rgat0"),
                RgatLayer(hidden_dim, hidden_dim, rng, name="rgat1"),
            ]
            self.out_dim = hidden_dim
        else:
            self.schedule = hyp.CurvatureSchedule(
                depth=2, init=curvature_init, learnable=learnable_curvature
            )
            layer_cls = hyp.HyGcnLayer if variant == "hygcn" else hyp.HyGatLayer
            self.layers = [
                layer_cls(in_dim, hidden_dim, self.schedule, 1, rng=rng,
                          name=f"{variant}0"),
                layer_cls(hidden_dim, hidden_dim, self.schedule, 2, rng=rng,
                          name=f"{variant}1"),
            ]
            self.out_dim = hidden_dim
        self.head = MlpHead(self.out_dim, hidden_dim, rng)

    def parameters(self):
        params = []
        for layer in self.layers:
            params.extend(layer.parameters())
        params.extend(self.head.parameters())
        if self.schedule is not None:
            params.extend(self.schedule.parameters())
        return params

    def named_parameters(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_named_parameters(self, named: dict[str, np.ndarray]):
        for p in self.parameters():
            p.data = named[p.name].copy()

    @property
    def is_hyperbolic(self) -> bool:
        return self.variant in ("hygcn", "hygat")

    def forward(self, view: GraphView, features, rng=None, training=False) -> Tensor:
        if self.is_hyperbolic:
            dense = features.toarray() if sp.issparse(features) else features
            x = dense if isinstance(dense, Tensor) else Tensor(np.asarray(dense))
            x = hyp.exp_map_origin(x, self.schedule.k(0))
            for i, layer in enumerate(self.layers):
                kwargs = {}
                if isinstance(layer, hyp.HyGatLayer):
                    kwargs = dict(attn_rng=rng, attn_dropout=self.attention_dropout,
                                  training=training)
                x = layer.forward(view, x, **kwargs)
            out = hyp.log_map_origin(x, self.schedule.k(2))
            if training and self.dropout > 0.0 and rng is not None:
                out = T.dropout(out, self.dropout, rng, training)
            return out
        x = features
        for layer in self.layers:
            if isinstance(layer, (GatLayer, RgatLayer)):
                x = layer.forward(view, x, rng=rng, training=training,
                                  attn_dropout=self.attention_dropout)
            else:
                x = layer.forward(view, x, rng=rng, training=training)
            if training and self.dropout > 0.0 and rng is not None:
                x = T.dropout(x, self.dropout, rng, training)
        return x

    def logits(self, view, features, rng=None, training=False):
        emb = self.forward(view, features, rng=rng, training=training)
        return emb, self.head.forward(emb)
