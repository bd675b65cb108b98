"""GNN layers (GraphSAGE, GAT, Graph Transformer) and model assembly for
transductive binary node classification on the patient similarity graph.

All layers run full-batch over the whole graph.  Attention layers include a
self-loop for every node so isolated nodes stay well-defined.  The Graph
Transformer layer additionally returns its per-edge attention weights for
the interpretability pipeline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .graph import SimilarityGraph

LAYER_KINDS = ("sage", "gat", "gt")
ACTIVATIONS = ("relu", "elu", "none")

CHECKPOINT_MAGIC = "HFGNN-CKPT v1"


class NumericInstability(RuntimeError):
    """Raised when a forward pass produces non-finite values."""


@dataclass
class LayerConfig:
    kind: str
    in_dim: int
    out_dim: int
    heads: int = 1
    activation: str = "relu"
    use_batchnorm: bool = False

    def validate(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.heads <= 0:
            raise ValueError("heads must be positive")
        if self.kind in ("gat", "gt") and self.out_dim % self.heads != 0:
            raise ValueError(
                f"out_dim {self.out_dim} not divisible by heads {self.heads}"
            )

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "heads": self.heads,
            "activation": self.activation,
            "use_batchnorm": self.use_batchnorm,
        }


@dataclass
class AttentionDump:
    """Per-edge attention weights of one layer: parallel arrays."""

    source: np.ndarray
    target: np.ndarray
    head: np.ndarray
    weight: np.ndarray

    def sums_by_target_head(self, n: int, n_heads: int) -> np.ndarray:
        """(n, n_heads) matrix of per-target per-head weight totals."""
        sums = np.zeros((n, n_heads))
        np.add.at(sums, (self.target, self.head), self.weight)
        return sums

    def without_self_loops(self) -> "AttentionDump":
        keep = self.source != self.target
        return AttentionDump(
            self.source[keep], self.target[keep], self.head[keep], self.weight[keep]
        )

    def mean_over_heads(self) -> "AttentionDump":
        """Collapse heads by averaging the weight of each (source, target) edge."""
        if self.source.size == 0:
            return self
        n_heads = int(self.head.max()) + 1
        keys = self.target.astype(np.int64) * (int(self.source.max()) + 1) + self.source
        order = np.argsort(keys, kind="stable")
        src, dst, w = self.source[order], self.target[order], self.weight[order]
        # Heads of one edge are adjacent after the stable key sort.
        src = src.reshape(-1, n_heads)[:, 0]
        dst = dst.reshape(-1, n_heads)[:, 0]
        w = w.reshape(-1, n_heads).mean(axis=1)
        return AttentionDump(src, dst, np.zeros(src.size, dtype=np.int64), w)

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("source,target,head,weight\n")
            for s, t, h, w in zip(self.source, self.target, self.head, self.weight):
                fh.write(f"{int(s)},{int(t)},{int(h)},{repr(float(w))}\n")

    @staticmethod
    def load_csv(path) -> "AttentionDump":
        src, dst, head, weight = [], [], [], []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "source,target,head,weight":
                raise ValueError(f"unexpected attention CSV header: {header!r}")
            for line in fh:
                parts = line.strip().split(",")
                if len(parts) != 4:
                    continue
                src.append(int(parts[0]))
                dst.append(int(parts[1]))
                head.append(int(parts[2]))
                weight.append(float(parts[3]))
        return AttentionDump(
            np.array(src, dtype=np.int64),
            np.array(dst, dtype=np.int64),
            np.array(head, dtype=np.int64),
            np.array(weight, dtype=np.float64),
        )


class GraphContext:
    """Precomputed message-passing index arrays for one graph."""

    def __init__(self, graph: SimilarityGraph):
        self.n = graph.n
        self.msg_src, self.msg_dst = graph.edge_arrays()
        self.att_src, self.att_dst = graph.edge_arrays_with_self()
        deg = graph.degrees().astype(np.float64)
        self.inv_deg = (1.0 / np.maximum(deg, 1.0)).reshape(-1, 1)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class BatchNorm:
    """1-D batch normalization over node rows with running statistics."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = ad.Tensor(np.ones((1, dim)), requires_grad=True)
        self.beta = ad.Tensor(np.zeros((1, dim)), requires_grad=True)
        self.running_mean = np.zeros((1, dim))
        self.running_var = np.ones((1, dim))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: ad.Tensor, training: bool) -> ad.Tensor:
        if training:
            out, mu, var = ad.batchnorm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mu
            self.running_var = (1.0 - m) * self.running_var + m * var
            return out
        return ad.batchnorm_eval(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps
        )

    def params(self) -> list[tuple[str, ad.Tensor]]:
        return [("bn_gamma", self.gamma), ("bn_beta", self.beta)]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [("bn_running_mean", self.running_mean), ("bn_running_var", self.running_var)]

    def set_buffers(self, mean: np.ndarray, var: np.ndarray) -> None:
        self.running_mean = mean.copy()
        self.running_var = var.copy()


def _activate(x: ad.Tensor, kind: str) -> ad.Tensor:
    if kind == "relu":
        return ad.relu(x)
    if kind == "elu":
        return ad.elu(x)
    return x


class SageLayer:
    """h'_v = act(W [h_v || mean_{u in N(v)} h_u] + b), zero mean if isolated."""

    def __init__(self, config: LayerConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.W = ad.Tensor(_xavier(rng, 2 * config.in_dim, config.out_dim), requires_grad=True)
        self.b = ad.Tensor(np.zeros((1, config.out_dim)), requires_grad=True)
        self.bn = BatchNorm(config.out_dim) if config.use_batchnorm else None

    def forward(self, h: ad.Tensor, ctx: GraphContext, training: bool):
        gathered = ad.row_gather(h, ctx.msg_src)
        sums = ad.segment_sum(gathered, ctx.msg_dst, ctx.n)
        mean = ad.scale_rows(sums, ad.constant(ctx.inv_deg))
        out = ad.add(ad.matmul(ad.concat_cols([h, mean]), self.W), self.b)
        if self.bn is not None:
            out = self.bn.forward(out, training)
        return _activate(out, self.config.activation), None

    def params(self):
        named = [("W", self.W), ("b", self.b)]
        if self.bn is not None:
            named += self.bn.params()
        return named

    def buffers(self):
        return self.bn.buffers() if self.bn is not None else []


class GatLayer:
    """Additive attention over N(v) plus a self-loop; heads concatenated."""

    def __init__(self, config: LayerConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        d_head = config.out_dim // config.heads
        self.W = [
            ad.Tensor(_xavier(rng, config.in_dim, d_head), requires_grad=True)
            for _ in range(config.heads)
        ]
        self.a_src = [
            ad.Tensor(_xavier(rng, d_head, 1), requires_grad=True)
            for _ in range(config.heads)
        ]
        self.a_dst = [
            ad.Tensor(_xavier(rng, d_head, 1), requires_grad=True)
            for _ in range(config.heads)
        ]
        self.bn = BatchNorm(config.out_dim) if config.use_batchnorm else None

    def forward(self, h: ad.Tensor, ctx: GraphContext, training: bool):
        outs = []
        for W, a_s, a_d in zip(self.W, self.a_src, self.a_dst):
            wh = ad.matmul(h, W)
            wh_src = ad.row_gather(wh, ctx.att_src)
            wh_dst = ad.row_gather(wh, ctx.att_dst)
            logits = ad.leaky_relu(
                ad.add(ad.matmul(wh_src, a_s), ad.matmul(wh_dst, a_d)), 0.2
            )
            alpha = ad.softmax_by_segment(logits, ctx.att_dst, ctx.n)
            outs.append(ad.segment_sum(ad.scale_rows(wh_src, alpha), ctx.att_dst, ctx.n))
        out = outs[0] if len(outs) == 1 else ad.concat_cols(outs)
        if self.bn is not None:
            out = self.bn.forward(out, training)
        return _activate(out, self.config.activation), None

    def params(self):
        named = []
        for i, (W, a_s, a_d) in enumerate(zip(self.W, self.a_src, self.a_dst)):
            named += [(f"W_{i}", W), (f"a_src_{i}", a_s), (f"a_dst_{i}", a_d)]
        if self.bn is not None:
            named += self.bn.params()
        return named

    def buffers(self):
        return self.bn.buffers() if self.bn is not None else []


class GtLayer:
    """Scaled dot-product attention over N(v) plus self-loop, with a linear
    output projection and residual connection; exposes attention weights."""

    def __init__(self, config: LayerConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        d_head = config.out_dim // config.heads
        self.d_head = d_head
        self.W_Q = [
            ad.Tensor(_xavier(rng, config.in_dim, d_head), requires_grad=True)
            for _ in range(config.heads)
        ]
        self.W_K = [
            ad.Tensor(_xavier(rng, config.in_dim, d_head), requires_grad=True)
            for _ in range(config.heads)
        ]
        self.W_V = [
            ad.Tensor(_xavier(rng, config.in_dim, d_head), requires_grad=True)
            for _ in range(config.heads)
        ]
        self.W_O = ad.Tensor(
            _xavier(rng, config.out_dim, config.out_dim), requires_grad=True
        )
        self.W_R = ad.Tensor(
            _xavier(rng, config.in_dim, config.out_dim), requires_grad=True
        )
        self.bn = BatchNorm(config.out_dim) if config.use_batchnorm else None
        self._ones = ad.constant(np.ones((d_head, 1)))

    def forward(self, h: ad.Tensor, ctx: GraphContext, training: bool):
        outs = []
        alphas = []
        scale = 1.0 / np.sqrt(self.d_head)
        for W_Q, W_K, W_V in zip(self.W_Q, self.W_K, self.W_V):
            q = ad.matmul(h, W_Q)
            k = ad.matmul(h, W_K)
            v = ad.matmul(h, W_V)
            q_e = ad.row_gather(q, ctx.att_dst)
            k_e = ad.row_gather(k, ctx.att_src)
            logits = ad.mul_scalar(ad.matmul(ad.mul(q_e, k_e), self._ones), scale)
            alpha = ad.softmax_by_segment(logits, ctx.att_dst, ctx.n)
            alphas.append(alpha)
            v_e = ad.row_gather(v, ctx.att_src)
            outs.append(ad.segment_sum(ad.scale_rows(v_e, alpha), ctx.att_dst, ctx.n))
        concat = outs[0] if len(outs) == 1 else ad.concat_cols(outs)
        out = ad.add(ad.matmul(concat, self.W_O), ad.matmul(h, self.W_R))
        if self.bn is not None:
            out = self.bn.forward(out, training)
        m = ctx.att_src.size
        dump = AttentionDump(
            source=np.tile(ctx.att_src, len(alphas)),
            target=np.tile(ctx.att_dst, len(alphas)),
            head=np.repeat(np.arange(len(alphas), dtype=np.int64), m),
            weight=np.concatenate([a.data[:, 0] for a in alphas]),
        )
        return _activate(out, self.config.activation), dump

    def params(self):
        named = []
        for i in range(self.config.heads):
            named += [
                (f"W_Q_{i}", self.W_Q[i]),
                (f"W_K_{i}", self.W_K[i]),
                (f"W_V_{i}", self.W_V[i]),
            ]
        named += [("W_O", self.W_O), ("W_R", self.W_R)]
        if self.bn is not None:
            named += self.bn.params()
        return named

    def buffers(self):
        return self.bn.buffers() if self.bn is not None else []


_LAYER_CLASSES = {"sage": SageLayer, "gat": GatLayer, "gt": GtLayer}


class GnnModel:
    """Stack of GNN layers plus a linear head emitting one logit per node."""

    def __init__(self, configs: list[LayerConfig], seed: int = 0, threshold: float = 0.5):
        if not configs:
            raise ValueError("model needs at least one layer")
        for prev, nxt in zip(configs, configs[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.configs = configs
        self.seed = int(seed)
        self.threshold = float(threshold)
        rng = np.random.default_rng(seed)
        self.layers = [_LAYER_CLASSES[c.kind](c, rng) for c in configs]
        d = configs[-1].out_dim
        self.head_W = ad.Tensor(_xavier(rng, d, 1), requires_grad=True)
        self.head_b = ad.Tensor(np.zeros((1, 1)), requires_grad=True)

    @property
    def in_dim(self) -> int:
        return self.configs[0].in_dim

    def named_parameters(self) -> list[tuple[str, ad.Tensor]]:
        named = []
        for i, layer in enumerate(self.layers):
            named += [(f"layer{i}.{name}", t) for name, t in layer.params()]
        named += [("head.W", self.head_W), ("head.b", self.head_b)]
        return named

    def parameters(self) -> list[ad.Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        named = []
        for i, layer in enumerate(self.layers):
            named += [(f"layer{i}.{name}", a) for name, a in layer.buffers()]
        return named

    def forward(
        self, features: np.ndarray, ctx: GraphContext, training: bool = False
    ) -> tuple[ad.Tensor, Optional[AttentionDump]]:
        """Probabilities (n,1) tensor plus the last GT layer's attention."""
        if features.shape[1] != self.in_dim:
            raise ValueError(
                f"feature dim {features.shape[1]} != first layer in_dim {self.in_dim}"
            )
        h = ad.constant(features)
        dump = None
        for i, layer in enumerate(self.layers):
            h, layer_dump = layer.forward(h, ctx, training)
            if layer_dump is not None:
                dump = layer_dump
            if not np.all(np.isfinite(h.data)):
                raise NumericInstability(f"non-finite values after layer {i}")
        logits = ad.add(ad.matmul(h, self.head_W), self.head_b)
        if not np.all(np.isfinite(logits.data)):
            raise NumericInstability("non-finite values in head logits")
        return ad.sigmoid(logits), dump

    def predict(
        self, graph: SimilarityGraph
    ) -> tuple[np.ndarray, Optional[AttentionDump]]:
        """Inference helper: (n,) probability vector, no tape recording."""
        ctx = GraphContext(graph)
        p, dump = self.forward(graph.features, ctx, training=False)
        return p.data[:, 0].copy(), dump

    def snapshot(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.named_parameters()}
        state.update({name: a.copy() for name, a in self.named_buffers()})
        return state

    def restore(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            t.data = state[name].copy()
        for i, layer in enumerate(self.layers):
            if getattr(layer, "bn", None) is not None:
                layer.bn.set_buffers(
                    state[f"layer{i}.bn_running_mean"], state[f"layer{i}.bn_running_var"]
                )


def build_model(
    arch: str,
    in_dim: int,
    hidden_dim: int = 64,
    n_layers: int = 2,
    heads: int = 4,
    use_batchnorm: bool = True,
    seed: int = 0,
    threshold: float = 0.5,
) -> GnnModel:
    """Standard model shape: (n_layers) GNN layers then the logit head."""
    if arch not in LAYER_KINDS:
        raise ValueError(f"unknown architecture {arch!r}")
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    activation = "elu" if arch == "gat" else "relu"
    head_count = heads if arch in ("gat", "gt") else 1
    configs = []
    for i in range(n_layers):
        configs.append(
            LayerConfig(
                kind=arch,
                in_dim=in_dim if i == 0 else hidden_dim,
                out_dim=hidden_dim,
                heads=head_count,
                activation=activation,
                use_batchnorm=use_batchnorm,
            )
        )
    return GnnModel(configs, seed=seed, threshold=threshold)


def save_model(path, model: GnnModel) -> None:
    """Versioned checkpoint: magic line, JSON manifest, raw float64 data."""
    params = model.named_parameters()
    buffers = model.named_buffers()
    entries = [
        {"name": name, "shape": list(t.data.shape), "kind": "param"} for name, t in params
    ] + [{"name": name, "shape": list(a.shape), "kind": "buffer"} for name, a in buffers]
    manifest = {
        "layer_configs": [c.as_dict() for c in model.configs],
        "seed": model.seed,
        "threshold": model.threshold,
        "entries": entries,
    }
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n").encode("ascii"))
        fh.write((json.dumps(manifest, sort_keys=True) + "\n").encode("utf-8"))
        for _, t in params:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        for _, a in buffers:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path) -> GnnModel:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint (magic {magic!r})")
        manifest = json.loads(fh.readline().decode("utf-8"))
        configs = [LayerConfig(**c) for c in manifest["layer_configs"]]
        model = GnnModel(
            configs, seed=manifest["seed"], threshold=manifest["threshold"]
        )
        state = {}
        for entry in manifest["entries"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError("checkpoint truncated")
            state[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    model.restore(state)
    return model
