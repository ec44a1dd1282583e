"""The trainable add-on that sits on a frozen backbone retriever.

A multi-gate mixture-of-experts extracts topic- and phrase-oriented
representations from the backbone embedding; a graph-convolutional
encoder over the tailored taxonomy produces topic class representations;
softmax heads predict indexed topics/phrases; and a fusion network folds
the index knowledge back into the backbone embedding. All gradients are
derived analytically (reverse mode, double precision) so training has no
framework dependency.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .taxonomy import TailoredTaxonomy

CHECKPOINT_VERSION = 1
PROB_FLOOR = 1e-12


class AddonError(ValueError):
    """Raised for invalid add-on configuration or inputs."""


@dataclass(frozen=True)
class AddonConfig:
    dim: int
    num_topics: int
    num_phrases: int
    num_experts: int = 3
    gcn_layers: int = 2
    expert_hidden: int | None = None
    fusion_hidden: int | None = None

    def __post_init__(self):
        for name in ("dim", "num_topics", "num_phrases", "num_experts", "gcn_layers"):
            if getattr(self, name) < 1:
                raise AddonError(f"{name} must be positive")

    @property
    def expert_width(self) -> int:
        return self.expert_hidden if self.expert_hidden is not None else self.dim

    @property
    def fusion_width(self) -> int:
        # Two dense layers mapping 2l -> l; the hidden width defaults to the
        # mean of input and output widths.
        return self.fusion_hidden if self.fusion_hidden is not None else (3 * self.dim) // 2


class ParameterSet:
    """All trainable tensors, as an ordered name -> float64 array map."""

    def __init__(self, config: AddonConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        self.tensors = tensors

    @staticmethod
    def tensor_shapes(config: AddonConfig) -> dict[str, tuple[int, ...]]:
        l, he, hf = config.dim, config.expert_width, config.fusion_width
        shapes: dict[str, tuple[int, ...]] = {}
        for m in range(config.num_experts):
            shapes[f"expert{m}.w1"] = (he, l)
            shapes[f"expert{m}.b1"] = (he,)
            shapes[f"expert{m}.w2"] = (l, he)
            shapes[f"expert{m}.b2"] = (l,)
        for gate in ("gate_topic", "gate_phrase"):
            shapes[f"{gate}.w"] = (config.num_experts, l)
            shapes[f"{gate}.b"] = (config.num_experts,)
        for k in range(config.gcn_layers):
            shapes[f"gcn{k}.w"] = (l, l)
        shapes["fusion.w1"] = (hf, 2 * l)
        shapes["fusion.b1"] = (hf,)
        shapes["fusion.w2"] = (l, hf)
        shapes["fusion.b2"] = (l,)
        shapes["doc_weight.w"] = (l,)
        shapes["doc_weight.b"] = (1,)
        shapes["global_weight"] = (1,)
        return shapes

    @classmethod
    def initialize(cls, config: AddonConfig, seed: int = 0,
                   global_weight: float = 0.1) -> "ParameterSet":
        """Dense weights uniform-scaled by fan-in; the input-adaptive weight
        head starts at zero (so w_d starts at 0.5) and the global weight
        small, which preserves the backbone ranking at step zero."""
        rng = np.random.default_rng(seed)
        tensors: dict[str, np.ndarray] = {}
        for name, shape in cls.tensor_shapes(config).items():
            if name == "global_weight":
                tensors[name] = np.array([global_weight], dtype=np.float64)
            elif name.startswith("doc_weight"):
                tensors[name] = np.zeros(shape, dtype=np.float64)
            elif name.endswith(".b") or name.endswith(".b1") or name.endswith(".b2"):
                tensors[name] = np.zeros(shape, dtype=np.float64)
            else:
                fan_in = shape[-1]
                bound = 1.0 / np.sqrt(fan_in)
                tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    @property
    def global_weight(self) -> float:
        return float(self.tensors["global_weight"][0])

    def names(self) -> list[str]:
        return list(self.tensors)

    def indexing_names(self) -> list[str]:
        """Tensors belonging to the indexing network (experts, gates, GCN);
        the fusion side is excluded, which is what warmup updates."""
        return [n for n in self.tensors
                if n.startswith(("expert", "gate", "gcn"))]

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.config, {n: t.copy() for n, t in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(t) for n, t in self.tensors.items()}

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()])

    def load_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for name, tensor in self.tensors.items():
            n = tensor.size
            self.tensors[name] = flat[offset:offset + n].reshape(tensor.shape).copy()
            offset += n


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    exps = np.exp(shifted)
    return exps / exps.sum()


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@dataclass
class ForwardTrace:
    """Every intermediate value of one text's pass through the add-on,
    retained for the analytic backward pass."""

    backbone: np.ndarray
    gate_topic: np.ndarray
    gate_phrase: np.ndarray
    topic_repr: np.ndarray
    phrase_repr: np.ndarray
    topic_logits: np.ndarray
    topic_probs: np.ndarray
    phrase_logits: np.ndarray
    phrase_probs: np.ndarray
    index_repr: np.ndarray
    input_weight: float
    fused: np.ndarray
    expert_pre: np.ndarray = field(repr=False, default=None)
    expert_act: np.ndarray = field(repr=False, default=None)
    expert_out: np.ndarray = field(repr=False, default=None)
    fusion_pre: np.ndarray = field(repr=False, default=None)
    fusion_act: np.ndarray = field(repr=False, default=None)
    fusion_input: np.ndarray = field(repr=False, default=None)


@dataclass
class MoeTrace:
    topic_repr: np.ndarray
    phrase_repr: np.ndarray
    gate_topic: np.ndarray
    gate_phrase: np.ndarray
    expert_pre: np.ndarray
    expert_act: np.ndarray
    expert_out: np.ndarray


def moe_forward(h_b: np.ndarray, params: ParameterSet, config: AddonConfig) -> MoeTrace:
    """Mixture of experts with task-specific softmax gates: the topic and
    phrase representations are gate-weighted sums of shared expert outputs."""
    h_b = np.asarray(h_b, dtype=np.float64)
    if h_b.shape != (config.dim,):
        raise AddonError(f"backbone embedding has shape {h_b.shape}, "
                         f"expected ({config.dim},)")
    if not np.all(np.isfinite(h_b)):
        raise AddonError("non-finite backbone embedding")
    m, l, he = config.num_experts, config.dim, config.expert_width
    pre = np.empty((m, he))
    act = np.empty((m, he))
    out = np.empty((m, l))
    for i in range(m):
        pre[i] = params[f"expert{i}.w1"] @ h_b + params[f"expert{i}.b1"]
        act[i] = np.maximum(pre[i], 0.0)
        out[i] = params[f"expert{i}.w2"] @ act[i] + params[f"expert{i}.b2"]
    w_t = softmax(params["gate_topic.w"] @ h_b + params["gate_topic.b"])
    w_p = softmax(params["gate_phrase.w"] @ h_b + params["gate_phrase.b"])
    return MoeTrace(topic_repr=w_t @ out, phrase_repr=w_p @ out,
                    gate_topic=w_t, gate_phrase=w_p,
                    expert_pre=pre, expert_act=act, expert_out=out)


def gcn_adjacency(tailored: TailoredTaxonomy) -> np.ndarray:
    """Symmetric-normalized adjacency with self-loops over the undirected
    taxonomy edge set, rows/columns in dense-index order."""
    n = tailored.num_topics
    adj = np.eye(n)
    for parent, child in tailored.edges():
        i, j = tailored.node_index[parent], tailored.node_index[child]
        adj[i, j] = 1.0
        adj[j, i] = 1.0
    degree = adj.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    return adj * inv_sqrt[:, None] * inv_sqrt[None, :]


@dataclass
class GcnTrace:
    output: np.ndarray
    layer_inputs: list = field(repr=False, default_factory=list)
    propagated: list = field(repr=False, default_factory=list)
    pre_activations: list = field(repr=False, default_factory=list)


def gcn_encode_topics(adj_norm: np.ndarray, features: np.ndarray,
                      params: ParameterSet, config: AddonConfig) -> GcnTrace:
    """Stacked graph convolutions: X <- act(A_hat X W) with a rectifier
    between layers and none after the last. Row i of the output is the
    class representation of the topic with dense index i."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.dim:
        raise AddonError(f"node features have shape {x.shape}, "
                         f"expected (n, {config.dim})")
    trace = GcnTrace(output=x)
    for k in range(config.gcn_layers):
        trace.layer_inputs.append(x)
        prop = adj_norm @ x
        trace.propagated.append(prop)
        z = prop @ params[f"gcn{k}.w"]
        trace.pre_activations.append(z)
        x = np.maximum(z, 0.0) if k < config.gcn_layers - 1 else z
    trace.output = x
    return trace


def predict(h: np.ndarray, class_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Class logits and a numerically stable softmax over them."""
    if class_matrix.shape[1] != h.shape[0]:
        raise AddonError(f"class matrix width {class_matrix.shape[1]} does not "
                         f"match representation size {h.shape[0]}")
    logits = class_matrix @ h
    return logits, softmax(logits)


def index_learning_loss(topic_probs: np.ndarray, topic_labels: np.ndarray,
                        phrase_probs: np.ndarray, phrase_labels: np.ndarray) -> float:
    """Cross entropy against the indexed labels, used exactly as given
    (multi-hot for documents, averaged fractional for queries)."""
    for probs, labels in ((topic_probs, topic_labels), (phrase_probs, phrase_labels)):
        if probs.shape != labels.shape:
            raise AddonError(f"label shape {labels.shape} does not match "
                             f"prediction shape {probs.shape}")
    loss = -float(topic_labels @ np.log(np.maximum(topic_probs, PROB_FLOOR)))
    loss -= float(phrase_labels @ np.log(np.maximum(phrase_probs, PROB_FLOOR)))
    return loss


def ce_logit_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the floored cross entropy with respect to the logits."""
    mask = probs > PROB_FLOOR
    masked = labels * mask
    return probs * masked.sum() - masked


@dataclass
class FuseTrace:
    fused: np.ndarray
    index_repr: np.ndarray
    input_weight: float
    fusion_input: np.ndarray
    fusion_pre: np.ndarray
    fusion_act: np.ndarray


def fuse(h_b: np.ndarray, topic_repr: np.ndarray, phrase_repr: np.ndarray,
         params: ParameterSet) -> FuseTrace:
    """Two-level weighted fusion: the combined index representation is
    added to the backbone embedding, scaled by a trainable global weight
    and a per-input sigmoid weight."""
    c = np.concatenate([topic_repr, phrase_repr])
    v = params["fusion.w1"] @ c + params["fusion.b1"]
    r = np.maximum(v, 0.0)
    h_i = params["fusion.w2"] @ r + params["fusion.b2"]
    gate = float(params["doc_weight.w"] @ h_b + params["doc_weight.b"][0])
    w_d = sigmoid(gate)
    fused = h_b + params.global_weight * w_d * h_i
    return FuseTrace(fused=fused, index_repr=h_i, input_weight=w_d,
                     fusion_input=c, fusion_pre=v, fusion_act=r)


def forward_text(h_b: np.ndarray, topic_classes: np.ndarray, phrase_classes: np.ndarray,
                 params: ParameterSet, config: AddonConfig) -> ForwardTrace:
    """Full pass for one text: experts and gates, both prediction heads,
    and fusion."""
    moe = moe_forward(h_b, params, config)
    topic_logits, topic_probs = predict(moe.topic_repr, topic_classes)
    phrase_logits, phrase_probs = predict(moe.phrase_repr, phrase_classes)
    fused = fuse(np.asarray(h_b, dtype=np.float64), moe.topic_repr,
                 moe.phrase_repr, params)
    return ForwardTrace(
        backbone=np.asarray(h_b, dtype=np.float64),
        gate_topic=moe.gate_topic, gate_phrase=moe.gate_phrase,
        topic_repr=moe.topic_repr, phrase_repr=moe.phrase_repr,
        topic_logits=topic_logits, topic_probs=topic_probs,
        phrase_logits=phrase_logits, phrase_probs=phrase_probs,
        index_repr=fused.index_repr, input_weight=fused.input_weight,
        fused=fused.fused,
        expert_pre=moe.expert_pre, expert_act=moe.expert_act,
        expert_out=moe.expert_out,
        fusion_pre=fused.fusion_pre, fusion_act=fused.fusion_act,
        fusion_input=fused.fusion_input)


def contrastive_loss(h_q: np.ndarray, h_pos: np.ndarray,
                     negatives: list[np.ndarray]) -> tuple[float, np.ndarray]:
    """Softmax contrastive loss over inner-product similarities, computed
    log-sum-exp-stably. Returns the loss and the softmax over
    [positive, negatives] needed by the backward pass."""
    if not negatives:
        raise AddonError("contrastive loss needs at least one negative")
    sims = np.array([float(h_q @ h_pos)] + [float(h_q @ n) for n in negatives])
    if not np.all(np.isfinite(sims)):
        return float("nan"), np.full(len(sims), 1.0 / len(sims))
    shift = sims.max()
    exps = np.exp(sims - shift)
    lse = shift + np.log(exps.sum())
    loss = lse - sims[0]
    return float(loss), exps / exps.sum()


def text_backward(trace: ForwardTrace, params: ParameterSet, config: AddonConfig,
                  grads: dict[str, np.ndarray],
                  d_fused: np.ndarray | None = None,
                  d_topic_logits: np.ndarray | None = None,
                  d_phrase_logits: np.ndarray | None = None,
                  topic_classes: np.ndarray | None = None,
                  phrase_classes: np.ndarray | None = None,
                  d_topic_classes: np.ndarray | None = None) -> None:
    """Accumulate parameter gradients for one text given upstream gradients
    with respect to the fused embedding and/or the prediction logits.
    Gradients with respect to the topic class matrix accumulate into
    ``d_topic_classes`` for a single GCN backward pass per step."""
    l = config.dim
    h_b = trace.backbone
    d_topic_repr = np.zeros(l)
    d_phrase_repr = np.zeros(l)

    if d_fused is not None:
        alpha = params.global_weight
        w_d, h_i = trace.input_weight, trace.index_repr
        pull = float(d_fused @ h_i)
        grads["global_weight"][0] += w_d * pull
        d_gate = alpha * pull * w_d * (1.0 - w_d)
        grads["doc_weight.w"] += d_gate * h_b
        grads["doc_weight.b"][0] += d_gate
        d_hi = alpha * w_d * d_fused
        grads["fusion.w2"] += np.outer(d_hi, trace.fusion_act)
        grads["fusion.b2"] += d_hi
        d_act = params["fusion.w2"].T @ d_hi
        d_pre = d_act * (trace.fusion_pre > 0.0)
        grads["fusion.w1"] += np.outer(d_pre, trace.fusion_input)
        grads["fusion.b1"] += d_pre
        d_c = params["fusion.w1"].T @ d_pre
        d_topic_repr += d_c[:l]
        d_phrase_repr += d_c[l:]

    if d_topic_logits is not None:
        d_topic_repr += topic_classes.T @ d_topic_logits
        if d_topic_classes is not None:
            d_topic_classes += np.outer(d_topic_logits, trace.topic_repr)
    if d_phrase_logits is not None:
        # Phrase class vectors are fixed provider embeddings, so only the
        # representation receives gradient.
        d_phrase_repr += phrase_classes.T @ d_phrase_logits

    w_t, w_p = trace.gate_topic, trace.gate_phrase
    out = trace.expert_out
    d_out = w_t[:, None] * d_topic_repr[None, :] + w_p[:, None] * d_phrase_repr[None, :]
    d_wt = out @ d_topic_repr
    d_wp = out @ d_phrase_repr
    d_zt = w_t * (d_wt - float(w_t @ d_wt))
    d_zp = w_p * (d_wp - float(w_p @ d_wp))
    grads["gate_topic.w"] += np.outer(d_zt, h_b)
    grads["gate_topic.b"] += d_zt
    grads["gate_phrase.w"] += np.outer(d_zp, h_b)
    grads["gate_phrase.b"] += d_zp
    for m in range(config.num_experts):
        d_f = d_out[m]
        grads[f"expert{m}.w2"] += np.outer(d_f, trace.expert_act[m])
        grads[f"expert{m}.b2"] += d_f
        d_a = params[f"expert{m}.w2"].T @ d_f
        d_u = d_a * (trace.expert_pre[m] > 0.0)
        grads[f"expert{m}.w1"] += np.outer(d_u, h_b)
        grads[f"expert{m}.b1"] += d_u


def gcn_backward(trace: GcnTrace, adj_norm: np.ndarray, params: ParameterSet,
                 config: AddonConfig, d_output: np.ndarray,
                 grads: dict[str, np.ndarray]) -> None:
    """Backward through the stacked graph convolutions given the gradient
    of the loss with respect to the topic class matrix."""
    d_x = d_output
    for k in reversed(range(config.gcn_layers)):
        if k < config.gcn_layers - 1:
            d_z = d_x * (trace.pre_activations[k] > 0.0)
        else:
            d_z = d_x
        grads[f"gcn{k}.w"] += trace.propagated[k].T @ d_z
        d_x = adj_norm.T @ (d_z @ params[f"gcn{k}.w"].T)


def save_checkpoint(params: ParameterSet, path: str | Path,
                    build_hash: str | None = None) -> None:
    """Write a JSON manifest (<path>.json) plus a little-endian f32 tensor
    blob (<path>.bin) in manifest order."""
    base = Path(path)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "tensors": [{"name": n, "shape": list(t.shape)}
                    for n, t in params.tensors.items()],
    }
    if build_hash is not None:
        manifest["build_hash"] = build_hash
    base.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    blob = b"".join(t.astype("<f4").tobytes() for t in params.tensors.values())
    base.with_suffix(".bin").write_bytes(blob)


def load_checkpoint(path: str | Path) -> tuple[ParameterSet, str | None]:
    """Load a checkpoint; returns the parameters and the recorded build
    hash (if any)."""
    base = Path(path)
    manifest = json.loads(base.with_suffix(".json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise AddonError(f"unsupported checkpoint version {manifest.get('version')!r}")
    config = AddonConfig(**manifest["config"])
    blob = base.with_suffix(".bin").read_bytes()
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape))
        chunk = blob[offset:offset + 4 * n]
        if len(chunk) != 4 * n:
            raise AddonError(f"checkpoint blob truncated at tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(chunk, dtype="<f4").astype(
            np.float64).reshape(shape)
        offset += 4 * n
    if offset != len(blob):
        raise AddonError("checkpoint blob has trailing data")
    expected = ParameterSet.tensor_shapes(config)
    if {n: tuple(t.shape) for n, t in tensors.items()} != expected:
        raise AddonError("checkpoint tensors do not match the configuration")
    return ParameterSet(config, tensors), manifest.get("build_hash")
