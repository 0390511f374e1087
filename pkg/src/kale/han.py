"""Heterogeneous graph attention encoder.

Pipeline: type-wise feed-forward projection into a shared dimension, then
stacked attention layers. Each layer runs masked node-level attention per
meta-path (multi-head, shared-weight per path) and combines the per-path
embeddings with a semantic attention softmax over paths. The final output
is one embedding per node plus the per-path weights.

Per-artwork extraction assembles a fixed slot layout from those node
embeddings, falling back to provider-plus-projection vectors for textual
metadata unseen at build time and to zero vectors for unseen categories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .corpus import ArtworkRecord, clean_technique
from .errors import MissingTypeProjection, NoMetaPaths
from .graph import (
    HeteroGraph,
    MetaPath,
    NodeKey,
    NodeType,
    metapath_neighbors,
    title_ngrams_for_graph,
)
from .providers import EmbeddingProviderSet


@dataclass(frozen=True)
class HanConfig:
    hidden_dim: int = 128  # shared projection width
    head_dim: int = 32
    heads: int = 4
    layers: int = 2
    semantic_dim: int = 128
    leaky_slope: float = 0.2
    activation: str = "elu"  # node-level aggregation nonlinearity
    include_direct: bool = True  # attend over direct cross-type neighbors
    include_metapath: bool = True  # attend over meta-path-reachable peers
    ngram_slots: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.heads * self.head_dim != self.hidden_dim:
            raise ValueError(
                f"heads*head_dim ({self.heads}*{self.head_dim}) must equal "
                f"hidden_dim ({self.hidden_dim}) so fallback slots share the "
                "output space"
            )
        if self.activation not in ("elu", "identity"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def out_dim(self) -> int:
        return self.heads * self.head_dim


def _xavier(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class TypeProjection:
    w: Tensor
    b: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor


@dataclass
class PathHead:
    w: Tensor  # (in_dim, head_dim)
    attn: Tensor  # (2*head_dim,) scoring vector


@dataclass
class SemanticParams:
    q: Tensor  # (semantic_dim,)
    w: Tensor  # (path_in_dim, semantic_dim)
    b: Tensor  # (semantic_dim,)


@dataclass
class HanParams:
    """All learnable tensors of the graph encoder."""

    config: HanConfig
    typewise: dict[NodeType, TypeProjection]
    layers: list[dict[str, list[PathHead]]]  # layer -> path name -> heads
    semantic: list[SemanticParams]

    @classmethod
    def create(cls, graph: HeteroGraph, config: HanConfig) -> "HanParams":
        rng = np.random.default_rng(config.seed)
        typewise: dict[NodeType, TypeProjection] = {}
        for node_type in NodeType:
            table = graph.nodes.get(node_type)
            if not table:
                continue
            dims = {node.embedding.shape[0] for node in table.values()}
            if len(dims) != 1:
                raise ValueError(f"inconsistent embedding dims for {node_type.name}: {dims}")
            in_dim = dims.pop()
            typewise[node_type] = TypeProjection(
                w=Tensor(_xavier(rng, (in_dim, config.hidden_dim)), requires_grad=True),
                b=Tensor(np.zeros(config.hidden_dim), requires_grad=True),
                ln_gamma=Tensor(np.ones(config.hidden_dim), requires_grad=True),
                ln_beta=Tensor(np.zeros(config.hidden_dim), requires_grad=True),
            )
        layers = []
        semantic = []
        in_dim = config.hidden_dim
        for _layer in range(config.layers):
            per_path: dict[str, list[PathHead]] = {}
            for path in graph.metapaths:
                per_path[path.name] = [
                    PathHead(
                        w=Tensor(_xavier(rng, (in_dim, config.head_dim)), requires_grad=True),
                        attn=Tensor(_xavier(rng, (2 * config.head_dim,)), requires_grad=True),
                    )
                    for _ in range(config.heads)
                ]
            layers.append(per_path)
            semantic.append(
                SemanticParams(
                    q=Tensor(_xavier(rng, (config.semantic_dim,)), requires_grad=True),
                    w=Tensor(
                        _xavier(rng, (config.out_dim, config.semantic_dim)), requires_grad=True
                    ),
                    b=Tensor(np.zeros(config.semantic_dim), requires_grad=True),
                )
            )
            in_dim = config.out_dim
        return cls(config=config, typewise=typewise, layers=layers, semantic=semantic)

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for node_type, proj in self.typewise.items():
            base = f"han.typewise.{node_type.name}"
            params.append(Parameter(f"{base}.w", proj.w, "graph"))
            params.append(Parameter(f"{base}.b", proj.b, "graph"))
            params.append(Parameter(f"{base}.ln_gamma", proj.ln_gamma, "graph"))
            params.append(Parameter(f"{base}.ln_beta", proj.ln_beta, "graph"))
        for layer_idx, per_path in enumerate(self.layers):
            for path_name, heads in per_path.items():
                for head_idx, head in enumerate(heads):
                    base = f"han.layer{layer_idx}.{path_name}.head{head_idx}"
                    params.append(Parameter(f"{base}.w", head.w, "graph"))
                    params.append(Parameter(f"{base}.attn", head.attn, "graph"))
            sem = self.semantic[layer_idx]
            base = f"han.layer{layer_idx}.semantic"
            params.append(Parameter(f"{base}.q", sem.q, "graph"))
            params.append(Parameter(f"{base}.w", sem.w, "graph"))
            params.append(Parameter(f"{base}.b", sem.b, "graph"))
        return params


@dataclass
class HanOutput:
    """Forward results: final node embeddings plus attention diagnostics."""

    node_order: list[NodeKey]
    index: dict[NodeKey, int]
    node_embeddings: Tensor  # (N, out_dim), final layer
    path_embeddings: dict[str, Tensor]  # final layer, per path
    path_weights: dict[str, float]  # final layer semantic weights
    layer_path_weights: list[dict[str, float]]  # every layer's weights

    def embedding_of(self, key: NodeKey) -> np.ndarray:
        return self.node_embeddings.data[self.index[key]]


# Slot layout of the per-artwork graph embedding. The n-gram slot repeats
# ``ngram_slots`` times between author and cluster.
SLOT_LAYOUT = ("author", "ngram", "cluster", "technique", "type", "school", "timeframe")


class HanEncoder:
    """Runs the attention stack over one immutable graph."""

    def __init__(self, graph: HeteroGraph, params: HanParams):
        if not graph.metapaths:
            raise NoMetaPaths("the graph registers no meta-paths")
        self.graph = graph
        self.params = params
        self.config = params.config
        self.node_order = graph.all_node_keys()
        self.index = {key: i for i, key in enumerate(self.node_order)}
        self._neighborhoods: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._initial: Tensor | None = None

    # -- neighborhoods ------------------------------------------------------

    def neighborhood_edges(self, path: MetaPath) -> tuple[np.ndarray, np.ndarray]:
        """Flattened attention edges (targets, sources) for one meta-path.

        For every node i: a self-loop, its direct cross-type neighbors, and,
        when i's type heads the path, its meta-path-reachable peers. Targets
        are sorted; sources are ordered by node key within each target so
        the result is independent of node storage order.
        """
        if path.name in self._neighborhoods:
            return self._neighborhoods[path.name]
        cfg = self.config
        targets: list[int] = []
        sources: list[int] = []
        for i, key in enumerate(self.node_order):
            neigh: set[NodeKey] = {key}
            if cfg.include_direct:
                neigh.update(self.graph.neighbors(key))
            if cfg.include_metapath and key[0] == path.type_sequence[0]:
                end_type = path.type_sequence[-1]
                neigh.update(
                    (end_type, nid) for nid in metapath_neighbors(self.graph, path, key)
                )
            ordered = sorted(neigh, key=lambda k: (int(k[0]), k[1]))
            targets.extend([i] * len(ordered))
            sources.extend(self.index[k] for k in ordered)
        arrays = (np.asarray(targets, dtype=np.int64), np.asarray(sources, dtype=np.int64))
        self._neighborhoods[path.name] = arrays
        return arrays

    # -- forward pieces -------------------------------------------------------

    def typewise_project(self) -> Tensor:
        """Project every node's initial embedding into the shared dimension
        with its type's linear layer followed by layer normalization."""
        blocks: list[Tensor] = []
        for node_type in NodeType:
            table = self.graph.nodes.get(node_type)
            if not table:
                continue
            if node_type not in self.params.typewise:
                raise MissingTypeProjection(node_type.name)
            proj = self.params.typewise[node_type]
            x = Tensor(np.stack([node.embedding for node in table.values()]))
            blocks.append(ad.layer_norm(ad.linear(x, proj.w, proj.b), proj.ln_gamma, proj.ln_beta))
        return ad.concat(blocks, axis=0)

    def node_attention(
        self, projected: Tensor, path: MetaPath, layer: int = 0, head: int = 0
    ) -> tuple[np.ndarray, np.ndarray, Tensor]:
        """Attention coefficients for one path and head.

        Returns (targets, sources, alpha): alpha[e] weights source e's
        features in target e's aggregation, normalized per target.
        """
        head_params = self.params.layers[layer][path.name][head]
        targets, sources = self.neighborhood_edges(path)
        targets, sources, alpha, _ = self._attention_from(projected, head_params, targets, sources)
        return targets, sources, alpha

    def _attention_from(self, h: Tensor, head_params: PathHead, targets, sources):
        m = ad.matmul(h, head_params.w)  # (N, head_dim)
        a_self, a_neigh = ad.split(head_params.attn, 2)
        score_self = ad.matmul(m, a_self)  # target node's own contribution
        score_neigh = ad.matmul(m, a_neigh)  # neighbor's contribution
        logits = ad.leaky_relu(
            ad.add(ad.rows(score_self, targets), ad.rows(score_neigh, sources)),
            slope=self.config.leaky_slope,
        )
        alpha = ad.segment_softmax(logits, targets)
        return targets, sources, alpha, m

    def node_level_embed(self, projected: Tensor, path: MetaPath, layer: int = 0) -> Tensor:
        """Multi-head aggregation under one meta-path: heads attend, average
        neighbor features, pass the nonlinearity, and concatenate."""
        cfg = self.config
        heads_out: list[Tensor] = []
        for head in range(cfg.heads):
            head_params = self.params.layers[layer][path.name][head]
            targets, sources, alpha, m = self._attention_from(
                projected, head_params, *self.neighborhood_edges(path)
            )
            weighted = ad.mul(ad.rows(m, sources), ad.reshape(alpha, (alpha.shape[0], 1)))
            agg = ad.segment_sum(weighted, targets, len(self.node_order))
            heads_out.append(ad.elu(agg) if cfg.activation == "elu" else agg)
        return ad.concat(heads_out, axis=1)

    def semantic_attention(
        self, per_path: dict[str, Tensor], layer: int = 0
    ) -> tuple[dict[str, float], Tensor, dict[str, Tensor]]:
        """Meta-path-level attention: score each path by the mean projected
        response over all nodes, softmax across paths, blend."""
        if not per_path:
            raise NoMetaPaths("semantic attention needs at least one meta-path")
        sem = self.params.semantic[layer]
        names = list(per_path)
        scores: list[Tensor] = []
        for name in names:
            hidden = ad.tanh(ad.linear(per_path[name], sem.w, sem.b))  # (N, semantic_dim)
            scores.append(ad.reshape(ad.mean(ad.matmul(hidden, sem.q)), (1,)))
        weights = ad.softmax(ad.concat(scores, axis=0), axis=0)  # (P,)
        weight_slices = ad.split(weights, len(names))
        blended = None
        weight_tensors: dict[str, Tensor] = {}
        for name, w in zip(names, weight_slices):
            weight_tensors[name] = w
            term = ad.mul(per_path[name], ad.reshape(w, (1, 1)))
            blended = term if blended is None else ad.add(blended, term)
        weight_values = {name: float(weight_tensors[name].data[0]) for name in names}
        return weight_values, blended, weight_tensors

    def forward(self) -> HanOutput:
        h = self.typewise_project()
        layer_weights: list[dict[str, float]] = []
        per_path: dict[str, Tensor] = {}
        weights: dict[str, float] = {}
        for layer in range(self.config.layers):
            per_path = {
                path.name: self.node_level_embed(h, path, layer)
                for path in self.graph.metapaths
            }
            weights, h, _ = self.semantic_attention(per_path, layer)
            layer_weights.append(weights)
        return HanOutput(
            node_order=self.node_order,
            index=self.index,
            node_embeddings=h,
            path_embeddings=per_path,
            path_weights=weights,
            layer_path_weights=layer_weights,
        )

    # -- per-artwork extraction ------------------------------------------------

    def project_provider_vector(
        self, node_type: NodeType, text: str, providers: EmbeddingProviderSet
    ) -> Tensor:
        """Fallback for textual metadata unseen at build time: provider
        vector pushed through the matching type-wise feed-forward."""
        if node_type not in self.params.typewise:
            raise MissingTypeProjection(node_type.name)
        proj = self.params.typewise[node_type]
        vec = Tensor(providers.text.embed(text).reshape(1, -1))
        return ad.layer_norm(ad.linear(vec, proj.w, proj.b), proj.ln_gamma, proj.ln_beta)

    def extract(
        self,
        record: ArtworkRecord,
        output: HanOutput,
        providers: EmbeddingProviderSet,
    ) -> Tensor:
        """Fixed-slot graph embedding for one artwork: rows are
        [author, ngram x m, cluster, technique, type, school, timeframe].

        In-graph metadata uses its encoder output row. Unseen author/n-gram/
        technique values fall back to the text provider plus the type-wise
        projection; unseen type/school/timeframe become zero rows, as do
        empty fields and unfilled n-gram slots.
        """
        dim = self.config.out_dim
        zero_row = Tensor(np.zeros((1, dim)))

        def graph_row(key: NodeKey) -> Tensor:
            return ad.rows(output.node_embeddings, [output.index[key]])

        def textual_slot(node_type: NodeType, value: str) -> Tensor:
            if not value:
                return zero_row
            if self.graph.has_node(node_type, value):
                return graph_row((node_type, value))
            return self.project_provider_vector(node_type, value, providers)

        def categorical_slot(node_type: NodeType, value: str) -> Tensor:
            if value and self.graph.has_node(node_type, value):
                return graph_row((node_type, value))
            return zero_row  # unseen category or empty field

        slots: list[Tensor] = [textual_slot(NodeType.Author, record.author.strip())]

        in_graph, unseen = title_ngrams_for_graph(record.title, self.graph)
        grams = in_graph + unseen
        for slot in range(self.config.ngram_slots):
            if slot >= len(grams):
                slots.append(zero_row)
            elif self.graph.has_node(NodeType.NgramKeyword, grams[slot]):
                slots.append(graph_row((NodeType.NgramKeyword, grams[slot])))
            else:
                slots.append(
                    self.project_provider_vector(NodeType.NgramKeyword, grams[slot], providers)
                )

        slots.append(graph_row((NodeType.TitleCluster, self._cluster_id(record, providers))))
        slots.append(textual_slot(NodeType.Technique, clean_technique(record.technique)))
        slots.append(categorical_slot(NodeType.Type, record.type_.strip()))
        slots.append(categorical_slot(NodeType.School, record.school.strip()))
        slots.append(categorical_slot(NodeType.Timeframe, record.timeframe.strip()))
        return ad.concat(slots, axis=0)

    def _cluster_id(self, record: ArtworkRecord, providers: EmbeddingProviderSet) -> str:
        entry = self.graph.artwork_index.get(record.id, {})
        ids = entry.get(NodeType.TitleCluster)
        if ids:
            return ids[0]
        # Unseen record: nearest cluster by cosine against the stored
        # centroids (cluster nodes keep their centroid as initial embedding).
        table = self.graph.nodes[NodeType.TitleCluster]
        centroids = np.stack([node.embedding for node in table.values()])
        vec = providers.text.embed(record.title)
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec = vec / norm
        best = int(np.argmax(centroids @ vec))
        return list(table.keys())[best]


def random_hetero_graph(
    seed: int,
    max_nodes: int = 50,
    num_types: int = 4,
    num_paths: int = 3,
) -> HeteroGraph:
    """Small random typed graph for property tests: random node counts and
    embedding dims per type, random cross-type edges, random meta-paths."""
    rng = np.random.default_rng(seed)
    types = list(NodeType)[:num_types]
    nodes: dict[NodeType, dict[str, object]] = {t: {} for t in NodeType}
    from .graph import Node, canonical_edge, relation_name  # local to avoid cycle noise

    dims = {t: int(rng.integers(3, 9)) for t in types}
    total = 0
    for t in types:
        count = int(rng.integers(2, max(3, max_nodes // num_types)))
        for i in range(count):
            if total >= max_nodes:
                break
            nid = f"{t.name.lower()}{i}"
            nodes[t][nid] = Node(nid, nid, rng.standard_normal(dims[t]))
            total += 1
    edge_set = set()
    edges = []
    keys = [(t, nid) for t in types for nid in nodes[t]]
    for _ in range(max(4, total * 2)):
        a, b = rng.choice(len(keys), size=2, replace=False)
        ka, kb = keys[int(a)], keys[int(b)]
        if ka[0] == kb[0]:
            continue
        canon = canonical_edge(ka, kb)
        if canon in edge_set:
            continue
        edge_set.add(canon)
        edges.append((canon[0], canon[1], relation_name(*canon)))
    metapaths = []
    for p in range(num_paths):
        a, b = types[int(rng.integers(0, num_types))], types[int(rng.integers(0, num_types))]
        mid = types[int(rng.integers(0, num_types))]
        if mid == a:
            mid = types[(types.index(a) + 1) % num_types]
        if b == mid:
            b = a
        metapaths.append(MetaPath(f"path{p}-{a.name}-{mid.name}-{b.name}", (a, mid, b)))
    return HeteroGraph(
        nodes=nodes,
        edges=edges,
        metapaths=metapaths,
        artwork_index={},
        category_values={},
    )
