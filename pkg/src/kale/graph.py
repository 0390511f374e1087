"""Multi-layer heterogeneous graph over artworks and their metadata.

Artwork nodes form the core layer; each metadata kind (author, title
n-grams, title cluster, technique, type, school, timeframe) is its own
layer. Edges connect artworks to their metadata and metadata values that
co-occur on an artwork; there are never edges inside one layer. Meta-paths
describe typed walks (Artwork-Author-Artwork and friends) used by the graph
encoder and by the inspection tooling.
"""

from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass, field
from io import BytesIO

import numpy as np

from .corpus import ArtworkRecord, NgramVocab, TitleClustering, clean_technique
from .errors import (
    ChecksumMismatch,
    ProviderFailure,
    SchemaVersionMismatch,
    TypeMismatch,
    UnknownCategory,
)
from .providers import EmbeddingProviderSet
from .text import ngrams as make_ngrams
from .text import tokenize

MAGIC = b"KALEHG01"


class NodeType(enum.IntEnum):
    Artwork = 0
    Author = 1
    NgramKeyword = 2
    TitleCluster = 3
    Technique = 4
    Type = 5
    School = 6
    Timeframe = 7


# Metadata types whose values are plain categories (one-hot embeddings, zero
# vector fallback for unseen values at inference time).
CATEGORICAL_TYPES = (NodeType.Type, NodeType.School, NodeType.Timeframe)
# Metadata types embedded by the text provider (provider + projection
# fallback for unseen values at inference time).
TEXTUAL_TYPES = (NodeType.Author, NodeType.NgramKeyword, NodeType.Technique)


@dataclass(frozen=True)
class MetaPath:
    name: str
    type_sequence: tuple[NodeType, ...]

    def __post_init__(self):
        if len(self.type_sequence) < 3:
            raise ValueError(f"meta-path {self.name!r} needs at least 3 types")
        for a, b in zip(self.type_sequence, self.type_sequence[1:]):
            if a == b:
                raise ValueError(
                    f"meta-path {self.name!r}: consecutive types must differ "
                    "(there are no edges inside a layer)"
                )


DEFAULT_METAPATHS = (
    MetaPath("Artwork-Author-Artwork", (NodeType.Artwork, NodeType.Author, NodeType.Artwork)),
    MetaPath("Artwork-Timeframe-Artwork", (NodeType.Artwork, NodeType.Timeframe, NodeType.Artwork)),
    MetaPath("Artwork-Type-Artwork", (NodeType.Artwork, NodeType.Type, NodeType.Artwork)),
    MetaPath("Artwork-School-Artwork", (NodeType.Artwork, NodeType.School, NodeType.Artwork)),
    MetaPath("Artwork-Ngram-Artwork", (NodeType.Artwork, NodeType.NgramKeyword, NodeType.Artwork)),
    MetaPath("Artwork-Cluster-Artwork", (NodeType.Artwork, NodeType.TitleCluster, NodeType.Artwork)),
    MetaPath("Artwork-Technique-Artwork", (NodeType.Artwork, NodeType.Technique, NodeType.Artwork)),
    MetaPath("Type-Ngrams-Type", (NodeType.Type, NodeType.NgramKeyword, NodeType.Type)),
)

NodeKey = tuple[NodeType, str]


@dataclass
class Node:
    node_id: str
    label: str
    embedding: np.ndarray


@dataclass
class HeteroGraph:
    """Immutable after build; safe for concurrent reads."""

    nodes: dict[NodeType, dict[str, Node]]
    edges: list[tuple[NodeKey, NodeKey, str]]
    metapaths: list[MetaPath]
    artwork_index: dict[str, dict[NodeType, list[str]]]
    category_values: dict[NodeType, list[str]]  # observed one-hot axes
    provider_digest: str = ""
    _adjacency: dict[NodeKey, list[NodeKey]] | None = field(default=None, repr=False)

    # -- queries ----------------------------------------------------------

    def has_node(self, node_type: NodeType, node_id: str) -> bool:
        return node_id in self.nodes.get(node_type, {})

    def node(self, node_type: NodeType, node_id: str) -> Node:
        return self.nodes[node_type][node_id]

    def adjacency(self) -> dict[NodeKey, list[NodeKey]]:
        """Undirected adjacency, built lazily and cached."""
        if self._adjacency is None:
            adj: dict[NodeKey, list[NodeKey]] = {}
            for src, dst, _rel in self.edges:
                adj.setdefault(src, []).append(dst)
                adj.setdefault(dst, []).append(src)
            self._adjacency = adj
        return self._adjacency

    def neighbors(self, key: NodeKey) -> list[NodeKey]:
        return self.adjacency().get(key, [])

    def all_node_keys(self) -> list[NodeKey]:
        """Deterministic global node order: type-major, insertion order."""
        keys: list[NodeKey] = []
        for node_type in NodeType:
            keys.extend((node_type, nid) for nid in self.nodes.get(node_type, {}))
        return keys

    def metapath_by_name(self, name: str) -> MetaPath:
        for path in self.metapaths:
            if path.name == name:
                return path
        raise KeyError(f"unknown meta-path {name!r}")


def canonical_edge(a: NodeKey, b: NodeKey) -> tuple[NodeKey, NodeKey]:
    """One stored direction per logical undirected edge."""
    return (a, b) if (int(a[0]), a[1]) <= (int(b[0]), b[1]) else (b, a)


def relation_name(a: NodeKey, b: NodeKey) -> str:
    return f"{a[0].name}-{b[0].name}"


# --- construction -----------------------------------------------------------


def record_ngrams(record: ArtworkRecord, vocab: NgramVocab) -> list[str]:
    """Title n-grams of a record that exist in the vocabulary.

    Ordered by (n-gram order, vocabulary rank): unigrams first, most
    frequent first within each order. The same ordering is recoverable from
    a loaded graph's n-gram node table, which keeps slot extraction stable
    after a serialize/load round trip.
    """
    tokens = tokenize(record.title)
    grams: set[str] = set()
    for n in (1, 2, 3):
        grams.update(g for g in make_ngrams(tokens, n) if g in vocab.entries)
    return sorted(grams, key=lambda g: (vocab.entries[g].n, vocab.entries[g].rank))


def title_ngrams_for_graph(title: str, graph: HeteroGraph) -> tuple[list[str], list[str]]:
    """Split a title's n-grams into (in-graph, unseen) lists.

    In-graph n-grams keep node-table order (n-gram order, then rank);
    unseen ones keep first-occurrence order by n-gram order. Used for slot
    extraction when only a loaded graph is available.
    """
    table = graph.nodes.get(NodeType.NgramKeyword, {})
    position = {gram: i for i, gram in enumerate(table)}
    tokens = tokenize(title)
    seen: list[str] = []
    unseen: list[str] = []
    already: set[str] = set()
    for n in (1, 2, 3):
        for gram in make_ngrams(tokens, n):
            if gram in already:
                continue
            already.add(gram)
            (seen if gram in position else unseen).append(gram)
    seen.sort(key=lambda g: position[g])
    return seen, unseen


def _metadata_keys(
    record: ArtworkRecord, vocab: NgramVocab, clustering: TitleClustering
) -> list[NodeKey]:
    """All metadata node keys attached to one artwork, deterministic order."""
    keys: list[NodeKey] = []
    author = record.author.strip()
    if author:
        keys.append((NodeType.Author, author))
    keys.extend((NodeType.NgramKeyword, g) for g in record_ngrams(record, vocab))
    if record.id in clustering.assignment:
        keys.append((NodeType.TitleCluster, f"c{clustering.assignment[record.id]:03d}"))
    technique = clean_technique(record.technique)
    if technique:
        keys.append((NodeType.Technique, technique))
    for node_type, value in (
        (NodeType.Type, record.type_.strip()),
        (NodeType.School, record.school.strip()),
        (NodeType.Timeframe, record.timeframe.strip()),
    ):
        if value:
            keys.append((node_type, value))
    return keys


def node_initial_embedding(
    node_type: NodeType,
    label: str,
    providers: EmbeddingProviderSet,
    clustering: TitleClustering | None = None,
    category_values: dict[NodeType, list[str]] | None = None,
    image_ref=None,
) -> np.ndarray:
    """Initial embedding for one node.

    Artworks use the image provider; textual metadata uses the text
    provider; title clusters reuse their centroid; categorical metadata is
    one-hot over the categories observed at build time (UnknownCategory for
    anything else).
    """
    if node_type == NodeType.TitleCluster and clustering is None:
        raise ValueError("cluster embeddings need the clustering result")
    try:
        if node_type == NodeType.Artwork:
            return providers.image.embed(image_ref if image_ref is not None else label)
        if node_type in TEXTUAL_TYPES:
            return providers.text.embed(label)
        if node_type == NodeType.TitleCluster:
            return clustering.centroids[int(label.lstrip("c"))].copy()
    except Exception as exc:
        raise ProviderFailure(label, exc) from exc

    # Categorical one-hot, dimension frozen at build time.
    if category_values is None or node_type not in category_values:
        raise UnknownCategory(node_type.name, label)
    values = category_values[node_type]
    try:
        idx = values.index(label)
    except ValueError:
        raise UnknownCategory(node_type.name, label) from None
    onehot = np.zeros(len(values), dtype=np.float64)
    onehot[idx] = 1.0
    return onehot


def build_graph(
    records: list[ArtworkRecord],
    vocab: NgramVocab,
    clustering: TitleClustering,
    providers: EmbeddingProviderSet | None = None,
    metapaths: tuple[MetaPath, ...] = DEFAULT_METAPATHS,
    inter_metadata_cliques: bool = True,
) -> HeteroGraph:
    """Assemble the heterogeneous graph from parsed records.

    One artwork node per record, one node per distinct metadata value, one
    node per vocabulary n-gram, one per title cluster. Every artwork links
    to each of its non-empty metadata nodes; metadata nodes that co-occur on
    an artwork are linked pairwise (the clique is configurable off).
    """
    providers = providers or EmbeddingProviderSet()

    # Observed category axes, frozen at build time; sorted for determinism.
    category_values = {
        NodeType.Type: sorted({r.type_.strip() for r in records if r.type_.strip()}),
        NodeType.School: sorted({r.school.strip() for r in records if r.school.strip()}),
        NodeType.Timeframe: sorted({r.timeframe.strip() for r in records if r.timeframe.strip()}),
    }

    nodes: dict[NodeType, dict[str, Node]] = {t: {} for t in NodeType}

    # N-gram nodes in vocabulary rank order so the slot ordering used at
    # inference can be recovered from the node table alone.
    for n in (1, 2, 3):
        for gram in vocab.for_n(n):
            nodes[NodeType.NgramKeyword][gram] = Node(
                gram, gram, node_initial_embedding(NodeType.NgramKeyword, gram, providers)
            )
    for c in range(clustering.k):
        cid = f"c{c:03d}"
        nodes[NodeType.TitleCluster][cid] = Node(
            cid, cid, node_initial_embedding(NodeType.TitleCluster, cid, providers, clustering)
        )

    edge_set: set[tuple[NodeKey, NodeKey]] = set()
    edges: list[tuple[NodeKey, NodeKey, str]] = []
    artwork_index: dict[str, dict[NodeType, list[str]]] = {}

    def add_edge(a: NodeKey, b: NodeKey) -> None:
        if a[0] == b[0]:
            return  # no edges inside a layer
        key = canonical_edge(a, b)
        if key in edge_set:
            return
        edge_set.add(key)
        edges.append((key[0], key[1], relation_name(key[0], key[1])))

    for record in records:
        art_key = (NodeType.Artwork, record.id)
        nodes[NodeType.Artwork][record.id] = Node(
            record.id,
            record.title,
            node_initial_embedding(
                NodeType.Artwork, record.id, providers, image_ref=record.image_ref
            ),
        )
        meta_keys = _metadata_keys(record, vocab, clustering)
        index_entry: dict[NodeType, list[str]] = {}
        for node_type, value in meta_keys:
            index_entry.setdefault(node_type, []).append(value)
            if value not in nodes[node_type]:
                nodes[node_type][value] = Node(
                    value,
                    value,
                    node_initial_embedding(
                        node_type, value, providers, clustering, category_values
                    ),
                )
            add_edge(art_key, (node_type, value))
        if inter_metadata_cliques:
            for i in range(len(meta_keys)):
                for j in range(i + 1, len(meta_keys)):
                    add_edge(meta_keys[i], meta_keys[j])
        artwork_index[record.id] = index_entry

    return HeteroGraph(
        nodes=nodes,
        edges=edges,
        metapaths=list(metapaths),
        artwork_index=artwork_index,
        category_values=category_values,
        provider_digest=providers.digest(),
    )


# --- meta-path traversal ------------------------------------------------------


def metapath_neighbors(graph: HeteroGraph, path: MetaPath, start: NodeKey) -> set[str]:
    """Node ids reachable by walking edges that match the path's type
    sequence, excluding the start node itself."""
    if start[0] != path.type_sequence[0]:
        raise TypeMismatch(
            f"start node type {start[0].name} != path head {path.type_sequence[0].name}"
        )
    frontier: set[NodeKey] = {start}
    for next_type in path.type_sequence[1:]:
        nxt: set[NodeKey] = set()
        for key in frontier:
            nxt.update(nb for nb in graph.neighbors(key) if nb[0] == next_type)
        frontier = nxt
        if not frontier:
            break
    frontier.discard(start)
    return {node_id for _, node_id in frontier}


# --- stats ---------------------------------------------------------------


def graph_stats(graph: HeteroGraph) -> dict:
    per_type = {t.name: len(graph.nodes.get(t, {})) for t in NodeType}
    return {
        "nodes_per_type": per_type,
        "total_nodes": sum(per_type.values()),
        "total_edges": len(graph.edges),
    }


# --- serialization ---------------------------------------------------------
#
# Binary container: MAGIC, then four length-prefixed sections, each followed
# by the CRC32 of its payload. Strings are u32 length + UTF-8; floats are
# little-endian 64-bit.

_SECTIONS = ("nodes", "edges", "metapaths", "provider")


def _pack_str(buf: BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ChecksumMismatch("unexpected end of file")
    return data


def _unpack_str(fh) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("utf-8")


def serialize_graph(graph: HeteroGraph, path) -> None:
    sections: dict[str, bytes] = {}

    buf = BytesIO()
    present = [t for t in NodeType if graph.nodes.get(t)]
    buf.write(struct.pack("<I", len(present)))
    for node_type in present:
        table = graph.nodes[node_type]
        buf.write(struct.pack("<BI", int(node_type), len(table)))
        for node in table.values():
            _pack_str(buf, node.node_id)
            _pack_str(buf, node.label)
            emb = np.ascontiguousarray(node.embedding, dtype="<f8")
            buf.write(struct.pack("<I", emb.size))
            buf.write(emb.tobytes())
    # One-hot axes ride along with the node tables.
    buf.write(struct.pack("<I", len(graph.category_values)))
    for node_type, values in sorted(graph.category_values.items()):
        buf.write(struct.pack("<BI", int(node_type), len(values)))
        for v in values:
            _pack_str(buf, v)
    buf.write(struct.pack("<I", len(graph.artwork_index)))
    for art_id, entry in graph.artwork_index.items():
        _pack_str(buf, art_id)
        buf.write(struct.pack("<I", len(entry)))
        for node_type, ids in entry.items():
            buf.write(struct.pack("<BI", int(node_type), len(ids)))
            for nid in ids:
                _pack_str(buf, nid)
    sections["nodes"] = buf.getvalue()

    buf = BytesIO()
    buf.write(struct.pack("<Q", len(graph.edges)))
    for (src_t, src_id), (dst_t, dst_id), rel in graph.edges:
        buf.write(struct.pack("<B", int(src_t)))
        _pack_str(buf, src_id)
        buf.write(struct.pack("<B", int(dst_t)))
        _pack_str(buf, dst_id)
        _pack_str(buf, rel)
    sections["edges"] = buf.getvalue()

    buf = BytesIO()
    buf.write(struct.pack("<I", len(graph.metapaths)))
    for mp in graph.metapaths:
        _pack_str(buf, mp.name)
        buf.write(struct.pack("<I", len(mp.type_sequence)))
        for t in mp.type_sequence:
            buf.write(struct.pack("<B", int(t)))
    sections["metapaths"] = buf.getvalue()

    buf = BytesIO()
    _pack_str(buf, graph.provider_digest)
    sections["provider"] = buf.getvalue()

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name in _SECTIONS:
            payload = sections[name]
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_graph(path) -> HeteroGraph:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise SchemaVersionMismatch(f"bad magic {magic!r}, expected {MAGIC!r}")
        payloads: dict[str, BytesIO] = {}
        for name in _SECTIONS:
            (size,) = struct.unpack("<Q", _read_exact(fh, 8))
            payload = _read_exact(fh, size)
            (crc,) = struct.unpack("<I", _read_exact(fh, 4))
            if zlib.crc32(payload) != crc:
                raise ChecksumMismatch(f"section {name!r} failed its CRC check")
            payloads[name] = BytesIO(payload)

    buf = payloads["nodes"]
    nodes: dict[NodeType, dict[str, Node]] = {t: {} for t in NodeType}
    (n_types,) = struct.unpack("<I", _read_exact(buf, 4))
    for _ in range(n_types):
        t_raw, count = struct.unpack("<BI", _read_exact(buf, 5))
        node_type = NodeType(t_raw)
        for _ in range(count):
            nid = _unpack_str(buf)
            label = _unpack_str(buf)
            (dim,) = struct.unpack("<I", _read_exact(buf, 4))
            emb = np.frombuffer(_read_exact(buf, dim * 8), dtype="<f8").astype(np.float64)
            nodes[node_type][nid] = Node(nid, label, emb)
    category_values: dict[NodeType, list[str]] = {}
    (n_cat,) = struct.unpack("<I", _read_exact(buf, 4))
    for _ in range(n_cat):
        t_raw, count = struct.unpack("<BI", _read_exact(buf, 5))
        category_values[NodeType(t_raw)] = [_unpack_str(buf) for _ in range(count)]
    artwork_index: dict[str, dict[NodeType, list[str]]] = {}
    (n_art,) = struct.unpack("<I", _read_exact(buf, 4))
    for _ in range(n_art):
        art_id = _unpack_str(buf)
        (n_entries,) = struct.unpack("<I", _read_exact(buf, 4))
        entry: dict[NodeType, list[str]] = {}
        for _ in range(n_entries):
            t_raw, count = struct.unpack("<BI", _read_exact(buf, 5))
            entry[NodeType(t_raw)] = [_unpack_str(buf) for _ in range(count)]
        artwork_index[art_id] = entry

    buf = payloads["edges"]
    (n_edges,) = struct.unpack("<Q", _read_exact(buf, 8))
    edges = []
    for _ in range(n_edges):
        (src_t,) = struct.unpack("<B", _read_exact(buf, 1))
        src_id = _unpack_str(buf)
        (dst_t,) = struct.unpack("<B", _read_exact(buf, 1))
        dst_id = _unpack_str(buf)
        rel = _unpack_str(buf)
        edges.append(((NodeType(src_t), src_id), (NodeType(dst_t), dst_id), rel))

    buf = payloads["metapaths"]
    (n_paths,) = struct.unpack("<I", _read_exact(buf, 4))
    metapaths = []
    for _ in range(n_paths):
        name = _unpack_str(buf)
        (n_seq,) = struct.unpack("<I", _read_exact(buf, 4))
        seq = tuple(NodeType(struct.unpack("<B", _read_exact(buf, 1))[0]) for _ in range(n_seq))
        metapaths.append(MetaPath(name, seq))

    provider_digest = _unpack_str(payloads["provider"])
    return HeteroGraph(
        nodes=nodes,
        edges=edges,
        metapaths=metapaths,
        artwork_index=artwork_index,
        category_values=category_values,
        provider_digest=provider_digest,
    )


def export_json(graph: HeteroGraph, path) -> None:
    """Human-inspectable mirror of the binary container."""
    doc = {
        "magic": MAGIC.decode("ascii"),
        "provider_digest": graph.provider_digest,
        "nodes": {
            t.name: [
                {"id": n.node_id, "label": n.label, "embedding": n.embedding.tolist()}
                for n in graph.nodes.get(t, {}).values()
            ]
            for t in NodeType
            if graph.nodes.get(t)
        },
        "edges": [
            {"src": [s[0].name, s[1]], "dst": [d[0].name, d[1]], "relation": rel}
            for s, d, rel in graph.edges
        ],
        "metapaths": [
            {"name": mp.name, "types": [t.name for t in mp.type_sequence]}
            for mp in graph.metapaths
        ],
        "category_values": {t.name: v for t, v in graph.category_values.items()},
        "artwork_index": {
            art: {t.name: ids for t, ids in entry.items()}
            for art, entry in graph.artwork_index.items()
        },
        "stats": graph_stats(graph),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, indent=1)
