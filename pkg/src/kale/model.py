"""Toy-scale multimodal caption model.

Vision encoder over 8x8 image patches, metadata text encoder with special
marker tokens, a fusion encoder over the concatenated modalities, and an
autoregressive decoder with beam search. Transformer blocks are post-norm
(residual then layer norm) with ELU feed-forwards; everything runs on the
package's own tape so the whole stack is gradient-checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .corpus import ArtworkRecord, clean_technique
from .errors import PrefixTooLong
from .providers import NUM_PATCHES, PATCH_DIM, load_patch_matrix
from .text import tokenize

PAD, BOS, EOS, UNK = 0, 1, 2, 3

MARKERS = ("<AUTHOR>", "<TITLE>", "<TECHNIQUE>", "<TYPE>", "<SCHOOL>", "<TIMEFRAME>")


@dataclass
class Vocabulary:
    """Word-level token table with reserved special ids."""

    token_to_id: dict[str, int]

    SPECIALS = ("<PAD>", "<BOS>", "<EOS>", "<UNK>") + MARKERS

    @classmethod
    def build(cls, records: list[ArtworkRecord], min_freq: int = 2) -> "Vocabulary":
        """Count tokens over training captions and metadata strings; keep
        tokens with frequency >= min_freq, ordered by (-freq, token)."""
        from collections import Counter

        counts: Counter[str] = Counter()
        for rec in records:
            for cap in rec.captions:
                counts.update(tokenize(cap.text))
            for text in (
                rec.author,
                rec.title,
                clean_technique(rec.technique),
                rec.type_,
                rec.school,
                rec.timeframe,
            ):
                counts.update(tokenize(text))
        table = {tok: i for i, tok in enumerate(cls.SPECIALS)}
        kept = sorted(
            (t for t, c in counts.items() if c >= min_freq),
            key=lambda t: (-counts[t], t),
        )
        for tok in kept:
            table[tok] = len(table)
        return cls(token_to_id=table)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def encode(self, text: str) -> list[int]:
        return [self.id_of(t) for t in tokenize(text)]

    def decode(self, ids: list[int]) -> str:
        rev = self.id_to_token()
        return " ".join(rev[i] for i in ids if i not in (PAD, BOS, EOS))

    def id_to_token(self) -> dict[int, str]:
        return {i: t for t, i in self.token_to_id.items()}

    def to_json(self) -> dict:
        return {"token_to_id": self.token_to_id}

    @classmethod
    def from_json(cls, doc: dict) -> "Vocabulary":
        return cls(token_to_id={k: int(v) for k, v in doc["token_to_id"].items()})


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    heads: int = 4
    ffn_dim: int = 256
    vision_blocks: int = 2
    text_blocks: int = 2
    fusion_blocks: int = 2
    decoder_blocks: int = 2
    graph_dim: int = 128  # width of the incoming graph-slot rows
    max_text_len: int = 96
    max_caption_len: int = 32
    min_freq: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")


def _xavier(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Attention:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor


@dataclass
class Block:
    attn: Attention
    ln1_g: Tensor
    ln1_b: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    cross: Attention | None = None
    ln3_g: Tensor | None = None
    ln3_b: Tensor | None = None


def _make_attention(rng, d: int) -> Attention:
    return Attention(
        wq=Tensor(_xavier(rng, (d, d)), requires_grad=True),
        wk=Tensor(_xavier(rng, (d, d)), requires_grad=True),
        wv=Tensor(_xavier(rng, (d, d)), requires_grad=True),
        wo=Tensor(_xavier(rng, (d, d)), requires_grad=True),
        bq=Tensor(np.zeros(d), requires_grad=True),
        bk=Tensor(np.zeros(d), requires_grad=True),
        bv=Tensor(np.zeros(d), requires_grad=True),
        bo=Tensor(np.zeros(d), requires_grad=True),
    )


def _make_block(rng, d: int, ffn_dim: int, cross: bool = False) -> Block:
    block = Block(
        attn=_make_attention(rng, d),
        ln1_g=Tensor(np.ones(d), requires_grad=True),
        ln1_b=Tensor(np.zeros(d), requires_grad=True),
        ffn_w1=Tensor(_xavier(rng, (d, ffn_dim)), requires_grad=True),
        ffn_b1=Tensor(np.zeros(ffn_dim), requires_grad=True),
        ffn_w2=Tensor(_xavier(rng, (ffn_dim, d)), requires_grad=True),
        ffn_b2=Tensor(np.zeros(d), requires_grad=True),
        ln2_g=Tensor(np.ones(d), requires_grad=True),
        ln2_b=Tensor(np.zeros(d), requires_grad=True),
    )
    if cross:
        block.cross = _make_attention(rng, d)
        block.ln3_g = Tensor(np.ones(d), requires_grad=True)
        block.ln3_b = Tensor(np.zeros(d), requires_grad=True)
    return block


def _block_params(block: Block, base: str, group: str) -> list[Parameter]:
    out = []
    for attn_name, attn in (("attn", block.attn), ("cross", block.cross)):
        if attn is None:
            continue
        for leaf in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"):
            out.append(Parameter(f"{base}.{attn_name}.{leaf}", getattr(attn, leaf), group))
    for leaf in ("ln1_g", "ln1_b", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "ln2_g", "ln2_b"):
        out.append(Parameter(f"{base}.{leaf}", getattr(block, leaf), group))
    if block.ln3_g is not None:
        out.append(Parameter(f"{base}.ln3_g", block.ln3_g, group))
        out.append(Parameter(f"{base}.ln3_b", block.ln3_b, group))
    return out


class CaptionModel:
    """Vision + text + fusion encoders and the caption decoder."""

    def __init__(self, vocab: Vocabulary, config: ModelConfig):
        self.vocab = vocab
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, v = config.d_model, len(vocab)

        self.patch_proj_w = Tensor(_xavier(rng, (PATCH_DIM, d)), requires_grad=True)
        self.patch_proj_b = Tensor(np.zeros(d), requires_grad=True)
        self.vision_pos = Tensor(rng.normal(0, 0.02, (NUM_PATCHES, d)), requires_grad=True)
        self.vision_blocks = [
            _make_block(rng, d, config.ffn_dim) for _ in range(config.vision_blocks)
        ]

        self.tok_emb = Tensor(rng.normal(0, 0.02, (v, d)), requires_grad=True)
        self.text_pos = Tensor(rng.normal(0, 0.02, (config.max_text_len, d)), requires_grad=True)
        self.text_blocks = [_make_block(rng, d, config.ffn_dim) for _ in range(config.text_blocks)]

        self.graph_proj_w = Tensor(_xavier(rng, (config.graph_dim, d)), requires_grad=True)
        self.graph_proj_b = Tensor(np.zeros(d), requires_grad=True)
        self.modality_emb = Tensor(rng.normal(0, 0.02, (3, d)), requires_grad=True)
        self.fusion_blocks = [
            _make_block(rng, d, config.ffn_dim) for _ in range(config.fusion_blocks)
        ]

        self.dec_tok_emb = Tensor(rng.normal(0, 0.02, (v, d)), requires_grad=True)
        self.dec_pos = Tensor(
            rng.normal(0, 0.02, (config.max_caption_len + 1, d)), requires_grad=True
        )
        self.decoder_blocks = [
            _make_block(rng, d, config.ffn_dim, cross=True) for _ in range(config.decoder_blocks)
        ]
        # Zero init: an untrained model emits a uniform distribution.
        self.out_proj_w = Tensor(np.zeros((d, v)), requires_grad=True)
        self.out_proj_b = Tensor(np.zeros(v), requires_grad=True)

        # Cross-modal alignment head (graph slots -> image space).
        self.align_w = Tensor(_xavier(rng, (config.graph_dim, d)), requires_grad=True)
        self.align_b = Tensor(np.zeros(d), requires_grad=True)

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        params = [
            Parameter("vision.patch_proj.w", self.patch_proj_w, "vision"),
            Parameter("vision.patch_proj.b", self.patch_proj_b, "vision"),
            Parameter("vision.pos", self.vision_pos, "vision"),
        ]
        for i, block in enumerate(self.vision_blocks):
            params.extend(_block_params(block, f"vision.block{i}", "vision"))
        params.append(Parameter("text.tok_emb", self.tok_emb, "other"))
        params.append(Parameter("text.pos", self.text_pos, "other"))
        for i, block in enumerate(self.text_blocks):
            params.extend(_block_params(block, f"text.block{i}", "other"))
        params.append(Parameter("fusion.graph_proj.w", self.graph_proj_w, "other"))
        params.append(Parameter("fusion.graph_proj.b", self.graph_proj_b, "other"))
        params.append(Parameter("fusion.modality_emb", self.modality_emb, "other"))
        for i, block in enumerate(self.fusion_blocks):
            params.extend(_block_params(block, f"fusion.block{i}", "other"))
        params.append(Parameter("decoder.tok_emb", self.dec_tok_emb, "other"))
        params.append(Parameter("decoder.pos", self.dec_pos, "other"))
        for i, block in enumerate(self.decoder_blocks):
            params.extend(_block_params(block, f"decoder.block{i}", "other"))
        params.append(Parameter("decoder.out_proj.w", self.out_proj_w, "other"))
        params.append(Parameter("decoder.out_proj.b", self.out_proj_b, "other"))
        params.append(Parameter("align.w", self.align_w, "other"))
        params.append(Parameter("align.b", self.align_b, "other"))
        return params

    # -- attention plumbing ---------------------------------------------------

    def _mha(self, attn: Attention, query: Tensor, memory: Tensor, mask: np.ndarray | None):
        """Multi-head scaled dot-product attention (post-norm blocks add
        the residual outside). ``mask`` is additive, shape (Lq, Lk)."""
        cfg = self.config
        head_dim = cfg.d_model // cfg.heads
        q = ad.linear(query, attn.wq, attn.bq)
        k = ad.linear(memory, attn.wk, attn.bk)
        v = ad.linear(memory, attn.wv, attn.bv)
        q_heads = ad.split(q, cfg.heads, axis=1)
        k_heads = ad.split(k, cfg.heads, axis=1)
        v_heads = ad.split(v, cfg.heads, axis=1)
        scale = 1.0 / np.sqrt(head_dim)
        outs = []
        for qh, kh, vh in zip(q_heads, k_heads, v_heads):
            scores = ad.mul(ad.matmul(qh, ad.transpose(kh)), Tensor(scale))
            if mask is not None:
                scores = ad.add(scores, Tensor(mask))
            weights = ad.softmax(scores, axis=-1)
            outs.append(ad.matmul(weights, vh))
        merged = ad.concat(outs, axis=1)
        return ad.linear(merged, attn.wo, attn.bo)

    def _encoder_block(self, block: Block, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        attn_out = self._mha(block.attn, x, x, mask)
        x = ad.layer_norm(ad.add(x, attn_out), block.ln1_g, block.ln1_b)
        ffn = ad.linear(ad.elu(ad.linear(x, block.ffn_w1, block.ffn_b1)), block.ffn_w2, block.ffn_b2)
        return ad.layer_norm(ad.add(x, ffn), block.ln2_g, block.ln2_b)

    def _decoder_block(self, block: Block, x: Tensor, memory: Tensor, causal: np.ndarray) -> Tensor:
        self_out = self._mha(block.attn, x, x, causal)
        x = ad.layer_norm(ad.add(x, self_out), block.ln1_g, block.ln1_b)
        cross_out = self._mha(block.cross, x, memory, None)
        x = ad.layer_norm(ad.add(x, cross_out), block.ln3_g, block.ln3_b)
        ffn = ad.linear(ad.elu(ad.linear(x, block.ffn_w1, block.ffn_b1)), block.ffn_w2, block.ffn_b2)
        return ad.layer_norm(ad.add(x, ffn), block.ln2_g, block.ln2_b)

    # -- encoders ----------------------------------------------------------

    def encode_image(self, image_ref) -> Tensor:
        """Patch-embed a 64x64 image (64 tokens) and run the vision blocks."""
        patches = Tensor(load_patch_matrix(image_ref))
        x = ad.linear(patches, self.patch_proj_w, self.patch_proj_b)
        x = ad.add(x, self.vision_pos)
        for block in self.vision_blocks:
            x = self._encoder_block(block, x)
        return x

    def metadata_token_ids(self, record: ArtworkRecord) -> tuple[list[int], list[int]]:
        """Serialized metadata sequence and the six marker positions."""
        ids: list[int] = []
        marker_positions: list[int] = []
        fields = (
            record.author,
            record.title,
            clean_technique(record.technique),
            record.type_,
            record.school,
            record.timeframe,
        )
        for marker, text in zip(MARKERS, fields):
            marker_positions.append(len(ids))
            ids.append(self.vocab.id_of(marker))
            ids.extend(self.vocab.encode(text))
        if len(ids) > self.config.max_text_len:
            # Truncation must never drop a marker; metadata this long only
            # happens with degenerate inputs.
            keep = self.config.max_text_len
            if marker_positions[-1] >= keep:
                raise PrefixTooLong(len(ids), self.config.max_text_len)
            ids = ids[:keep]
        return ids, marker_positions

    def encode_metadata_text(self, record: ArtworkRecord) -> Tensor:
        """Run the text encoder over the marker-serialized metadata string
        and gather the hidden states at the six marker positions."""
        ids, marker_positions = self.metadata_token_ids(record)
        x = ad.rows(self.tok_emb, ids)
        x = ad.add(x, ad.rows(self.text_pos, np.arange(len(ids))))
        for block in self.text_blocks:
            x = self._encoder_block(block, x)
        return ad.rows(x, marker_positions)  # (6, d_model)

    def fuse(self, image_tokens: Tensor, text_tokens: Tensor, graph_slots: Tensor | None) -> Tensor:
        """Self-attention over [image; text; graph] with modality markers."""
        mod = ad.split(self.modality_emb, 3, axis=0)
        parts = [
            ad.add(image_tokens, mod[0]),
            ad.add(text_tokens, mod[1]),
        ]
        if graph_slots is not None and graph_slots.shape[0] > 0:
            projected = ad.linear(graph_slots, self.graph_proj_w, self.graph_proj_b)
            parts.append(ad.add(projected, mod[2]))
        x = ad.concat(parts, axis=0)
        for block in self.fusion_blocks:
            x = self._encoder_block(block, x)
        return x

    # -- decoding -----------------------------------------------------------

    def decode_logits(self, fused: Tensor, prefix_ids: list[int]) -> Tensor:
        """Teacher-forced next-token logits for each prefix position.

        Causal masking guarantees logits at position t depend only on
        prefix[0..t] (and the fused memory).
        """
        if not prefix_ids or prefix_ids[0] != BOS:
            raise ValueError("decoder prefix must start with BOS")
        if len(prefix_ids) > self.config.max_caption_len + 1:
            raise PrefixTooLong(len(prefix_ids), self.config.max_caption_len + 1)
        t = len(prefix_ids)
        x = ad.rows(self.dec_tok_emb, prefix_ids)
        x = ad.add(x, ad.rows(self.dec_pos, np.arange(t)))
        causal = np.triu(np.full((t, t), -1e30), k=1)
        for block in self.decoder_blocks:
            x = self._decoder_block(block, x, fused, causal)
        return ad.linear(x, self.out_proj_w, self.out_proj_b)  # (t, vocab)

    def generate(
        self,
        fused: Tensor,
        beam_width: int = 5,
        max_len: int | None = None,
        length_penalty: float = 0.7,
    ) -> list[tuple[list[int], float]]:
        """Beam-search captions from a fused memory; see ``beam_search``."""
        max_len = max_len or self.config.max_caption_len

        def step_fn(prefix: list[int]) -> np.ndarray:
            with ad.no_grad():
                logits = self.decode_logits(fused, prefix)
                return ad.log_softmax(logits, axis=-1).data[-1]

        return beam_search(
            step_fn,
            vocab_size=len(self.vocab),
            beam_width=beam_width,
            max_len=max_len,
            length_penalty=length_penalty,
        )


@dataclass
class BeamHypothesis:
    tokens: list[int] = field(default_factory=list)  # generated, BOS excluded
    log_prob: float = 0.0
    finished: bool = False

    def score(self, length_penalty: float) -> float:
        return self.log_prob / max(len(self.tokens), 1) ** length_penalty


def beam_search(
    step_fn,
    vocab_size: int,
    beam_width: int = 5,
    max_len: int = 32,
    length_penalty: float = 0.7,
    bos: int = BOS,
    eos: int = EOS,
    forbidden: tuple[int, ...] = (PAD, BOS),
) -> list[tuple[list[int], float]]:
    """Standard beam search over ``step_fn(prefix) -> next-token log-probs``.

    The beam tracks the top ``beam_width`` unfinished prefixes by cumulative
    log-probability; every hypothesis that finishes (EOS, or max_len runs
    out) joins a pool. The pool's top ``beam_width`` entries by
    length-normalized score (sum log-prob / len^length_penalty) come back,
    best first. Width 1 is greedy decoding by definition: follow the argmax
    and stop at EOS.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if beam_width == 1:
        hyp = BeamHypothesis()
        for _ in range(max_len):
            logprobs = step_fn([bos] + hyp.tokens)
            order = np.argsort(-logprobs, kind="stable")
            tok = next(int(t) for t in order if int(t) not in forbidden)
            hyp.tokens.append(tok)
            hyp.log_prob += float(logprobs[tok])
            if tok == eos:
                break
        return [(hyp.tokens, hyp.score(length_penalty))]

    active = [BeamHypothesis()]
    finished: list[BeamHypothesis] = []
    for _ in range(max_len):
        candidates: list[BeamHypothesis] = []
        for hyp in active:
            logprobs = step_fn([bos] + hyp.tokens)
            for tok in range(vocab_size):
                if tok in forbidden:
                    continue
                candidates.append(
                    BeamHypothesis(
                        tokens=hyp.tokens + [tok],
                        log_prob=hyp.log_prob + float(logprobs[tok]),
                        finished=(tok == eos),
                    )
                )
        candidates.sort(key=lambda h: (-h.log_prob, h.tokens))
        active = []
        for cand in candidates:
            if cand.finished:
                finished.append(cand)
            elif len(active) < beam_width:
                active.append(cand)
        if not active:
            break
    for hyp in active:  # ran into max_len without EOS
        hyp.finished = True
        finished.append(hyp)
    finished.sort(key=lambda h: (-h.score(length_penalty), h.tokens))
    return [(h.tokens, h.score(length_penalty)) for h in finished[:beam_width]]


def greedy_decode(model: CaptionModel, fused: Tensor, max_len: int | None = None) -> list[int]:
    """Argmax decoding; equals beam_search with width 1."""
    tokens, _ = model.generate(fused, beam_width=1, max_len=max_len, length_penalty=1.0)[0]
    return tokens
