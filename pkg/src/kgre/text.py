"""Text-side pair classifier over frozen, externally exported encoder tensors.

The engine never runs a transformer itself.  An upstream export step dumps,
per window, the token encodings H (N x d) and a single layer- and
head-averaged attention matrix (N x N) in the binary format below; this
module pools entity representations out of those frozen tensors and scores
relation logits with trainable heads.

Encoder export format (little-endian): magic "EOUT", format version u32 = 1,
N u32, d u32, window offset u32, then N*d float32 for H (row-major), then
N*N float32 for the attention matrix (row-major).

Sidecar document file (UTF-8 text, tab-separated, "#" comments):

    doc <doc id>
    window <export file path relative to the sidecar>
    mention <entity id> <window index> <marker position>
    link <entity id> <kg entity name or "-">
    pair <subject entity> <object entity>
    gold <subject entity> <object entity> <relation id>[,<relation id>...]
    mcwindow <relation id> <export file path>     (zero-shot only)

Gold lines may be omitted for unlabeled pairs; "mcwindow" references one
export per candidate relation, produced by encoding the document text
concatenated with the relation's label and description at export time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EXPORT_MAGIC = b"EOUT"
EXPORT_VERSION = 1


@dataclass
class EncoderOutput:
    """Frozen token encodings and averaged attention for one window."""

    hidden: np.ndarray
    attention: np.ndarray
    offset: int = 0

    def __post_init__(self):
        self.hidden = np.asarray(self.hidden, dtype=np.float64)
        self.attention = np.asarray(self.attention, dtype=np.float64)
        n = self.hidden.shape[0]
        if n == 0:
            raise ValueError("empty window")
        if self.hidden.ndim != 2 or self.attention.shape != (n, n):
            raise ValueError(
                f"inconsistent export shapes: H {self.hidden.shape}, A {self.attention.shape}"
            )
        if (self.attention < 0).any():
            raise ValueError("attention rows must be non-negative")

    @property
    def num_tokens(self) -> int:
        return self.hidden.shape[0]

    @property
    def width(self) -> int:
        return self.hidden.shape[1]


def write_encoder_export(path, output: EncoderOutput) -> None:
    n, d = output.hidden.shape
    with open(path, "wb") as handle:
        handle.write(EXPORT_MAGIC)
        handle.write(struct.pack("<III", EXPORT_VERSION, n, d))
        handle.write(struct.pack("<I", output.offset))
        handle.write(output.hidden.astype("<f4").tobytes())
        handle.write(output.attention.astype("<f4").tobytes())


def read_encoder_export(path) -> EncoderOutput:
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != EXPORT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, n, d = struct.unpack("<III", handle.read(12))
        if version != EXPORT_VERSION:
            raise ValueError(f"{path}: unsupported export version {version}")
        (offset,) = struct.unpack("<I", handle.read(4))
        hidden = np.frombuffer(handle.read(4 * n * d), dtype="<f4").reshape(n, d)
        attention = np.frombuffer(handle.read(4 * n * n), dtype="<f4").reshape(n, n)
    return EncoderOutput(hidden.astype(np.float64), attention.astype(np.float64), offset)


@dataclass(frozen=True)
class Mention:
    entity: str
    window: int
    position: int


@dataclass
class DocumentInstance:
    """One document: windows, mentions, KG links, candidate pairs, labels."""

    doc_id: str
    windows: list
    mentions: list
    links: dict
    pairs: list
    gold: dict = field(default_factory=dict)
    mc_windows: dict = field(default_factory=dict)

    def __post_init__(self):
        for m in self.mentions:
            win = self.windows[m.window]
            if not 0 <= m.position < win.num_tokens:
                raise ValueError(
                    f"{self.doc_id}: marker position {m.position} outside window {m.window}"
                )
        declared = {m.entity for m in self.mentions}
        for s, o in self.pairs:
            if s not in declared or o not in declared:
                raise ValueError(f"{self.doc_id}: pair ({s}, {o}) references unknown entity")

    def entities(self) -> list:
        seen = []
        for m in self.mentions:
            if m.entity not in seen:
                seen.append(m.entity)
        return seen


@dataclass
class TokenSpace:
    """Document token space assembled from (possibly overlapping) windows."""

    hidden: np.ndarray
    offsets: list
    length: int


def merge_windows(doc: DocumentInstance) -> TokenSpace:
    """Concatenate windows into one token space, earlier window winning overlaps.

    Windows must be sorted by offset and tile the document without gaps;
    a window starting past the covered prefix is an inconsistent offset.
    """
    offsets = [w.offset for w in doc.windows]
    if offsets != sorted(offsets):
        raise ValueError(f"{doc.doc_id}: windows not sorted by offset")
    length = max(w.offset + w.num_tokens for w in doc.windows)
    width = doc.windows[0].width
    covered = 0
    hidden = np.zeros((length, width))
    for w in doc.windows:
        if w.width != width:
            raise ValueError(f"{doc.doc_id}: window widths differ")
        if w.offset > covered:
            raise ValueError(
                f"{doc.doc_id}: window offset {w.offset} leaves a gap (covered {covered})"
            )
        start = covered - w.offset
        if start < w.num_tokens:
            hidden[covered : w.offset + w.num_tokens] = w.hidden[start:]
            covered = w.offset + w.num_tokens
    return TokenSpace(hidden=hidden, offsets=offsets, length=length)


def entity_representations(doc: DocumentInstance, entity: str, space: TokenSpace | None = None):
    """Pooled encoding and attention distribution for one entity.

    The encoding is the componentwise log-sum-exp of the entity's marker
    token encodings, each taken from its own window.  The attention row is
    the mean of the mentions' (window-local) attention rows embedded into
    document token space, renormalized to sum 1; an all-zero mean falls
    back to uniform.
    """
    if space is None:
        space = merge_windows(doc)
    mentions = [m for m in doc.mentions if m.entity == entity]
    if not mentions:
        raise ValueError(f"{doc.doc_id}: entity {entity!r} has no mentions")
    markers = []
    attn = np.zeros(space.length)
    for m in mentions:
        w = doc.windows[m.window]
        markers.append(w.hidden[m.position])
        attn[w.offset : w.offset + w.num_tokens] += w.attention[m.position]
    attn /= len(mentions)
    total = attn.sum()
    if total > 1e-30:
        attn = attn / total
    else:
        attn = np.full(space.length, 1.0 / space.length)
    stacked = np.stack(markers)
    shift = stacked.max(axis=0)
    pooled = shift + np.log(np.exp(stacked - shift).sum(axis=0))
    return pooled, attn


def pair_context(attn_subject: np.ndarray, attn_object: np.ndarray, hidden: np.ndarray):
    """Localized pair context: product-of-attentions weighted token sum.

    The two distributions are multiplied pointwise and renormalized; if the
    product mass is degenerate (disjoint supports) the weights fall back to
    uniform.  Returns sum_i weight[i] * hidden[i].
    """
    if attn_subject.shape != attn_object.shape:
        raise ValueError(
            f"attention length mismatch: {attn_subject.shape} vs {attn_object.shape}"
        )
    if hidden.shape[0] != attn_subject.shape[0]:
        raise ValueError("token encodings do not match the attention length")
    q = attn_subject * attn_object
    total = q.sum()
    if total > 1e-30:
        weights = q / total
    else:
        weights = np.full(q.shape[0], 1.0 / q.shape[0])
    return weights @ hidden


@dataclass
class TextHeadParams:
    """Trainable parameters of the supervised and multiple-choice heads."""

    w_subject: Tensor
    b_subject: Tensor
    w_object: Tensor
    b_object: Tensor
    bilinear: Tensor
    block_size: int
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def create(cls, width: int, num_outputs: int, block_size: int = 64,
               mc_hidden: int = 32, seed: int = 0) -> "TextHeadParams":
        if width % block_size != 0:
            block_size = width
        rng = np.random.default_rng([seed, 11])
        nb = width // block_size
        return cls(
            w_subject=ad.parameter((width, 2 * width), rng, scale=np.sqrt(1.0 / (2 * width))),
            b_subject=ad.parameter(np.zeros(width)),
            w_object=ad.parameter((width, 2 * width), rng, scale=np.sqrt(1.0 / (2 * width))),
            b_object=ad.parameter(np.zeros(width)),
            bilinear=ad.parameter((nb, num_outputs, block_size, block_size), rng, scale=0.02),
            block_size=block_size,
            w1=ad.parameter((mc_hidden, width), rng, scale=np.sqrt(1.0 / width)),
            b1=ad.parameter(np.zeros(mc_hidden)),
            w2=ad.parameter((1, mc_hidden), rng, scale=np.sqrt(1.0 / mc_hidden)),
            b2=ad.parameter(np.zeros(1)),
        )

    def named_parameters(self) -> dict:
        return {
            "text.w_subject": self.w_subject,
            "text.b_subject": self.b_subject,
            "text.w_object": self.w_object,
            "text.b_object": self.b_object,
            "text.bilinear": self.bilinear,
            "text.w1": self.w1,
            "text.b1": self.b1,
            "text.w2": self.w2,
            "text.b2": self.b2,
        }


def supervised_pair_logits(h_subject, h_object, context, params: TextHeadParams) -> Tensor:
    """Relation logits for one entity pair from pooled features.

    Subject and object encodings are separate linear projections of
    concat(entity encoding, pair context); the logits are their grouped
    bilinear form, one slot per output relation.
    """
    h_s = ad.as_tensor(h_subject)
    h_o = ad.as_tensor(h_object)
    c = ad.as_tensor(context)
    s = ad.linear(ad.concat([h_s, c]), params.w_subject, params.b_subject)
    o = ad.linear(ad.concat([h_o, c]), params.w_object, params.b_object)
    return ad.grouped_bilinear(s, o, params.bilinear, params.block_size)


def mc_zero_shot_logits(encodings, params: TextHeadParams) -> Tensor:
    """Multiple-choice scores from per-relation concatenated-input exports.

    Each candidate relation contributes one window (document text + label +
    description encoded upstream); its score is a two-layer tanh map of the
    first token's encoding.  Scores concatenate in candidate order.
    """
    if not encodings:
        raise ValueError("no candidate encodings")
    scores = []
    for enc in encodings:
        if enc is None:
            raise ValueError("missing relation encoding")
        first = ad.as_tensor(enc.hidden[0])
        hidden = ad.tanh(ad.linear(first, params.w1, params.b1))
        scores.append(ad.linear(hidden, params.w2, params.b2))
    return ad.concat(scores)


# ---------------------------------------------------------------------------
# sidecar document files
# ---------------------------------------------------------------------------


def read_document(path) -> DocumentInstance:
    """Parse a sidecar file, loading every referenced encoder export."""
    base = Path(path).parent
    doc_id = Path(path).stem
    windows: list[EncoderOutput] = []
    mentions: list[Mention] = []
    links: dict = {}
    pairs: list = []
    gold: dict = {}
    mc_windows: dict = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            kind = fields[0]
            try:
                if kind == "doc":
                    doc_id = fields[1]
                elif kind == "window":
                    windows.append(read_encoder_export(base / fields[1]))
                elif kind == "mention":
                    mentions.append(Mention(fields[1], int(fields[2]), int(fields[3])))
                elif kind == "link":
                    links[fields[1]] = None if fields[2] == "-" else fields[2]
                elif kind == "pair":
                    pairs.append((fields[1], fields[2]))
                elif kind == "gold":
                    key = (fields[1], fields[2])
                    rels = frozenset(fields[3].split(","))
                    gold[key] = gold.get(key, frozenset()) | rels
                elif kind == "mcwindow":
                    mc_windows[fields[1]] = read_encoder_export(base / fields[2])
                else:
                    raise ValueError(f"unknown record kind {kind!r}")
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return DocumentInstance(doc_id, windows, mentions, links, pairs, gold, mc_windows)


def write_document(path, doc_id, window_files, mentions, links, pairs, gold,
                   mc_window_files=None) -> None:
    """Write a sidecar file; export files must be written separately."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"doc\t{doc_id}\n")
        for f in window_files:
            handle.write(f"window\t{f}\n")
        for m in mentions:
            handle.write(f"mention\t{m.entity}\t{m.window}\t{m.position}\n")
        for entity, target in links.items():
            handle.write(f"link\t{entity}\t{target if target is not None else '-'}\n")
        for s, o in pairs:
            handle.write(f"pair\t{s}\t{o}\n")
        for (s, o), rels in gold.items():
            handle.write(f"gold\t{s}\t{o}\t{','.join(sorted(rels))}\n")
        if mc_window_files:
            for rel, f in mc_window_files.items():
                handle.write(f"mcwindow\t{rel}\t{f}\n")
