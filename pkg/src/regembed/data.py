"""Dataset and embedding-file ingestion.

Three UTF-8 line formats are understood:

* sentences: ``LABEL<TAB>token token ...`` (relation classification)
* trees: one PTB-style s-expression per line, ``(3 (2 good) (2 movie))``
* embeddings: ``token v1 v2 ... vd``
"""

import re
from dataclasses import dataclass

import numpy as np

PAD = "<pad>"
UNK = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

RELATION_LABELS = (
    "Other",
    "Cause-Effect",
    "Component-Whole",
    "Content-Container",
    "Entity-Destination",
    "Entity-Origin",
    "Instrument-Agency",
    "Member-Collection",
    "Message-Topic",
    "Product-Producer",
)
RELATION_INDEX = {name.lower(): i for i, name in enumerate(RELATION_LABELS)}
NUM_RELATION_CLASSES = len(RELATION_LABELS)
NUM_SENTIMENT_CLASSES = 5

_ENTITY_TAG = re.compile(r"</?e[12]>")
_DIRECTION = re.compile(r"\(\s*e[12]\s*,\s*e[12]\s*\)$")


class DataFormatError(ValueError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        where = f"{path}:{lineno}" if lineno else str(path)
        super().__init__(f"{where}: {message}")


class Vocabulary:
    """Dense token <-> index map with PAD at 0 and UNK at 1."""

    def __init__(self, tokens=()):
        self.tokens = [PAD, UNK]
        self.index = {PAD: PAD_INDEX, UNK: UNK_INDEX}
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def lookup(self, token):
        return self.index.get(token, UNK_INDEX)

    def encode(self, tokens):
        return tuple(self.lookup(t) for t in tokens)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @classmethod
    def build(cls, token_lists):
        """Tokens are indexed in order of first occurrence."""
        vocab = cls()
        for toks in token_lists:
            for t in toks:
                vocab.add(t)
        return vocab


@dataclass(frozen=True)
class SentenceExample:
    tokens: tuple
    label: int

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("sentence must contain at least one token")


@dataclass(frozen=True)
class TreeExample:
    """A strictly binary tree in bottom-up order.

    Node ids ``0..len(leaves)-1`` are the leaves, left to right. Internal
    node ``len(leaves) + i`` joins ``merges[i] = (left_id, right_id)``; every
    merge refers only to earlier ids, and the root is the last node.
    """

    leaves: tuple
    merges: tuple
    label: int

    def __post_init__(self):
        if not self.leaves:
            raise ValueError("tree must have at least one leaf")
        if len(self.merges) != len(self.leaves) - 1:
            raise ValueError("a binary tree with n leaves has n-1 internal nodes")
        for i, (a, b) in enumerate(self.merges):
            node = len(self.leaves) + i
            if not (0 <= a < node and 0 <= b < node):
                raise ValueError(f"merge {i} refers to a later node")

    @property
    def tokens(self):
        return self.leaves

    @property
    def num_nodes(self):
        return 2 * len(self.leaves) - 1

    def to_nested(self):
        """Nested ``(left, right)`` tuples with leaf token ids at the bottom."""
        nodes = list(self.leaves)
        for a, b in self.merges:
            nodes.append((nodes[a], nodes[b]))
        return nodes[-1]


# -- sentences -------------------------------------------------------------

def normalize_relation_label(raw):
    """Map ``Cause-Effect(e2,e1)`` and friends to a class index."""
    name = _DIRECTION.sub("", raw.strip()).strip().lower()
    if name not in RELATION_INDEX:
        raise KeyError(raw)
    return RELATION_INDEX[name]


def tokenize_sentence(text):
    text = _ENTITY_TAG.sub(" ", text)
    return [t.lower() for t in text.split()]


def read_sentence_file(path):
    """Parse a sentence file into ``(label_index, tokens)`` pairs."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataFormatError(path, lineno, "missing tab between label and sentence")
            raw_label, text = line.split("\t", 1)
            try:
                label = normalize_relation_label(raw_label)
            except KeyError:
                raise DataFormatError(path, lineno, f"unknown label {raw_label!r}") from None
            tokens = tokenize_sentence(text)
            if not tokens:
                raise DataFormatError(path, lineno, "empty sentence")
            rows.append((label, tokens))
    if not rows:
        raise DataFormatError(path, 0, "no examples")
    return rows


def load_sentence_dataset(path, vocab=None):
    """Load a sentence file; returns ``(examples, vocab)``.

    Without ``vocab`` one is built from this file, which should therefore be
    the training split. With a vocabulary, unseen tokens map to UNK.
    """
    rows = read_sentence_file(path)
    if vocab is None:
        vocab = Vocabulary.build(toks for _, toks in rows)
    examples = [SentenceExample(vocab.encode(toks), label) for label, toks in rows]
    return examples, vocab


def write_sentence_file(path, rows):
    """Write ``(label, tokens)`` pairs; label may be an index or a name."""
    with open(path, "w", encoding="utf-8") as f:
        for label, tokens in rows:
            name = RELATION_LABELS[label] if isinstance(label, (int, np.integer)) else label
            f.write(f"{name}\t{' '.join(tokens)}\n")


# -- trees -----------------------------------------------------------------

def _tokenize_sexpr(line):
    return line.replace("(", " ( ").replace(")", " ) ").split()


def parse_sexpr(line):
    """Parse one s-expression into nested ``(label, children_or_word)``.

    Leaves are ``(label, "word")``; internal nodes are ``(label, [children])``.
    """
    toks = _tokenize_sexpr(line)
    if not toks:
        raise ValueError("empty tree")
    pos = 0

    def node():
        nonlocal pos
        if pos >= len(toks) or toks[pos] != "(":
            raise ValueError("expected '('")
        pos += 1
        if pos >= len(toks) or toks[pos] in "()":
            raise ValueError("missing node label")
        raw = toks[pos]
        pos += 1
        try:
            label = int(raw)
        except ValueError:
            raise ValueError(f"non-integer label {raw!r}") from None
        if not 0 <= label < NUM_SENTIMENT_CLASSES:
            raise ValueError(f"label {label} outside [0, {NUM_SENTIMENT_CLASSES})")
        if pos >= len(toks):
            raise ValueError("unbalanced parentheses")
        if toks[pos] != "(":
            word = toks[pos]
            pos += 1
            if pos >= len(toks) or toks[pos] != ")":
                raise ValueError("unbalanced parentheses")
            pos += 1
            return label, word
        children = []
        while pos < len(toks) and toks[pos] == "(":
            children.append(node())
        if pos >= len(toks) or toks[pos] != ")":
            raise ValueError("unbalanced parentheses")
        pos += 1
        return label, children

    tree = node()
    if pos != len(toks):
        raise ValueError("unbalanced parentheses")
    return tree


def binarize(tree):
    """Drop labels below the root and make every internal node binary.

    n-ary constituents compose right-branching: ``(a b c) -> (a, (b, c))``.
    Unary chains collapse onto their single child. Leaves are word strings.
    """
    _, body = tree
    if isinstance(body, str):
        return body
    parts = [binarize(c) for c in body]
    if len(parts) == 1:
        return parts[0]
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = (p, out)
    return out


def flatten_tree(nested, label, encode=lambda w: w):
    leaves = []

    def collect(t):
        if isinstance(t, tuple):
            collect(t[0])
            collect(t[1])
        else:
            leaves.append(encode(t))

    collect(nested)
    merges = []
    counter = iter(range(len(leaves)))

    def build(t):
        if not isinstance(t, tuple):
            return next(counter)
        a = build(t[0])
        b = build(t[1])
        merges.append((a, b))
        return len(leaves) + len(merges) - 1

    build(nested)
    return TreeExample(tuple(leaves), tuple(merges), label)


def read_tree_file(path):
    """Parse a tree file into ``(root_label, binarized_nested_words)`` pairs."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                tree = parse_sexpr(line)
            except ValueError as e:
                raise DataFormatError(path, lineno, str(e)) from None
            nested = binarize(tree)
            rows.append((tree[0], _lowercase(nested)))
    if not rows:
        raise DataFormatError(path, 0, "no examples")
    return rows


def _lowercase(t):
    if isinstance(t, tuple):
        return (_lowercase(t[0]), _lowercase(t[1]))
    return t.lower()


def iter_words(t):
    if isinstance(t, tuple):
        yield from iter_words(t[0])
        yield from iter_words(t[1])
    else:
        yield t


def load_tree_dataset(path, vocab=None):
    """Load a tree file; returns ``(examples, vocab)``. Only root labels are kept."""
    rows = read_tree_file(path)
    if vocab is None:
        vocab = Vocabulary.build(iter_words(t) for _, t in rows)
    examples = [flatten_tree(t, label, vocab.lookup) for label, t in rows]
    return examples, vocab


def format_tree(nested, label):
    """Render a binarized word tree, repeating the root label on every node."""
    if isinstance(nested, tuple):
        return f"({label} {format_tree(nested[0], label)} {format_tree(nested[1], label)})"
    return f"({label} {nested})"


def write_tree_file(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for label, nested in rows:
            f.write(format_tree(nested, label) + "\n")


# -- embeddings ------------------------------------------------------------

def read_embedding_file(path, d):
    vectors = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != d:
                raise DataFormatError(
                    path, lineno, f"token {token!r} has {len(values)} values, expected {d}")
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise DataFormatError(path, lineno, f"token {token!r} has a non-numeric value") from None
            if not np.all(np.isfinite(vec)):
                raise DataFormatError(path, lineno, f"token {token!r} has a non-finite value")
            vectors[token] = vec
    return vectors


def write_embedding_file(path, vectors):
    with open(path, "w", encoding="utf-8") as f:
        for token, vec in vectors.items():
            f.write(token + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def build_embedding_matrix(vocab, d, rng, vectors=None, init_range=0.01):
    """V x d matrix: known rows copied, the rest uniform(-r, r), PAD zero.

    Random rows are drawn in vocabulary order, so a fixed seed reproduces them.
    """
    vectors = vectors or {}
    phi = np.zeros((len(vocab), d))
    for i, tok in enumerate(vocab.tokens):
        if i == PAD_INDEX:
            continue
        if tok in vectors:
            phi[i] = vectors[tok]
        else:
            phi[i] = rng.symmetric(init_range, d)
    return phi


def load_embeddings(path, vocab, d, rng):
    """Build an :class:`~regembed.models.EmbeddingTable` from a vector file.

    ``path`` may be ``None``, in which case every row is random.
    """
    from .models import EmbeddingTable

    vectors = read_embedding_file(path, d) if path is not None else {}
    return EmbeddingTable(build_embedding_matrix(vocab, d, rng, vectors))
