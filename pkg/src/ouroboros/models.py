"""Toy language models behind a shared single-step / scan / tree-scan contract.

A model is a pure function from a token context to a next-token probability
vector.  Scanning a span of tokens or scoring several branches after a shared
span each count as ONE forward call, mirroring how a masked transformer scores
them in a single pass; the distributions themselves are always bit-identical
to what independent single-step calls would produce.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InputError

TokenSeq = Sequence[int]


@dataclass
class ForwardCounter:
    """Per-run forward-call accumulator, owned by the caller (not the model).

    ``branch_tokens`` totals the tokens submitted on tree branches, which the
    benchmark's cost model may surcharge.
    """

    calls: int = 0
    branch_tokens: int = 0

    def add(self, calls: int = 1, branch_tokens: int = 0) -> None:
        self.calls += calls
        self.branch_tokens += branch_tokens


class LanguageModel:
    """Base contract: an immutable model with a pure next-token distribution.

    Subclasses set ``vocab_size`` and ``eos_id`` and implement
    :meth:`distribution`.  Purity (no hidden RNG or mutable state) is what
    lets scans, tree scans, and step-by-step oracles agree exactly.
    """

    vocab_size: int
    eos_id: int

    def distribution(self, context: TokenSeq) -> np.ndarray:
        """Return P(next token | context) as a length-``vocab_size`` vector."""
        raise NotImplementedError


class CounterModel(LanguageModel):
    """Fully deterministic model: after last token t, predicts (t+1) mod V."""

    def __init__(self, vocab_size: int, eos_id: Optional[int] = None):
        if vocab_size < 2:
            raise InputError("counter model needs vocab_size >= 2")
        self.vocab_size = vocab_size
        self.eos_id = vocab_size - 1 if eos_id is None else eos_id

    def distribution(self, context: TokenSeq) -> np.ndarray:
        probs = np.zeros(self.vocab_size, dtype=np.float64)
        probs[(context[-1] + 1) % self.vocab_size] = 1.0
        return probs


class NgramModel(LanguageModel):
    """Maximum-likelihood n-gram model with uniform backoff.

    ``order`` counts the full n-gram: order 2 conditions on one token, order 1
    is a unigram model.  Contexts whose (order-1)-gram never occurred in the
    training corpus (including contexts shorter than order-1) back off to the
    uniform distribution.
    """

    def __init__(self, order: int, table: dict, vocab_size: int,
                 eos_id: Optional[int] = None):
        self.order = order
        self._table = table
        self.vocab_size = vocab_size
        self.eos_id = vocab_size - 1 if eos_id is None else eos_id
        self._uniform = np.full(vocab_size, 1.0 / vocab_size, dtype=np.float64)
        self._uniform.flags.writeable = False

    def distribution(self, context: TokenSeq) -> np.ndarray:
        if self.order > 1:
            key = tuple(context[-(self.order - 1):])
        else:
            key = ()
        probs = self._table.get(key)
        return probs if probs is not None else self._uniform


def build_ngram_model(corpus: TokenSeq, order: int,
                      vocab_size: Optional[int] = None,
                      eos_id: Optional[int] = None) -> NgramModel:
    """Count n-grams in ``corpus`` and return the ML model with uniform backoff."""
    if order < 1:
        raise InputError("order must be >= 1")
    if len(corpus) <= order:
        raise InputError(f"corpus of {len(corpus)} tokens is too short for order {order}")
    if vocab_size is None:
        vocab_size = max(corpus) + 1
    counts: dict = {}
    for i in range(len(corpus) - order + 1):
        key = tuple(corpus[i:i + order - 1])
        nxt = corpus[i + order - 1]
        if nxt >= vocab_size or nxt < 0:
            raise InputError(f"corpus token {nxt} out of vocab {vocab_size}")
        row = counts.get(key)
        if row is None:
            row = counts[key] = np.zeros(vocab_size, dtype=np.float64)
        row[nxt] += 1.0
    for key, row in counts.items():
        row /= row.sum()
        row.flags.writeable = False
    return NgramModel(order, counts, vocab_size, eos_id)


class PerturbedModel(LanguageModel):
    """Wraps a base model; corrupts the argmax at a context-hashed set of positions.

    With probability ``epsilon`` per position, decided by hashing (seed,
    context) rather than by a shared RNG stream, the probability mass of the
    argmax token is swapped with that of a fixed ``swap_to`` token.  Being a
    pure function of the context keeps engines and step-by-step oracles in
    exact agreement.
    """

    def __init__(self, base: LanguageModel, epsilon: float, seed: int = 0,
                 swap_to: int = 0):
        if not 0.0 <= epsilon <= 1.0:
            raise InputError("epsilon must be in [0, 1]")
        if not 0 <= swap_to < base.vocab_size:
            raise InputError("swap_to out of vocab")
        self.base = base
        self.epsilon = epsilon
        self.seed = seed
        self.swap_to = swap_to
        self.vocab_size = base.vocab_size
        self.eos_id = base.eos_id

    def _roll(self, context: TokenSeq) -> float:
        data = self.seed.to_bytes(8, "little", signed=True)
        data += np.asarray(context, dtype=np.int64).tobytes()
        h = int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")
        return h / 2.0 ** 64

    def distribution(self, context: TokenSeq) -> np.ndarray:
        probs = np.array(self.base.distribution(context), dtype=np.float64)
        if self.epsilon > 0.0 and self._roll(context) < self.epsilon:
            top = int(np.argmax(probs))
            tgt = self.swap_to if self.swap_to != top else (self.swap_to + 1) % self.vocab_size
            probs[[top, tgt]] = probs[[tgt, top]]
        return probs


def _check_tokens(model: LanguageModel, tokens: TokenSeq, what: str) -> None:
    for t in tokens:
        if not 0 <= t < model.vocab_size:
            raise InputError(f"{what} token {t} out of vocab {model.vocab_size}")


def next_distribution(model: LanguageModel, context: TokenSeq,
                      counter: Optional[ForwardCounter] = None) -> np.ndarray:
    """Single-step prediction; counts as one forward of ``model``."""
    if len(context) == 0:
        raise InputError("context must be non-empty")
    _check_tokens(model, context, "context")
    if counter is not None:
        counter.add()
    return model.distribution(context)


def _scan(model: LanguageModel, prefix: list, tokens: TokenSeq) -> list:
    ctx = list(prefix)
    dists = [model.distribution(ctx)]
    for t in tokens:
        ctx.append(t)
        dists.append(model.distribution(ctx))
    return dists


def forward_scan(model: LanguageModel, prefix: TokenSeq, tokens: TokenSeq,
                 counter: Optional[ForwardCounter] = None) -> list:
    """Score ``tokens`` after ``prefix`` in one forward.

    Returns len(tokens)+1 distributions; element i predicts the token that
    follows prefix + tokens[:i], so element 0 equals
    ``next_distribution(model, prefix)``.
    """
    if len(prefix) == 0:
        raise InputError("prefix must be non-empty")
    _check_tokens(model, prefix, "prefix")
    _check_tokens(model, tokens, "tokens")
    if counter is not None:
        counter.add()
    return _scan(model, prefix, tokens)


def forward_tree(model: LanguageModel, prefix: TokenSeq, shared: TokenSeq,
                 branches: Sequence[TokenSeq],
                 counter: Optional[ForwardCounter] = None) -> list:
    """Score several branches after a shared span in ONE forward.

    Row j equals ``forward_scan(model, prefix, shared + branches[j])``; with no
    branches the single row covers just the shared span.  Branches may be
    ragged or empty.  This is the functional stand-in for a tree attention
    mask: one forward regardless of branch count.
    """
    if len(prefix) == 0:
        raise InputError("prefix must be non-empty")
    _check_tokens(model, prefix, "prefix")
    _check_tokens(model, shared, "shared")
    for b in branches:
        _check_tokens(model, b, "branch")
    if counter is not None:
        counter.add(branch_tokens=sum(len(b) for b in branches))
    base = list(prefix)
    shared = list(shared)
    if not branches:
        return [_scan(model, base, shared)]
    return [_scan(model, base, shared + list(b)) for b in branches]


def sample(dist: np.ndarray, temperature: float,
           rng: Optional[np.random.Generator] = None) -> int:
    """Draw a token: argmax (lowest id on ties) at temperature 0, else sample
    from dist**(1/temperature) renormalized, advancing ``rng``."""
    if temperature < 0:
        raise InputError("temperature must be >= 0")
    if temperature == 0.0:
        return int(np.argmax(dist))
    if rng is None:
        raise InputError("sampling with temperature > 0 requires an rng")
    if temperature == 1.0:
        probs = np.asarray(dist, dtype=np.float64)
    else:
        probs = np.power(np.asarray(dist, dtype=np.float64), 1.0 / temperature)
    probs = probs / probs.sum()
    return int(rng.choice(len(probs), p=probs))


@dataclass(frozen=True)
class ModelSpec:
    """Parsed form of a model spec string such as ``ngram:order=3,seed=7``."""

    kind: str
    vocab_size: int = 0  # 0 = take the vocab from the corpus/base
    order: int = 3
    epsilon: float = 0.0
    seed: int = 0
    swap_to: int = 0
    base: str = ""  # perturbed only: "", "counter", or "ngram"
    eos_id: Optional[int] = None


def parse_model_spec(text: str) -> ModelSpec:
    """Parse ``kind[:key=value,...]``; kinds: counter, ngram, perturbed."""
    head, _, rest = text.strip().partition(":")
    kind = head.strip().lower()
    if kind not in ("counter", "ngram", "perturbed"):
        raise InputError(f"unknown model kind {kind!r}")
    fields: dict = {}
    if rest:
        for part in rest.split(","):
            key, eq, value = part.partition("=")
            key = key.strip().lower()
            if not eq:
                raise InputError(f"bad model spec item {part!r}")
            try:
                if key in ("vocab", "vocab_size"):
                    fields["vocab_size"] = int(value)
                elif key == "order":
                    fields["order"] = int(value)
                elif key == "epsilon":
                    fields["epsilon"] = float(value)
                elif key == "seed":
                    fields["seed"] = int(value)
                elif key in ("swap", "swap_to"):
                    fields["swap_to"] = int(value)
                elif key == "base":
                    fields["base"] = value.strip().lower()
                elif key == "eos":
                    fields["eos_id"] = int(value)
                else:
                    raise InputError(f"unknown model spec key {key!r}")
            except ValueError as exc:
                raise InputError(f"bad value in model spec item {part!r}") from exc
    return ModelSpec(kind=kind, **fields)


def build_model(spec: ModelSpec, vocab_size: int,
                corpus: Optional[TokenSeq] = None,
                base: Optional[LanguageModel] = None) -> LanguageModel:
    """Instantiate a model from a spec.

    ``vocab_size`` comes from the tokenizer unless the ModelSpec overrides it;
    ngram models train on ``corpus``; a perturbed spec wraps ``base`` unless it
    names its own (counter, or ngram over the corpus).
    """
    v = spec.vocab_size or vocab_size
    if spec.kind == "counter":
        return CounterModel(v, eos_id=spec.eos_id)
    if spec.kind == "ngram":
        if corpus is None:
            raise InputError("ngram model spec requires a training corpus")
        return build_ngram_model(corpus, spec.order, vocab_size=v, eos_id=spec.eos_id)
    # perturbed
    if spec.base == "counter":
        base = CounterModel(v, eos_id=spec.eos_id)
    elif spec.base == "ngram":
        if corpus is None:
            raise InputError("perturbed:base=ngram requires a training corpus")
        base = build_ngram_model(corpus, spec.order, vocab_size=v, eos_id=spec.eos_id)
    elif base is None:
        raise InputError("perturbed model spec requires a base model")
    return PerturbedModel(base, spec.epsilon, seed=spec.seed, swap_to=spec.swap_to)
