"""Complete generation loops with shared stopping semantics and accounting.

Four engines over the same model contract:

* vanilla        - one target forward per token.
* speculative    - token-level drafting, exact-match verification.
* lookahead      - the phrase draft step applied directly to the target.
* ouroboros      - phrase drafting + draft lengthening + phrase harvest/reuse.

All engines stop at EOS or ``max_new`` and, at temperature 0, emit the exact
token sequence vanilla decoding would produce.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .drafting import draft_step, generate_draft, init_lookahead
from .errors import InputError
from .models import ForwardCounter, LanguageModel, next_distribution, sample
from .pool import PhrasePool, insert_ngrams
from .verification import correct_unused_suffixes, harvest, verify


@dataclass
class EngineConfig:
    gamma: int = 5            # draft length per iteration
    beta: int = 6             # phrase length budget for lengthening
    k: int = 3                # suffixes tried per verification
    window: int = 16          # lookahead window width
    ngram: int = 4            # generated phrase length
    max_new: int = 64
    temperature: float = 0.0
    seed: int = 0
    lengthening: bool = True
    harvest: bool = True
    reuse: bool = True
    phrase_draft: bool = True
    prompt_warmup: bool = True

    def validate(self) -> None:
        if self.gamma < 1:
            raise InputError("gamma must be >= 1")
        if self.beta < 2:
            raise InputError("beta must be >= 2")
        if self.k < 0:
            raise InputError("k must be >= 0")
        if self.window < 1:
            raise InputError("window must be >= 1")
        if self.ngram < 2:
            raise InputError("ngram must be >= 2")
        if self.max_new < 1:
            raise InputError("max_new must be >= 1")
        if self.temperature < 0:
            raise InputError("temperature must be >= 0")

    def all_off(self) -> "EngineConfig":
        """Copy with every acceleration toggle disabled (the ablation baseline)."""
        return dataclasses.replace(self, lengthening=False, harvest=False,
                                   reuse=False, phrase_draft=False,
                                   prompt_warmup=False)


@dataclass
class RunMetrics:
    tokens_emitted: int = 0
    target_forwards: int = 0
    draft_forwards: int = 0
    iterations: int = 0
    accept_len_histogram: Dict[int, int] = field(default_factory=dict)
    mean_A: float = 0.0
    mean_match: float = 0.0
    draft_tokens: int = 0
    draft_reduction_c: float = 0.0
    block_efficiency: float = 0.0
    draft_branch_tokens: int = 0
    target_branch_tokens: int = 0
    modeled_time: float = 0.0


@dataclass(frozen=True)
class CostModel:
    """Relative forward times; the surcharge prices each tree branch token."""

    t_draft: float = 1.0
    t_target: float = 10.0
    tree_surcharge_per_token: float = 0.0

    def __post_init__(self):
        if self.t_draft <= 0 or self.t_target <= 0:
            raise InputError("forward times must be > 0")
        if self.tree_surcharge_per_token < 0:
            raise InputError("tree surcharge must be >= 0")


def modeled_time(metrics: RunMetrics, cost: CostModel) -> float:
    """Total modeled clock time of a run under the cost model."""
    return (metrics.draft_forwards * cost.t_draft
            + metrics.target_forwards * cost.t_target
            + cost.tree_surcharge_per_token
            * (metrics.draft_branch_tokens * cost.t_draft
               + metrics.target_branch_tokens * cost.t_target))


def modeled_speedup(metrics: RunMetrics, cost: CostModel) -> float:
    """Vanilla time over the run's modeled time for the same token count."""
    denom = modeled_time(metrics, cost)
    if denom <= 0:
        raise InputError("run has no forwards; speedup undefined")
    return metrics.tokens_emitted * cost.t_target / denom


def _finish(out: List[int], tcounter: ForwardCounter, dcounter: ForwardCounter,
            iterations: int, a_hist: Counter, match_sum: int,
            draft_tokens: int) -> RunMetrics:
    m = RunMetrics(
        tokens_emitted=len(out),
        target_forwards=tcounter.calls,
        draft_forwards=dcounter.calls,
        iterations=iterations,
        accept_len_histogram=dict(sorted(a_hist.items())),
        draft_tokens=draft_tokens,
        draft_branch_tokens=dcounter.branch_tokens,
        target_branch_tokens=tcounter.branch_tokens,
    )
    if iterations and a_hist:
        total = sum(a_hist.values())
        m.mean_A = sum(a * n for a, n in a_hist.items()) / total
        m.mean_match = match_sum / total
    if m.target_forwards:
        m.block_efficiency = m.tokens_emitted / m.target_forwards
    if m.draft_forwards:
        m.draft_reduction_c = draft_tokens / m.draft_forwards
    return m


def _take(emitted: Sequence[int], remaining: int, eos_id: int) -> Tuple[List[int], bool]:
    """Clip a chunk to the budget and cut at EOS; returns (tokens, done)."""
    chunk = list(emitted[:remaining])
    if eos_id in chunk:
        return chunk[:chunk.index(eos_id) + 1], True
    return chunk, len(chunk) >= remaining


def _check_prompt(model: LanguageModel, prompt: Sequence[int]) -> None:
    if len(prompt) == 0:
        raise InputError("prompt must be non-empty")
    for t in prompt:
        if not 0 <= t < model.vocab_size:
            raise InputError(f"prompt token {t} out of vocab {model.vocab_size}")


def _token_level_draft(model: LanguageModel, context: List[int], n: int,
                       counter: ForwardCounter) -> List[int]:
    """Classic autoregressive drafting: greedy, one forward per token."""
    ctx = list(context)
    tokens: List[int] = []
    for _ in range(n):
        tok = int(np.argmax(next_distribution(model, ctx, counter)))
        tokens.append(tok)
        ctx.append(tok)
        if tok == model.eos_id:
            break
    return tokens


def generate_vanilla(target: LanguageModel, prompt: Sequence[int],
                     cfg: EngineConfig) -> Tuple[List[int], RunMetrics]:
    """Autoregressive decoding: one target forward per emitted token."""
    cfg.validate()
    _check_prompt(target, prompt)
    rng = np.random.default_rng(cfg.seed)
    tcounter = ForwardCounter()
    ctx = list(prompt)
    out: List[int] = []
    while len(out) < cfg.max_new:
        tok = sample(next_distribution(target, ctx, tcounter), cfg.temperature, rng)
        out.append(tok)
        ctx.append(tok)
        if tok == target.eos_id:
            break
    return out, _finish(out, tcounter, ForwardCounter(), len(out), Counter(), 0, 0)


def generate_speculative(target: LanguageModel, draft_model: LanguageModel,
                         prompt: Sequence[int], cfg: EngineConfig,
                         ) -> Tuple[List[int], RunMetrics]:
    """Draft gamma tokens one by one, verify them in one target forward."""
    cfg.validate()
    _check_prompt(target, prompt)
    if draft_model.vocab_size != target.vocab_size:
        raise InputError("draft and target vocabularies differ")
    rng = np.random.default_rng(cfg.seed)
    tcounter, dcounter = ForwardCounter(), ForwardCounter()
    ctx = list(prompt)
    out: List[int] = []
    a_hist: Counter = Counter()
    match_sum = 0
    draft_tokens = 0
    iterations = 0
    while len(out) < cfg.max_new:
        remaining = cfg.max_new - len(out)
        d = _token_level_draft(draft_model, ctx, min(cfg.gamma, remaining), dcounter)
        draft_tokens += len(d)
        outcome = verify(target, ctx, d, [], cfg.temperature, rng, counter=tcounter)
        iterations += 1
        a_hist[outcome.accept_len] += 1
        match_sum += outcome.match_count
        chunk, done = _take(outcome.emitted, remaining, target.eos_id)
        out.extend(chunk)
        ctx.extend(chunk)
        if done:
            break
    return out, _finish(out, tcounter, dcounter, iterations, a_hist, match_sum,
                        draft_tokens)


def generate_lookahead_target(target: LanguageModel, prompt: Sequence[int],
                              cfg: EngineConfig,
                              pool: Optional[PhrasePool] = None,
                              ) -> Tuple[List[int], RunMetrics]:
    """Apply the phrase draft step directly to the target model."""
    cfg.validate()
    _check_prompt(target, prompt)
    rng = np.random.default_rng(cfg.seed)
    if pool is None:
        pool = PhrasePool(target.vocab_size,
                          max_phrase_len=max(16, cfg.beta, cfg.ngram))
    if max(cfg.beta, cfg.ngram) > pool.max_phrase_len:
        raise InputError("beta and ngram must fit the pool's max phrase length")
    tcounter = ForwardCounter()
    ctx = list(prompt)
    out: List[int] = []
    if cfg.prompt_warmup:
        insert_ngrams(pool, ctx, cfg.ngram)
    state = init_lookahead(ctx, cfg.window, cfg.ngram, cfg.seed)
    iterations = 0
    while len(out) < cfg.max_new:
        remaining = cfg.max_new - len(out)
        appended, new_phrases = draft_step(target, ctx, pool, state,
                                           beta=cfg.beta,
                                           temperature=cfg.temperature,
                                           rng=rng, counter=tcounter)
        iterations += 1
        for ph in new_phrases:
            pool.insert(ph)
        chunk, done = _take(appended, remaining, target.eos_id)
        out.extend(chunk)
        ctx.extend(chunk)
        if done:
            break
    return out, _finish(out, tcounter, ForwardCounter(), iterations, Counter(), 0, 0)


def generate_ouroboros(target: LanguageModel, draft_model: LanguageModel,
                       prompt: Sequence[int], cfg: EngineConfig,
                       pool: Optional[PhrasePool] = None,
                       ) -> Tuple[List[int], RunMetrics]:
    """The full loop: phrase drafting, draft lengthening with K pool suffixes,
    single-forward verification, phrase harvesting and suffix correction.

    ``pool`` may arrive pre-loaded (phrase reuse across queries); pass a fresh
    one per prompt to measure cold starts.  With every toggle off this
    degenerates to the speculative engine's exact forward counts.
    """
    cfg.validate()
    _check_prompt(target, prompt)
    if draft_model.vocab_size != target.vocab_size:
        raise InputError("draft and target vocabularies differ")
    rng = np.random.default_rng(cfg.seed)
    if pool is None:
        pool = PhrasePool(target.vocab_size,
                          max_phrase_len=max(16, cfg.beta, cfg.ngram))
    if max(cfg.beta, cfg.ngram) > pool.max_phrase_len:
        raise InputError("beta and ngram must fit the pool's max phrase length")
    tcounter, dcounter = ForwardCounter(), ForwardCounter()
    ctx = list(prompt)
    out: List[int] = []
    if cfg.prompt_warmup and (cfg.phrase_draft or cfg.lengthening):
        insert_ngrams(pool, ctx, cfg.ngram)
    a_hist: Counter = Counter()
    match_sum = 0
    draft_tokens = 0
    iterations = 0
    while len(out) < cfg.max_new:
        remaining = cfg.max_new - len(out)
        glen = min(cfg.gamma, remaining)
        if cfg.phrase_draft:
            result = generate_draft(draft_model, ctx, pool, glen, cfg.window,
                                    cfg.ngram, max_new=remaining,
                                    beta=cfg.beta, counter=dcounter)
            d = result.tokens
        else:
            d = _token_level_draft(draft_model, ctx, glen, dcounter)
        draft_tokens += len(d)

        suffixes = []
        if cfg.lengthening and cfg.k > 0 and d[-1] != target.eos_id:
            suffixes = pool.lookup_k(d[-1], cfg.k)

        outcome = verify(target, ctx, d, suffixes, cfg.temperature, rng,
                         beta=cfg.beta, counter=tcounter)
        iterations += 1
        a_hist[outcome.accept_len] += 1
        match_sum += outcome.match_count

        if cfg.harvest:
            if outcome.accept_len < len(d):
                for tokens in harvest(d, outcome.verdicts, outcome.accept_len,
                                      max_len=pool.max_phrase_len):
                    pool.insert(tokens)
            elif suffixes:
                correct_unused_suffixes(pool, suffixes, outcome.branch_verdicts,
                                        outcome.chosen_branch)

        chunk, done = _take(outcome.emitted, remaining, target.eos_id)
        out.extend(chunk)
        ctx.extend(chunk)
        if done:
            break
    return out, _finish(out, tcounter, dcounter, iterations, a_hist, match_sum,
                        draft_tokens)
