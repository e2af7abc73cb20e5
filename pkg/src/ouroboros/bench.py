"""Benchmark harness: corpora, engine matrices, tuning, locality, reports.

Everything here is deterministic under the config seed: corpus ingestion,
model construction, per-run seeds, and report contents (timestamps aside), so
two identical invocations produce byte-identical CSV/JSON bodies.
"""

from __future__ import annotations

import dataclasses
import json
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import __version__
from .engines import (CostModel, EngineConfig, RunMetrics, generate_lookahead_target,
                      generate_ouroboros, generate_speculative, generate_vanilla,
                      modeled_speedup, modeled_time)
from .errors import InputError, RunFailure
from .models import LanguageModel, build_model, parse_model_spec
from .pool import PhrasePool

ENGINE_NAMES = ("vanilla", "speculative", "lookahead", "ouroboros")
CSV_COLUMNS = ("entry", "engine", "tokens", "target_fwd", "draft_fwd", "iters",
               "mean_A", "mean_match", "c", "eta", "modeled_speedup", "seed")
MAX_PROMPT_TOKENS = 8192

BYTE_VOCAB = 257  # 256 byte values + EOS


# ---------------------------------------------------------------------------
# Corpus ingestion
# ---------------------------------------------------------------------------

@dataclass
class Corpus:
    prompts: List[List[int]]
    vocab_size: int
    eos_id: int
    tasks: Optional[List[str]] = None  # per-prompt task ids for tagged corpora

    def training_stream(self) -> List[int]:
        """All prompts concatenated, for fitting n-gram models.

        No EOS separators: fitted models treat the corpus as one continuing
        text, so generation from a full prompt line keeps producing
        corpus-like text instead of stopping immediately.
        """
        stream: List[int] = []
        for p in self.prompts:
            stream.extend(p)
        return stream


def _read_lines(path: Union[str, Path]) -> List[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read corpus {path}: {exc}") from exc
    return text.splitlines()


def _split_task_tag(line: str, line_no: int) -> Tuple[str, str]:
    if not line.startswith("task:") or "|" not in line:
        raise InputError(f"line {line_no}: expected a 'task:<id>|' prefix")
    head, _, rest = line.partition("|")
    return head[len("task:"):], rest


def _tokenize(lines: Sequence[Tuple[int, str]], tokenizer: str,
              ) -> Tuple[List[List[int]], int, int]:
    if tokenizer == "byte":
        prompts = []
        for line_no, line in lines:
            ids = list(line.encode("utf-8"))
            if len(ids) > MAX_PROMPT_TOKENS:
                raise InputError(f"line {line_no}: prompt exceeds "
                                 f"{MAX_PROMPT_TOKENS} tokens")
            prompts.append(ids)
        return prompts, BYTE_VOCAB, BYTE_VOCAB - 1
    if tokenizer == "whitespace":
        vocab: Dict[str, int] = {}
        prompts = []
        for line_no, line in lines:
            ids = []
            for word in line.split():
                if word not in vocab:
                    vocab[word] = len(vocab)
                ids.append(vocab[word])
            if len(ids) > MAX_PROMPT_TOKENS:
                raise InputError(f"line {line_no}: prompt exceeds "
                                 f"{MAX_PROMPT_TOKENS} tokens")
            prompts.append(ids)
        eos = len(vocab)
        return prompts, eos + 1, eos
    raise InputError(f"unknown tokenizer {tokenizer!r} (byte or whitespace)")


def ingest_corpus(path: Union[str, Path], tokenizer: str,
                  tagged: bool = False) -> Corpus:
    """Read one prompt per line; blank lines are skipped.

    The byte tokenizer maps each UTF-8 byte to its value (vocab 257 with EOS);
    the whitespace tokenizer assigns ids in order of first occurrence across
    the whole file and reserves the next id for EOS.  ``tagged`` corpora carry
    a ``task:<id>|`` prefix per line (locality experiment).
    """
    raw = [(i + 1, line) for i, line in enumerate(_read_lines(path))
           if line.strip()]
    if not raw:
        raise InputError(f"corpus {path} contains no prompts")
    tasks = None
    if tagged:
        tasks = []
        stripped = []
        for line_no, line in raw:
            task, rest = _split_task_tag(line, line_no)
            tasks.append(task)
            stripped.append((line_no, rest))
        raw = stripped
    prompts, vocab_size, eos_id = _tokenize(raw, tokenizer)
    empties = [ln for (ln, _), p in zip(raw, prompts) if not p]
    if empties:
        raise InputError(f"line {empties[0]}: prompt has no tokens")
    return Corpus(prompts, vocab_size, eos_id, tasks)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class BenchConfig:
    target_spec: str = "ngram:order=3"
    draft_spec: str = "perturbed:epsilon=0.1"
    corpus: str = ""
    tokenizer: str = "whitespace"
    engines: Tuple[str, ...] = ENGINE_NAMES
    repetitions: int = 1
    gamma: int = 5
    beta: int = 6
    k: int = 3
    window: int = 16
    ngram: int = 4
    max_new: int = 64
    temperature: float = 0.0
    seed: int = 0
    lengthening: bool = True
    harvest: bool = True
    reuse: bool = True
    phrase_draft: bool = True
    prompt_warmup: bool = True
    t_draft: float = 1.0
    t_target: float = 10.0
    tree_surcharge: float = 0.0
    pool_file: str = ""
    out_csv: str = ""
    out_json: str = ""
    cn: str = ""          # consecutive-number for locality: an int or "shuffle"
    task_type: str = "HH"
    tune_slice: int = 8

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            gamma=self.gamma, beta=self.beta, k=self.k, window=self.window,
            ngram=self.ngram, max_new=self.max_new, temperature=self.temperature,
            seed=self.seed, lengthening=self.lengthening, harvest=self.harvest,
            reuse=self.reuse, phrase_draft=self.phrase_draft,
            prompt_warmup=self.prompt_warmup)

    def cost_model(self) -> CostModel:
        return CostModel(self.t_draft, self.t_target, self.tree_surcharge)

    def validate(self) -> None:
        self.engine_config().validate()
        self.cost_model()
        if not self.corpus:
            raise InputError("no corpus configured")
        if self.repetitions < 1:
            raise InputError("repetitions must be >= 1")
        for name in self.engines:
            if name not in ENGINE_NAMES:
                raise InputError(f"unknown engine {name!r}")


_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True,
               "0": False, "false": False, "no": False, "off": False}


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Parse a ``key = value`` config file with ``#`` comments."""
    values: Dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for line_no, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, eq, value = body.partition("=")
        if not eq:
            raise InputError(f"config line {line_no}: expected 'key = value'")
        values[key.strip().lower().replace("-", "_")] = value.strip()
    return values


def make_config(file_values: Optional[Dict[str, str]] = None,
                **overrides) -> BenchConfig:
    """Build a BenchConfig from file values, then apply CLI overrides."""
    cfg = BenchConfig()
    fields = {f.name: f for f in dataclasses.fields(BenchConfig)}

    def coerce(name: str, value):
        if isinstance(value, str):
            kind = fields[name].type
            if kind == "int":
                return int(value)
            if kind == "float":
                return float(value)
            if kind == "bool":
                word = value.strip().lower()
                if word not in _BOOL_WORDS:
                    raise InputError(f"bad boolean for {name}: {value!r}")
                return _BOOL_WORDS[word]
            if name == "engines":
                return tuple(v.strip() for v in value.split(",") if v.strip())
        return value

    for source in (file_values or {}), overrides:
        for name, value in source.items():
            if value is None:
                continue
            if name not in fields:
                raise InputError(f"unknown config key {name!r}")
            try:
                setattr(cfg, name, coerce(name, value))
            except ValueError as exc:
                raise InputError(f"bad value for {name}: {value!r}") from exc
    return cfg


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class Report:
    config: dict
    rows: List[dict]
    aggregates: dict
    version: str = __version__
    timestamp: str = ""

    def to_dict(self) -> dict:
        return {"version": self.version, "timestamp": self.timestamp,
                "config": self.config, "rows": self.rows,
                "aggregates": self.aggregates}


def _metrics_row(entry: int, engine: str, m: RunMetrics, seed: int,
                 speedup: float) -> dict:
    return {
        "entry": entry,
        "engine": engine,
        "tokens": m.tokens_emitted,
        "target_fwd": m.target_forwards,
        "draft_fwd": m.draft_forwards,
        "iters": m.iterations,
        "mean_A": round(m.mean_A, 9),
        "mean_match": round(m.mean_match, 9),
        "c": round(m.draft_reduction_c, 9),
        "eta": round(m.block_efficiency, 9),
        "modeled_speedup": round(speedup, 9),
        "seed": seed,
    }


_NUMERIC_COLS = ("tokens", "target_fwd", "draft_fwd", "iters", "mean_A",
                 "mean_match", "c", "eta", "modeled_speedup")


def _aggregate(rows: List[dict]) -> dict:
    by_engine: Dict[str, List[dict]] = {}
    for row in rows:
        by_engine.setdefault(row["engine"], []).append(row)
    agg = {}
    for engine in sorted(by_engine):
        got = by_engine[engine]
        stats = {}
        for col in _NUMERIC_COLS:
            vals = [float(r[col]) for r in got]
            stats[col] = {"mean": round(statistics.fmean(vals), 9),
                          "std": round(statistics.pstdev(vals), 9)}
        stats["runs"] = len(got)
        total_tokens = sum(r["tokens"] for r in got)
        total_tf = sum(r["target_fwd"] for r in got)
        total_df = sum(r["draft_fwd"] for r in got)
        stats["tokens_per_target_forward"] = round(
            total_tokens / total_tf, 9) if total_tf else 0.0
        stats["tokens_per_draft_forward"] = round(
            total_tokens / total_df, 9) if total_df else 0.0
        agg[engine] = stats
    return agg


def write_csv(report: Report, path: Union[str, Path]) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for row in report.rows:
        lines.append(",".join(str(row[c]) for c in CSV_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(report: Report, path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def _finish_report(cfg: BenchConfig, rows: List[dict], extra: dict = None) -> Report:
    aggregates = _aggregate(rows)
    if extra:
        aggregates.update(extra)
    config_echo = dataclasses.asdict(cfg)
    config_echo["engines"] = list(cfg.engines)
    report = Report(config=config_echo, rows=rows, aggregates=aggregates,
                    timestamp=datetime.now(timezone.utc).isoformat())
    if cfg.out_csv:
        write_csv(report, cfg.out_csv)
    if cfg.out_json:
        write_json(report, cfg.out_json)
    return report


# ---------------------------------------------------------------------------
# Model construction and run plumbing
# ---------------------------------------------------------------------------

def build_models(cfg: BenchConfig, corpus: Corpus,
                 ) -> Tuple[LanguageModel, LanguageModel]:
    """Target and draft models from their spec strings.

    n-gram specs train on the corpus stream; a bare perturbed draft spec wraps
    the target model.
    """
    stream = corpus.training_stream()
    tspec = parse_model_spec(cfg.target_spec)
    if tspec.kind == "perturbed" and not tspec.base:
        tspec = dataclasses.replace(tspec, base="ngram")
    target = build_model(tspec, corpus.vocab_size, corpus=stream)
    dspec = parse_model_spec(cfg.draft_spec)
    draft = build_model(dspec, corpus.vocab_size, corpus=stream, base=target)
    if target.vocab_size != draft.vocab_size:
        raise InputError("target and draft specs disagree on vocab size")
    return target, draft


def _row_seed(base: int, entry: int, rep: int) -> int:
    return base + 104729 * entry + 7919 * rep


def _make_pool(cfg: BenchConfig, vocab_size: int) -> PhrasePool:
    pool = PhrasePool(vocab_size,
                      max_phrase_len=max(16, cfg.beta, cfg.ngram))
    return pool


def _load_pool_file(cfg: BenchConfig, vocab_size: int) -> Optional[PhrasePool]:
    if not cfg.pool_file or not Path(cfg.pool_file).exists():
        return None
    pool = PhrasePool.load(cfg.pool_file)
    if pool.vocab_size != vocab_size:
        raise InputError(
            f"pool file vocab {pool.vocab_size} != corpus vocab {vocab_size}")
    return pool


def _run_one(engine: str, target, draft, prompt, ecfg: EngineConfig,
             pool: Optional[PhrasePool]) -> RunMetrics:
    if engine == "vanilla":
        _, m = generate_vanilla(target, prompt, ecfg)
    elif engine == "speculative":
        _, m = generate_speculative(target, draft, prompt, ecfg)
    elif engine == "lookahead":
        _, m = generate_lookahead_target(target, prompt, ecfg)
    else:
        _, m = generate_ouroboros(target, draft, prompt, ecfg, pool)
    return m


# ---------------------------------------------------------------------------
# The four harness entry points
# ---------------------------------------------------------------------------

def run_benchmark(cfg: BenchConfig) -> Report:
    """Run entries x engines x repetitions and report every run's metrics."""
    cfg.validate()
    corpus = ingest_corpus(cfg.corpus, cfg.tokenizer)
    target, draft = build_models(cfg, corpus)
    cost = cfg.cost_model()
    base_ecfg = cfg.engine_config()
    preload = _load_pool_file(cfg, corpus.vocab_size)
    rows: List[dict] = []
    last_pool: Optional[PhrasePool] = None
    for rep in range(cfg.repetitions):
        shared = (preload.copy() if preload else _make_pool(cfg, corpus.vocab_size)
                  ) if cfg.reuse else None
        for entry, prompt in enumerate(corpus.prompts):
            for engine in cfg.engines:
                seed = _row_seed(cfg.seed, entry, rep)
                ecfg = dataclasses.replace(base_ecfg, seed=seed)
                if engine == "ouroboros":
                    if cfg.reuse:
                        pool = shared
                    else:
                        pool = (preload.copy() if preload
                                else _make_pool(cfg, corpus.vocab_size))
                    last_pool = pool
                else:
                    pool = None
                try:
                    m = _run_one(engine, target, draft, prompt, ecfg, pool)
                except Exception as exc:
                    raise RunFailure(entry, engine, exc) from exc
                rows.append(_metrics_row(entry, engine, m, seed,
                                         modeled_speedup(m, cost)))
    if cfg.pool_file and last_pool is not None:
        last_pool.save(cfg.pool_file)
    return _finish_report(cfg, rows)


ABLATION_RUNGS = (
    ("base", dict(phrase_draft=False, lengthening=False, harvest=False,
                  reuse=False, prompt_warmup=False)),
    ("+phrase_draft", dict(phrase_draft=True, lengthening=False, harvest=False,
                           reuse=False, prompt_warmup=True)),
    ("+lengthening", dict(phrase_draft=True, lengthening=True, harvest=False,
                          reuse=False, prompt_warmup=True)),
    ("+harvest", dict(phrase_draft=True, lengthening=True, harvest=True,
                      reuse=False, prompt_warmup=True)),
    ("+reuse", dict(phrase_draft=True, lengthening=True, harvest=True,
                    reuse=True, prompt_warmup=True)),
)


def ablation(cfg: BenchConfig) -> Report:
    """Enable the four components cumulatively and measure each rung."""
    cfg.validate()
    corpus = ingest_corpus(cfg.corpus, cfg.tokenizer)
    target, draft = build_models(cfg, corpus)
    cost = cfg.cost_model()
    rows: List[dict] = []
    for rung, toggles in ABLATION_RUNGS:
        rung_cfg = dataclasses.replace(cfg.engine_config(), **toggles)
        for rep in range(cfg.repetitions):
            shared = _make_pool(cfg, corpus.vocab_size) if toggles["reuse"] else None
            for entry, prompt in enumerate(corpus.prompts):
                seed = _row_seed(cfg.seed, entry, rep)
                ecfg = dataclasses.replace(rung_cfg, seed=seed)
                pool = shared if shared is not None else _make_pool(cfg, corpus.vocab_size)
                try:
                    _, m = generate_ouroboros(target, draft, prompt, ecfg, pool)
                except Exception as exc:
                    raise RunFailure(entry, f"ouroboros:{rung}", exc) from exc
                rows.append(_metrics_row(entry, f"ouroboros:{rung}", m, seed,
                                         modeled_speedup(m, cost)))
    return _finish_report(cfg, rows)


def tune(cfg: BenchConfig, task_type: Optional[str] = None,
         objective: Optional[Callable[[int, int, int, int], float]] = None,
         ) -> EngineConfig:
    """Heuristic hyperparameter search: K fixed at 3, seeded starting samples
    for W/beta/gamma, then coordinate minimization of gamma, W, beta in that
    order against modeled clock time (sweeps try the sampled value first, so
    ties keep it)."""
    task = (task_type or cfg.task_type).upper()
    if task not in ("HH", "LH"):
        raise InputError(f"task type must be HH or LH, got {task!r}")
    rng = np.random.default_rng(cfg.seed)
    w_hat = int(rng.integers(15, 21))
    b_hat = int(rng.integers(5, 8))
    g_lo, g_hi = (7, 14) if task == "HH" else (2, 6)
    g_hat = int(rng.integers(g_lo, g_hi + 1))
    if objective is None:
        objective = _modeled_time_objective(cfg)

    def sweep(hat: int, lo: int, hi: int, fn: Callable[[int], float]) -> int:
        best_v: Optional[int] = None
        best_y = 0.0
        for v in [hat] + [v for v in range(lo, hi + 1) if v != hat]:
            y = fn(v)
            if best_v is None or y < best_y:
                best_v, best_y = v, y
        return best_v

    g0 = sweep(g_hat, g_lo, g_hi, lambda g: objective(g, w_hat, b_hat, 3))
    w0 = sweep(w_hat, 15, 20, lambda w: objective(g0, w, b_hat, 3))
    b0 = sweep(b_hat, 5, 7, lambda b: objective(g0, w0, b, 3))
    return dataclasses.replace(cfg.engine_config(), gamma=g0, window=w0,
                               beta=b0, k=3)


def _modeled_time_objective(cfg: BenchConfig) -> Callable[[int, int, int, int], float]:
    cfg.validate()
    corpus = ingest_corpus(cfg.corpus, cfg.tokenizer)
    prompts = corpus.prompts[:cfg.tune_slice]
    if not prompts:
        raise InputError("empty corpus slice for tuning")
    target, draft = build_models(cfg, corpus)
    cost = cfg.cost_model()

    def objective(gamma: int, window: int, beta: int, k: int) -> float:
        ecfg = dataclasses.replace(cfg.engine_config(), gamma=gamma,
                                   window=window, beta=beta, k=k)
        shared = _make_pool_for(beta, cfg, corpus.vocab_size) if cfg.reuse else None
        total = 0.0
        for entry, prompt in enumerate(prompts):
            pool = shared if shared is not None else _make_pool_for(
                beta, cfg, corpus.vocab_size)
            run_cfg = dataclasses.replace(ecfg, seed=_row_seed(cfg.seed, entry, 0))
            _, m = generate_ouroboros(target, draft, prompt, run_cfg, pool)
            total += modeled_time(m, cost)
        return total

    return objective


def _make_pool_for(beta: int, cfg: BenchConfig, vocab_size: int) -> PhrasePool:
    return PhrasePool(vocab_size, max_phrase_len=max(16, beta, cfg.ngram))


def locality_order(tasks: Sequence[str], cn: Union[int, str],
                   seed: int) -> List[int]:
    """Order entry indices so exactly ``cn`` consecutive entries share a task,
    or shuffle when ``cn == "shuffle"``."""
    indices = list(range(len(tasks)))
    if cn == "shuffle":
        rng = np.random.default_rng(seed)
        rng.shuffle(indices)
        return indices
    try:
        cn = int(cn)
    except (TypeError, ValueError) as exc:
        raise InputError(f"cn must be an integer or 'shuffle', got {cn!r}") from exc
    if cn < 1:
        raise InputError("cn must be >= 1")
    queues: Dict[str, List[int]] = {}
    task_order: List[str] = []
    for i, task in enumerate(tasks):
        if task not in queues:
            queues[task] = []
            task_order.append(task)
        queues[task].append(i)
    ordered: List[int] = []
    while any(queues[t] for t in task_order):
        for task in task_order:
            block, queues[task] = queues[task][:cn], queues[task][cn:]
            ordered.extend(block)
    return ordered


def locality_experiment(cfg: BenchConfig, cn: Union[int, str, None] = None,
                        ) -> Report:
    """Run Ouroboros over a task-tagged corpus in a locality-controlled order
    with one sequentially shared pool (reuse on) or cold pools (reuse off)."""
    cfg.validate()
    if cn is None:
        cn = cfg.cn
    if cn == "":
        raise InputError("locality experiment needs --cn <n|shuffle>")
    corpus = ingest_corpus(cfg.corpus, cfg.tokenizer, tagged=True)
    order = locality_order(corpus.tasks, cn, cfg.seed)
    target, draft = build_models(cfg, corpus)
    cost = cfg.cost_model()
    base_ecfg = cfg.engine_config()
    preload = _load_pool_file(cfg, corpus.vocab_size)
    shared = (preload.copy() if preload else _make_pool(cfg, corpus.vocab_size)
              ) if cfg.reuse else None
    rows: List[dict] = []
    for entry in order:
        prompt = corpus.prompts[entry]
        seed = _row_seed(cfg.seed, entry, 0)
        ecfg = dataclasses.replace(base_ecfg, seed=seed)
        pool = shared if shared is not None else (
            preload.copy() if preload else _make_pool(cfg, corpus.vocab_size))
        try:
            _, m = generate_ouroboros(target, draft, prompt, ecfg, pool)
        except Exception as exc:
            raise RunFailure(entry, "ouroboros", exc) from exc
        row = _metrics_row(entry, "ouroboros", m, seed, modeled_speedup(m, cost))
        row["task"] = corpus.tasks[entry]
        rows.append(row)
    extra = {"locality": {
        "cn": cn if cn == "shuffle" else int(cn),
        "reuse": cfg.reuse,
        "order": order,
    }}
    return _finish_report(cfg, rows, extra)
