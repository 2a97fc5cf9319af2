"""Reverse-time samplers over the absorbing-mask process.

Every run starts from the all-mask prior at time T and walks t = T-1 .. 0.
Four modes share that skeleton:

  dcd            at each step, query the marginal model twice (full context
                 and causal context), form V[i,c] = log full_i(c) -
                 log causal_i(c), then sample the content layer left to
                 right from copula(x_i | prefix) * exp(beta * V[i, x_i])
                 with unmasked positions clamped, and finally re-mask
                 through the exact reverse kernel.
  diffusion_only content layer drawn per position from the full-context
                 marginals, independently; dependencies are ignored.
  ar_only        a single left-to-right pass from the copula model.
  dcd_ar_unmask  the re-masking kernel is replaced by a deterministic
                 left-to-right unmask boundary per step, so each position's
                 copula conditional is computed exactly once across the
                 whole run (N queries total, independent of T).

`enumerate_step_distribution` reproduces the per-step law exactly by
enumeration; the dynamic-programming evaluation in the harness builds on it.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from math import ceil
from typing import Sequence

import numpy as np

from .dist import MarginalSet, format_float
from .errors import (
    AlphabetMismatchError,
    ClampError,
    InvalidDistributionError,
    SupportError,
)
from .iproj import FactorMatrix, dcd_factors
from .models import (
    ARCopulaModel,
    DiffusionMarginalModel,
    ar_conditional,
    dm_marginals_causal,
    dm_marginals_full,
)
from .noising import AuxSequence, NoiseSchedule, SequenceState, remask_kernel

MODE_DCD = "dcd"
MODE_DIFFUSION_ONLY = "diffusion_only"
MODE_AR_ONLY = "ar_only"
MODE_DCD_AR_UNMASK = "dcd_ar_unmask"
MODES = (MODE_DCD, MODE_DIFFUSION_ONLY, MODE_AR_ONLY, MODE_DCD_AR_UNMASK)


@dataclass(frozen=True)
class SamplerConfig:
    steps: int
    schedule: NoiseSchedule
    mode: str
    beta: float = 1.0
    chunk_size: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise InvalidDistributionError(f"unknown mode {self.mode!r}")
        if self.steps != self.schedule.steps:
            raise InvalidDistributionError("steps must equal schedule.steps")
        if self.chunk_size != self.schedule.chunk_size:
            raise InvalidDistributionError("chunk_size must match the schedule")
        if not self.beta >= 0.0:
            raise InvalidDistributionError("beta must be >= 0")


@dataclass(frozen=True)
class StepRecord:
    t: int
    x_next: SequenceState
    x_t: SequenceState
    x_tilde: AuxSequence | None = None
    factors: FactorMatrix | None = None
    full: MarginalSet | None = None
    causal: MarginalSet | None = None
    copula_queries: int = 0


@dataclass
class SampleTrace:
    mode: str
    seed: int
    beta: float
    states: list[SequenceState] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def copula_queries_total(self) -> int:
        return sum(rec.copula_queries for rec in self.steps)

    @property
    def factor_matrices(self) -> list[FactorMatrix | None]:
        return [rec.factors for rec in self.steps]

    @property
    def marginal_sets(self) -> list[tuple[MarginalSet | None, MarginalSet | None]]:
        return [(rec.full, rec.causal) for rec in self.steps]

    def dumps(self) -> str:
        lines = [f"mode={self.mode} seed={self.seed} beta={format_float(self.beta)}"]
        lines.append(_fmt_state("state", self.states[0]))
        for rec in self.steps:
            lines.append(f"step t={rec.t}")
            lines.append("  " + _fmt_state("x_next", rec.x_next))
            if rec.full is not None:
                lines.extend(_fmt_rows("  full", rec.full.rows))
            if rec.causal is not None:
                lines.extend(_fmt_rows("  causal", rec.causal.rows))
            if rec.factors is not None:
                lines.extend(_fmt_rows("  V", rec.factors.values))
            if rec.x_tilde is not None:
                lines.append("  x_tilde: " + " ".join(str(t) for t in rec.x_tilde.tokens))
            lines.append("  " + _fmt_state("x_t", rec.x_t))
            lines.append(f"  copula_queries: {rec.copula_queries}")
            lines.append(_fmt_state("state", rec.x_t))
        lines.append(f"total_copula_queries: {self.copula_queries_total}")
        return "\n".join(lines) + "\n"


def _fmt_state(label: str, state: SequenceState) -> str:
    return f"{label} t={state.time}: " + " ".join(str(t) for t in state.tokens)


def _fmt_rows(label: str, rows: np.ndarray) -> list[str]:
    out = [f"{label}:"]
    for i, row in enumerate(rows):
        out.append(f"    {i}: " + " ".join(format_float(v) for v in row))
    return out


# ---------------------------------------------------------------------------
# Per-position fused rows
# ---------------------------------------------------------------------------

def _fused_row(
    copula: ARCopulaModel,
    prefix: Sequence[int],
    i: int,
    factors: FactorMatrix,
) -> np.ndarray:
    """copula(x_i | prefix) reweighted by exp(beta * V[i, .]), normalized."""
    row = ar_conditional(copula, prefix, i)
    weights = row * np.exp(factors.beta * factors.values[i])
    total = float(weights.sum())
    if total <= 0.0:
        raise SupportError(f"fused row at position {i} has no mass")
    return weights / total


def _sample_categorical(row: np.ndarray, rng: np.random.Generator) -> int:
    return int(rng.choice(len(row), p=row / row.sum()))


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def dcd_step(
    dm: DiffusionMarginalModel,
    copula: ARCopulaModel,
    x_next: SequenceState,
    t: int,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[SequenceState, StepRecord]:
    full = dm_marginals_full(dm, x_next, t)
    causal = dm_marginals_causal(dm, x_next, t)
    factors = dcd_factors(full, causal, cfg.beta)
    n = x_next.alphabet.num_positions
    queries = 0
    prefix: list[int] = []
    for i in range(n):
        if not x_next.is_masked(i):
            prefix.append(x_next.tokens[i])
        else:
            row = _fused_row(copula, prefix, i, factors)
            queries += 1
            prefix.append(_sample_categorical(row, rng))
    x_tilde = AuxSequence(tuple(prefix), t, x_next.alphabet)
    x_t = remask_kernel(x_tilde, x_next, cfg.schedule, t).sample(rng)
    rec = StepRecord(t, x_next, x_t, x_tilde, factors, full, causal, queries)
    return x_t, rec


def diffusion_only_step(
    dm: DiffusionMarginalModel,
    x_next: SequenceState,
    t: int,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[SequenceState, StepRecord]:
    full = dm_marginals_full(dm, x_next, t)
    tokens: list[int] = []
    for i in range(x_next.alphabet.num_positions):
        if not x_next.is_masked(i):
            tokens.append(x_next.tokens[i])
        else:
            tokens.append(_sample_categorical(full.rows[i], rng))
    x_tilde = AuxSequence(tuple(tokens), t, x_next.alphabet)
    x_t = remask_kernel(x_tilde, x_next, cfg.schedule, t).sample(rng)
    rec = StepRecord(t, x_next, x_t, x_tilde, None, full, None, 0)
    return x_t, rec


def _ar_unmask_bounds(n: int, steps: int, t: int) -> tuple[int, int]:
    """Unmasked prefix lengths of x_{t+1} and x_t under the boundary rule."""
    boundaries = ar_unmask_schedule(n, steps)
    prev = 0 if t + 1 >= steps else boundaries[steps - 2 - t]
    return prev, boundaries[steps - 1 - t]


def dcd_ar_unmask_step(
    dm: DiffusionMarginalModel,
    copula: ARCopulaModel,
    x_next: SequenceState,
    t: int,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[SequenceState, StepRecord]:
    n = x_next.alphabet.num_positions
    mask = x_next.alphabet.mask_index
    prev_u, new_u = _ar_unmask_bounds(n, cfg.steps, t)
    if x_next.unmasked_positions != tuple(range(prev_u)):
        raise ClampError(
            "dcd_ar_unmask expects an unmasked prefix of length "
            f"{prev_u}, got positions {x_next.unmasked_positions}"
        )
    full = dm_marginals_full(dm, x_next, t)
    causal = dm_marginals_causal(dm, x_next, t)
    factors = dcd_factors(full, causal, cfg.beta)
    prefix = list(x_next.tokens[:prev_u])
    queries = 0
    for i in range(prev_u, new_u):
        row = _fused_row(copula, prefix, i, factors)
        queries += 1
        prefix.append(_sample_categorical(row, rng))
    tokens = tuple(prefix) + (mask,) * (n - new_u)
    x_t = SequenceState(tokens, t, x_next.alphabet)
    rec = StepRecord(t, x_next, x_t, None, factors, full, causal, queries)
    return x_t, rec


def ar_unmask_schedule(num_positions: int, steps: int) -> tuple[int, ...]:
    """Per-step unmask boundaries: after k of T steps the first
    ceil(N * k / T) positions are revealed; non-decreasing and ending at N."""
    if num_positions < 1 or steps < 1:
        raise InvalidDistributionError("need num_positions >= 1 and steps >= 1")
    return tuple(ceil(num_positions * k / steps) for k in range(1, steps + 1))


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------

def _require(model: object, name: str, mode: str) -> None:
    if model is None:
        raise InvalidDistributionError(f"mode {mode!r} requires a {name} model")


def sample(
    dm: DiffusionMarginalModel | None,
    copula: ARCopulaModel | None,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> tuple[SequenceState, SampleTrace]:
    """Run one full reverse pass; returns the mask-free final state and the
    trace. With rng=None a fresh generator is seeded from cfg.seed, making
    runs bit-reproducible."""
    if cfg.mode in (MODE_DCD, MODE_DCD_AR_UNMASK):
        _require(dm, "diffusion-marginal", cfg.mode)
        _require(copula, "copula", cfg.mode)
    elif cfg.mode == MODE_DIFFUSION_ONLY:
        _require(dm, "diffusion-marginal", cfg.mode)
    else:
        _require(copula, "copula", cfg.mode)
    if dm is not None and copula is not None and dm.alphabet != copula.alphabet:
        raise AlphabetMismatchError("models must share one alphabet")
    alphabet = dm.alphabet if dm is not None else copula.alphabet  # type: ignore[union-attr]
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    trace = SampleTrace(cfg.mode, cfg.seed, cfg.beta)
    x = SequenceState.all_masked(alphabet, cfg.steps)
    trace.states.append(x)

    if cfg.mode == MODE_AR_ONLY:
        assert copula is not None
        tokens: list[int] = []
        for i in range(alphabet.num_positions):
            row = ar_conditional(copula, tokens, i)
            tokens.append(_sample_categorical(row, rng))
        x0 = SequenceState.from_data(tokens, alphabet)
        trace.steps.append(
            StepRecord(0, x, x0, None, None, None, None, alphabet.num_positions)
        )
        trace.states.append(x0)
        return x0, trace

    for t in reversed(range(cfg.steps)):
        if cfg.mode == MODE_DCD:
            assert dm is not None and copula is not None
            x, rec = dcd_step(dm, copula, x, t, cfg, rng)
        elif cfg.mode == MODE_DIFFUSION_ONLY:
            assert dm is not None
            x, rec = diffusion_only_step(dm, x, t, cfg, rng)
        else:
            assert dm is not None and copula is not None
            x, rec = dcd_ar_unmask_step(dm, copula, x, t, cfg, rng)
        trace.steps.append(rec)
        trace.states.append(x)
    return x, trace


# ---------------------------------------------------------------------------
# Exact per-step law (enumeration)
# ---------------------------------------------------------------------------

def enumerate_aux_distribution(
    dm: DiffusionMarginalModel | None,
    copula: ARCopulaModel | None,
    x_next: SequenceState,
    t: int,
    cfg: SamplerConfig,
) -> dict[tuple[int, ...], float]:
    """Exact law of the content layer x~_t produced by one dcd or
    diffusion_only step at x_{t+1}."""
    if cfg.mode == MODE_DCD:
        assert dm is not None and copula is not None
        full = dm_marginals_full(dm, x_next, t)
        causal = dm_marginals_causal(dm, x_next, t)
        factors = dcd_factors(full, causal, cfg.beta)

        def row_for(i: int, prefix: tuple[int, ...]) -> np.ndarray:
            return _fused_row(copula, prefix, i, factors)

    elif cfg.mode == MODE_DIFFUSION_ONLY:
        assert dm is not None
        full = dm_marginals_full(dm, x_next, t)

        def row_for(i: int, prefix: tuple[int, ...]) -> np.ndarray:
            return full.rows[i]

    else:
        raise InvalidDistributionError(f"no aux layer to enumerate for mode {cfg.mode!r}")

    n = x_next.alphabet.num_positions
    out: dict[tuple[int, ...], float] = {}

    def recurse(prefix: tuple[int, ...], weight: float) -> None:
        i = len(prefix)
        if i == n:
            out[prefix] = weight
            return
        if not x_next.is_masked(i):
            recurse(prefix + (x_next.tokens[i],), weight)
            return
        row = row_for(i, prefix)
        for cat in range(len(row)):
            if row[cat] > 0.0:
                recurse(prefix + (cat,), weight * float(row[cat]))

    recurse((), 1.0)
    return out


def enumerate_step_distribution(
    dm: DiffusionMarginalModel | None,
    copula: ARCopulaModel | None,
    x_next: SequenceState,
    t: int,
    cfg: SamplerConfig,
) -> dict[SequenceState, float]:
    """Exact law of x_t produced by one step of cfg.mode at x_{t+1}."""
    if cfg.mode in (MODE_DCD, MODE_DIFFUSION_ONLY):
        aux = enumerate_aux_distribution(dm, copula, x_next, t, cfg)
        out: dict[SequenceState, float] = defaultdict(float)
        for tokens, weight in aux.items():
            kernel = remask_kernel(
                AuxSequence(tokens, t, x_next.alphabet), x_next, cfg.schedule, t
            )
            for state, p in kernel.support():
                out[state] += weight * p
        return dict(out)
    if cfg.mode == MODE_DCD_AR_UNMASK:
        assert dm is not None and copula is not None
        n = x_next.alphabet.num_positions
        mask = x_next.alphabet.mask_index
        prev_u, new_u = _ar_unmask_bounds(n, cfg.steps, t)
        if x_next.unmasked_positions != tuple(range(prev_u)):
            raise ClampError("state is not in ar-unmask prefix form")
        full = dm_marginals_full(dm, x_next, t)
        causal = dm_marginals_causal(dm, x_next, t)
        factors = dcd_factors(full, causal, cfg.beta)
        out_ar: dict[SequenceState, float] = {}

        def recurse(prefix: tuple[int, ...], weight: float) -> None:
            i = len(prefix)
            if i == new_u:
                tokens = prefix + (mask,) * (n - new_u)
                out_ar[SequenceState(tokens, t, x_next.alphabet)] = weight
                return
            row = _fused_row(copula, prefix, i, factors)
            for cat in range(len(row)):
                if row[cat] > 0.0:
                    recurse(prefix + (cat,), weight * float(row[cat]))

        recurse(tuple(x_next.tokens[:prev_u]), 1.0)
        return out_ar
    raise InvalidDistributionError(f"no per-step law for mode {cfg.mode!r}")
