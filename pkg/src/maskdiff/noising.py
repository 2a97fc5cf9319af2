"""Absorbing-mask forward process and its exact reverse-side kernels.

The forward process independently turns data tokens into MASK with
probability alpha_t at step t, where 0 < alpha_1 < ... < alpha_T = 1
(alpha_0 = 0). Because masking never edits surviving tokens, the reverse
conditional q(x_t | x_{t+1}) splits into two tractable pieces:

  * an auxiliary, mask-free layer  q(x~_t | x_{t+1})  that conditions the
    data distribution on the unmasked tokens of x_{t+1} and clamps them, and
  * an independent re-masking kernel  q(x_t | x~_t, x_{t+1})  that re-masks
    each currently-masked position with probability alpha_t / alpha_{t+1}.

`brute_reverse_posterior` computes q(x_t | x_{t+1}) directly from Bayes'
rule by enumerating states; it is deliberately independent of the split
above so the two can be tested against each other.

Chunked masking groups consecutive positions so each chunk shares one
Bernoulli draw (chunk_size = 1 recovers the per-token process).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .dist import (
    Alphabet,
    IndexPartition,
    JointTable,
    MarginalSet,
    all_states,
    condition,
)
from .errors import (
    AlphabetMismatchError,
    ClampError,
    DegenerateMarginalError,
    InvalidDistributionError,
    ScheduleError,
    SupportError,
)

SCHEDULE_FAMILIES = ("linear", "log-linear")
DEFAULT_EPSILON = 1e-3


@dataclass(frozen=True)
class NoiseSchedule:
    """Monotone mask probabilities alpha_1..alpha_T with alpha_T = 1."""

    family: str
    steps: int
    epsilon: float
    alphas: tuple[float, ...]
    chunk_size: int = 1

    def __post_init__(self) -> None:
        if self.family not in SCHEDULE_FAMILIES:
            raise ScheduleError(f"unknown schedule family {self.family!r}")
        if self.steps < 1 or len(self.alphas) != self.steps:
            raise ScheduleError("steps must be >= 1 and match len(alphas)")
        if self.chunk_size < 1:
            raise ScheduleError("chunk_size must be >= 1")
        prev = 0.0
        for a in self.alphas:
            if not (prev < a <= 1.0):
                raise ScheduleError(f"alphas not strictly increasing in (0, 1]: {self.alphas}")
            prev = a
        if self.alphas[-1] != 1.0:
            raise ScheduleError("final alpha must equal 1")

    def alpha(self, t: int) -> float:
        """Mask probability at time t, with alpha(0) = 0."""
        if not 0 <= t <= self.steps:
            raise ScheduleError(f"time {t} outside [0, {self.steps}]")
        return 0.0 if t == 0 else self.alphas[t - 1]

    def mask_ratio(self, t: int) -> float:
        """P(stay masked from t+1 down to t) = alpha_t / alpha_{t+1}."""
        if not 0 <= t < self.steps:
            raise ScheduleError(f"transition time {t} outside [0, {self.steps})")
        return self.alpha(t) / self.alpha(t + 1)

    def step_mask_prob(self, t: int) -> float:
        """P(an unmasked token masks between t and t+1) = (a_{t+1}-a_t)/(1-a_t)."""
        if not 0 <= t < self.steps:
            raise ScheduleError(f"transition time {t} outside [0, {self.steps})")
        return (self.alpha(t + 1) - self.alpha(t)) / (1.0 - self.alpha(t))


def make_schedule(
    family: str,
    steps: int,
    epsilon: float = DEFAULT_EPSILON,
    chunk_size: int = 1,
) -> NoiseSchedule:
    """Build a schedule.

    linear:     alpha_k = k / T.
    log-linear: sigma(u) = -log(1 - (1 - eps) * u) evaluated at u = k / T,
                alpha_k = 1 - exp(-sigma(k/T)); the final alpha is pinned to 1
                so the prior is a full mask (the raw formula ends at 1 - eps).
    """
    if steps < 1:
        raise ScheduleError("steps must be >= 1")
    if family == "linear":
        alphas = [k / steps for k in range(1, steps + 1)]
    elif family == "log-linear":
        if not 0.0 < epsilon < 1.0:
            raise ScheduleError("log-linear needs 0 < epsilon < 1")
        alphas = []
        for k in range(1, steps):
            sigma = -math.log1p(-(1.0 - epsilon) * (k / steps))
            alphas.append(1.0 - math.exp(-sigma))
        alphas.append(1.0)
    else:
        raise ScheduleError(f"unknown schedule family {family!r}")
    return NoiseSchedule(family, steps, epsilon, tuple(alphas), chunk_size)


def chunk_groups(num_positions: int, chunk_size: int) -> tuple[tuple[int, ...], ...]:
    """Consecutive position groups of size chunk_size (last may be shorter)."""
    return tuple(
        tuple(range(start, min(start + chunk_size, num_positions)))
        for start in range(0, num_positions, chunk_size)
    )


@dataclass(frozen=True)
class SequenceState:
    """One assignment of N tokens at time `time`; MASK is category C. States
    at time 0 are final outputs and must be mask-free."""

    tokens: tuple[int, ...]
    time: int
    alphabet: Alphabet

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if len(self.tokens) != self.alphabet.num_positions:
            raise AlphabetMismatchError("token count does not match the alphabet")
        mask = self.alphabet.mask_index
        for tok in self.tokens:
            if not 0 <= tok <= mask:
                raise InvalidDistributionError(f"token {tok} out of range")
        if self.time < 0:
            raise InvalidDistributionError("time must be >= 0")
        if self.time == 0 and any(tok == mask for tok in self.tokens):
            raise InvalidDistributionError("states at time 0 must be mask-free")

    @classmethod
    def all_masked(cls, alphabet: Alphabet, time: int) -> "SequenceState":
        return cls((alphabet.mask_index,) * alphabet.num_positions, time, alphabet)

    @classmethod
    def from_data(cls, tokens: Sequence[int], alphabet: Alphabet) -> "SequenceState":
        return cls(tuple(tokens), 0, alphabet)

    def is_masked(self, i: int) -> bool:
        return self.tokens[i] == self.alphabet.mask_index

    @property
    def masked_positions(self) -> tuple[int, ...]:
        return tuple(i for i, tok in enumerate(self.tokens) if tok == self.alphabet.mask_index)

    @property
    def unmasked_positions(self) -> tuple[int, ...]:
        return tuple(i for i, tok in enumerate(self.tokens) if tok != self.alphabet.mask_index)

    def partition(self) -> IndexPartition:
        return IndexPartition(self.masked_positions, self.unmasked_positions)


@dataclass(frozen=True)
class AuxSequence:
    """Mask-free content layer at time `time`: what each position would be if
    revealed."""

    tokens: tuple[int, ...]
    time: int
    alphabet: Alphabet

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if len(self.tokens) != self.alphabet.num_positions:
            raise AlphabetMismatchError("token count does not match the alphabet")
        for tok in self.tokens:
            if not 0 <= tok < self.alphabet.num_categories:
                raise InvalidDistributionError(f"aux token {tok} out of range (mask excluded)")
        if self.time < 0:
            raise InvalidDistributionError("time must be >= 0")


def forward_sample(
    x0: SequenceState, t: int, sched: NoiseSchedule, rng: np.random.Generator
) -> SequenceState:
    """Noise a clean sequence to time t: each chunk masks with probability
    alpha_t (one Bernoulli draw per chunk)."""
    if x0.time != 0:
        raise InvalidDistributionError("forward_sample starts from a time-0 state")
    alpha = sched.alpha(t)
    mask = x0.alphabet.mask_index
    tokens = list(x0.tokens)
    for group in chunk_groups(x0.alphabet.num_positions, sched.chunk_size):
        if rng.random() < alpha:
            for i in group:
                tokens[i] = mask
    return SequenceState(tuple(tokens), t, x0.alphabet)


def aux_posterior(data: JointTable, x_next: SequenceState) -> JointTable:
    """Exact q(x~_t | x_{t+1}) over the data alphabet: condition the data
    distribution on the unmasked tokens of x_{t+1} and clamp them. The result
    does not depend on t or the schedule."""
    if data.alphabet != x_next.alphabet:
        raise AlphabetMismatchError("data table and state disagree on the alphabet")
    unmasked = x_next.unmasked_positions
    if not unmasked:
        return data
    evidence = {j: x_next.tokens[j] for j in unmasked}
    cond = condition(data, evidence)  # raises SupportError on zero evidence
    n, k = data.num_positions, data.num_categories
    full = np.zeros((k,) * n, dtype=np.float64)
    idx = tuple(evidence.get(i, slice(None)) for i in range(n))
    full[idx] = cond.probs.reshape((k,) * cond.num_positions)
    return JointTable(data.alphabet, full.ravel())


@dataclass(frozen=True)
class RemaskDistribution:
    """Factorized (per chunk) distribution of x_t given the content layer x~_t
    and x_{t+1}: masked positions keep their aux token with probability
    1 - alpha_t/alpha_{t+1} and re-mask otherwise; unmasked positions copy
    x_{t+1} exactly."""

    x_tilde: AuxSequence
    x_next: SequenceState
    ratio: float
    rows: MarginalSet
    mask_chunks: tuple[tuple[int, ...], ...]

    @property
    def time(self) -> int:
        return self.x_tilde.time

    def sample(self, rng: np.random.Generator) -> SequenceState:
        mask = self.x_next.alphabet.mask_index
        tokens = list(self.x_tilde.tokens)
        for j in self.x_next.unmasked_positions:
            tokens[j] = self.x_next.tokens[j]
        for group in self.mask_chunks:
            if rng.random() < self.ratio:
                for i in group:
                    tokens[i] = mask
        return SequenceState(tuple(tokens), self.time, self.x_next.alphabet)

    def prob(self, state: SequenceState) -> float:
        if state.time != self.time or state.alphabet != self.x_next.alphabet:
            raise AlphabetMismatchError("state does not match this kernel")
        mask = self.x_next.alphabet.mask_index
        for j in self.x_next.unmasked_positions:
            if state.tokens[j] != self.x_next.tokens[j]:
                return 0.0
        p = 1.0
        for group in self.mask_chunks:
            got = [state.tokens[i] for i in group]
            if all(tok == mask for tok in got):
                p *= self.ratio
            elif all(state.tokens[i] == self.x_tilde.tokens[i] for i in group):
                p *= 1.0 - self.ratio
            else:
                return 0.0
        return p

    def support(self) -> Iterator[tuple[SequenceState, float]]:
        """All outcomes with positive probability (2**num_chunks at most)."""
        mask = self.x_next.alphabet.mask_index
        base = list(self.x_tilde.tokens)
        for j in self.x_next.unmasked_positions:
            base[j] = self.x_next.tokens[j]
        options: list[list[tuple[bool, float]]] = []
        for _ in self.mask_chunks:
            opts = []
            if self.ratio > 0.0:
                opts.append((True, self.ratio))
            if self.ratio < 1.0:
                opts.append((False, 1.0 - self.ratio))
            options.append(opts)
        for combo in itertools.product(*options):
            tokens = list(base)
            p = 1.0
            for group, (masked, prob) in zip(self.mask_chunks, combo):
                p *= prob
                if masked:
                    for i in group:
                        tokens[i] = mask
            yield SequenceState(tuple(tokens), self.time, self.x_next.alphabet), p


def remask_kernel(
    x_tilde: AuxSequence, x_next: SequenceState, sched: NoiseSchedule, t: int
) -> RemaskDistribution:
    """Kernel q(x_t | x~_t, x_{t+1}); requires t = x~ time = x_{t+1} time - 1
    and agreement with x_{t+1} on its unmasked positions."""
    if x_tilde.alphabet != x_next.alphabet:
        raise AlphabetMismatchError("aux sequence and state disagree on the alphabet")
    if t != x_tilde.time or x_next.time != t + 1:
        raise InvalidDistributionError(
            f"need x_tilde at t={t} and x_next at t+1, got {x_tilde.time} and {x_next.time}"
        )
    for j in x_next.unmasked_positions:
        if x_tilde.tokens[j] != x_next.tokens[j]:
            raise ClampError(f"aux sequence disagrees with evidence at position {j}")
    ratio = sched.mask_ratio(t)
    n, c = x_next.alphabet.num_positions, x_next.alphabet.num_categories
    masked = set(x_next.masked_positions)
    rows = np.zeros((n, c + 1), dtype=np.float64)
    for i in range(n):
        if i in masked:
            rows[i, c] = ratio
            rows[i, x_tilde.tokens[i]] += 1.0 - ratio
        else:
            rows[i, x_next.tokens[i]] = 1.0
    groups = []
    for group in chunk_groups(n, sched.chunk_size):
        in_i = tuple(i for i in group if i in masked)
        if not in_i:
            continue
        if sched.chunk_size > 1 and len(in_i) != len(group):
            raise ClampError(
                "chunked process states mask whole chunks; got a mixed chunk"
            )
        groups.append(in_i)
    return RemaskDistribution(
        x_tilde, x_next, ratio, MarginalSet(rows, includes_mask=True), tuple(groups)
    )


# ---------------------------------------------------------------------------
# Brute-force oracle side
# ---------------------------------------------------------------------------

def forward_state_distribution(
    data: JointTable, t: int, sched: NoiseSchedule
) -> JointTable:
    """Exact marginal q(X_t) over the state alphabet (mask = last category)."""
    n, c = data.num_positions, data.num_categories
    alpha = sched.alpha(t)
    groups = chunk_groups(n, sched.chunk_size)
    state_alphabet = data.alphabet.with_mask()
    out = np.zeros((c + 1,) * n, dtype=np.float64)
    tensor = data.tensor()
    for pattern in itertools.product((False, True), repeat=len(groups)):
        w = 1.0
        for masked in pattern:
            w *= alpha if masked else 1.0 - alpha
        if w == 0.0:
            continue
        masked_positions = tuple(
            i for group, m in zip(groups, pattern) if m for i in group
        )
        sub = tensor.sum(axis=masked_positions) if masked_positions else tensor
        idx = tuple(c if i in masked_positions else slice(0, c) for i in range(n))
        out[idx] += w * sub
    return JointTable(state_alphabet, out.ravel())


def _transition_prob(
    tokens_t: tuple[int, ...],
    x_next: SequenceState,
    groups: tuple[tuple[int, ...], ...],
    mask: int,
    step_prob: float,
) -> float:
    """Forward kernel q(x_{t+1} | x_t) under chunked absorbing masking."""
    p = 1.0
    for group in groups:
        was_masked = all(tokens_t[i] == mask for i in group)
        if not was_masked and any(tokens_t[i] == mask for i in group):
            return 0.0  # not a chunk-consistent source state
        now_masked = all(x_next.tokens[i] == mask for i in group)
        if was_masked:
            if not now_masked:
                return 0.0
        elif now_masked:
            p *= step_prob
        else:
            if any(x_next.tokens[i] != tokens_t[i] for i in group):
                return 0.0
            p *= 1.0 - step_prob
    return p


def brute_reverse_posterior(
    data: JointTable, x_next: SequenceState, sched: NoiseSchedule, t: int
) -> JointTable:
    """Exact q(x_t | x_{t+1}) over the state alphabet by Bayes' rule:
    q(x_t | x_{t+1}) proportional to q(x_{t+1} | x_t) * q(x_t), enumerating
    all states. Raises SupportError for unreachable x_{t+1}."""
    if data.alphabet != x_next.alphabet:
        raise AlphabetMismatchError("data table and state disagree on the alphabet")
    if x_next.time != t + 1:
        raise InvalidDistributionError(
            f"x_next carries time {x_next.time}, expected t+1 = {t + 1}"
        )
    n = data.num_positions
    mask = data.alphabet.mask_index
    state_table = forward_state_distribution(data, t, sched)
    step_prob = sched.step_mask_prob(t)
    groups = chunk_groups(n, sched.chunk_size)
    states = all_states(state_table.alphabet)
    post = np.zeros(state_table.alphabet.num_states, dtype=np.float64)
    qt = state_table.probs
    for idx in np.nonzero(qt)[0]:
        tokens_t = tuple(int(v) for v in states[idx])
        trans = _transition_prob(tokens_t, x_next, groups, mask, step_prob)
        if trans > 0.0:
            post[idx] = qt[idx] * trans
    total = post.sum()
    if total <= 0.0:
        raise SupportError("x_next is unreachable under the forward process")
    return JointTable(state_table.alphabet, post / total)


def renormalize_marginals(m: MarginalSet, partition: IndexPartition) -> MarginalSet:
    """Zero out the mask column and rescale each row to sum 1. Unmasked rows
    must carry no mask mass; they pass through as the point masses they are."""
    if not m.includes_mask:
        raise InvalidDistributionError("marginal set does not include a mask column")
    if partition.num_positions != m.num_positions:
        raise AlphabetMismatchError("partition size does not match the marginal set")
    rows = np.asarray(m.rows, dtype=np.float64)
    c = m.num_categories
    for j in partition.unmasked:
        if rows[j, c] > 1e-12:
            raise InvalidDistributionError(
                f"unmasked position {j} carries mask mass {rows[j, c]!r}"
            )
    data = rows[:, :c].copy()
    mass = data.sum(axis=1)
    if np.any(mass <= 0.0):
        bad = int(np.argmin(mass))
        raise DegenerateMarginalError(
            f"position {bad} has all mass on the mask state"
        )
    return MarginalSet(data / mass[:, None], includes_mask=False)
