"""The two probability sources the sampler fuses.

A DiffusionMarginalModel answers per-position marginal queries about the
mask-free content layer: rows of q(x~_t^i | x_{t+1}) for the full context,
or for the causal context where every position >= i is masked. An
ARCopulaModel answers left-to-right conditionals p(x_i | x_<i).

Both come in two variants sharing one representation: "exact" wraps the true
data table, "counts" wraps a Laplace-smoothed empirical table fitted from a
corpus of complete sequences. All queries are exact conditioning of the
backing table, so every answered row is a valid distribution by construction.

Corpus files hold one sequence per line as N space-separated integer tokens
(0-based). Model files are versioned JSON: {version, kind, N, C, payload}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dist import (
    Alphabet,
    JointTable,
    MarginalSet,
    format_float,
    univariate_marginals,
)
from .errors import (
    AlphabetMismatchError,
    ClampError,
    InvalidDistributionError,
    SupportError,
)
from .noising import NoiseSchedule, SequenceState, aux_posterior

MODEL_FORMAT_VERSION = 1
KIND_EXACT = "exact"
KIND_COUNTS = "counts"


def fit_counts_table(
    sequences: np.ndarray, alphabet: Alphabet, smoothing: float = 1.0
) -> JointTable:
    """Additively smoothed empirical joint table from an (M, N) corpus."""
    seqs = np.asarray(sequences, dtype=np.int64)
    if seqs.ndim != 2 or seqs.shape[1] != alphabet.num_positions:
        raise AlphabetMismatchError("corpus shape does not match the alphabet")
    if seqs.size and (seqs.min() < 0 or seqs.max() >= alphabet.num_categories):
        raise InvalidDistributionError("corpus tokens out of range")
    if smoothing < 0.0:
        raise InvalidDistributionError("smoothing must be >= 0")
    weights = alphabet.num_categories ** np.arange(
        alphabet.num_positions - 1, -1, -1, dtype=np.int64
    )
    idx = seqs @ weights if seqs.size else np.zeros(0, dtype=np.int64)
    counts = np.bincount(idx, minlength=alphabet.num_states).astype(np.float64)
    total = counts.sum() + smoothing * alphabet.num_states
    if total <= 0.0:
        raise InvalidDistributionError("empty corpus with zero smoothing")
    probs = (counts + smoothing) / total
    return JointTable(alphabet, probs, positive=smoothing > 0.0)


def save_corpus(sequences: np.ndarray, path: str | Path) -> None:
    lines = [" ".join(str(int(t)) for t in row) for row in np.asarray(sequences)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_corpus(path: str | Path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append([int(tok) for tok in line.split()])
        except ValueError as exc:
            raise InvalidDistributionError(f"bad corpus line {lineno}: {line!r}") from exc
    if rows and len({len(r) for r in rows}) != 1:
        raise InvalidDistributionError("corpus lines have inconsistent lengths")
    return np.asarray(rows, dtype=np.int64)


def _dump_model_doc(kind: str, table: JointTable) -> str:
    payload = "[" + ", ".join(format_float(v) for v in table.probs) + "]"
    return (
        "{"
        + f'"version": {MODEL_FORMAT_VERSION}, "kind": "{kind}", '
        + f'"N": {table.num_positions}, "C": {table.num_categories}, '
        + f'"payload": {payload}'
        + "}"
    )


def load_model_file(path: str | Path) -> tuple[str, JointTable]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise InvalidDistributionError(f"unsupported model version {doc.get('version')!r}")
    kind = doc.get("kind")
    if kind not in (KIND_EXACT, KIND_COUNTS):
        raise InvalidDistributionError(f"unknown model kind {kind!r}")
    alphabet = Alphabet(int(doc["N"]), int(doc["C"]))
    table = JointTable(alphabet, np.asarray(doc["payload"], dtype=np.float64))
    return kind, table


_QUERY_CACHE_CAP = 4096


@dataclass(frozen=True, eq=False)
class DiffusionMarginalModel:
    """Marginal provider over the content layer; `schedule` records which
    noise schedule the model serves (metadata; the exact marginals are
    schedule-free). Queries are pure, so answers are memoized per context."""

    table: JointTable
    kind: str = KIND_EXACT
    schedule: NoiseSchedule | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "_query_cache", {})

    @property
    def alphabet(self) -> Alphabet:
        return self.table.alphabet

    @classmethod
    def exact(
        cls, table: JointTable, schedule: NoiseSchedule | None = None
    ) -> "DiffusionMarginalModel":
        return cls(table, KIND_EXACT, schedule)

    @classmethod
    def from_corpus(
        cls,
        sequences: np.ndarray,
        alphabet: Alphabet,
        smoothing: float = 1.0,
        schedule: NoiseSchedule | None = None,
    ) -> "DiffusionMarginalModel":
        return cls(fit_counts_table(sequences, alphabet, smoothing), KIND_COUNTS, schedule)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(_dump_model_doc(self.kind, self.table) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, schedule: NoiseSchedule | None = None) -> "DiffusionMarginalModel":
        kind, table = load_model_file(path)
        return cls(table, kind, schedule)


@dataclass(frozen=True, eq=False)
class ARCopulaModel:
    """Left-to-right conditional provider p(x_i | x_<i) over data tokens.
    Queries are pure and memoized per prefix."""

    table: JointTable
    kind: str = KIND_EXACT

    def __post_init__(self) -> None:
        object.__setattr__(self, "_query_cache", {})

    @property
    def alphabet(self) -> Alphabet:
        return self.table.alphabet

    @classmethod
    def exact(cls, table: JointTable) -> "ARCopulaModel":
        return cls(table, KIND_EXACT)

    @classmethod
    def from_corpus(
        cls, sequences: np.ndarray, alphabet: Alphabet, smoothing: float = 1.0
    ) -> "ARCopulaModel":
        return cls(fit_counts_table(sequences, alphabet, smoothing), KIND_COUNTS)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(_dump_model_doc(self.kind, self.table) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ARCopulaModel":
        kind, table = load_model_file(path)
        return cls(table, kind)


# ---------------------------------------------------------------------------
# Marginal queries
# ---------------------------------------------------------------------------

def dm_marginals_full(
    model: DiffusionMarginalModel, x_next: SequenceState, t: int
) -> MarginalSet:
    """Rows q(x~_t^i | x_{t+1}) for every position, mask excluded: the
    marginals of the auxiliary posterior given the whole context."""
    if x_next.time != t + 1:
        raise InvalidDistributionError(
            f"x_next carries time {x_next.time}, expected t+1 = {t + 1}"
        )
    cache: dict = model._query_cache  # type: ignore[attr-defined]
    key = ("full", x_next.tokens)
    hit = cache.get(key)
    if hit is not None:
        return hit
    rows = univariate_marginals(aux_posterior(model.table, x_next))
    if len(cache) < _QUERY_CACHE_CAP:
        cache[key] = rows
    return rows


def dm_marginals_causal(
    model: DiffusionMarginalModel, x_next: SequenceState, t: int
) -> MarginalSet:
    """Row i conditions only on the context left of i: positions >= i are
    replaced by MASK before querying the full-context marginal at i."""
    if x_next.time != t + 1:
        raise InvalidDistributionError(
            f"x_next carries time {x_next.time}, expected t+1 = {t + 1}"
        )
    cache: dict = model._query_cache  # type: ignore[attr-defined]
    key = ("causal", x_next.tokens)
    hit = cache.get(key)
    if hit is not None:
        return hit
    n = model.alphabet.num_positions
    mask = model.alphabet.mask_index
    rows = np.empty((n, model.alphabet.num_categories), dtype=np.float64)
    for i in range(n):
        ctx = SequenceState(
            x_next.tokens[:i] + (mask,) * (n - i), x_next.time, model.alphabet
        )
        rows[i] = dm_marginals_full(model, ctx, t).rows[i]
    out = MarginalSet(rows, includes_mask=False)
    if len(cache) < _QUERY_CACHE_CAP:
        cache[key] = out
    return out


# ---------------------------------------------------------------------------
# Autoregressive queries
# ---------------------------------------------------------------------------

def ar_conditional(model: ARCopulaModel, prefix: Sequence[int], i: int) -> np.ndarray:
    """p(x_i = . | x_<i = prefix) as a length-C distribution; i = len(prefix)."""
    n, c = model.alphabet.num_positions, model.alphabet.num_categories
    if not 0 <= i < n:
        raise AlphabetMismatchError(f"position {i} out of range")
    if len(prefix) != i:
        raise InvalidDistributionError(f"prefix length {len(prefix)} != position {i}")
    key = tuple(int(tok) for tok in prefix)
    for tok in key:
        if not 0 <= tok < c:
            raise InvalidDistributionError(f"prefix token {tok} out of range")
    cache: dict = model._query_cache  # type: ignore[attr-defined]
    hit = cache.get(key)
    if hit is not None:
        return hit
    tensor = model.table.tensor()
    if i + 1 < n:
        tensor = tensor.sum(axis=tuple(range(i + 1, n)))
    row = np.asarray(tensor[key], dtype=np.float64)
    mass = float(row.sum())
    if mass <= 0.0:
        raise SupportError(f"prefix {key} has zero probability")
    row = row / mass
    row.setflags(write=False)
    if len(cache) < _QUERY_CACHE_CAP:
        cache[key] = row
    return row


def ar_copula_conditional(
    model: ARCopulaModel,
    x_next: SequenceState,
    prefix: Sequence[int],
    i: int,
) -> np.ndarray:
    """Conditional of the copula distribution clamped to the unmasked tokens
    of x_{t+1}: a point mass at x_{t+1}^i when i is unmasked, otherwise the
    plain left-to-right conditional on the (clamp-respecting) prefix."""
    if x_next.alphabet != model.alphabet:
        raise AlphabetMismatchError("state and model disagree on the alphabet")
    c = model.alphabet.num_categories
    for j in x_next.unmasked_positions:
        if j < i and int(prefix[j]) != x_next.tokens[j]:
            raise ClampError(f"prefix violates the clamp at position {j}")
    if not x_next.is_masked(i):
        row = np.zeros(c, dtype=np.float64)
        row[x_next.tokens[i]] = 1.0
        return row
    return ar_conditional(model, prefix, i)


def ar_chain_table(model: ARCopulaModel) -> JointTable:
    """Joint distribution defined by the chain of conditionals, accumulated
    in log-domain. For a table-backed model this reproduces the table (chain
    rule); it is computed independently so tests can assert exactly that."""
    alphabet = model.alphabet
    n, c = alphabet.num_positions, alphabet.num_categories
    log_probs = np.full(alphabet.num_states, -np.inf, dtype=np.float64)

    def recurse(prefix: tuple[int, ...], log_w: float) -> None:
        i = len(prefix)
        if i == n:
            log_probs[_prefix_index(prefix, c)] = log_w
            return
        row = ar_conditional(model, prefix, i)
        for cat in range(c):
            if row[cat] > 0.0:
                recurse(prefix + (cat,), log_w + float(np.log(row[cat])))

    recurse((), 0.0)
    return JointTable(alphabet, np.exp(log_probs))


def _prefix_index(tokens: tuple[int, ...], num_categories: int) -> int:
    idx = 0
    for tok in tokens:
        idx = idx * num_categories + tok
    return idx
