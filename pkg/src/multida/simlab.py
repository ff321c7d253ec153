"""Simulation scenarios, selection-error metrics and cross-validation.

Generators are pure functions of (scenario spec, seed): structure draws
(which features are discriminative, which partitions, covariance factors,
the final feature permutation) and noise draws come from separate seeded
streams, so equal specs always produce identical data.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .estimator import Dataset, FittedModel, fit, predict
from .partitions import Column, canonicalize, enumerate_exhaustive, refines

logger = logging.getLogger(__name__)

INDEPENDENT_SCENARIOS = ("fs-consistency", "ind-equal-var", "ind-unequal-var")
DEPENDENT_SCENARIOS = ("dep-equal-cov", "dep-unequal-cov")
SCENARIOS = INDEPENDENT_SCENARIOS + DEPENDENT_SCENARIOS


@dataclass(frozen=True)
class SimSpec:
    """Parameters of one synthetic-data scenario.

    ``mean_shift`` defaults to 2 for the feature-selection scenario and
    0.5 for the prediction scenarios; group ``g`` has mean
    ``(g - 1) * mean_shift``.  In the unequal-variance scenario group
    ``g`` has standard deviation ``1 + (g - 1) * variance_scale``.
    Dependent scenarios build block covariance from ``p / block_size``
    sparse factors with ``block_density`` off-diagonal fill.
    """

    scenario: str
    n: int
    p: int
    K: int
    discriminative_fraction: float = 0.10
    mean_shift: float | None = None
    variance_scale: float = 1.0
    block_size: int | None = None
    block_density: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(
                f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}"
            )
        if self.n < self.K or self.p < 1 or self.K < 2:
            raise ValidationError("need n >= K, p >= 1, K >= 2")
        if not 0.0 <= self.discriminative_fraction <= 1.0:
            raise ValidationError("discriminative_fraction must lie in [0, 1]")
        if self.scenario in DEPENDENT_SCENARIOS:
            b = self.effective_block_size
            if b < 1 or b > self.p:
                raise ValidationError(
                    f"block size {b} outside 1..p={self.p}"
                )
            if self.p % b != 0:
                raise ValidationError(
                    f"p={self.p} is not divisible by block size {b}"
                )
            if not 0.0 <= self.block_density <= 1.0:
                raise ValidationError("block_density must lie in [0, 1]")

    @property
    def effective_mean_shift(self) -> float:
        if self.mean_shift is not None:
            return self.mean_shift
        return 2.0 if self.scenario == "fs-consistency" else 0.5

    @property
    def effective_block_size(self) -> int:
        if self.block_size is not None:
            return self.block_size
        return max(1, self.p // 10)


@dataclass(frozen=True)
class TruthAssignment:
    """True hypothesis per feature, aligned to the exhaustive canonical
    column ordering in ``columns``."""

    columns: tuple[Column, ...]
    gamma0: np.ndarray        # p x M one-hot
    true_column: np.ndarray   # p, zero-based column index
    class_means: np.ndarray   # K x p
    class_sds: np.ndarray | None  # K x p for independent scenarios


@dataclass(frozen=True)
class CvRow:
    trial: int
    fold: int
    n_test: int
    n_wrong: int
    error: float


@dataclass(frozen=True)
class CvResult:
    rows: tuple[CvRow, ...]
    per_trial: np.ndarray
    mean: float
    sd: float


@dataclass(frozen=True)
class SimReport:
    """Selection-error decomposition and optional CV table for one run."""

    E: float
    E_O: float
    E_U: float
    norm_error: float       # E / (2p)
    error_over_m: float     # E / M
    hard_rate: float
    fit_seconds: float | None = None
    cv: CvResult | None = None


def _class_allocation(n: int, k: int) -> np.ndarray:
    """Sample counts per class, as equal as possible (largest remainder)."""
    base, rem = divmod(n, k)
    counts = np.full(k, base, dtype=np.int64)
    counts[:rem] += 1
    if rem:
        logger.info(
            "n=%d not divisible by K=%d; class counts %s", n, k, counts.tolist()
        )
    return counts


def _labels_from_counts(counts: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(1, len(counts) + 1), counts)


def _one_hot_truth(true_col: np.ndarray, m: int) -> np.ndarray:
    gamma0 = np.zeros((len(true_col), m))
    gamma0[np.arange(len(true_col)), true_col] = 1.0
    return gamma0


def gen_independent(spec: SimSpec) -> tuple[Dataset, TruthAssignment]:
    """Independent-feature scenario data.

    Discriminative features draw a uniform non-null partition; group ``g``
    gets mean ``(g-1) * shift`` (and, in the unequal-variance scenario,
    standard deviation ``1 + (g-1) * variance_scale``).  All remaining
    features are standard normal.
    """
    if spec.scenario not in INDEPENDENT_SCENARIOS:
        raise ValidationError(
            f"scenario {spec.scenario!r} is not an independent-feature scenario"
        )
    columns = tuple(enumerate_exhaustive(spec.K))
    m = len(columns)
    rng_struct = np.random.default_rng([spec.seed, 1])
    rng_noise = np.random.default_rng([spec.seed, 2])

    counts = _class_allocation(spec.n, spec.K)
    y = _labels_from_counts(counts)

    n_disc = int(round(spec.discriminative_fraction * spec.p))
    disc = np.sort(rng_struct.choice(spec.p, size=n_disc, replace=False))
    true_col = np.zeros(spec.p, dtype=np.int64)
    if n_disc:
        true_col[disc] = rng_struct.integers(1, m, size=n_disc)

    shift = spec.effective_mean_shift
    class_means = np.zeros((spec.K, spec.p))
    class_sds = np.ones((spec.K, spec.p))
    if n_disc:
        cols_arr = np.array(columns, dtype=np.int64)  # M x K
        group_of_class = cols_arr[true_col[disc]].T  # K x n_disc
        class_means[:, disc] = (group_of_class - 1) * shift
        if spec.scenario == "ind-unequal-var":
            class_sds[:, disc] = 1.0 + (group_of_class - 1) * spec.variance_scale

    X = class_means[y - 1] + class_sds[y - 1] * rng_noise.standard_normal(
        (spec.n, spec.p)
    )
    data = Dataset.from_arrays(X, [str(k) for k in y])
    truth = TruthAssignment(
        columns=columns,
        gamma0=_one_hot_truth(true_col, m),
        true_column=true_col,
        class_means=class_means,
        class_sds=class_sds,
    )
    return data, truth


@dataclass(frozen=True)
class DependentStructure:
    """Covariance factors and feature permutation of a dependent scenario.

    ``factors[c][l]`` is the b x b factor of block ``l``; the outer list
    has one entry when classes share a covariance, else one per class.
    The final data permutes feature indices by ``perm`` (column ``j`` of
    the data is pre-permutation feature ``perm[j]``).
    """

    factors: tuple[tuple[np.ndarray, ...], ...]
    shared: bool
    perm: np.ndarray
    disc_sets: tuple[np.ndarray, ...]  # pre-permutation class index sets

    def covariance_entry(self, i: int, j: int, class_index: int = 0) -> float:
        """True covariance between post-permutation features i and j."""
        b = self.factors[0][0].shape[0]
        a, c = int(self.perm[i]), int(self.perm[j])
        if a // b != c // b:
            return 0.0
        blk = self.factors[class_index if not self.shared else 0][a // b]
        return float(blk[:, a % b] @ blk[:, c % b])


def _draw_factor(b: int, density: float, rng: np.random.Generator) -> np.ndarray:
    blk = np.zeros((b, b))
    blk[np.diag_indices(b)] = rng.standard_normal(b)
    off = ~np.eye(b, dtype=bool)
    mask = rng.random((b, b)) < density
    fill = rng.standard_normal((b, b))
    blk[off & mask] = fill[off & mask]
    return blk


def dependent_structure(spec: SimSpec) -> DependentStructure:
    """Deterministic structure draws of a dependent scenario (factors,
    discriminative sets, permutation); reusable to recover the true
    covariance that :func:`gen_dependent` sampled from."""
    if spec.scenario not in DEPENDENT_SCENARIOS:
        raise ValidationError(
            f"scenario {spec.scenario!r} is not a dependent-feature scenario"
        )
    rng_struct = np.random.default_rng([spec.seed, 1])
    b = spec.effective_block_size
    n_blocks = spec.p // b
    shared = spec.scenario == "dep-equal-cov"
    n_factor_sets = 1 if shared else spec.K
    factors = tuple(
        tuple(_draw_factor(b, spec.block_density, rng_struct) for _ in range(n_blocks))
        for _ in range(n_factor_sets)
    )
    n_disc = int(round(spec.discriminative_fraction * spec.p))
    share = n_disc // spec.K
    disc_sets = tuple(
        np.arange(k * share, (k + 1) * share, dtype=np.int64)
        for k in range(spec.K)
    )
    perm = rng_struct.permutation(spec.p)
    return DependentStructure(
        factors=factors, shared=shared, perm=perm, disc_sets=disc_sets
    )


def gen_dependent(spec: SimSpec) -> tuple[Dataset, TruthAssignment]:
    """Block-covariance scenario data.

    Rows are sampled as ``z @ B`` per block (covariance ``B^T B``) without
    forming the dense covariance; class ``k`` adds ``mean_shift`` on its
    contiguous discriminative set, and a seed-fixed permutation of the
    feature indices is applied last.  Truth tracks the mean structure:
    features in class ``k``'s set carry the k-vs-rest partition.
    """
    structure = dependent_structure(spec)
    rng_noise = np.random.default_rng([spec.seed, 2])
    b = spec.effective_block_size
    n_blocks = spec.p // b

    counts = _class_allocation(spec.n, spec.K)
    y = _labels_from_counts(counts)

    columns = tuple(enumerate_exhaustive(spec.K))
    shift = spec.effective_mean_shift
    class_means = np.zeros((spec.K, spec.p))
    true_col = np.zeros(spec.p, dtype=np.int64)
    for k in range(spec.K):
        one_vs_rest = canonicalize(
            tuple(2 if i == k else 1 for i in range(spec.K))
        )
        m_idx = columns.index(one_vs_rest)
        class_means[k, structure.disc_sets[k]] = shift
        true_col[structure.disc_sets[k]] = m_idx

    X = np.empty((spec.n, spec.p))
    if structure.shared:
        for l in range(n_blocks):
            z = rng_noise.standard_normal((spec.n, b))
            X[:, l * b : (l + 1) * b] = z @ structure.factors[0][l]
    else:
        offsets = np.concatenate([[0], np.cumsum(counts)])
        for k in range(spec.K):
            rows = slice(offsets[k], offsets[k + 1])
            for l in range(n_blocks):
                z = rng_noise.standard_normal((counts[k], b))
                X[rows, l * b : (l + 1) * b] = z @ structure.factors[k][l]
    X += class_means[y - 1]

    perm = structure.perm
    X = X[:, perm]
    class_means = class_means[:, perm]
    true_col = true_col[perm]

    data = Dataset.from_arrays(X, [str(k) for k in y])
    truth = TruthAssignment(
        columns=columns,
        gamma0=_one_hot_truth(true_col, len(columns)),
        true_column=true_col,
        class_means=class_means,
        class_sds=None,
    )
    return data, truth


def generate(spec: SimSpec) -> tuple[Dataset, TruthAssignment]:
    """Dispatch to the independent or dependent generator."""
    if spec.scenario in INDEPENDENT_SCENARIOS:
        return gen_independent(spec)
    return gen_dependent(spec)


def _refinement_masks(columns: Sequence[Column]) -> tuple[np.ndarray, np.ndarray]:
    """(over, under) boolean masks: ``over[m0, m]`` marks m a strict
    refinement of m0, ``under[m0, m]`` any other wrong hypothesis."""
    m = len(columns)
    over = np.zeros((m, m), dtype=bool)
    for m0 in range(m):
        for mm in range(m):
            if mm != m0 and refines(columns[mm], columns[m0]):
                over[m0, mm] = True
    under = ~over & ~np.eye(m, dtype=bool)
    return over, under


def selection_error(model: FittedModel, truth: TruthAssignment) -> SimReport:
    """Soft selection error ``E = sum |gamma - gamma0|`` with its
    overfitting/underfitting decomposition and the hard misassignment
    rate.

    Overfitting mass sits on strict refinements of the true partition;
    underfitting mass on every other wrong hypothesis; ``E = E_O + E_U``.
    """
    if model.parts.columns != truth.columns:
        raise ValidationError(
            "model hypothesis columns do not match the truth assignment"
        )
    p, m = truth.gamma0.shape
    if model.gamma.shape != (p, m):
        raise ValidationError(
            f"model gamma is {model.gamma.shape}, truth needs {(p, m)}"
        )
    over, under = _refinement_masks(truth.columns)
    tc = truth.true_column
    e_soft = float(np.abs(model.gamma - truth.gamma0).sum())
    e_over = 2.0 * float((model.gamma * over[tc]).sum())
    e_under = 2.0 * float((model.gamma * under[tc]).sum())
    hard = float(np.mean(np.argmax(model.gamma, axis=1) != tc))
    return SimReport(
        E=e_soft,
        E_O=e_over,
        E_U=e_under,
        norm_error=e_soft / (2.0 * p),
        error_over_m=e_soft / m,
        hard_rate=hard,
    )


def run_feature_selection(
    spec: SimSpec,
    *,
    penalty: str = "ebic",
    variance_mode: str = "equal",
    threads: int = 1,
) -> SimReport:
    """Generate one replicate, fit, and score feature selection."""
    data, truth = generate(spec)
    t0 = time.perf_counter()
    model = fit(
        data, penalty=penalty, variance_mode=variance_mode, threads=threads
    )
    elapsed = time.perf_counter() - t0
    report = selection_error(model, truth)
    return SimReport(
        E=report.E,
        E_O=report.E_O,
        E_U=report.E_U,
        norm_error=report.norm_error,
        error_over_m=report.error_over_m,
        hard_rate=report.hard_rate,
        fit_seconds=elapsed,
    )


def consistency_sweep(
    n_values: Sequence[int],
    *,
    p: int = 500,
    k: int = 3,
    replicates: int = 20,
    penalty: str = "ebic",
    variance_mode: str = "equal",
    mean_shift: float | None = None,
    discriminative_fraction: float = 0.10,
    seed: int = 0,
    threads: int = 1,
) -> list[dict]:
    """Feature-selection error across sample sizes; one row per
    (n, p, K, replicate), directly writable as tidy CSV."""
    rows = []
    for n in n_values:
        for rep in range(replicates):
            spec = SimSpec(
                scenario="fs-consistency",
                n=n,
                p=p,
                K=k,
                discriminative_fraction=discriminative_fraction,
                mean_shift=mean_shift,
                seed=int(np.random.default_rng([seed, n, rep]).integers(2**32)),
            )
            report = run_feature_selection(
                spec, penalty=penalty, variance_mode=variance_mode, threads=threads
            )
            rows.append(
                {
                    "n": n,
                    "p": p,
                    "K": k,
                    "replicate": rep + 1,
                    "E": report.E,
                    "E_O": report.E_O,
                    "E_U": report.E_U,
                    "norm_error": report.norm_error,
                    "error_over_m": report.error_over_m,
                    "hard_rate": report.hard_rate,
                    "fit_seconds": report.fit_seconds,
                }
            )
    return rows


def _stratified_folds(
    y: np.ndarray, folds: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Test-index sets of a stratified K-fold split."""
    k_max = int(y.max())
    assignments = [[] for _ in range(folds)]
    for k in range(1, k_max + 1):
        idx = np.flatnonzero(y == k)
        if len(idx) < folds:
            raise ValidationError(
                f"class {k} has {len(idx)} samples, fewer than {folds} folds"
            )
        shuffled = rng.permutation(idx)
        for t, i in enumerate(shuffled):
            assignments[t % folds].append(i)
    return [np.sort(np.array(a, dtype=np.int64)) for a in assignments]


def cross_validate(
    data: Dataset,
    folds: int = 5,
    trials: int = 50,
    *,
    seed: int = 0,
    scheme: str = "exhaustive",
    user_matrix: np.ndarray | None = None,
    penalty: str = "ebic",
    variance_mode: str = "equal",
    prior_term_mode: str = "log",
    threads: int = 1,
    max_classes: int = 12,
) -> CvResult:
    """Repeated stratified k-fold cross-validation.

    Fold assignments for trial ``t`` come from an independent stream
    seeded by (seed, t), so any subset of trials can be reproduced or run
    concurrently without changing results.
    """
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    if trials < 1:
        raise ValidationError("need at least 1 trial")
    rows: list[CvRow] = []
    per_trial = np.empty(trials)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        test_sets = _stratified_folds(data.y, folds, rng)
        fold_errors = np.empty(folds)
        for f, test_idx in enumerate(test_sets):
            mask = np.ones(data.n, dtype=bool)
            mask[test_idx] = False
            train = data.subset(np.flatnonzero(mask))
            model = fit(
                train,
                scheme=scheme,
                user_matrix=user_matrix,
                penalty=penalty,
                variance_mode=variance_mode,
                prior_term_mode=prior_term_mode,
                threads=threads,
                max_classes=max_classes,
            )
            pred = predict(model, data.X[test_idx], threads=threads)
            wrong = int((pred.codes != data.y[test_idx]).sum())
            err = wrong / len(test_idx)
            fold_errors[f] = err
            rows.append(CvRow(t + 1, f + 1, len(test_idx), wrong, err))
        per_trial[t] = fold_errors.mean()
    mean = float(per_trial.mean())
    sd = float(per_trial.std(ddof=1)) if trials > 1 else 0.0
    return CvResult(rows=tuple(rows), per_trial=per_trial, mean=mean, sd=sd)
