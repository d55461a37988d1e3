"""Interferent-subset selection by exhaustive sweep with greedy term pruning.

For every subset of candidate interferents the full polynomial basis is
pruned one term at a time, always dropping the non-constant term with the
smallest point-estimate coefficient, and every nested model is scored with
the bootstrap variance objective and its BIC.  The chosen model is the
global BIC argmin across all subsets and chain steps.

All candidate models of one run are principal-submatrix solves of a single
family of Gram matrices (one per bootstrap resample), so the sweep costs a
few billion flops instead of a combinatorial explosion.  An outer bootstrap
repeats the whole procedure on resampled datasets to produce selection
frequencies and an averaged Pareto front.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .basis import full_basis
from .dataset import CalibrationDataset
from .exceptions import (
    NonpositiveVariance,
    NumericalFailure,
    TooManyInterferents,
    Underdetermined,
    ValidationError,
)
from .glr import FittedModel, GramStack
from .rng import child_rng, child_seed
from .uncertainty import BootstrapEnsemble, VarianceReport, ensemble_from_fits, f_moments, variance_objective

MAX_CANDIDATES = 15


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs of one selection run.

    ``always_include`` lists z-column labels forced into every basis (the
    x columns are always included).  Declaring every column as a candidate
    and none as always-included gives the fully agnostic mode.

    ``greedy_order`` picks how the pruning order is derived: ``"initial"``
    ranks the non-constant terms once by |beta| of the unpruned fit and
    removes them in that fixed order; ``"recompute"`` re-ranks after every
    refit.  The fixed order is the default: re-ranking adaptively hunts for
    low-variance subsets and, under heavy model error, lets tiny chance
    winners beat genuinely informative variables in the BIC lottery.
    """

    inner_b: int = 200
    seed: int = 0
    always_include: tuple = ()
    keep_records: bool = False
    threads: int = 1
    tie_tol: float = 1e-9
    greedy_order: str = "initial"

    def __post_init__(self):
        if self.greedy_order not in ("initial", "recompute"):
            raise ValidationError(f"unknown greedy_order {self.greedy_order!r}")


@dataclass(frozen=True)
class CandidateRecord:
    """One evaluated (variable subset, term subset) model."""

    alpha: tuple                      # selected z columns, 0-based, sorted
    terms: tuple                      # term rows of the subset's full basis
    report: VarianceReport | None     # None when discarded (V <= 0)

    @property
    def discarded(self) -> bool:
        return self.report is None


@dataclass(frozen=True)
class ParetoEntry:
    """Best model at a fixed subset size, plus outer-bootstrap aggregates."""

    level: int
    alpha: tuple
    v: float
    bic: float
    mean_v: float
    modal_alpha: tuple
    modal_freq_pct: float


@dataclass
class SelectionResult:
    """Output of a sweep or an outer-bootstrap run for one sensor output."""

    target: int
    target_name: str
    degree: int
    chosen: CandidateRecord
    model: FittedModel
    ensemble: BootstrapEnsemble
    pareto: list
    frequency_pct: dict
    n_replicates: int = 1
    records: list | None = None
    warnings: list = field(default_factory=list)


def _better(a: CandidateRecord, b: CandidateRecord, tol: float) -> bool:
    """BIC comparison with ties broken toward parsimony."""
    if a.report.bic < b.report.bic - tol:
        return True
    if a.report.bic > b.report.bic + tol:
        return False
    if a.report.k != b.report.k:
        return a.report.k < b.report.k
    if len(a.alpha) != len(b.alpha):
        return len(a.alpha) < len(b.alpha)
    return a.alpha < b.alpha


class _Engine:
    """Shared state of one selection run: basis, Gram stack, feature moments."""

    def __init__(self, train: CalibrationDataset, degree: int, config: SelectionConfig):
        self.train = train
        self.degree = degree
        self.config = config

        always = set()
        for label in config.always_include:
            if label not in train.z_names:
                raise ValidationError(f"always_include label {label!r} is not a z column")
            always.add(train.z_names.index(label))
        self.base_alpha = tuple(sorted(always))
        self.candidates = tuple(j for j in range(train.d_z) if j not in always)
        if len(self.candidates) > MAX_CANDIDATES:
            raise TooManyInterferents(
                f"{len(self.candidates)} candidates exceed the 2**{MAX_CANDIDATES} sweep guard"
            )

        all_alpha = tuple(range(train.d_z))
        self.full = full_basis(train, all_alpha, degree)
        if train.n <= self.full.k:
            raise Underdetermined(
                f"n={train.n} rows cannot identify the full basis (k={self.full.k}); "
                "reduce the degree or gather more data"
            )
        rng_rows = [
            child_rng(config.seed, "inner", b).integers(0, train.n, size=train.n)
            for b in range(config.inner_b)
        ]
        self.stack = GramStack.from_resamples(train, self.full, rng_rows)
        self.m_f, self.c_f = f_moments(self.full, train)
        # map z column -> variable position inside the full basis
        self._var_of_z = {z: train.d_x + i for i, z in enumerate(all_alpha)}

    def term_columns(self, alpha: tuple) -> np.ndarray:
        """Full-basis rows whose exponents live on x and z_alpha only."""
        banned = [self._var_of_z[z] for z in range(self.train.d_z) if z not in alpha]
        if not banned:
            return np.arange(self.full.k)
        mask = self.full.exponents[:, banned].sum(axis=1) == 0
        return np.nonzero(mask)[0]

    def effective_alpha(self, idx: np.ndarray) -> tuple:
        """The z variables actually used by the surviving terms.

        Pruning can eliminate every term touching a variable, in which case
        the model no longer selects it, whatever chain it came from.
        """
        used = self.full.exponents[idx].any(axis=0)
        d_x = self.train.d_x
        return tuple(int(i) - d_x for i in np.nonzero(used)[0] if i >= d_x)

    def score_terms(self, idx: np.ndarray, target: int):
        """Point fit plus bootstrap report for one term subset."""
        beta, theta_sq, fb = self.stack.solve_terms(idx, target)
        ensemble = ensemble_from_fits(
            beta[1:], theta_sq[1:], self.stack.n, fb[1:]
        )
        try:
            report = variance_objective(self.m_f[idx], self.c_f[np.ix_(idx, idx)], ensemble)
        except NonpositiveVariance:
            report = None
        return beta[0], theta_sq[0], report, ensemble

    def greedy_chain(self, target: int, alpha: tuple) -> list:
        """Nested records from the full basis of ``alpha`` down to
        constant-plus-one-term, dropping the smallest-|beta| term each step.

        Records are labelled with the variables their terms actually use,
        which can be a strict subset of the chain's ``alpha`` once pruning
        has removed a variable's last term.
        """
        idx = self.term_columns(alpha)
        records = []
        queue = None
        while True:
            beta_pt, _, report, _ = self.score_terms(idx, target)
            records.append(
                CandidateRecord(
                    alpha=self.effective_alpha(idx),
                    terms=tuple(idx.tolist()),
                    report=report,
                )
            )
            if idx.size <= 2:
                return records
            if self.config.greedy_order == "recompute":
                drop = 1 + int(np.argmin(np.abs(beta_pt[1:])))
            else:
                if queue is None:
                    order = np.argsort(np.abs(beta_pt[1:]), kind="stable")
                    queue = iter(idx[1:][order].tolist())
                drop = int(np.searchsorted(idx, next(queue)))
            idx = np.delete(idx, drop)

    def run(self, target: int):
        """Sweep every candidate subset; returns (records, chosen, per-level best)."""
        records = []
        chosen = None
        best_at = {}
        for level in range(len(self.candidates) + 1):
            for combo in combinations(self.candidates, level):
                alpha = tuple(sorted(set(combo) | set(self.base_alpha)))
                for rec in self.greedy_chain(target, alpha):
                    if self.config.keep_records:
                        records.append(rec)
                    if rec.discarded:
                        continue
                    if chosen is None or _better(rec, chosen, self.config.tie_tol):
                        chosen = rec
                    rec_level = len(rec.alpha)
                    held = best_at.get(rec_level)
                    if held is None or _better(rec, held, self.config.tie_tol):
                        best_at[rec_level] = rec
        if chosen is None:
            raise NumericalFailure("no candidate model had a positive variance objective")
        return records, chosen, best_at

    def finalize(self, target: int, chosen: CandidateRecord):
        """Refit the chosen model on its own restricted basis and keep its
        bootstrap ensemble for downstream use."""
        cols = self.term_columns(chosen.alpha)
        local = np.searchsorted(cols, np.asarray(chosen.terms, dtype=np.intp))
        basis = full_basis(self.train, chosen.alpha, self.degree).subset(local)
        idx = np.asarray(chosen.terms, dtype=np.intp)
        beta, theta_sq, fb = self.stack.solve_terms(idx, target)
        ensemble = ensemble_from_fits(
            beta[1:], theta_sq[1:], self.stack.n, fb[1:],
            resample_seeds=tuple(child_seed(self.config.seed, "inner", b) for b in range(self.config.inner_b)),
        )
        model = FittedModel(
            target=target,
            target_name=self.train.y_names[target],
            basis=basis,
            beta=beta[0],
            theta=float(np.sqrt(theta_sq[0])),
            n_train=self.train.n,
        )
        return model, ensemble


def _single_result(engine: _Engine, target: int) -> SelectionResult:
    records, chosen, best_at = engine.run(target)
    model, ensemble = engine.finalize(target, chosen)
    pareto = []
    for level in sorted(best_at):
        rec = best_at[level]
        pareto.append(
            ParetoEntry(
                level=level,
                alpha=rec.alpha,
                v=rec.report.v,
                bic=rec.report.bic,
                mean_v=rec.report.v,
                modal_alpha=rec.alpha,
                modal_freq_pct=100.0,
            )
        )
    freq = {
        engine.train.z_names[z]: (100.0 if z in chosen.alpha else 0.0)
        for z in range(engine.train.d_z)
    }
    warnings = []
    n_flagged = sum(
        1 for r in (records if records else [chosen]) if r.report and r.report.reliability_warning
    )
    if n_flagged:
        warnings.append(f"{n_flagged} candidate model(s) exceeded 10% pseudo-inverse fallback")
    return SelectionResult(
        target=target,
        target_name=engine.train.y_names[target],
        degree=engine.degree,
        chosen=chosen,
        model=model,
        ensemble=ensemble,
        pareto=pareto,
        frequency_pct=freq,
        records=records if engine.config.keep_records else None,
        warnings=warnings,
    )


def sweep(train: CalibrationDataset, target: int = 0, degree: int = 3,
          config: SelectionConfig = SelectionConfig()) -> SelectionResult:
    """Run the full subset sweep for one sensor output.

    Scores every candidate subset of the measured interferents (including
    the empty subset, the simple model family) and returns the BIC-optimal
    model with its Pareto front.
    """
    return _single_result(_Engine(train, degree, config), target)


def sweep_outputs(train: CalibrationDataset, degree: int = 3,
                  config: SelectionConfig = SelectionConfig(), targets=None) -> list:
    """Run :func:`sweep` for several outputs sharing one Gram stack.

    Because every output is scored on the same bootstrap resamples, the
    returned ensembles are jointly usable for cross-output covariance.
    """
    engine = _Engine(train, degree, config)
    if targets is None:
        targets = range(train.d_y)
    return [_single_result(engine, t) for t in targets]


def reference_model(train: CalibrationDataset, target: int = 0, alpha=(),
                    degree: int = 3, config: SelectionConfig = SelectionConfig()):
    """Fit the full (unpruned) basis on a fixed interferent subset.

    Returns (model, ensemble).  With ``alpha=()`` this is the simple
    baseline (targets only); with all z columns it is the complete model.
    Both serve as comparison points for the selected model.
    """
    engine = _Engine(train, degree, config)
    alpha = tuple(sorted(alpha))
    idx = tuple(engine.term_columns(alpha).tolist())
    return engine.finalize(target, CandidateRecord(alpha=alpha, terms=idx, report=None))


def outer_bootstrap(train: CalibrationDataset, target: int = 0, degree: int = 3,
                    m_replicates: int = 100,
                    config: SelectionConfig = SelectionConfig()) -> SelectionResult:
    """Repeat the sweep on ``m_replicates`` resampled copies of the training set.

    The chosen model comes from the sweep on the original data; the outer
    replicates contribute the per-variable selection frequencies and the
    averaged Pareto front (mean optimal variance and modal subset per size).
    """
    if m_replicates < 1:
        raise ValidationError("m_replicates must be >= 1")
    base = sweep(train, target, degree, config)

    def one_replicate(r: int):
        rows = child_rng(config.seed, "outer", r).integers(0, train.n, size=train.n)
        cfg = replace(
            config,
            seed=child_seed(config.seed, "outer-seed", r),
            keep_records=False,
            threads=1,
        )
        engine = _Engine(train.take(rows), degree, cfg)
        _, chosen, best_at = engine.run(target)
        return chosen, best_at

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(one_replicate, range(m_replicates)))
    else:
        results = [one_replicate(r) for r in range(m_replicates)]

    counts = np.zeros(train.d_z)
    for chosen_r, _ in results:
        for z in chosen_r.alpha:
            counts[z] += 1
    freq = {
        train.z_names[z]: 100.0 * counts[z] / m_replicates for z in range(train.d_z)
    }

    pareto = []
    levels = {p.level for p in base.pareto}
    for _, best_at in results:
        levels.update(best_at.keys())
    for level in sorted(levels):
        vs = []
        alphas = {}
        for _, best_at in results:
            rec = best_at.get(level)
            if rec is None:
                continue
            vs.append(rec.report.v)
            alphas[rec.alpha] = alphas.get(rec.alpha, 0) + 1
        base_entry = next((p for p in base.pareto if p.level == level), None)
        if not vs:
            if base_entry is not None:
                pareto.append(base_entry)
            continue
        # ties in the modal count break toward the lexicographically smallest subset
        modal_alpha, modal_count = max(sorted(alphas.items()), key=lambda kv: kv[1])
        pareto.append(
            ParetoEntry(
                level=level,
                alpha=base_entry.alpha if base_entry else modal_alpha,
                v=base_entry.v if base_entry else float(np.mean(vs)),
                bic=base_entry.bic if base_entry else float("nan"),
                mean_v=float(np.mean(vs)),
                modal_alpha=modal_alpha,
                modal_freq_pct=100.0 * modal_count / m_replicates,
            )
        )

    return SelectionResult(
        target=target,
        target_name=base.target_name,
        degree=degree,
        chosen=base.chosen,
        model=base.model,
        ensemble=base.ensemble,
        pareto=pareto,
        frequency_pct=freq,
        n_replicates=m_replicates,
        records=base.records,
        warnings=base.warnings,
    )
