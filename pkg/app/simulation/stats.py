"""
Estimation, comparison against exact targets, and sweep execution.

Sweeps fan out over (setting, chunk) tasks. Every task owns two streams derived from the
master seed, (block, setting, chunk, "shared") for the bundles and (..., "private") for
party-local randomness, so the results do not depend on the worker count. Chunk tallies
are integer sums reduced in task-index order.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as scipy_stats
from tqdm import tqdm

from app.models.models import (
    CELL_OUTCOMES,
    CellCounts,
    Direction,
    JointPMF,
    ProtocolConfig,
    SettingReport,
    SweepReport,
)
from app.simulation.batch import BatchOutcome, run_protocol_batch, run_singlet_batch
from app.simulation.geom import RngStream
from app.simulation.protocol import (
    canonicalize,
    execute_run,
    expected_pq,
    flip_identity_residual,
    preflip_correlation_oracle,
)
from app.simulation.quantum import joint_pmf_qm, sample_qm_array, singlet_pmf, state_params
from app.simulation.resources import draw_bundle, draw_bundle_batch, draw_singlet_batch
from app.simulation.services.acceptance_policies import (
    BLOCK_CALIBRATION,
    BLOCK_PROTOCOL,
    BLOCK_SINGLET,
    PolicyEngine,
)

logger = logging.getLogger(__name__)

Z_SENTINEL = math.inf
MIN_SWEEP_TRIALS = 1000

Setting = Tuple[Direction, Direction]


# ----------------------------------------------------------------------------
# Estimation and comparison
# ----------------------------------------------------------------------------

def estimate(counts: CellCounts) -> Tuple[JointPMF, Tuple[float, ...]]:
    """p_i = n_i / N with binomial standard errors sqrt(p_i (1 - p_i) / N)."""
    if counts.N <= 0:
        raise ValueError("Cannot estimate from zero runs")
    p_hat = tuple(n / counts.N for n in counts.counts())
    se = tuple(math.sqrt(p * (1.0 - p) / counts.N) for p in p_hat)
    return JointPMF(*p_hat), se


def counts_from_outcomes(alpha: np.ndarray, beta: np.ndarray) -> CellCounts:
    alpha = np.asarray(alpha)
    beta = np.asarray(beta)
    cells = [int(np.count_nonzero((alpha == a) & (beta == b))) for a, b in CELL_OUTCOMES]
    return CellCounts(*cells, N=int(alpha.shape[0]))


@dataclass(frozen=True)
class ComparisonResult:
    z_scores: Tuple[float, ...]  # per cell, Z_SENTINEL on support violation
    chi2: float  # over cells with positive reference mass
    chi2_pvalue: float  # upper tail, dof = positive cells - 1
    tv: float  # 1/2 sum |p_hat - p|
    support_violation: bool  # empirical mass where the reference has none


def compare(emp: JointPMF, ref: JointPMF, trials: int) -> ComparisonResult:
    if trials <= 0:
        raise ValueError("trials must be positive")
    z_scores = []
    support_violation = False
    chi2 = 0.0
    positive_cells = 0
    for p_hat, p in zip(emp.cells(), ref.cells()):
        if p == 0.0 or p == 1.0:
            if p_hat == p:
                z_scores.append(0.0)
            else:
                z_scores.append(Z_SENTINEL)
                support_violation = True
        else:
            z_scores.append((p_hat - p) / math.sqrt(p * (1.0 - p) / trials))
        if p > 0.0:
            positive_cells += 1
            chi2 += trials * (p_hat - p) ** 2 / p
    dof = positive_cells - 1
    if dof > 0:
        pvalue = float(scipy_stats.chi2.sf(chi2, dof))
    else:
        pvalue = 1.0 if chi2 == 0.0 else 0.0
    tv = 0.5 * sum(abs(p_hat - p) for p_hat, p in zip(emp.cells(), ref.cells()))
    return ComparisonResult(tuple(z_scores), chi2, pvalue, tv, support_violation)


def tv_confidence(trials: int, ref: Optional[JointPMF] = None, sigma: float = 4.0) -> float:
    """4-sigma TV threshold 1/2 sum_i 4 sqrt(p_i (1 - p_i) / N); uniform reference by default."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    cells = ref.cells() if ref is not None else (0.25, 0.25, 0.25, 0.25)
    return 0.5 * sum(sigma * math.sqrt(p * (1.0 - p) / trials) for p in cells)


def mean_z(mean: float, target: float, trials: int) -> float:
    """z of a +/-1 sample mean against its target, with variance (1 - target^2) / N."""
    variance = (1.0 - target * target) / trials
    if variance <= 0.0:
        return 0.0 if mean == target else Z_SENTINEL
    return (mean - target) / math.sqrt(variance)


# ----------------------------------------------------------------------------
# Tallies
# ----------------------------------------------------------------------------

@dataclass
class Tally:
    """Integer sums over runs; merging is order independent."""
    cells: List[int] = field(default_factory=lambda: [0, 0, 0, 0])
    n: int = 0
    sum_alpha: int = 0
    sum_beta: int = 0
    sum_alpha0: int = 0
    sum_beta0: int = 0
    sum_product0: int = 0
    pr_box_uses: int = 0
    m_box_uses: int = 0
    cbits: int = 0

    @classmethod
    def from_batch(cls, outcome: BatchOutcome) -> "Tally":
        counts = counts_from_outcomes(outcome.alpha, outcome.beta)
        alpha0 = outcome.alpha0.astype(np.int64)
        beta0 = outcome.beta0.astype(np.int64)
        return cls(
            cells=list(counts.counts()),
            n=counts.N,
            sum_alpha=int(outcome.alpha.astype(np.int64).sum()),
            sum_beta=int(outcome.beta.astype(np.int64).sum()),
            sum_alpha0=int(alpha0.sum()),
            sum_beta0=int(beta0.sum()),
            sum_product0=int((alpha0 * beta0).sum()),
            pr_box_uses=outcome.pr_box_uses,
            m_box_uses=outcome.m_box_uses,
            cbits=outcome.cbits,
        )

    def add_run(self, alpha: int, beta: int, alpha0: int, beta0: int,
                pr_box_uses: int, m_box_uses: int, cbits: int) -> None:
        self.cells[CELL_OUTCOMES.index((alpha, beta))] += 1
        self.n += 1
        self.sum_alpha += alpha
        self.sum_beta += beta
        self.sum_alpha0 += alpha0
        self.sum_beta0 += beta0
        self.sum_product0 += alpha0 * beta0
        self.pr_box_uses += pr_box_uses
        self.m_box_uses += m_box_uses
        self.cbits += cbits

    def merge(self, other: "Tally") -> "Tally":
        self.cells = [x + y for x, y in zip(self.cells, other.cells)]
        self.n += other.n
        self.sum_alpha += other.sum_alpha
        self.sum_beta += other.sum_beta
        self.sum_alpha0 += other.sum_alpha0
        self.sum_beta0 += other.sum_beta0
        self.sum_product0 += other.sum_product0
        self.pr_box_uses += other.pr_box_uses
        self.m_box_uses += other.m_box_uses
        self.cbits += other.cbits
        return self

    def counts(self) -> CellCounts:
        return CellCounts(*self.cells, N=self.n)


def _chunk_sizes(trials: int, chunk_size: int) -> List[int]:
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    full, rest = divmod(trials, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def _run_tasks(tasks: List[Tuple[Tuple[int, int], Callable[[], Tally]]], n_settings: int,
               workers: int, progress: bool, description: str) -> List[Tally]:
    """Run (index, fn) tasks on a thread pool and reduce per setting in sorted index order."""
    results: Dict[Tuple[int, int], Tally] = {}
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        future_to_index = {executor.submit(fn): index for index, fn in tasks}
        for future in tqdm(as_completed(future_to_index), total=len(future_to_index),
                           desc=description, disable=not progress):
            index = future_to_index[future]
            results[index] = future.result()
            logger.debug(f"{description}: finished chunk {index}")
    tallies = [Tally() for _ in range(n_settings)]
    for index in sorted(results):
        tallies[index[0]].merge(results[index])
    return tallies


# ----------------------------------------------------------------------------
# Setting reports
# ----------------------------------------------------------------------------

def build_setting_report(a: Direction, b: Direction, tally: Tally, pmf_qm: JointPMF,
                         marginal_targets: Tuple[float, float],
                         preflip: Optional[Dict[str, float]] = None,
                         flip_residual: Optional[float] = None,
                         include_preflip_marginals: bool = False) -> SettingReport:
    counts = tally.counts()
    pmf_emp, _ = estimate(counts)
    comparison = compare(pmf_emp, pmf_qm, counts.N)
    marginal_checks = {
        "alpha": mean_z(tally.sum_alpha / counts.N, marginal_targets[0], counts.N),
        "beta": mean_z(tally.sum_beta / counts.N, marginal_targets[1], counts.N),
    }
    if include_preflip_marginals:
        marginal_checks["alpha0"] = mean_z(tally.sum_alpha0 / counts.N, 0.0, counts.N)
        marginal_checks["beta0"] = mean_z(tally.sum_beta0 / counts.N, 0.0, counts.N)
    return SettingReport(
        a=a,
        b=b,
        counts=counts,
        pmf_emp=pmf_emp,
        pmf_qm=pmf_qm,
        z_scores=comparison.z_scores,
        chi2=comparison.chi2,
        chi2_pvalue=comparison.chi2_pvalue,
        tv_distance=comparison.tv,
        support_violation=comparison.support_violation,
        marginal_checks=marginal_checks,
        preflip=preflip,
        flip_identity_residual=flip_residual,
        resources={
            "pr_box_uses": tally.pr_box_uses / counts.N,
            "m_box_uses": tally.m_box_uses / counts.N,
            "cbits": tally.cbits / counts.N,
        },
    )


def preflip_block(a: Direction, b: Direction, cfg: ProtocolConfig, tally: Tally) -> Dict[str, float]:
    """Exact and claimed pre-flip correlation for the branch the M-box selects, with the empirical value."""
    sp = state_params(cfg.gamma)
    a_c, b_c, _, _ = canonicalize(a, b)
    pq = expected_pq(a_c.z, b_c.z, cfg.mbox_convention)
    exact, claim = preflip_correlation_oracle(a, b, sp, pq, cfg.ab_convention)
    empirical = tally.sum_product0 / tally.n
    return {
        "pq": pq,
        "exact": exact,
        "claimed": claim,
        "delta": exact - claim,
        "empirical": empirical,
        "z": mean_z(empirical, exact, tally.n),
    }


def expected_protocol_resources(cfg: ProtocolConfig) -> Dict[str, float]:
    if cfg.mode == "strict":
        return {"pr_box_uses": 1.0, "m_box_uses": 1.0, "cbits": 0.0}
    if cfg.mode == "resample_n":
        return {"pr_box_uses": 0.0, "m_box_uses": 1.0, "cbits": float(math.ceil(math.log2(cfg.resample_n)))}
    return {"pr_box_uses": 0.0, "m_box_uses": 1.0, "cbits": 0.0}


# ----------------------------------------------------------------------------
# Sweeps
# ----------------------------------------------------------------------------

def _protocol_chunk(a: Direction, b: Direction, cfg: ProtocolConfig, setting_index: int,
                    chunk_index: int, size: int) -> Tally:
    shared = RngStream(cfg.master_seed, (BLOCK_PROTOCOL, setting_index, chunk_index, "shared"))
    private = RngStream(cfg.master_seed, (BLOCK_PROTOCOL, setting_index, chunk_index, "private"))
    bundles = draw_bundle_batch(shared, cfg.c_hat, size, cfg.n_lambdas)
    return Tally.from_batch(run_protocol_batch(a, b, cfg, bundles, private))


def _calibration_chunk(pmf: JointPMF, master_seed: int, setting_index: int,
                       chunk_index: int, size: int) -> Tally:
    rng = RngStream(master_seed, (BLOCK_CALIBRATION, setting_index, chunk_index, "private"))
    alpha, beta = sample_qm_array(pmf, rng, size)
    tally = Tally.from_batch(BatchOutcome(alpha=alpha, beta=beta, alpha0=alpha, beta0=beta))
    return tally


def _singlet_chunk(a: Direction, b: Direction, master_seed: int, setting_index: int,
                   chunk_index: int, size: int) -> Tally:
    shared = RngStream(master_seed, (BLOCK_SINGLET, setting_index, chunk_index, "shared"))
    return Tally.from_batch(run_singlet_batch(a, b, draw_singlet_batch(shared, size)))


def _check_sweep_inputs(settings: Sequence[Setting], trials: int) -> None:
    if not settings:
        raise ValueError("A sweep needs at least one setting")
    if trials < MIN_SWEEP_TRIALS:
        raise ValueError(f"A sweep needs at least {MIN_SWEEP_TRIALS} trials per setting, got {trials}")


def run_calibration(settings: Sequence[Setting], cfg: ProtocolConfig, trials: int,
                    chunk_size: int, workers: int = 1, progress: bool = False,
                    engine: Optional[PolicyEngine] = None) -> Dict[str, Any]:
    """Same metrics with exact quantum samples in place of the protocol."""
    engine = engine or PolicyEngine()
    sp = state_params(cfg.gamma)
    pmfs = [joint_pmf_qm(a, b, sp) for a, b in settings]
    tasks = []
    for i, pmf in enumerate(pmfs):
        for j, size in enumerate(_chunk_sizes(trials, chunk_size)):
            tasks.append(((i, j), lambda pmf=pmf, i=i, j=j, size=size:
                          _calibration_chunk(pmf, cfg.master_seed, i, j, size)))
    tallies = _run_tasks(tasks, len(settings), workers, progress, "calibration")
    reports = [
        build_setting_report(a, b, tally, pmf, (sp.c * a.z, sp.c * b.z))
        for (a, b), tally, pmf in zip(settings, tallies, pmfs)
    ]
    return {
        "settings": [r.to_dict() for r in reports],
        "summary": engine.evaluate(BLOCK_CALIBRATION, reports),
    }


def run_sweep(cfg: ProtocolConfig, settings: Sequence[Setting], trials: int,
              chunk_size: int = 2 ** 16, workers: int = 1, calibrate: bool = True,
              progress: bool = False, config_echo: Optional[Dict[str, Any]] = None,
              engine: Optional[PolicyEngine] = None) -> SweepReport:
    """
    trials protocol runs per setting, compared with the quantum target.

    Any failure propagates; no partial report is returned.
    """
    _check_sweep_inputs(settings, trials)
    engine = engine or PolicyEngine()
    sp = state_params(cfg.gamma)
    logger.info(f"Sweep started: {len(settings)} settings x {trials} trials, mode={cfg.mode}, gamma={cfg.gamma}")

    tasks = []
    for i, (a, b) in enumerate(settings):
        for j, size in enumerate(_chunk_sizes(trials, chunk_size)):
            tasks.append(((i, j), lambda a=a, b=b, i=i, j=j, size=size:
                          _protocol_chunk(a, b, cfg, i, j, size)))
    tallies = _run_tasks(tasks, len(settings), workers, progress, "protocol")

    reports = []
    for (a, b), tally in zip(settings, tallies):
        reports.append(build_setting_report(
            a, b, tally,
            pmf_qm=joint_pmf_qm(a, b, sp),
            marginal_targets=(sp.c * a.z, sp.c * b.z),
            preflip=preflip_block(a, b, cfg, tally),
            flip_residual=flip_identity_residual(a, b, sp, cfg.ab_convention, cfg.mbox_convention),
            include_preflip_marginals=True,
        ))
    summary = engine.evaluate(BLOCK_PROTOCOL, reports, expected_protocol_resources(cfg))
    logger.info(f"Sweep finished: max|z|={summary['max_abs_z']:.3f}, passed={summary['passed']}")

    calibration = None
    if calibrate:
        calibration = run_calibration(settings, cfg, trials, chunk_size, workers, progress, engine)
        logger.info(f"Calibration finished: passed={calibration['summary']['passed']}")

    return SweepReport(
        config=config_echo if config_echo is not None else cfg.to_dict(),
        settings=reports,
        summary=summary,
        calibration=calibration,
    )


def alternative_conventions(cfg: ProtocolConfig) -> ProtocolConfig:
    swap = {"corrected": "literal", "literal": "corrected"}
    return replace(cfg, ab_convention=swap[cfg.ab_convention], mbox_convention=swap[cfg.mbox_convention])


def convention_comparison(cfg: ProtocolConfig, settings: Sequence[Setting], trials: int,
                          chunk_size: int = 2 ** 16, workers: int = 1,
                          progress: bool = False) -> Dict[str, Any]:
    """The same sweep with both conventions switched; reported beside the main result."""
    alt = alternative_conventions(cfg)
    logger.info(f"Convention comparison: ab={alt.ab_convention}, mbox={alt.mbox_convention}")
    report = run_sweep(alt, settings, trials, chunk_size, workers, calibrate=False, progress=progress)
    return {
        "ab_convention": alt.ab_convention,
        "mbox_convention": alt.mbox_convention,
        "settings": [s.to_dict() for s in report.settings],
        "summary": report.summary,
    }


def run_baseline_sweep(settings: Sequence[Setting], trials: int, master_seed: int,
                       chunk_size: int = 2 ** 16, workers: int = 1, progress: bool = False,
                       config_echo: Optional[Dict[str, Any]] = None,
                       engine: Optional[PolicyEngine] = None) -> SweepReport:
    """Singlet baseline against 1/4 (1 - alpha beta a.b)."""
    _check_sweep_inputs(settings, trials)
    engine = engine or PolicyEngine()
    logger.info(f"Baseline sweep started: {len(settings)} settings x {trials} trials")
    tasks = []
    for i, (a, b) in enumerate(settings):
        for j, size in enumerate(_chunk_sizes(trials, chunk_size)):
            tasks.append(((i, j), lambda a=a, b=b, i=i, j=j, size=size:
                          _singlet_chunk(a, b, master_seed, i, j, size)))
    tallies = _run_tasks(tasks, len(settings), workers, progress, "singlet")
    reports = [
        build_setting_report(a, b, tally, singlet_pmf(a, b), (0.0, 0.0))
        for (a, b), tally in zip(settings, tallies)
    ]
    summary = engine.evaluate(BLOCK_SINGLET, reports)
    logger.info(f"Baseline sweep finished: max|z|={summary['max_abs_z']:.3f}, passed={summary['passed']}")
    return SweepReport(
        config=config_echo if config_echo is not None else {"master_seed": master_seed, "trials": trials},
        settings=reports,
        summary=summary,
    )


# ----------------------------------------------------------------------------
# Single setting through the per-run path
# ----------------------------------------------------------------------------

def simulate_setting(a: Direction, b: Direction, cfg: ProtocolConfig, trials: int,
                     chunk_size: int = 2 ** 16,
                     on_transcript: Optional[Callable[[int, Dict[str, Any]], None]] = None) -> SettingReport:
    """
    trials runs of run_protocol at one setting, each with its own transcript.

    on_transcript(run_index, transcript_dict) is called after every run.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    sp = state_params(cfg.gamma)
    tally = Tally()
    run_index = 0
    for chunk_index, size in enumerate(_chunk_sizes(trials, chunk_size)):
        shared = RngStream(cfg.master_seed, ("simulate", 0, chunk_index, "shared"))
        private = RngStream(cfg.master_seed, ("simulate", 0, chunk_index, "private"))
        for _ in range(size):
            bundle = draw_bundle(shared, cfg.c_hat, cfg.n_lambdas)
            record = execute_run(a, b, cfg, bundle, private)
            t = record.transcript
            tally.add_run(record.outcome.alpha, record.outcome.beta,
                          record.preflip.alpha, record.preflip.beta,
                          t.pr_box_uses, t.m_box_uses, t.cbits)
            if on_transcript is not None:
                on_transcript(run_index, t.to_dict())
            run_index += 1
        logger.debug(f"simulate: chunk {chunk_index} done ({size} runs)")
    return build_setting_report(
        a, b, tally,
        pmf_qm=joint_pmf_qm(a, b, sp),
        marginal_targets=(sp.c * a.z, sp.c * b.z),
        preflip=preflip_block(a, b, cfg, tally),
        flip_residual=flip_identity_residual(a, b, sp, cfg.ab_convention, cfg.mbox_convention),
        include_preflip_marginals=True,
    )
