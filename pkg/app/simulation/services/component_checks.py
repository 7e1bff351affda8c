"""
Component Verification Service

Runs the exact and analytic checks behind the simulator, each producing a CheckResult:
box truth tables, unit norms of the auxiliary vectors, the flip closed form, the
flip-matching identity under the configured conventions, closed-form vs density-matrix
agreement, canonicalization symmetry, the distributed-sign identity over every PR-box
input, and the Monte Carlo properties of the shared randomness (sign moments, biased
sampler acceptance rate and sign correlation).
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from app.models.models import CELL_OUTCOMES, Carrier4, Direction
from app.simulation.errors import SimulationError
from app.simulation.geom import RngStream, dot, norm, rejection_sample_biased_array, sample_sphere_array
from app.simulation.protocol import (
    FLIP_IDENTITY_TOLERANCE,
    aux_components,
    canonicalize,
    flip_closed_form,
    flip_identity_residual,
    signs_from_pr,
)
from app.simulation.quantum import (
    ORACLE_TOLERANCE,
    joint_pmf_oracle,
    joint_pmf_qm,
    max_cell_difference,
    singlet_pmf,
    singlet_pmf_oracle,
    state_params,
)
from app.simulation.resources import (
    draw_bundle_batch,
    m_box,
    mbox_predicate,
    pr_box,
    pr_box_array,
)

logger = logging.getLogger(__name__)

CHECK_EXACT = "exact"
CHECK_STATISTICAL = "statistical"

BIASED_ACCEPTANCE_RATE = 4.0 / (3.0 * math.pi)  # E|lambda_1| on S^3
DEFAULT_SAMPLE_COUNT = 10_000
DEFAULT_SAMPLER_PAIRS = 20


@dataclass
class CheckResult:
    """Result of one component check."""
    name: str
    passed: bool
    kind: str = CHECK_EXACT  # exact | statistical
    details: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "kind": self.kind,
            "details": self.details,
            "error": self.error,
        }


@dataclass
class VerificationReport:
    config: Dict[str, Any]
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "checks": [c.to_dict() for c in self.checks],
            "summary": {
                "n_checks": len(self.checks),
                "failed": [c.name for c in self.checks if not c.passed],
                "passed": self.passed,
            },
        }


def _random_directions(rng: RngStream, count: int) -> List[Direction]:
    return [Direction.from_components(row, normalize=True) for row in sample_sphere_array(3, rng, count)]


class ComponentVerifier:
    """
    Coordinates the component checks.

    Exact checks use sample_count random inputs; statistical checks use trials draws and
    a 4-sigma band. The biased-sampler check repeats over sampler_pairs carrier pairs.
    """

    def __init__(self, gamma: float, master_seed: int = 0, trials: int = 100_000,
                 sample_count: int = DEFAULT_SAMPLE_COUNT, ab_convention: str = "corrected",
                 mbox_convention: str = "corrected", sampler_pairs: int = DEFAULT_SAMPLER_PAIRS):
        self.sp = state_params(gamma)
        self.master_seed = master_seed
        self.trials = trials
        self.sample_count = sample_count
        self.sampler_pairs = sampler_pairs
        self.ab_convention = ab_convention
        self.mbox_convention = mbox_convention

    def config(self) -> Dict[str, Any]:
        return {
            "gamma": self.sp.gamma,
            "master_seed": self.master_seed,
            "trials": self.trials,
            "sample_count": self.sample_count,
            "sampler_pairs": self.sampler_pairs,
            "ab_convention": self.ab_convention,
            "mbox_convention": self.mbox_convention,
        }

    def _rng(self, name: str) -> RngStream:
        return RngStream(self.master_seed, ("verify", name))

    def checks(self) -> List[Callable[[], CheckResult]]:
        return [
            self.check_pr_box,
            self.check_m_box,
            self.check_aux_unit_norms,
            self.check_flip_closed_form,
            self.check_flip_identity,
            self.check_quantum_oracle,
            self.check_canonicalization,
            self.check_distributed_sign,
            self.check_sign_moments,
            self.check_biased_sampler,
        ]

    def run_all(self) -> VerificationReport:
        report = VerificationReport(config=self.config())
        for check in self.checks():
            try:
                result = check()
            except SimulationError as e:
                logger.error(f"Component check {check.__name__} raised: {e}")
                result = CheckResult(name=check.__name__.replace("check_", ""), passed=False, error=str(e))
            level = logging.INFO if result.passed else logging.WARNING
            logger.log(level, f"Component check '{result.name}': {'pass' if result.passed else 'FAIL'}")
            report.checks.append(result)
        return report

    # ------------------------------------------------------------------
    # Boxes
    # ------------------------------------------------------------------

    def check_pr_box(self) -> CheckResult:
        table_ok = True
        for x, y, coin in itertools.product((0, 1), repeat=3):
            a, b = pr_box(x, y, coin)
            if a ^ b != x & y or a != coin:
                table_ok = False
        rng = self._rng("pr_box")
        coins = rng.bits(self.trials)
        # 4 sigma on the +/-1 mean; equivalently 4 / (2 sqrt N) on the bit mean
        bound = 4.0 / math.sqrt(self.trials)
        max_bias = 0.0
        for x, y in itertools.product((0, 1), repeat=2):
            a, b = pr_box_array(np.full(self.trials, x), np.full(self.trials, y), coins)
            for bits in (a, b):
                max_bias = max(max_bias, abs(float(np.mean(1 - 2 * bits.astype(np.int64)))))
        return CheckResult(
            name="pr_box",
            passed=table_ok and max_bias <= bound,
            kind=CHECK_STATISTICAL,
            details={"truth_table": table_ok, "max_marginal_bias": max_bias, "bound": bound},
        )

    def check_m_box(self) -> CheckResult:
        inputs = [(0.2, 0.7), (0.7, 0.2), (0.5, 0.5), (0.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, 0.0)]
        failures = []
        for convention in ("corrected", "literal"):
            for x, y in inputs:
                expected = int(x > y) if convention == "corrected" else int(x <= y)
                for coin in (0, 1):
                    m, n = m_box(x, y, coin, convention)
                    if m ^ n != expected or m != coin or mbox_predicate(x, y, convention) != expected:
                        failures.append({"convention": convention, "x": x, "y": y, "coin": coin})
        return CheckResult(name="m_box", passed=not failures, details={"failures": failures})

    # ------------------------------------------------------------------
    # Auxiliary vectors and flips
    # ------------------------------------------------------------------

    def _canonical_pairs(self, name: str):
        rng = self._rng(name)
        directions = _random_directions(rng, 2 * self.sample_count)
        for a, b in zip(directions[0::2], directions[1::2]):
            a_c, b_c, _, _ = canonicalize(a, b)
            yield a_c, b_c

    def check_aux_unit_norms(self) -> CheckResult:
        max_dev = 0.0
        for a_c, b_c in self._canonical_pairs("aux_norms"):
            for d in (a_c, b_c):
                components = aux_components(d, self.sp, self.ab_convention)
                max_dev = max(max_dev, abs(math.sqrt(sum(x * x for x in components)) - 1.0))
        return CheckResult(
            name="aux_unit_norms",
            passed=max_dev <= 1e-12,
            details={"max_norm_deviation": max_dev, "samples": self.sample_count},
        )

    def check_flip_closed_form(self) -> CheckResult:
        cases = [
            ((0.5, 0.2, 0.4), (0.2, 0.4, 0.5)),
            ((1.0, 0.3, 0.3), (0.3, 0.3, 1.0)),
            ((-1.0, 0.0, 0.0), (0.0, 0.0, -1.0)),
            ((0.5, 0.4, 0.2), (0.4, 0.2, 0.5)),
        ]
        failures = []
        for args, expected in cases:
            got = flip_closed_form(*args)
            if any(abs(g - e) > 1e-12 for g, e in zip(got, expected)):
                failures.append({"input": list(args), "got": list(got), "expected": list(expected)})
        return CheckResult(name="flip_closed_form", passed=not failures, details={"failures": failures})

    def check_flip_identity(self) -> CheckResult:
        max_residual = 0.0
        for a_c, b_c in self._canonical_pairs("flip_identity"):
            residual = abs(flip_identity_residual(a_c, b_c, self.sp, self.ab_convention, self.mbox_convention))
            max_residual = max(max_residual, residual)
        return CheckResult(
            name="flip_identity",
            passed=max_residual <= FLIP_IDENTITY_TOLERANCE,
            details={
                "max_residual": max_residual,
                "tolerance": FLIP_IDENTITY_TOLERANCE,
                "ab_convention": self.ab_convention,
                "mbox_convention": self.mbox_convention,
            },
        )

    # ------------------------------------------------------------------
    # Quantum targets
    # ------------------------------------------------------------------

    def check_quantum_oracle(self) -> CheckResult:
        rng = self._rng("oracle")
        count = self.sample_count
        directions = _random_directions(rng, 2 * count)
        gammas = rng.random(count) * (math.pi / 4)
        max_gap = 0.0
        for a, b, g in zip(directions[0::2], directions[1::2], gammas):
            if g <= 0.0:
                continue
            sp = state_params(float(g))
            max_gap = max(max_gap, max_cell_difference(joint_pmf_qm(a, b, sp), joint_pmf_oracle(a, b, sp)))
            max_gap = max(max_gap, max_cell_difference(singlet_pmf(a, b), singlet_pmf_oracle(a, b)))
        return CheckResult(
            name="quantum_oracle",
            passed=max_gap <= ORACLE_TOLERANCE,
            details={"max_cell_difference": max_gap, "tolerance": ORACLE_TOLERANCE, "samples": count},
        )

    def check_canonicalization(self) -> CheckResult:
        rng = self._rng("canonicalize")
        directions = _random_directions(rng, 2 * self.sample_count)
        max_gap = 0.0
        for a, b in zip(directions[0::2], directions[1::2]):
            a_c, b_c, eta_a, eta_b = canonicalize(a, b)
            original = joint_pmf_qm(a, b, self.sp).cells()
            relabeled = joint_pmf_qm(a_c, b_c, self.sp).to_dict()
            for (alpha, beta), p in zip(CELL_OUTCOMES, original):
                key = ("p" if eta_a * alpha > 0 else "m") + ("p" if eta_b * beta > 0 else "m")
                max_gap = max(max_gap, abs(p - relabeled[key]))
        return CheckResult(
            name="canonicalization",
            passed=max_gap <= 1e-12,
            details={"max_cell_difference": max_gap, "samples": self.sample_count},
        )

    # ------------------------------------------------------------------
    # Distributed sign step
    # ------------------------------------------------------------------

    def check_distributed_sign(self) -> CheckResult:
        """Every sign pattern, candidate order and PR coin; covers all (c*, d, coin)."""
        seen = set()
        failures = []
        for su0, su1, sv0, sv1 in itertools.product((1, -1), repeat=4):
            for magnitudes in ((0.3, 0.7), (0.7, 0.3)):
                proj_u = np.array([su0 * magnitudes[0], su1 * magnitudes[1]])
                proj_v = np.array([sv0 * 0.5, sv1 * 0.4])
                c_star = int(abs(proj_u[1]) > abs(proj_u[0]))
                d = int(sv0 != sv1)
                for coin in (0, 1):
                    a_bit, b_bit = pr_box(c_star, d, coin)
                    alpha0, beta0 = signs_from_pr(a_bit, b_bit, proj_u, proj_v, c_star)
                    expected = (su1 if c_star else su0) * (sv1 if c_star else sv0)
                    if int(alpha0) * int(beta0) != expected:
                        failures.append({"c_star": c_star, "d": d, "coin": coin})
                    seen.add((c_star, d, coin))
        return CheckResult(
            name="distributed_sign",
            passed=not failures and len(seen) == 8,
            details={"combinations_covered": len(seen), "failures": failures},
        )

    # ------------------------------------------------------------------
    # Shared randomness
    # ------------------------------------------------------------------

    def check_sign_moments(self) -> CheckResult:
        rng = self._rng("sign_moments")
        bundles = draw_bundle_batch(rng, Carrier4(0.0, 0.0, 0.0, 1.0), self.trials)
        signs = bundles.signs().astype(np.int64)
        moments = (signs.T @ signs) / self.trials
        deviation = np.abs(moments - np.eye(5))
        bound = 4.0 / math.sqrt(self.trials)
        return CheckResult(
            name="sign_moments",
            passed=bool(deviation.max() <= bound),
            kind=CHECK_STATISTICAL,
            details={"max_deviation": float(deviation.max()), "bound": bound},
        )

    def check_biased_sampler(self) -> CheckResult:
        rng = self._rng("biased_sampler")
        pairs = self.sampler_pairs
        carriers = sample_sphere_array(4, rng, 2 * pairs)
        max_corr_z = 0.0
        total_attempts = 0
        total_accepted = 0
        for k in range(pairs):
            u, v = carriers[2 * k], carriers[2 * k + 1]
            lam, attempts = rejection_sample_biased_array(np.tile(u, (self.trials, 1)), rng)
            total_attempts += int(attempts.sum())
            total_accepted += self.trials
            product = np.where(dot(lam, u) >= 0.0, 1, -1) * np.where(dot(lam, v) >= 0.0, 1, -1)
            target = float(dot(u, v) / (norm(u) * norm(v)))
            se = math.sqrt(max(1.0 - target * target, 1e-300) / self.trials)
            max_corr_z = max(max_corr_z, abs(float(product.mean()) - target) / se)
        rate = total_accepted / total_attempts
        rate_se = math.sqrt(BIASED_ACCEPTANCE_RATE * (1.0 - BIASED_ACCEPTANCE_RATE) / total_attempts)
        rate_z = (rate - BIASED_ACCEPTANCE_RATE) / rate_se
        return CheckResult(
            name="biased_sampler",
            passed=max_corr_z <= 4.0 and abs(rate_z) <= 4.0,
            kind=CHECK_STATISTICAL,
            details={
                "max_correlation_z": max_corr_z,
                "acceptance_rate": rate,
                "expected_acceptance_rate": BIASED_ACCEPTANCE_RATE,
                "acceptance_z": rate_z,
                "pairs": pairs,
            },
        )
