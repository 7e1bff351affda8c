"""
Acceptance Policy Engine

Defines the pass/fail thresholds applied to a block of setting reports. A block is one of
- protocol: the simulator's own output compared with the quantum target
- calibration: exact quantum samples run through the same statistics
- singlet: the exactly solvable singlet baseline

Each policy bundles a per-cell |z| bound, a total-variation band, and the structural checks
(flip identity, per-run resource counts, marginals) relevant to its block kind. The engine
picks the highest-priority enabled policy for a kind and turns per-setting data into a
summary with one flag per threshold.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

from scipy.stats import norm

from app.models.models import SettingReport

logger = logging.getLogger(__name__)

BLOCK_PROTOCOL = "protocol"
BLOCK_CALIBRATION = "calibration"
BLOCK_SINGLET = "singlet"
VALID_BLOCK_KINDS = (BLOCK_PROTOCOL, BLOCK_CALIBRATION, BLOCK_SINGLET)


@dataclass
class AcceptancePolicy:
    """
    Thresholds for one block kind.

    Attributes:
        name: Unique identifier for the policy
        description: Human-readable description
        kind: Block kind the policy applies to
        enabled: Whether this policy is active
        max_abs_z: Largest accepted per-cell |z|
        tv_sigma: Multiplier of the per-cell standard error in the TV band
        max_marginal_z: Largest accepted |z| of a marginal check
        check_flip_identity: Require |flip identity residual| <= flip_identity_tolerance
        flip_identity_tolerance: Tolerance of the flip identity
        expected_resources: Exact per-run resource averages required, if any
        priority: Higher priority policies are evaluated first
    """
    name: str
    description: str
    kind: str
    enabled: bool = True

    max_abs_z: float = 4.0
    tv_sigma: float = 4.0
    max_marginal_z: float = 4.0

    check_flip_identity: bool = False
    flip_identity_tolerance: float = 1e-12
    expected_resources: Optional[Dict[str, float]] = None

    priority: int = 0


# ============================================================================
# Pre-defined Policies
# ============================================================================

STRICT_PROTOCOL_POLICY = AcceptancePolicy(
    name="protocol_4sigma",
    description="Protocol output vs quantum target: |z| <= 4 per cell, TV in the 4-sigma band, exact flip identity",
    kind=BLOCK_PROTOCOL,
    check_flip_identity=True,
    priority=50,
)

CALIBRATION_POLICY = AcceptancePolicy(
    name="calibration_4sigma",
    description="Exact quantum samples through the same statistics: must pass |z| <= 4 and the TV band",
    kind=BLOCK_CALIBRATION,
    priority=50,
)

SINGLET_POLICY = AcceptancePolicy(
    name="singlet_4sigma",
    description="Singlet baseline: |z| <= 4 per cell, zero marginals, one PR-box per run",
    kind=BLOCK_SINGLET,
    expected_resources={"pr_box_uses": 1.0, "m_box_uses": 0.0},
    priority=50,
)


def gaussian_two_sided_tail(z: float) -> float:
    """P(|Z| > z) for a standard normal."""
    return float(2.0 * norm.sf(abs(z)))


# ============================================================================
# Policy Engine
# ============================================================================

class PolicyEngine:
    """
    Selects and applies acceptance policies by block kind.

    Policies are evaluated in priority order (highest first); the first enabled policy
    whose kind matches is used.
    """

    DEFAULT_POLICIES = [
        STRICT_PROTOCOL_POLICY,
        CALIBRATION_POLICY,
        SINGLET_POLICY,
    ]

    def __init__(self, policies: Optional[List[AcceptancePolicy]] = None):
        self.policies = list(policies) if policies is not None else self.DEFAULT_POLICIES.copy()
        self.policies.sort(key=lambda p: p.priority, reverse=True)
        logger.debug(f"PolicyEngine initialized with {len(self.policies)} policies")

    def select_policy(self, kind: str) -> AcceptancePolicy:
        if kind not in VALID_BLOCK_KINDS:
            raise ValueError(f"Invalid block kind: {kind}")
        for policy in self.policies:
            if policy.enabled and policy.kind == kind:
                logger.debug(f"Selected policy '{policy.name}' for block kind '{kind}'")
                return policy
        raise ValueError(f"No enabled acceptance policy for block kind '{kind}'")

    def get_policy_metadata(self, policy: AcceptancePolicy) -> Dict[str, Any]:
        return {
            "policy_selected": policy.name,
            "policy_description": policy.description,
            "max_abs_z": policy.max_abs_z,
            "tv_sigma": policy.tv_sigma,
            "max_marginal_z": policy.max_marginal_z,
            "check_flip_identity": policy.check_flip_identity,
            "flip_identity_tolerance": policy.flip_identity_tolerance,
            "expected_resources": dict(policy.expected_resources) if policy.expected_resources else None,
        }

    def evaluate(self, kind: str, reports: Sequence[SettingReport],
                 expected_resources: Optional[Dict[str, float]] = None) -> Dict[str, Any]:
        """
        Summarize a block and flag every threshold.

        expected_resources overrides the policy's own (protocol blocks depend on the mode).
        The summary is recomputable from the per-setting data alone.
        """
        # stats imports this module for the block kinds
        from app.simulation.stats import tv_confidence

        policy = self.select_policy(kind)
        if not reports:
            raise ValueError("Cannot evaluate an empty block")
        resources_required = expected_resources if expected_resources is not None else policy.expected_resources

        max_abs_z = max(r.max_abs_z for r in reports)
        tv_values = [r.tv_distance for r in reports]
        tv_exceeded = [
            index for index, r in enumerate(reports)
            if r.tv_distance > tv_confidence(r.counts.N, r.pmf_qm, policy.tv_sigma)
        ]
        marginal_values = [abs(z) for r in reports for z in r.marginal_checks.values()]
        max_marginal_z = max(marginal_values) if marginal_values else 0.0

        checks = {
            "cell_z": max_abs_z <= policy.max_abs_z,
            "tv_band": not tv_exceeded,
            "support": not any(r.support_violation for r in reports),
            "marginals": max_marginal_z <= policy.max_marginal_z,
        }

        summary: Dict[str, Any] = {
            "n_settings": len(reports),
            "max_abs_z": max_abs_z,
            "mean_tv": sum(tv_values) / len(tv_values),
            "max_tv": max(tv_values),
            "tv_band_exceeded": tv_exceeded,
            "min_chi2_pvalue": min(r.chi2_pvalue for r in reports),
            "max_marginal_z": max_marginal_z,
        }

        if policy.check_flip_identity:
            residuals = [abs(r.flip_identity_residual) for r in reports if r.flip_identity_residual is not None]
            max_residual = max(residuals) if residuals else 0.0
            summary["max_flip_identity_residual"] = max_residual
            checks["flip_identity"] = max_residual <= policy.flip_identity_tolerance

        if resources_required:
            mismatches = [
                index for index, r in enumerate(reports)
                if any(r.resources.get(key) != value for key, value in resources_required.items())
            ]
            summary["resource_mismatches"] = mismatches
            checks["resources"] = not mismatches

        n_cells = 4 * len(reports)
        per_cell = gaussian_two_sided_tail(policy.max_abs_z)
        summary["bonferroni_note"] = (
            f"|z| <= {policy.max_abs_z:g} over {n_cells} cells; two-sided tail {per_cell:.3e} per cell, "
            f"family-wise false-alarm bound {min(1.0, n_cells * per_cell):.3e}"
        )
        summary["policy"] = self.get_policy_metadata(policy)
        summary["checks"] = checks
        summary["passed"] = all(checks.values())

        if not summary["passed"]:
            failed = [name for name, ok in checks.items() if not ok]
            logger.warning(f"Block '{kind}' failed thresholds: {failed}")
        return summary
