#app/models/models.py

# Data models for directions, carriers, shared randomness, transcripts and reports.
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

UNIT_TOLERANCE = 1e-12
PMF_TOLERANCE = 1e-12

# Fixed global cell order for every pmf, count table, report and file
CELL_LABELS = ("pp", "pm", "mp", "mm")
CELL_OUTCOMES = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def _check_finite(name: str, *values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise ValueError(f"{name} components must be finite, got {values}")


# Unit vector in R^3: a measurement setting or an auxiliary direction
@dataclass(frozen=True)
class Direction:
    x: float  # x component
    y: float  # y component
    z: float  # z component

    def __post_init__(self):
        _check_finite("Direction", self.x, self.y, self.z)
        norm = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            raise ValueError(f"Direction must be a unit vector, got norm {norm!r}")

    @classmethod
    def from_components(cls, components, normalize: bool = False) -> "Direction":
        x, y, z = (float(c) for c in components)
        if normalize:
            norm = math.sqrt(x * x + y * y + z * z)
            if norm == 0.0:
                raise ValueError("Cannot normalize the zero vector")
            x, y, z = x / norm, y / norm, z / norm
        return cls(x, y, z)

    def components(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def dot(self, other: "Direction") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def __neg__(self) -> "Direction":
        return Direction(-self.x, -self.y, -self.z)

    def to_list(self) -> List[float]:
        return [self.x, self.y, self.z]


# Real 4-vector; v0 holds the fourth ("imaginary") component
@dataclass(frozen=True)
class Carrier4:
    v1: float  # first spatial component
    v2: float  # second spatial component
    v3: float  # third spatial component
    v0: float  # fourth ("zeroth") component
    euclidean_norm: float = field(init=False, repr=False, compare=False)  # cached ||.||_2

    def __post_init__(self):
        _check_finite("Carrier4", self.v1, self.v2, self.v3, self.v0)
        norm = math.sqrt(self.v1 * self.v1 + self.v2 * self.v2 + self.v3 * self.v3 + self.v0 * self.v0)
        object.__setattr__(self, "euclidean_norm", norm)

    @classmethod
    def from_components(cls, components, normalize: bool = False) -> "Carrier4":
        v1, v2, v3, v0 = (float(c) for c in components)
        if normalize:
            norm = math.sqrt(v1 * v1 + v2 * v2 + v3 * v3 + v0 * v0)
            if norm == 0.0:
                raise ValueError("Cannot normalize the zero carrier")
            v1, v2, v3, v0 = v1 / norm, v2 / norm, v3 / norm, v0 / norm
        return cls(v1, v2, v3, v0)

    def components(self) -> Tuple[float, float, float, float]:
        return (self.v1, self.v2, self.v3, self.v0)

    def is_unit(self) -> bool:
        return abs(self.euclidean_norm - 1.0) <= UNIT_TOLERANCE

    def to_list(self) -> List[float]:
        return [self.v1, self.v2, self.v3, self.v0]


# Entanglement parameter of cos(g)|00> + sin(g)|11>
@dataclass(frozen=True)
class StateParam:
    gamma: float  # radians, in (0, pi/4]
    c: float  # cos(2 gamma)
    s: float  # sin(2 gamma)

    def __post_init__(self):
        if abs(self.c * self.c + self.s * self.s - 1.0) > UNIT_TOLERANCE:
            raise ValueError(f"c^2 + s^2 must equal 1, got c={self.c!r}, s={self.s!r}")


# Four-cell outcome distribution in the order (+,+), (+,-), (-,+), (-,-)
@dataclass(frozen=True)
class JointPMF:
    p_pp: float  # P(alpha=+1, beta=+1)
    p_pm: float  # P(alpha=+1, beta=-1)
    p_mp: float  # P(alpha=-1, beta=+1)
    p_mm: float  # P(alpha=-1, beta=-1)

    def __post_init__(self):
        cells = self.cells()
        _check_finite("JointPMF", *cells)
        for value in cells:
            if value < 0.0 or value > 1.0:
                raise ValueError(f"JointPMF entries must lie in [0, 1], got {cells}")
        if abs(sum(cells) - 1.0) > PMF_TOLERANCE:
            raise ValueError(f"JointPMF entries must sum to 1, got {sum(cells)!r}")

    def cells(self) -> Tuple[float, float, float, float]:
        return (self.p_pp, self.p_pm, self.p_mp, self.p_mm)

    def to_dict(self) -> Dict[str, float]:
        return dict(zip(CELL_LABELS, self.cells()))


@dataclass(frozen=True)
class OutcomePair:
    alpha: int  # Alice's output, +1 or -1
    beta: int  # Bob's output, +1 or -1

    def __post_init__(self):
        if self.alpha not in (1, -1) or self.beta not in (1, -1):
            raise ValueError(f"Outcomes must be +1 or -1, got ({self.alpha}, {self.beta})")

    @property
    def product(self) -> int:
        return self.alpha * self.beta


# Auxiliary unit vectors and flip probabilities for a canonicalized setting
@dataclass(frozen=True)
class AuxVectors:
    A_hat: Direction  # Alice's auxiliary direction
    B_hat: Direction  # Bob's auxiliary direction
    f_a: float  # Alice's flip probability c * a_z'
    f_b: float  # Bob's flip probability c * b_z'


# Shared randomness drawn once per protocol run
@dataclass(frozen=True)
class SharedBundle:
    mu: Tuple[Carrier4, ...]  # five uniform unit vectors on S^3
    lambda0: Carrier4  # first shared candidate on S^3
    lambda1: Carrier4  # second shared candidate on S^3
    c_hat: Carrier4  # fixed unit vector, not redrawn per run
    r_flip: float  # shared flip threshold in [0, 1)
    box_coins: Tuple[int, int]  # (M-box coin, PR-box coin)
    extra_lambdas: Tuple[Carrier4, ...] = ()  # further candidates for resample_n mode

    def __post_init__(self):
        if len(self.mu) != 5:
            raise ValueError(f"SharedBundle needs five mu vectors, got {len(self.mu)}")
        for carrier in (*self.mu, self.lambda0, self.lambda1, self.c_hat, *self.extra_lambdas):
            if not carrier.is_unit():
                raise ValueError(f"Sphere-valued bundle members must be unit, got norm {carrier.euclidean_norm!r}")
        if not 0.0 <= self.r_flip < 1.0:
            raise ValueError(f"r_flip must lie in [0, 1), got {self.r_flip!r}")
        if len(self.box_coins) != 2 or any(coin not in (0, 1) for coin in self.box_coins):
            raise ValueError(f"box_coins must be two bits, got {self.box_coins}")

    @property
    def lambdas(self) -> Tuple[Carrier4, ...]:
        return (self.lambda0, self.lambda1, *self.extra_lambdas)


# Shared randomness for one singlet-baseline run
@dataclass(frozen=True)
class SingletBundle:
    lambda0: Direction  # first shared candidate on S^2
    lambda1: Direction  # second shared candidate on S^2
    pr_coin: int  # PR-box output coin

    def __post_init__(self):
        if self.pr_coin not in (0, 1):
            raise ValueError(f"pr_coin must be a bit, got {self.pr_coin}")


# Per-run record of resource consumption
@dataclass
class RunTranscript:
    mode: str  # execution mode the run was made in
    pr_box_uses: int = 0  # PR-box invocations
    m_box_uses: int = 0  # M-box invocations
    cbits: int = 0  # classical bits communicated (resample_n only)
    shared_draws: List[str] = field(default_factory=list)  # labels of shared randomness consumed
    uses: List[str] = field(default_factory=list)  # resource labels in order of use
    notes: List[str] = field(default_factory=list)  # convention flags in force
    violations: List[str] = field(default_factory=list)  # contract violations found at close
    closed: bool = False  # set once the run has finished

    @property
    def valid(self) -> bool:
        return self.closed and not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "pr_box_uses": self.pr_box_uses,
            "m_box_uses": self.m_box_uses,
            "cbits": self.cbits,
            "shared_draws": list(self.shared_draws),
            "uses": list(self.uses),
            "notes": list(self.notes),
            "violations": list(self.violations),
            "closed": self.closed,
        }


# Configuration of one protocol execution
@dataclass(frozen=True)
class ProtocolConfig:
    gamma: float  # state parameter, radians
    mode: str = "strict"  # strict | ideal | resample_n
    resample_n: Optional[int] = None  # candidate count for resample_n mode
    ab_convention: str = "corrected"  # y-sign of the auxiliary vectors
    mbox_convention: str = "corrected"  # M-box output-agreement predicate
    flip_rule: str = "correlated"  # correlated | independent
    c_hat: Carrier4 = Carrier4(0.0, 0.0, 0.0, 1.0)  # fixed shared unit vector
    max_rejection_iterations: int = 10 ** 6  # iteration cap of the biased sampler
    master_seed: int = 0  # root of every derived stream

    def __post_init__(self):
        if self.mode not in ("strict", "ideal", "resample_n"):
            raise ValueError(f"Invalid mode: {self.mode}")
        if self.mode == "resample_n":
            if self.resample_n is None or self.resample_n < 2:
                raise ValueError(f"resample_n mode needs n >= 2, got {self.resample_n}")
        if self.ab_convention not in ("corrected", "literal"):
            raise ValueError(f"Invalid ab_convention: {self.ab_convention}")
        if self.mbox_convention not in ("corrected", "literal"):
            raise ValueError(f"Invalid mbox_convention: {self.mbox_convention}")
        if self.flip_rule not in ("correlated", "independent"):
            raise ValueError(f"Invalid flip_rule: {self.flip_rule}")
        if not self.c_hat.is_unit():
            raise ValueError("c_hat must be a unit carrier")
        if self.max_rejection_iterations < 1:
            raise ValueError("max_rejection_iterations must be positive")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")

    @property
    def n_lambdas(self) -> int:
        return self.resample_n if self.mode == "resample_n" else 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma,
            "mode": self.mode,
            "resample_n": self.resample_n,
            "ab_convention": self.ab_convention,
            "mbox_convention": self.mbox_convention,
            "flip_rule": self.flip_rule,
            "c_hat": self.c_hat.to_list(),
            "max_rejection_iterations": self.max_rejection_iterations,
            "master_seed": self.master_seed,
        }


# Outcome counts in the global cell order
@dataclass(frozen=True)
class CellCounts:
    n_pp: int  # count of (+,+)
    n_pm: int  # count of (+,-)
    n_mp: int  # count of (-,+)
    n_mm: int  # count of (-,-)
    N: int  # total runs

    def __post_init__(self):
        counts = self.counts()
        if any(n < 0 for n in counts):
            raise ValueError(f"Counts must be non-negative, got {counts}")
        if sum(counts) != self.N:
            raise ValueError(f"Counts {counts} do not sum to N={self.N}")

    def counts(self) -> Tuple[int, int, int, int]:
        return (self.n_pp, self.n_pm, self.n_mp, self.n_mm)

    def to_dict(self) -> Dict[str, int]:
        out = dict(zip(CELL_LABELS, self.counts()))
        out["N"] = self.N
        return out


# Result of one measurement setting in a sweep
@dataclass
class SettingReport:
    a: Direction  # Alice's setting
    b: Direction  # Bob's setting
    counts: CellCounts  # raw outcome counts
    pmf_emp: JointPMF  # counts / N
    pmf_qm: JointPMF  # reference pmf (quantum target or singlet)
    z_scores: Tuple[float, ...]  # per-cell z, +inf sentinel on support violation
    chi2: float  # chi-square over cells with positive reference mass
    chi2_pvalue: float  # upper-tail p-value of chi2
    tv_distance: float  # total variation distance
    support_violation: bool  # empirical mass on a reference-zero cell
    marginal_checks: Dict[str, float]  # z of <alpha>, <beta> against their targets
    preflip: Optional[Dict[str, float]] = None  # exact / claimed / delta / empirical / z
    flip_identity_residual: Optional[float] = None  # branch formula minus C(a, b)
    resources: Dict[str, float] = field(default_factory=dict)  # per-run resource averages

    @property
    def max_abs_z(self) -> float:
        return max(abs(z) for z in self.z_scores)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "a": self.a.to_list(),
            "b": self.b.to_list(),
            "counts": self.counts.to_dict(),
            "pmf_emp": self.pmf_emp.to_dict(),
            "pmf_qm": self.pmf_qm.to_dict(),
            "z_scores": dict(zip(CELL_LABELS, self.z_scores)),
            "chi2": self.chi2,
            "chi2_pvalue": self.chi2_pvalue,
            "tv_distance": self.tv_distance,
            "support_violation": self.support_violation,
            "marginal_checks": dict(self.marginal_checks),
            "preflip": dict(self.preflip) if self.preflip is not None else None,
            "flip_identity_residual": self.flip_identity_residual,
            "resources": dict(self.resources),
        }


# Result of a full sweep over settings
@dataclass
class SweepReport:
    config: Dict[str, Any]  # resolved configuration echo
    settings: List[SettingReport]  # per-setting results
    summary: Dict[str, Any]  # thresholds and pass flags
    calibration: Optional[Dict[str, Any]] = None  # same metrics with the QM sampler substituted
    convention_comparison: Optional[Dict[str, Any]] = None  # alternative-convention rerun

    @property
    def passed(self) -> bool:
        if not self.summary.get("passed", False):
            return False
        if self.calibration is not None and not self.calibration["summary"].get("passed", False):
            return False
        return True

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "config": self.config,
            "settings": [s.to_dict() for s in self.settings],
            "calibration": self.calibration,
            "summary": self.summary,
        }
        if self.convention_comparison is not None:
            out["convention_comparison"] = self.convention_comparison
        return out


# Resolved command-line configuration
@dataclass
class CliConfig:
    subcommand: str  # simulate | sweep | verify-components | baseline
    gamma: float = math.pi / 8  # state parameter, radians
    mode: str = "strict"  # strict | ideal | resample_n
    resample_n: Optional[int] = None  # candidate count for resample_n
    ab_convention: str = "corrected"
    mbox_convention: str = "corrected"
    flip_rule: str = "correlated"
    settings_file: Optional[str] = None  # JSON array of {a: [..], b: [..]}
    random_settings: Optional[int] = None  # number of random settings K
    setting_a: Optional[Direction] = None  # single setting for simulate
    setting_b: Optional[Direction] = None
    trials: int = 100_000  # runs per setting N
    master_seed: int = 0
    output_path: Optional[str] = None
    output_format: str = "json"  # json | csv
    workers: int = 1
    chunk_size: int = 2 ** 16
    max_rejection_iterations: int = 10 ** 6
    compare_conventions: bool = False
    calibrate: bool = True
    transcript_log: Optional[str] = None
    progress: bool = False
    sources: Dict[str, str] = field(default_factory=dict)  # winning source per resolved key

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(
            gamma=self.gamma,
            mode=self.mode,
            resample_n=self.resample_n,
            ab_convention=self.ab_convention,
            mbox_convention=self.mbox_convention,
            flip_rule=self.flip_rule,
            max_rejection_iterations=self.max_rejection_iterations,
            master_seed=self.master_seed,
        )

    def report_config(self) -> Dict[str, Any]:
        """Configuration echo for reports; execution-only keys are left out."""
        return {
            "subcommand": self.subcommand,
            "gamma": self.gamma,
            "mode": self.mode,
            "resample_n": self.resample_n,
            "ab_convention": self.ab_convention,
            "mbox_convention": self.mbox_convention,
            "flip_rule": self.flip_rule,
            "settings_file": self.settings_file,
            "random_settings": self.random_settings,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "chunk_size": self.chunk_size,
            "max_rejection_iterations": self.max_rejection_iterations,
            "compare_conventions": self.compare_conventions,
            "calibrate": self.calibrate,
        }
