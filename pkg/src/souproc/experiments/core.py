"""Scenario plumbing: pass rules, per-replicate records, the replicate runner."""
from __future__ import annotations

import math
import operator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..model import ValidatedConfig
from ..rng import replicate_seed

CONDITIONINGS = ("none", "survival", "extinction")


class ReplicateError(RuntimeError):
    def __init__(self, index: int, seed: int, cause: BaseException):
        super().__init__(f"replicate {index} (seed {seed}) failed: {cause!r}")
        self.index = index
        self.seed = seed
        self.cause = cause


@dataclass(frozen=True)
class PassRule:
    """``statistic <comparator> target``; ``within`` means ``|stat - target| <= tolerance``."""

    statistic: str
    comparator: str
    target: Any
    tolerance: float = 0.0

    _OPS = {"<=": operator.le, ">=": operator.ge, "<": operator.lt, ">": operator.gt}

    def __post_init__(self):
        if self.comparator not in self._OPS and self.comparator not in ("within", "in"):
            raise ValueError(f"unknown comparator {self.comparator!r}")

    def check(self, value) -> bool:
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return False
        if self.comparator in self._OPS:
            return bool(self._OPS[self.comparator](value, self.target))
        if self.comparator == "within":
            return abs(value - self.target) <= self.tolerance
        if self.comparator == "in":
            lo, hi = self.target
            return lo <= value <= hi

    def describe(self) -> str:
        if self.comparator == "within":
            return f"|{self.statistic} - {self.target}| <= {self.tolerance}"
        if self.comparator == "in":
            return f"{self.statistic} in [{self.target[0]}, {self.target[1]}]"
        return f"{self.statistic} {self.comparator} {self.target}"

    def to_dict(self) -> dict:
        target = list(self.target) if isinstance(self.target, (tuple, list)) else self.target
        return {"statistic": self.statistic, "comparator": self.comparator,
                "target": target, "tolerance": self.tolerance}

    @classmethod
    def from_dict(cls, d: dict) -> "PassRule":
        target = d["target"]
        if isinstance(target, list):
            target = tuple(target)
        return cls(d["statistic"], d["comparator"], target, d.get("tolerance", 0.0))


def _plain(x):
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


@dataclass
class ReplicateSummary:
    index: int
    seed: int
    survived: bool
    eta: Optional[float] = None
    censored: bool = False
    W_estimate: float = 0.0
    zbar: Optional[List[float]] = None
    ybar: Optional[List[float]] = None
    bl_ordinary: Optional[float] = None
    bl_interacting: Optional[float] = None
    extinction: Optional[dict] = None
    repelling: Optional[dict] = None
    values: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicateSummary":
        return cls(**d)


@dataclass
class TrajectoryRecord:
    """Grid series for one replicate; NaN marks absent entries."""

    replicate: int
    times: np.ndarray
    mass: np.ndarray
    com: np.ndarray
    spread: np.ndarray
    bl_ordinary: np.ndarray
    bl_interacting: np.ndarray
    exp_gamma_t_zbar: np.ndarray
    zbar: np.ndarray
    spread_ordinary: np.ndarray
    survived: bool = True

    @property
    def d(self) -> int:
        return self.com.shape[1]

    @classmethod
    def empty(cls, replicate: int, times: np.ndarray, d: int, survived: bool = True):
        n = times.size
        nan1 = np.full(n, np.nan)
        nand = np.full((n, d), np.nan)
        return cls(replicate, times, nan1.copy(), nand.copy(), nan1.copy(), nan1.copy(),
                   nan1.copy(), nand.copy(), nand.copy(), nan1.copy(), survived)


@dataclass
class Scenario:
    name: str
    cfg: ValidatedConfig
    replicates: int
    conditioning: str = "none"
    observables: Tuple[str, ...] = ()
    pass_rules: Tuple[PassRule, ...] = ()
    gating: bool = True
    params: Dict[str, Any] = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicate count must be at least 1")
        if self.conditioning not in CONDITIONINGS:
            raise ValueError(f"unknown conditioning {self.conditioning!r}")
        if self.conditioning == "survival" and not self.cfg.beta > 0:
            raise ValueError("survival conditioning needs beta > 0")

    def seeds(self) -> List[int]:
        return [replicate_seed(self.cfg.seed, i) for i in range(self.replicates)]


ReplicateFn = Callable[[Scenario, int, int], Tuple[ReplicateSummary, Optional[TrajectoryRecord]]]


@dataclass
class RunResult:
    scenario: Scenario
    summaries: List[ReplicateSummary]
    trajectories: List[TrajectoryRecord]
    statistics: Dict[str, Any]
    verdicts: List[dict]
    report: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.verdicts)


def run_replicates(scenario: Scenario, replicate_fn: ReplicateFn, parallelism: int = 1
                   ) -> Tuple[List[ReplicateSummary], List[TrajectoryRecord]]:
    """Run every replicate; output order is replicate index regardless of threads.

    Kernels release the GIL, so threads give real parallelism.
    """
    seeds = scenario.seeds()

    def one(i):
        try:
            return replicate_fn(scenario, i, seeds[i])
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise ReplicateError(i, seeds[i], exc) from exc

    if parallelism <= 1:
        results = [one(i) for i in range(scenario.replicates)]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, range(scenario.replicates)))
    summaries = [r[0] for r in results]
    trajectories = [r[1] for r in results if r[1] is not None]
    return summaries, trajectories


def evaluate_rules(rules: Sequence[PassRule], stats: Dict[str, Any]) -> List[dict]:
    out = []
    for rule in rules:
        value = stats.get(rule.statistic)
        out.append({"rule": rule.describe(), "statistic": rule.statistic,
                    "value": _plain(value), "passed": rule.check(value)})
    return out


def condition(summaries: Sequence[ReplicateSummary], conditioning: str) -> List[ReplicateSummary]:
    if conditioning == "survival":
        return [s for s in summaries if s.survived]
    if conditioning == "extinction":
        return [s for s in summaries if not s.survived]
    return list(summaries)


def survival_guard(summaries: Sequence[ReplicateSummary], beta: float, m0: float) -> Dict[str, float]:
    """Survival frequency against ``1 - exp(-2 beta m0)`` in binomial SE units."""
    R = len(summaries)
    p = 1.0 - math.exp(-2.0 * beta * m0)
    k = sum(1 for s in summaries if s.survived)
    se = math.sqrt(p * (1 - p) / R) if R else math.nan
    return {"n_replicates": R, "n_survived": k, "n_extinct": R - k,
            "n_censored": sum(1 for s in summaries if s.censored),
            "survival_frequency": k / R if R else math.nan,
            "survival_expected": p,
            "survival_z": abs(k / R - p) / se if R else math.nan}


def median(values) -> float:
    v = [x for x in values if x is not None and not (isinstance(x, float) and math.isnan(x))]
    return float(np.median(v)) if v else math.nan
