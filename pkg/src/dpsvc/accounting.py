"""Privacy accounting and the stage schedule of the iterative corrector.

All logarithms are natural.
"""

from __future__ import annotations

import dataclasses
import io
import math
from dataclasses import dataclass, field

from .exceptions import InfeasibleScheduleError, InvalidParameterError

__all__ = [
    "PrivacyBudget",
    "Constants",
    "PROFILES",
    "get_constants",
    "Stage",
    "Schedule",
    "bound",
    "basic_compose",
    "advanced_compose",
    "build_schedule",
    "schedule_budget_chain",
    "format_schedule",
    "schedule_csv",
]


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) pair with 0 < epsilon <= 1 and 0 < delta <= 0.5."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise InvalidParameterError(f"epsilon must lie in (0, 1], got {self.epsilon!r}")
        if not (0.0 < self.delta <= 0.5):
            raise InvalidParameterError(f"delta must lie in (0, 0.5], got {self.delta!r}")

    def split(self, parts):
        """Equal share of the budget for one of ``parts`` sequential sub-runs."""
        return PrivacyBudget(self.epsilon / parts, self.delta / parts)

    def __iter__(self):
        yield self.epsilon
        yield self.delta


def bound(k, epsilon, delta):
    """Optimal error scale ``sqrt(k * ln(1/delta)) / epsilon``."""
    if k < 1:
        raise InvalidParameterError(f"k must be >= 1, got {k!r}")
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon!r}")
    if not (0.0 < delta < 1.0):
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta!r}")
    return math.sqrt(k * math.log(1.0 / delta)) / epsilon


def basic_compose(budgets):
    """Sum a sequence of (epsilon, delta) pairs. An empty sequence gives (0, 0)."""
    total_eps = 0.0
    total_delta = 0.0
    for eps, delta in budgets:
        if eps < 0 or delta < 0:
            raise InvalidParameterError(f"budget entries must be non-negative, got ({eps}, {delta})")
        total_eps += eps
        total_delta += delta
    return total_eps, total_delta


def advanced_compose(m, epsilon, delta_prime):
    """Epsilon of ``m`` adaptive runs of an ``epsilon``-DP algorithm, at slack ``delta_prime``.

    ``sqrt(2 m ln(1/delta_prime)) * epsilon + m * epsilon * (exp(epsilon) - 1)``
    """
    if isinstance(m, bool) or int(m) != m or m < 1:
        raise InvalidParameterError(f"m must be a positive integer, got {m!r}")
    if not (epsilon >= 0 and math.isfinite(epsilon)):
        raise InvalidParameterError(f"epsilon must be finite and non-negative, got {epsilon!r}")
    if not (0.0 < delta_prime < 1.0):
        raise InvalidParameterError(f"delta_prime must lie in (0, 1), got {delta_prime!r}")
    return math.sqrt(2.0 * m * math.log(1.0 / delta_prime)) * epsilon + m * epsilon * math.expm1(epsilon)


@dataclass(frozen=True)
class Constants:
    """Named constants of the stage schedule and the high-probability wrapper.

    ``eps0_divisor``, ``w_multiplier`` and ``w_log_factor`` enter as
    ``eps0 = epsilon / (eps0_divisor * sqrt(ln(1/delta)))`` and
    ``w_l = w_multiplier * ln(w_log_factor * k / m_l) / eps_l``.
    ``stage_factor`` sets the nominal stage count
    ``L = ceil(stage_factor * log_{1/kappa}(ln k))``. Stages whose raw target
    ``kappa**l * k`` drops below ``m_min`` are dropped.
    """

    name: str = "paper"
    kappa: float = 0.9
    lam: float = 0.95
    stage_factor: float = 10.0
    eps0_divisor: float = 1000.0
    w_multiplier: float = 100.0
    w_log_factor: float = 500.0
    m_min: float = 1.0
    c_frac: float = 1.0
    alpha_mult: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.kappa < 1.0):
            raise InvalidParameterError(f"kappa must lie in (0, 1), got {self.kappa}")
        if not (0.0 < self.lam < 1.0):
            raise InvalidParameterError(f"lam must lie in (0, 1), got {self.lam}")
        for name in ("stage_factor", "eps0_divisor", "w_multiplier", "w_log_factor", "c_frac", "alpha_mult"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.m_min < 0:
            raise InvalidParameterError(f"m_min must be non-negative, got {self.m_min}")

    def with_overrides(self, **overrides):
        known = {f.name for f in dataclasses.fields(self)} - {"name"}
        unknown = set(overrides) - known
        if unknown:
            raise InvalidParameterError(f"unknown constant(s): {', '.join(sorted(unknown))}")
        values = {k: float(v) for k, v in overrides.items()}
        tag = ",".join(f"{k}={v:g}" for k, v in sorted(values.items()))
        return dataclasses.replace(self, name=f"{self.name}[{tag}]" if tag else self.name, **values)


PROFILES = {
    "paper": Constants(),
    # Desk-scale profile (k ~ 1e3..1e5). eps0 is 25x the default value and the
    # stage budgets still sum to less than epsilon. w_multiplier = 16 makes
    # w_l = (8 / (eps_l/2)) ln(500 k / m_l), the selector-noise margin at
    # half the stage budget. c_frac and alpha_mult come from
    # harness.sv_calibration: above alpha_mult/2 * bound, the iterative stage
    # leaves at most c_sv coordinates at k in [2^10, 2^14].
    "practical": Constants(
        name="practical",
        eps0_divisor=40.0,
        w_multiplier=16.0,
        w_log_factor=500.0,
        c_frac=1.5e8,
        alpha_mult=1400.0,
    ),
}


def get_constants(profile="paper", **overrides):
    """Constants for a named profile, optionally with overrides."""
    try:
        base = PROFILES[profile]
    except KeyError:
        raise InvalidParameterError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}") from None
    return base.with_overrides(**overrides) if overrides else base


@dataclass(frozen=True)
class Stage:
    index: int
    m: int
    eps: float
    w: float
    T: float
    tau: float


@dataclass(frozen=True)
class Schedule:
    """Per-stage parameters for one (k, budget, constants) triple.

    ``stages`` holds the effective stages after truncation; ``nominal_L`` is
    the untruncated count. ``w_next`` is w_{L+1}, which the last threshold
    depends on.
    """

    k: int
    budget: PrivacyBudget
    constants: Constants
    epsilon0: float
    nominal_L: int
    stages: tuple
    w_next: float
    chain: tuple = field(default=(), repr=False)

    @property
    def L(self):
        return len(self.stages)

    @property
    def kappa(self):
        return self.constants.kappa

    @property
    def lam(self):
        return self.constants.lam

    @property
    def T0(self):
        return 2.0 * self.stages[0].w

    @property
    def w0(self):
        return 0.0

    def thresholds(self):
        """``[tau_0, tau_1, ..., tau_L]`` with ``tau_0 = T0 + w0``."""
        return [self.T0 + self.w0] + [s.tau for s in self.stages]

    def total_steps(self):
        return sum(s.m for s in self.stages)

    def spent(self):
        """(epsilon, delta) consumed by all stages, by basic composition."""
        return basic_compose(self.chain)


def _stage_target(constants, k, ell):
    raw = constants.kappa**ell * k
    # shave float noise so that e.g. 0.81 * 1e6 does not round up to 810001
    return raw, max(1, math.ceil(raw * (1.0 - 1e-12)))


def _stage_eps(eps0, k, lam, ell):
    return eps0 / math.sqrt(k) / math.sqrt(ell * lam**ell)


def build_schedule(k, budget, constants=None):
    """Build the stage table for ``k`` queries under ``budget``.

    Raises
    ------
    InvalidParameterError
        If ``k < 2``.
    InfeasibleScheduleError
        If the per-stage budget chain sums past ``budget``.
    """
    if isinstance(k, bool) or int(k) != k or k < 2:
        raise InvalidParameterError(f"k must be an integer >= 2, got {k!r}")
    k = int(k)
    if not isinstance(budget, PrivacyBudget):
        budget = PrivacyBudget(*budget)
    c = constants if constants is not None else PROFILES["paper"]

    eps0 = budget.epsilon / (c.eps0_divisor * math.sqrt(math.log(1.0 / budget.delta)))
    nominal_L = max(1, math.ceil(c.stage_factor * math.log(math.log(k)) / math.log(1.0 / c.kappa)))

    ms = []
    for ell in range(1, nominal_L + 1):
        raw, m = _stage_target(c, k, ell)
        if raw < c.m_min or (ms and m >= ms[-1]):
            break
        ms.append(m)
    if not ms:
        raise InvalidParameterError(f"no stage survives truncation for k={k}, m_min={c.m_min}")
    L = len(ms)
    ms_ext = ms + [_stage_target(c, k, L + 1)[1]]

    eps = [_stage_eps(eps0, k, c.lam, ell) for ell in range(1, L + 2)]
    w = [c.w_multiplier * math.log(c.w_log_factor * k / m) / e for m, e in zip(ms_ext, eps)]

    stages = []
    prefix = 0.0
    for i in range(L):
        T = 4.0 * prefix + 3.0 * w[i] + 2.0 * w[i + 1]
        stages.append(Stage(i + 1, ms[i], eps[i], w[i], T, T + w[i]))
        prefix += w[i]

    sched = Schedule(k, budget, c, eps0, nominal_L, tuple(stages), w[L])
    chain = tuple(schedule_budget_chain(sched))
    sched = dataclasses.replace(sched, chain=chain)

    run_eps = run_delta = 0.0
    first_bad = None
    for stage, (e, d) in zip(stages, chain):
        run_eps += e
        run_delta += d
        if first_bad is None and (run_eps > budget.epsilon or run_delta > budget.delta):
            first_bad = stage.index
    if first_bad is not None:
        over = (max(0.0, run_eps - budget.epsilon), max(0.0, run_delta - budget.delta))
        raise InfeasibleScheduleError(
            f"schedule overshoots budget ({budget.epsilon}, {budget.delta}) from stage {first_bad}: "
            f"total ({run_eps:.6g}, {run_delta:.6g}), overshoot ({over[0]:.3g}, {over[1]:.3g})",
            stage=first_bad,
            overshoot=over,
        )
    return sched


def schedule_budget_chain(schedule, budget=None):
    """Per-stage ``(eps'_l, delta'_l)`` from advanced composition at ``delta'_l = 0.5**l * delta``."""
    delta = (budget or schedule.budget).delta
    out = []
    for s in schedule.stages:
        dp = 0.5**s.index * delta
        out.append((advanced_compose(s.m, s.eps, dp), dp))
    return out


_COLUMNS = ("l", "m", "eps", "w", "T", "tau", "eps_prime", "delta_prime")


def _rows(schedule):
    for s, (ep, dp) in zip(schedule.stages, schedule.chain):
        yield (s.index, s.m, s.eps, s.w, s.T, s.tau, ep, dp)


def format_schedule(schedule):
    """Fixed-width text table with header block and budget totals."""
    b = schedule.budget
    total_eps, total_delta = schedule.spent()
    out = io.StringIO()
    out.write(f"profile      {schedule.constants.name}\n")
    out.write(f"k            {schedule.k}\n")
    out.write(f"epsilon      {b.epsilon:.6g}\n")
    out.write(f"delta        {b.delta:.6g}\n")
    out.write(f"kappa        {schedule.kappa:g}\n")
    out.write(f"lambda       {schedule.lam:g}\n")
    out.write(f"epsilon0     {schedule.epsilon0:.4e}\n")
    out.write(f"nominal L    {schedule.nominal_L}\n")
    out.write(f"effective L  {schedule.L}\n")
    out.write(f"T0           {schedule.T0:.6g}\n")
    out.write("\n")
    out.write(f"{'l':>4} {'m':>10} {'eps':>11} {'w':>11} {'T':>11} {'tau':>11} {'eps_prime':>11} {'delta_prime':>11}\n")
    for ell, m, e, w, T, tau, ep, dp in _rows(schedule):
        out.write(f"{ell:>4d} {m:>10d} {e:>11.4e} {w:>11.4e} {T:>11.4e} {tau:>11.4e} {ep:>11.4e} {dp:>11.4e}\n")
    out.write("\n")
    out.write(f"sum eps'     {total_eps:.6g} <= {b.epsilon:.6g}\n")
    out.write(f"sum delta'   {total_delta:.6g} <= {b.delta:.6g}\n")
    return out.getvalue()


def schedule_csv(schedule):
    lines = [",".join(_COLUMNS)]
    for row in _rows(schedule):
        lines.append(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
