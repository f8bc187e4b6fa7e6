"""Synthetic pools and the two feedback-loop protocols.

A run is a closed loop: fit predictor → propose query by softmax utility →
sample one pool point → every configured method states its interval for
that point before the label is revealed → reveal, record coverage, assign
the point to training or calibration by coin flip → repeat.

Determinism contract: a run is a pure function of (config, seed).  The root
seed spawns four named substreams — init, query, noise, coin — consumed in
a fixed order (holdout indices, holdout noise, init indices, init noise,
then per step: one query uniform, one noise normal, one coin uniform).
Interval methods never draw randomness, so changing the method set never
perturbs the data trajectory, and per-seed runs are parallelism-invariant.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .agents import Pool, bounded_query, sample_query, softmax_query
from .conformal import (
    AciState,
    FullConditioningEvaluator,
    SplitConditioningEvaluator,
    aci_interval,
    aci_update,
    full_cp_set_ridge,
    mfcs_split_interval,
    one_step_fcs_interval,
    split_calibration_state,
    standard_split_interval,
)
from .core import Bag, LabeledPoint
from .errors import BoundInfeasibleError, ConfigError, NumericalError, ParameterError
from .predictors import GaussianProcessModel, ridge_fit

__all__ = [
    "ExperimentConfig",
    "StepRecord",
    "SummaryRow",
    "config_from_mapping",
    "parse_seed_range",
    "make_combinatorial_pool",
    "principal_direction",
    "biased_iid_init",
    "uniform_iid_init",
    "run_design_experiment",
    "run_active_learning_experiment",
    "run_experiment",
    "aggregate",
    "expand_methods",
]

_MODES = ("design", "active-learning")
_PREDICTORS = ("ridge", "gp")
_CP_MODES = ("split", "full")
_BASE_METHODS = ("standard", "one-step", "mfcs", "aci")

POWER_ITERATION_TOL = 1e-10
POWER_ITERATION_CAP = 10_000
FULL_CP_GRID_SIZE = 200


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one experiment family (all seeds share it)."""

    mode: str
    alpha: float
    n_train: int
    n_cal: int
    shift_magnitude: float
    depths: Tuple[int, ...]
    horizon: int
    seed_start: int
    seed_stop: int  # inclusive
    methods: Tuple[str, ...] = _BASE_METHODS
    predictor: str = "ridge"
    cp_mode: str = "split"
    aci_step: float = 0.005
    cal_assignment_prob: float = 0.5
    gamma_init_bias: float = 0.0  # biases the active-learning initialization only
    pool_length: int = 8
    pool_seed: int = 0
    pool_per_seed: bool = False  # regenerate coefficients per run seed (offset by pool_seed)
    noise_sd: float = 0.1
    bounded: bool = False
    ridge_regularization: float = 0.01
    gp_bias_variance: float = 0.0025
    gp_noise_variance: float = 0.0025
    holdout_size: int = 250
    full_cp_conditioning: str = "observed"  # or "noiseless": label source for past queries

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.predictor not in _PREDICTORS:
            raise ConfigError(f"predictor must be one of {_PREDICTORS}, got {self.predictor!r}")
        if self.cp_mode not in _CP_MODES:
            raise ConfigError(f"cp_mode must be one of {_CP_MODES}, got {self.cp_mode!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.n_train < 1 or self.n_cal < 1:
            raise ConfigError("n_train and n_cal must be >= 1")
        if not self.depths or any(
            not (1 <= d <= self.horizon) for d in self.depths
        ):
            raise ConfigError(
                f"depths must be nonempty with entries in [1, horizon={self.horizon}], "
                f"got {self.depths}"
            )
        if self.seed_stop < self.seed_start:
            raise ConfigError("seed range is empty")
        unknown = set(self.methods) - set(_BASE_METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; valid: {_BASE_METHODS}")
        if not self.methods:
            raise ConfigError("method set must be nonempty")
        if self.shift_magnitude < 0:
            raise ConfigError("shift_magnitude must be >= 0")
        if not 0.0 <= self.cal_assignment_prob <= 1.0:
            raise ConfigError("cal_assignment_prob must lie in [0, 1]")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        if self.mode == "active-learning" and self.predictor != "gp":
            raise ConfigError("active-learning mode requires the gp predictor")
        if self.mode == "active-learning" and self.cp_mode != "split":
            raise ConfigError("active-learning mode requires split CP")
        if self.cp_mode == "full":
            if "aci" in self.methods:
                raise ConfigError("aci is a split-CP baseline; drop it for cp_mode=full")
            if self.predictor != "ridge":
                raise ConfigError("full CP uses the ridge closed form; set predictor=ridge")
            if self.bounded:
                raise ConfigError("the bounded proposal applies to split CP only")
        if self.full_cp_conditioning not in ("observed", "noiseless"):
            raise ConfigError("full_cp_conditioning must be 'observed' or 'noiseless'")

    @property
    def seeds(self) -> range:
        return range(self.seed_start, self.seed_stop + 1)


def expand_methods(config: ExperimentConfig) -> List[str]:
    """Record-level method labels: 'mfcs' expands to one entry per depth."""
    out: List[str] = []
    for name in config.methods:
        if name == "mfcs":
            out.extend(f"mfcs-d{d}" for d in config.depths)
        else:
            out.append(name)
    return out


def parse_seed_range(text: str) -> Tuple[int, int]:
    """'A..B' (inclusive) → (A, B)."""
    parts = str(text).split("..")
    if len(parts) != 2:
        raise ConfigError(f"seed range must look like 'A..B', got {text!r}")
    try:
        start, stop = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"seed range endpoints must be integers, got {text!r}") from exc
    if stop < start:
        raise ConfigError(f"seed range is empty: {text!r}")
    return start, stop


_REQUIRED_EXPERIMENT_KEYS = (
    "mode",
    "alpha",
    "n_train",
    "n_cal",
    "shift_magnitude",
    "depths",
    "horizon",
    "seeds",
)

_OPTIONAL_EXPERIMENT_KEYS = {
    "methods": tuple,
    "predictor": str,
    "cp_mode": str,
    "aci_step": float,
    "cal_assignment_prob": float,
    "gamma_init_bias": float,
    "bounded": bool,
    "holdout_size": int,
    "full_cp_conditioning": str,
}

_POOL_KEYS = {"length": int, "seed": int, "per_seed": bool, "noise_sd": float}
_PREDICTOR_KEYS = {
    "ridge_regularization": float,
    "gp_bias_variance": float,
    "gp_noise_variance": float,
}


def config_from_mapping(data: dict) -> ExperimentConfig:
    """Build a validated config from a parsed document.

    Layout: an ``experiment`` section (required fields listed in the error
    messages), plus optional ``pool`` and ``predictors`` sections.
    """
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping of sections")
    unknown_sections = set(data) - {"experiment", "pool", "predictors"}
    if unknown_sections:
        raise ConfigError(f"unknown config sections: {sorted(unknown_sections)}")
    exp = data.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError("missing required section 'experiment'")
    for key in _REQUIRED_EXPERIMENT_KEYS:
        if key not in exp:
            raise ConfigError(f"missing required field 'experiment.{key}'")
    unknown = set(exp) - set(_REQUIRED_EXPERIMENT_KEYS) - set(_OPTIONAL_EXPERIMENT_KEYS)
    if unknown:
        raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
    pool = data.get("pool", {}) or {}
    pred = data.get("predictors", {}) or {}
    for section, allowed in (("pool", _POOL_KEYS), ("predictors", _PREDICTOR_KEYS)):
        extra = set(data.get(section, {}) or {}) - set(allowed)
        if extra:
            raise ConfigError(f"unknown {section} fields: {sorted(extra)}")
    try:
        start, stop = parse_seed_range(exp["seeds"])
        depths = tuple(int(d) for d in exp["depths"])
        methods = tuple(exp.get("methods", _BASE_METHODS))
        return ExperimentConfig(
            mode=str(exp["mode"]),
            alpha=float(exp["alpha"]),
            n_train=int(exp["n_train"]),
            n_cal=int(exp["n_cal"]),
            shift_magnitude=float(exp["shift_magnitude"]),
            depths=depths,
            horizon=int(exp["horizon"]),
            seed_start=start,
            seed_stop=stop,
            methods=methods,
            predictor=str(exp.get("predictor", "ridge")),
            cp_mode=str(exp.get("cp_mode", "split")),
            aci_step=float(exp.get("aci_step", 0.005)),
            cal_assignment_prob=float(exp.get("cal_assignment_prob", 0.5)),
            gamma_init_bias=float(exp.get("gamma_init_bias", 0.0)),
            pool_length=int(pool.get("length", 8)),
            pool_seed=int(pool.get("seed", 0)),
            pool_per_seed=bool(pool.get("per_seed", False)),
            noise_sd=float(pool.get("noise_sd", 0.1)),
            bounded=bool(exp.get("bounded", False)),
            ridge_regularization=float(pred.get("ridge_regularization", 0.01)),
            gp_bias_variance=float(pred.get("gp_bias_variance", 0.0025)),
            gp_noise_variance=float(pred.get("gp_noise_variance", 0.0025)),
            holdout_size=int(exp.get("holdout_size", 250)),
            full_cp_conditioning=str(exp.get("full_cp_conditioning", "observed")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config value: {exc}") from exc


@dataclass(frozen=True)
class StepRecord:
    """One method's result at one step of one seeded run."""

    seed: int
    t: int
    method: str
    covered: bool
    width: float
    metric: float
    bound_relative: Optional[float]
    wall_ms: float

    def __post_init__(self):
        if self.t < 1:
            raise ParameterError(f"step index must be >= 1, got {self.t}")
        if math.isnan(self.width) or self.width < 0:
            raise ParameterError(f"width must be >= 0 or inf, got {self.width}")


# ---------------------------------------------------------------------------
# Synthetic pool and initialization
# ---------------------------------------------------------------------------


def make_combinatorial_pool(L: int, seed: int, *, noise_sd: float = 0.1) -> Pool:
    """Complete binary library of length L with a seeded polynomial oracle.

    Hidden labels are a linear + pairwise-interaction polynomial,
    standardized to zero mean and unit variance over the pool.  Linear
    coefficients are half-normal shifted by +0.5 so every bit is
    beneficial on its own: value-greedy agents then climb toward
    many-ones corners, where the largest number of pairwise terms is
    active.  Pairwise coefficients are centered normals at 1.5x scale,
    so the interaction field -- which a linear model cannot explain --
    has its highest variance exactly in the region such agents sample.
    """
    if not 4 <= L <= 14:
        raise ParameterError(f"pool length must lie in [4, 14], got L={L}")
    if noise_sd < 0:
        raise ParameterError(f"noise_sd must be >= 0, got {noise_sd}")
    n = 1 << L
    idx = np.arange(n, dtype=np.uint32)
    X = ((idx[:, None] >> np.arange(L, dtype=np.uint32)[None, :]) & 1).astype(np.float64)
    rng = np.random.default_rng(seed)
    linear = np.abs(rng.normal(0.0, 1.0, L)) + 0.5
    pair = 1.5 * rng.normal(0.0, 1.0, (L * (L - 1)) // 2)
    y = X @ linear
    k = 0
    for i in range(L):
        for j in range(i + 1, L):
            y += pair[k] * X[:, i] * X[:, j]
            k += 1
    sd = float(y.std())
    if sd <= 0:
        raise NumericalError("degenerate pool: zero label variance before standardization")
    y = (y - y.mean()) / sd
    return Pool(X, y, np.full(n, float(noise_sd)))


def principal_direction(candidates: np.ndarray) -> np.ndarray:
    """First principal direction of the centered candidates by power iteration.

    Deterministic start, tolerance 1e-10 on the iterate change, hard cap of
    10^4 iterations; the returned unit vector is oriented so its
    largest-magnitude component is positive.
    """
    X = np.asarray(candidates, dtype=np.float64)
    centered = X - X.mean(axis=0)
    S = centered.T @ centered
    p = S.shape[0]
    v = np.ones(p) + np.arange(p) / (10.0 * max(p, 1))
    v /= np.linalg.norm(v)
    for _ in range(POWER_ITERATION_CAP):
        w = S @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise NumericalError("power iteration hit the zero vector; no principal direction")
        w /= norm
        if np.max(np.abs(w - v)) <= POWER_ITERATION_TOL:
            v = w
            break
        v = w
    else:
        raise NumericalError(
            f"power iteration did not converge within {POWER_ITERATION_CAP} iterations"
        )
    pivot = int(np.argmax(np.abs(v)))
    return v if v[pivot] > 0 else -v


def _minmax_normed_projection(pool: Pool) -> np.ndarray:
    proj = pool.candidates @ principal_direction(pool.candidates)
    span = proj.max() - proj.min()
    if span <= 0:
        return np.zeros_like(proj)
    return (proj - proj.min()) / span


def _observe(pool: Pool, idxs: np.ndarray, noise_rng: np.random.Generator) -> List[LabeledPoint]:
    noise = noise_rng.standard_normal(len(idxs))
    labels = pool.true_labels[idxs] + pool.noise_sd[idxs] * noise
    return [
        LabeledPoint(pool.candidates[i], float(labels[k])) for k, i in enumerate(idxs)
    ]


def uniform_iid_init(
    pool: Pool, n: int, rng: np.random.Generator, *, noise_rng: Optional[np.random.Generator] = None
) -> Bag:
    """IID uniform draws with replacement, noisy labels attached."""
    if n < 0:
        raise ParameterError("n must be >= 0")
    idxs = rng.integers(0, pool.size, size=n)
    return Bag(_observe(pool, idxs, noise_rng if noise_rng is not None else rng))


def biased_iid_init(
    pool: Pool,
    n: int,
    gamma: float,
    rng: np.random.Generator,
    *,
    noise_rng: Optional[np.random.Generator] = None,
) -> Bag:
    """Initialization biased along the pool's first principal direction.

    Projections onto the principal direction are min-max normalized to
    [0, 1]; n distinct points are drawn without replacement with probability
    proportional to exp(gamma * normed value).  gamma = 0 is plain uniform
    sampling without replacement.
    """
    if n > pool.size:
        raise ParameterError(f"cannot draw {n} points without replacement from {pool.size}")
    if n < 0:
        raise ParameterError("n must be >= 0")
    normed = _minmax_normed_projection(pool)
    weights = np.exp(gamma * (normed - normed.max()))
    remaining = np.arange(pool.size)
    chosen = np.empty(n, dtype=np.int64)
    for k in range(n):
        w = weights[remaining]
        cdf = np.cumsum(w / w.sum())
        pick = int(np.searchsorted(cdf, rng.random(), side="right"))
        pick = min(pick, remaining.size - 1)
        chosen[k] = remaining[pick]
        remaining = np.delete(remaining, pick)
    return Bag(_observe(pool, chosen, noise_rng if noise_rng is not None else rng))


def _initial_density_fn(pool: Pool, gamma: float):
    """Pool-normalized density of the biased initialization, for weight ratios."""
    if gamma == 0.0:
        return None
    normed = _minmax_normed_projection(pool)
    weights = np.exp(gamma * (normed - normed.max()))
    probs = weights / weights.sum()

    def density(x: np.ndarray) -> float:
        return float(probs[pool.index_of(x)])

    return density


# ---------------------------------------------------------------------------
# Utility sources (agent's model of the pool)
# ---------------------------------------------------------------------------


def _ridge_mean_utility(regularization: float):
    def source(data: Bag) -> Callable[[np.ndarray], np.ndarray]:
        model = ridge_fit(data, regularization)
        return lambda X: model.predict(np.atleast_2d(np.asarray(X, dtype=np.float64)))

    return source


def _gp_mean_utility(bias_variance: float, noise_variance: float):
    def source(data: Bag) -> Callable[[np.ndarray], np.ndarray]:
        model = GaussianProcessModel(
            data, bias_variance=bias_variance, noise_variance=noise_variance
        )
        return lambda X: model.predict(X)[0]

    return source


def _gp_variance_utility(bias_variance: float, noise_variance: float):
    def source(data: Bag) -> Callable[[np.ndarray], np.ndarray]:
        model = GaussianProcessModel(
            data, bias_variance=bias_variance, noise_variance=noise_variance
        )
        return lambda X: model.predict(X)[1]

    return source


# ---------------------------------------------------------------------------
# Experiment protocols
# ---------------------------------------------------------------------------


def _spawn_streams(seed: int):
    init_ss, query_ss, noise_ss, coin_ss = np.random.SeedSequence(seed).spawn(4)
    return (
        np.random.default_rng(init_ss),
        np.random.default_rng(query_ss),
        np.random.default_rng(noise_ss),
        np.random.default_rng(coin_ss),
    )


def _propose(
    pool_utilities: np.ndarray,
    cal_utilities: Optional[np.ndarray],
    config: ExperimentConfig,
):
    """Query distribution for this step; returns (distribution, bound_relative)."""
    if config.bounded:
        if cal_utilities is not None and cal_utilities.size:
            try:
                dist = bounded_query(
                    pool_utilities, cal_utilities, config.shift_magnitude, config.alpha
                )
                return dist, dist.bound_relative
            except BoundInfeasibleError:
                # Fallback policy: keep the run alive on the uncapped proposal
                # and leave the bound column empty as the flag.
                return softmax_query(pool_utilities, config.shift_magnitude), None
        return softmax_query(pool_utilities, config.shift_magnitude), None
    return softmax_query(pool_utilities, config.shift_magnitude), None


class _StepTimer:
    def __init__(self, enabled: bool):
        self.enabled = enabled

    def measure(self, fn):
        if not self.enabled:
            return fn(), 0.0
        start = time.perf_counter()
        out = fn()
        return out, (time.perf_counter() - start) * 1000.0


def _clip_depth(d: int, t: int) -> int:
    """At step t only t dynamic factors exist; deeper recursion is meaningless."""
    return min(d, t)


def _pool_for_seed(config: ExperimentConfig, seed: int) -> Pool:
    """The candidate pool a given run sees.

    With ``pool_per_seed`` every run draws a fresh response surface, so
    aggregates average over landscapes rather than over one fixed
    polynomial's quirks.
    """
    pool_seed = config.pool_seed + seed if config.pool_per_seed else config.pool_seed
    return make_combinatorial_pool(config.pool_length, pool_seed, noise_sd=config.noise_sd)


def run_design_experiment(
    config: ExperimentConfig, seed: int, *, timing: bool = False
) -> List[StepRecord]:
    """One seeded run of the design loop (query where predicted label is high)."""
    if config.mode != "design":
        raise ConfigError(f"run_design_experiment needs mode=design, got {config.mode!r}")
    pool = _pool_for_seed(config, seed)
    if config.cp_mode == "split":
        return _run_split_loop(config, seed, pool, design_mode=True, timing=timing)
    return _run_full_cp_design(config, seed, pool, timing=timing)


def run_active_learning_experiment(
    config: ExperimentConfig, seed: int, *, timing: bool = False
) -> List[StepRecord]:
    """One seeded run of the active-learning loop (query where GP variance is high)."""
    if config.mode != "active-learning":
        raise ConfigError(
            f"run_active_learning_experiment needs mode=active-learning, got {config.mode!r}"
        )
    pool = _pool_for_seed(config, seed)
    return _run_split_loop(config, seed, pool, design_mode=False, timing=timing)


def run_experiment(config: ExperimentConfig, seed: int, *, timing: bool = False):
    if config.mode == "design":
        return run_design_experiment(config, seed, timing=timing)
    return run_active_learning_experiment(config, seed, timing=timing)


def _mean_fn_and_pool_stats(config, train_bag, pool):
    """Fit the score model on the training bag; return (mean_fn, pool_means, pool_vars)."""
    if config.predictor == "ridge":
        model = ridge_fit(train_bag, config.ridge_regularization)
        mean_fn = lambda X: model.predict(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        return mean_fn, np.asarray(mean_fn(pool.candidates)), None
    model = GaussianProcessModel(
        train_bag,
        bias_variance=config.gp_bias_variance,
        noise_variance=config.gp_noise_variance,
    )
    means, variances = model.predict(pool.candidates)
    mean_fn = lambda X: model.predict(np.atleast_2d(np.asarray(X, dtype=np.float64)))[0]
    return mean_fn, means, variances


def _run_split_loop(
    config: ExperimentConfig,
    seed: int,
    pool: Pool,
    *,
    design_mode: bool,
    timing: bool,
) -> List[StepRecord]:
    rng_init, rng_query, rng_noise, rng_coin = _spawn_streams(seed)
    timer = _StepTimer(timing)

    if design_mode:
        train_bag = uniform_iid_init(pool, config.n_train, rng_init, noise_rng=rng_noise)
        cal_bag = uniform_iid_init(pool, config.n_cal, rng_init, noise_rng=rng_noise)
        holdout = None
        initial_density = None
    else:
        holdout_idx = rng_init.integers(0, pool.size, size=config.holdout_size)
        holdout_noise = rng_noise.standard_normal(config.holdout_size)
        holdout_X = pool.candidates[holdout_idx]
        holdout_y = pool.true_labels[holdout_idx] + pool.noise_sd[holdout_idx] * holdout_noise
        holdout = (holdout_X, holdout_y)
        both = biased_iid_init(
            pool,
            config.n_train + config.n_cal,
            config.gamma_init_bias,
            rng_init,
            noise_rng=rng_noise,
        )
        train_bag = Bag(both.points[: config.n_train])
        cal_bag = Bag(both.points[config.n_train :])
        initial_density = _initial_density_fn(pool, config.gamma_init_bias)

    if design_mode:
        if config.predictor == "ridge":
            utility_source = _ridge_mean_utility(config.ridge_regularization)
        else:
            utility_source = _gp_mean_utility(config.gp_bias_variance, config.gp_noise_variance)
    else:
        utility_source = _gp_variance_utility(config.gp_bias_variance, config.gp_noise_variance)

    method_labels = expand_methods(config)
    aci_state = AciState(config.alpha, config.aci_step, config.alpha)
    records: List[StepRecord] = []

    for t in range(1, config.horizon + 1):
        mean_fn, pool_means, pool_vars = _mean_fn_and_pool_stats(config, train_bag, pool)
        state = split_calibration_state(train_bag, cal_bag, mean_fn)
        pool_utilities = pool_means if design_mode else pool_vars

        cal_utilities = None
        if config.bounded and cal_bag.points:
            cal_X = np.stack([p.x for p in cal_bag.points])
            if design_mode:
                cal_utilities = np.asarray(mean_fn(cal_X)).reshape(-1)
            else:
                cal_idx = [pool.index_of(p.x) for p in cal_bag.points]
                cal_utilities = pool_vars[cal_idx]
        dist, bound_relative = _propose(pool_utilities, cal_utilities, config)

        query_idx = sample_query(dist, rng_query)
        x_query = pool.candidates[query_idx]
        y_observed = float(
            pool.true_labels[query_idx]
            + pool.noise_sd[query_idx] * rng_noise.standard_normal()
        )

        if design_mode:
            metric = float(pool_means[query_idx])
        else:
            holdout_X, holdout_y = holdout
            resid = np.asarray(mean_fn(holdout_X)).reshape(-1) - holdout_y
            metric = float(np.mean(resid**2))

        evaluator = SplitConditioningEvaluator(
            pool,
            train_bag,
            utility_source,
            config.shift_magnitude,
            bounded=config.bounded,
            alpha=config.alpha,
        )

        for method in method_labels:
            if method == "standard":
                interval, ms = timer.measure(
                    lambda: standard_split_interval(state, x_query, config.alpha)
                )
            elif method == "one-step":
                interval, ms = timer.measure(
                    lambda: one_step_fcs_interval(
                        state, x_query, evaluator, config.alpha,
                        initial_density=initial_density,
                    )
                )
            elif method.startswith("mfcs-d"):
                depth = _clip_depth(int(method[len("mfcs-d") :]), t)
                interval, ms = timer.measure(
                    lambda: mfcs_split_interval(
                        state, x_query, evaluator, depth, config.alpha,
                        initial_density=initial_density,
                    )
                )
            elif method == "aci":
                interval, ms = timer.measure(lambda: aci_interval(aci_state, state, x_query))
                aci_state = aci_update(aci_state, miscovered=not interval.contains(y_observed))
            else:  # pragma: no cover - guarded by config validation
                raise ConfigError(f"unknown method label {method!r}")
            records.append(
                StepRecord(
                    seed=seed,
                    t=t,
                    method=method,
                    covered=interval.contains(y_observed),
                    width=interval.width,
                    metric=metric,
                    bound_relative=bound_relative,
                    wall_ms=ms,
                )
            )

        new_point = LabeledPoint(pool.candidates[query_idx], y_observed)
        coin = rng_coin.random()
        if coin < config.cal_assignment_prob:
            cal_bag = cal_bag.add(new_point)
        else:
            train_bag = train_bag.add(new_point)
    return records


def _run_full_cp_design(
    config: ExperimentConfig, seed: int, pool: Pool, *, timing: bool
) -> List[StepRecord]:
    """Design loop where every method is a full-CP grid set over ridge.

    The observed bag grows by the query point every step (no split); the
    label grid spans the pool's label range padded by twice the noise
    scale.
    """
    rng_init, rng_query, rng_noise, rng_coin = _spawn_streams(seed)
    timer = _StepTimer(timing)
    observed = uniform_iid_init(pool, config.n_train, rng_init, noise_rng=rng_noise)
    # Noiseless-conditioning variant keeps a parallel bag whose labels are the
    # hidden pool values for the same points.
    noiseless_pts = [
        LabeledPoint(p.x, float(pool.true_labels[pool.index_of(p.x)])) for p in observed.points
    ]
    grid_lo = float(pool.true_labels.min() - 2.0 * config.noise_sd)
    grid_hi = float(pool.true_labels.max() + 2.0 * config.noise_sd)
    label_grid = np.linspace(grid_lo, grid_hi, FULL_CP_GRID_SIZE)
    utility_source = _ridge_mean_utility(config.ridge_regularization)
    method_labels = expand_methods(config)
    records: List[StepRecord] = []

    for t in range(1, config.horizon + 1):
        cond_bag = (
            None if config.full_cp_conditioning == "observed" else Bag(noiseless_pts)
        )
        model = ridge_fit(observed, config.ridge_regularization)
        pool_means = model.predict(pool.candidates)
        dist, _ = _propose(pool_means, None, config)
        query_idx = sample_query(dist, rng_query)
        x_query = pool.candidates[query_idx]
        y_observed = float(
            pool.true_labels[query_idx]
            + pool.noise_sd[query_idx] * rng_noise.standard_normal()
        )
        metric = float(pool_means[query_idx])
        evaluator = FullConditioningEvaluator(pool, utility_source, config.shift_magnitude)
        uniform_evaluator = FullConditioningEvaluator(pool, utility_source, 0.0)

        for method in method_labels:
            if method == "standard":
                ev, depth = uniform_evaluator, 1
            elif method == "one-step":
                ev, depth = evaluator, 1
            elif method.startswith("mfcs-d"):
                ev, depth = evaluator, _clip_depth(int(method[len("mfcs-d") :]), t)
            else:  # pragma: no cover - guarded by config validation
                raise ConfigError(f"unknown method label {method!r}")
            grid_set, ms = timer.measure(
                lambda: full_cp_set_ridge(
                    observed,
                    x_query,
                    ev,
                    depth,
                    config.alpha,
                    label_grid,
                    regularization=config.ridge_regularization,
                    conditioning_data=cond_bag,
                )
            )
            hull = grid_set.hull
            covered = hull is not None and hull.contains(y_observed)
            width = hull.width if hull is not None else 0.0
            records.append(
                StepRecord(
                    seed=seed,
                    t=t,
                    method=method,
                    covered=covered,
                    width=width,
                    metric=metric,
                    bound_relative=None,
                    wall_ms=ms,
                )
            )

        new_point = LabeledPoint(pool.candidates[query_idx], y_observed)
        rng_coin.random()  # burn the coin to keep trajectories aligned across cp modes
        observed = observed.add(new_point)
        noiseless_pts.append(
            LabeledPoint(pool.candidates[query_idx], float(pool.true_labels[query_idx]))
        )
    return records


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    method: str
    t: int
    n_records: int
    coverage_mean: float
    coverage_se: float
    width_median: float
    width_q25: float
    width_q75: float
    frac_infinite_width: float
    metric_mean: float
    metric_se: float


def _order_quantile(sorted_vals: np.ndarray, q: float) -> float:
    """Linear-interpolation quantile that is safe with +inf entries.

    numpy's interpolated percentile forms a + frac*(b - a), which is NaN
    when frac = 0 and b = inf; this helper short-circuits exact indices.
    """
    n = sorted_vals.size
    if n == 0:
        raise ParameterError("cannot take a quantile of nothing")
    h = (n - 1) * q
    lo = int(math.floor(h))
    frac = h - lo
    if frac == 0.0 or lo + 1 >= n:
        return float(sorted_vals[lo])
    a, b = float(sorted_vals[lo]), float(sorted_vals[lo + 1])
    if math.isinf(b):
        return b
    return a + frac * (b - a)


def aggregate(records: Sequence[StepRecord]) -> List[SummaryRow]:
    """Per-(method, t) summary: coverage with standard error, median width
    with quartiles (infinite widths sort above every finite value, so an
    infinite upper quartile stays inf), fraction of infinite widths, and the
    run metric with its standard error."""
    if not records:
        raise ParameterError("no records to aggregate")
    groups: Dict[Tuple[str, int], List[StepRecord]] = {}
    for rec in records:
        groups.setdefault((rec.method, rec.t), []).append(rec)
    rows: List[SummaryRow] = []
    for (method, t) in sorted(groups):
        recs = groups[(method, t)]
        n = len(recs)
        covered = np.array([r.covered for r in recs], dtype=np.float64)
        widths = np.sort(np.array([r.width for r in recs], dtype=np.float64))
        metrics = np.array([r.metric for r in recs], dtype=np.float64)
        cov_mean = float(covered.mean())
        cov_se = float(math.sqrt(cov_mean * (1.0 - cov_mean) / n))
        metric_mean = float(metrics.mean())
        metric_se = float(metrics.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        rows.append(
            SummaryRow(
                method=method,
                t=t,
                n_records=n,
                coverage_mean=cov_mean,
                coverage_se=cov_se,
                width_median=_order_quantile(widths, 0.5),
                width_q25=_order_quantile(widths, 0.25),
                width_q75=_order_quantile(widths, 0.75),
                frac_infinite_width=float(np.isinf(widths).mean()),
                metric_mean=metric_mean,
                metric_se=metric_se,
            )
        )
    return rows
