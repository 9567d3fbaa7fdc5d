"""Shortcut summary generators for the noisy table M'.

Every method here treats nonzero cells of M directly (add noise, then apply
the selection rule) and handles the m - n zero cells statistically: the
number of upgraded zeros is Binomial(m - n, p) where p is the chance a
pure-noise cell survives selection, their locations are a uniform sample of
the zero cells, and their values come from the noise law conditioned on
selection. The output is distributed exactly like summarizing the dense M'.

Selection kinds used throughout:

``filter1``   keep v >= theta
``filter2``   keep |v| >= theta
``threshold`` keep with probability min(|v| / tau, 1)
``combined``  keep if |v| >= theta, then with probability min(|v| / tau, 1)
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .noise import (
    TAIL_RESOLUTION,
    NoiseSpec,
    alpha_pow,
    geom_abs_mean,
    sample_binomial,
    sample_geometric,
    uniform_open_closed,
)
from .summary import Summary
from .table import SparseTable

KINDS = ("filter1", "filter2", "threshold", "combined")

# Dense materialization limit for the reference pipeline.
LABORIOUS_MAX_M = 2**24
PRIORITY_OVERSAMPLE = 4
PRIORITY_MAX_ATTEMPTS = 20


def _check(kind: str, theta: int, tau: int) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown selection kind {kind!r}")
    if kind in ("filter1", "filter2") and theta < 1:
        raise ValueError(f"filters need theta >= 1, got {theta}")
    if kind == "threshold" and tau < 1:
        raise ValueError(f"threshold sampling needs tau >= 1, got {tau}")
    if kind == "combined":
        if theta < 0 or tau < 1:
            raise ValueError("combined selection needs theta >= 0 and tau >= 1")
        if tau < theta:
            raise ValueError(
                f"tau={tau} < theta={theta}: every filtered cell is kept, "
                "use the two-sided filter instead")


def _combined_mass(la: float, theta: int, tau: int) -> float:
    """theta a^theta - (theta - 1) a^(theta+1) - a^(tau+1), cancellation-free."""
    one_minus_a = -math.expm1(la)
    return (theta * one_minus_a * math.exp(theta * la)
            + math.exp((theta + 1) * la) * -math.expm1((tau - theta) * la))


def inclusion_probability(kind: str, spec: NoiseSpec, theta: int = 0, tau: int = 1) -> float:
    """Probability that a zero cell of M ends up in the summary.

    Args:
        kind: one of ``KINDS``.
        spec: noise parameters.
        theta: filter cut-off (filters and ``combined``).
        tau: sampling threshold (``threshold`` and ``combined``).
    """
    _check(kind, theta, tau)
    la, a = spec.log_alpha, spec.alpha
    if kind == "filter1":
        return math.exp(theta * la) / (1.0 + a)
    if kind == "filter2":
        return 2.0 * math.exp(theta * la) / (1.0 + a)
    one_minus_a2 = -math.expm1(2.0 * la)
    if kind == "threshold":
        return 2.0 * a * -math.expm1(tau * la) / (tau * one_minus_a2)
    return 2.0 * _combined_mass(la, theta, tau) / (tau * one_minus_a2)


def conditional_cdf(kind: str, spec: NoiseSpec, theta: int, tau: int, nu):
    """Pr[released value <= nu | a zero cell was selected].

    Vectorized over ``nu``. The threshold and combined laws use the
    four-piece closed forms; the two-sided filter splits its mass evenly
    between the positive and negative tails.
    """
    _check(kind, theta, tau)
    scalar = np.ndim(nu) == 0
    nu = np.asarray(nu, dtype=np.float64)
    la = spec.log_alpha
    a = math.exp(la)
    one_minus_a = -math.expm1(la)
    out = np.empty_like(nu)

    if kind == "filter1":
        out = np.where(nu < theta, 0.0, -np.expm1(np.maximum(nu - theta + 1, 0.0) * la))
    elif kind == "filter2":
        neg = 0.5 * alpha_pow(la, np.maximum(-nu - theta, 0.0))
        pos = 1.0 - 0.5 * alpha_pow(la, np.maximum(nu - theta + 1, 0.0))
        out = np.where(nu <= -theta, neg, np.where(nu >= theta, pos, 0.5))
    elif kind == "threshold":
        c = 1.0 / (2.0 * a * -math.expm1(tau * la))
        j = np.clip(-nu, 0.0, None)
        ap = alpha_pow(la, np.clip(nu, 0.0, None))
        low = tau * c * one_minus_a * alpha_pow(la, j)
        mid_neg = c * (j * one_minus_a * alpha_pow(la, j)
                       + alpha_pow(la, j + 1) * -np.expm1(np.clip(tau - j, 0.0, None) * la))
        pos = np.clip(nu, 0.0, None)
        mid_pos = 0.5 + a * c * (-np.expm1(pos * la) - pos * one_minus_a * ap)
        high = 0.5 + a * c * (-math.expm1(tau * la) - tau * ap * one_minus_a)
        out = np.select([nu <= -tau, nu <= 0, nu <= tau], [low, mid_neg, mid_pos], high)
    else:
        c = 1.0 / (2.0 * _combined_mass(la, theta, tau))
        j = np.clip(-nu, 0.0, None)
        low = tau * c * one_minus_a * alpha_pow(la, j)
        mid_neg = c * (j * one_minus_a * alpha_pow(la, j)
                       + alpha_pow(la, j + 1) * -np.expm1(np.clip(tau - j, 0.0, None) * la))
        p = np.clip(nu, 0.0, None)
        mid_pos = 0.5 + c * (theta * math.exp(theta * la)
                             - (theta - 1) * math.exp((theta + 1) * la)
                             - (p + 1) * alpha_pow(la, p + 1)
                             + p * alpha_pow(la, p + 2))
        high = 1.0 - tau * c * one_minus_a * alpha_pow(la, p + 1)
        out = np.select(
            [nu <= -tau, nu <= -theta, nu < max(theta, 1), nu <= tau],
            [low, mid_neg, np.full_like(nu, 0.5), mid_pos],
            high,
        )
    if scalar:
        return float(out)
    return out


def _magnitude_bound(kind: str, spec: NoiseSpec, theta: int, tau: int) -> int:
    """Magnitude beyond which the conditional tail mass is below 2**-60."""
    la = spec.log_alpha
    if kind in ("filter1", "filter2"):
        return theta + spec.max_magnitude
    # upper tail of both sampling laws: tau * C * (1 - a) * a^(nu + 1)
    if kind == "threshold":
        c = 1.0 / (2.0 * spec.alpha * -math.expm1(tau * la))
    else:
        c = 1.0 / (2.0 * _combined_mass(la, theta, tau))
    scale = tau * c * -math.expm1(la)
    extra = (math.log(TAIL_RESOLUTION) - math.log(scale)) / la
    return max(tau, int(math.ceil(extra))) + 1


def sample_conditional(kind: str, spec: NoiseSpec, theta: int, tau: int,
                       rng: np.random.Generator, size=None):
    """Draws values of selected zero cells by inverse transform.

    Filters invert their geometric tail in closed form. The sampling laws
    are symmetric, so a magnitude is found by bisection on the closed-form
    CDF and a fair coin sets the sign.
    """
    _check(kind, theta, tau)
    shape = () if size is None else size
    u = uniform_open_closed(rng, shape)
    la = spec.log_alpha
    if kind in ("filter1", "filter2"):
        # Pr[V - theta >= g] = a^g
        g = np.floor(np.log(u) / la)
        mag = theta + np.minimum(g, spec.max_magnitude).astype(np.int64)
        if kind == "filter1":
            out = mag
        else:
            out = mag * (rng.integers(0, 2, size=shape, dtype=np.int64) * 2 - 1)
    else:
        floor_mag = max(theta, 1)
        hi = np.full(np.shape(u), _magnitude_bound(kind, spec, theta, tau), dtype=np.int64)
        lo = np.full(np.shape(u), floor_mag - 1, dtype=np.int64)
        # Pr[|V| <= k] = 2 F(k) - 1; find the smallest k with F(k) - 1/2 >= u/2
        target = 0.5 * u
        while np.any(hi - lo > 1):
            mid = (lo + hi) // 2
            ok = conditional_cdf(kind, spec, theta, tau, mid) - 0.5 >= target
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        out = hi * (rng.integers(0, 2, size=shape, dtype=np.int64) * 2 - 1)
    if size is None:
        return int(out)
    return np.asarray(out, dtype=np.int64)


def select_zero_locations(table: SparseTable, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of ``k`` distinct cells with M(i) = 0.

    Rejection sampling (draw a cell, keep it if zero and unseen) runs in
    expected O(k) when zeros dominate; above half the zero cells the
    complement is enumerated instead.
    """
    zeros = table.m - table.n
    if k < 0 or k > zeros:
        raise ValueError(f"cannot pick {k} zero cells out of {zeros}")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if 2 * k >= zeros:
        mask = np.ones(table.m, dtype=bool)
        mask[table.indices] = False
        return rng.choice(np.flatnonzero(mask), size=k, replace=False).astype(np.int64)
    chosen = np.empty(0, dtype=np.int64)
    while chosen.size < k:
        need = k - chosen.size
        # oversample to cover rejections in one pass on average
        batch = int(need * table.m / (zeros - chosen.size)) + 16
        cand = rng.integers(0, table.m, size=batch, dtype=np.int64)
        cand = cand[~table.is_nonzero(cand)]
        pool = np.concatenate([chosen, cand])
        _, first = np.unique(pool, return_index=True)
        first.sort()
        chosen = pool[first][:k]
    return chosen


# ---------------------------------------------------------------------------
# Shortcut core


def _keep_nonzero(kind, values, theta, tau, rng):
    if kind == "filter1":
        return values >= theta
    if kind == "filter2":
        return np.abs(values) >= theta
    prob = np.minimum(np.abs(values) / tau, 1.0)
    draw = rng.random(values.size) < prob
    if kind == "threshold":
        return draw
    return draw & (np.abs(values) >= theta)


def _shortcut_draw(table: SparseTable, spec: NoiseSpec, rng, kind: str, theta: int, tau: int):
    """One shortcut pass; returns (indices, values, upgraded-zero flags)."""
    values = table.counts + sample_geometric(spec, rng, table.n)
    keep = _keep_nonzero(kind, values, theta, tau, rng)
    p = inclusion_probability(kind, spec, theta, tau)
    k = sample_binomial(table.m - table.n, p, rng)
    cells = select_zero_locations(table, k, rng)
    zvals = sample_conditional(kind, spec, theta, tau, rng, size=k)
    idx = np.concatenate([table.indices[keep], cells])
    vals = np.concatenate([values[keep], zvals])
    origin = np.concatenate([np.zeros(int(keep.sum()), dtype=bool), np.ones(k, dtype=bool)])
    return idx, vals, origin


def _sampling_kind(theta: int, tau: int):
    """Kind for 'filter at theta, then threshold-sample at tau'."""
    if theta <= 0:
        return "threshold"
    if tau <= theta:
        return "filter2"
    return "combined"


def filter_shortcut(table: SparseTable, theta: int, sided: str, spec: NoiseSpec,
                    rng: np.random.Generator) -> Summary:
    """High-pass filter summary in O(n + k).

    Args:
        table: the sparse input M.
        theta: cut-off, >= 1.
        sided: ``"one"`` keeps v >= theta, ``"two"`` keeps |v| >= theta.
        spec: noise parameters.
        rng: random generator.
    """
    kind = {"one": "filter1", "two": "filter2"}.get(sided)
    if kind is None:
        raise ValueError(f"sided must be 'one' or 'two', got {sided!r}")
    theta = int(theta)
    idx, vals, origin = _shortcut_draw(table, spec, rng, kind, theta, 1)
    return Summary.build(idx, vals, kind, spec, table.m, {"theta": theta}, origin)


def threshold_shortcut(table: SparseTable, tau: int, spec: NoiseSpec,
                       rng: np.random.Generator) -> Summary:
    """Threshold sample with Horvitz-Thompson weights max(|v|, tau)."""
    tau = int(tau)
    idx, vals, origin = _shortcut_draw(table, spec, rng, "threshold", 0, tau)
    summary = Summary.build(idx, vals, "threshold", spec, table.m, {"tau": tau}, origin)
    return adjust_weights(summary)


def filter_threshold_shortcut(table: SparseTable, theta: int, tau: int, spec: NoiseSpec,
                              rng: np.random.Generator) -> Summary:
    """Two-sided filter at theta followed by threshold sampling at tau."""
    theta, tau = int(theta), int(tau)
    if theta < 0:
        raise ValueError("theta must be >= 0")
    if tau <= theta:
        raise ValueError(
            f"tau={tau} <= theta={theta} keeps every filtered cell; "
            "use filter_shortcut(sided='two') instead")
    idx, vals, origin = _shortcut_draw(table, spec, rng, "combined", theta, tau)
    summary = Summary.build(idx, vals, "filter-threshold", spec, table.m,
                            {"theta": theta, "tau": tau}, origin)
    return adjust_weights(summary)


def expected_sample_size(table: SparseTable, theta: int, tau: int, spec: NoiseSpec) -> float:
    """Approximate expected size of a filter-then-threshold sample.

    Zero cells are exact; nonzero cells are scored on their noiseless count.
    """
    kind = _sampling_kind(theta, tau)
    p = inclusion_probability(kind, spec, theta, tau)
    w = np.abs(table.counts)
    if theta > 0:
        w = w[w >= theta]
    nonzero = w.size if kind == "filter2" else float(np.minimum(w / tau, 1.0).sum())
    return (table.m - table.n) * p + nonzero


def guess_tau(table: SparseTable, target: float, spec: NoiseSpec, theta: int = 0) -> int:
    """Largest integer tau whose expected sample size still reaches ``target``."""
    hi = max(2, int(math.ceil(2 * (table.l1 + table.m * geom_abs_mean(spec)) / max(target, 1))) + 1)
    if expected_sample_size(table, theta, hi, spec) >= target:
        return hi
    lo = 1
    if expected_sample_size(table, theta, lo, spec) < target:
        return 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if expected_sample_size(table, theta, mid, spec) >= target:
            lo = mid
        else:
            hi = mid
    return lo


def _priority_extract(idx, vals, origin, tau_guess, s, rng):
    """Attach priorities to a threshold sample and keep the top ``s``.

    Conditional on inclusion at threshold tau_guess, r is uniform on
    (0, min(|v| / tau_guess, 1)].
    """
    mag = np.abs(vals).astype(np.float64)
    r = uniform_open_closed(rng, mag.size) * np.minimum(mag / tau_guess, 1.0)
    prio = mag / r
    order = np.lexsort((idx, -prio))  # ties go to the smaller index
    top = order[:s]
    return idx[top], vals[top], origin[top], float(prio[order[s]])


def _priority_run(table, theta, s, spec, rng, tau_guess, method):
    s = int(s)
    if not 1 <= s < table.m:
        raise ValueError(f"sample size must satisfy 1 <= s < m, got s={s}, m={table.m}")
    if tau_guess is None:
        tau_guess = guess_tau(table, PRIORITY_OVERSAMPLE * s, spec, theta)
    tau_guess = max(1, int(tau_guess))
    for attempt in range(1, PRIORITY_MAX_ATTEMPTS + 1):
        kind = _sampling_kind(theta, tau_guess)
        idx, vals, origin = _shortcut_draw(table, spec, rng, kind, theta, tau_guess)
        if idx.size >= s + 1:
            idx, vals, origin, tau_s = _priority_extract(idx, vals, origin, tau_guess, s, rng)
            params = {"s": s, "tau_s": tau_s, "tau_guess": tau_guess, "attempts": attempt}
            if theta:
                params["theta"] = int(theta)
            summary = Summary.build(idx, vals, method, spec, table.m, params, origin)
            return adjust_weights(summary)
        tau_guess = max(1, tau_guess // 2)
    raise RuntimeError(
        f"could not draw {s + 1} candidates after {PRIORITY_MAX_ATTEMPTS} attempts; "
        "the noisy table has too few selectable cells for this sample size")


def priority_shortcut(table: SparseTable, s: int, spec: NoiseSpec, rng: np.random.Generator,
                      tau_guess: Optional[int] = None) -> Summary:
    """Priority sample of exactly ``s`` noisy cells in expected O(s + n).

    A threshold sample at ``tau_guess`` (by default sized to about 4s) holds
    every cell whose priority can reach the top s + 1. If it comes back with
    s or fewer cells the draw is repeated from scratch at tau_guess / 2.
    """
    return _priority_run(table, 0, s, spec, rng, tau_guess, "priority")


def filter_priority_shortcut(table: SparseTable, theta: int, s: int, spec: NoiseSpec,
                             rng: np.random.Generator, tau_guess: Optional[int] = None) -> Summary:
    """Two-sided filter at theta, then a priority sample of size ``s``."""
    if theta < 1:
        raise ValueError(f"theta must be >= 1, got {theta}")
    return _priority_run(table, int(theta), s, spec, rng, tau_guess, "filter-priority")


def adjust_weights(summary: Summary) -> Summary:
    """Sets estimation weights for the summary's method.

    Threshold-style samples get sign(v) * max(|v|, tau); priority samples
    use tau_s in place of tau. Filters and the full release keep weight = v.
    """
    method = summary.method
    vals = summary.values.astype(np.float64)
    if method in ("threshold", "filter-threshold"):
        floor = float(summary.params["tau"])
    elif method in ("priority", "filter-priority"):
        floor = summary.params.get("tau_s")
        if floor is None:
            raise ValueError("priority summary lacks tau_s")
    else:
        return summary.replace(weights=vals)
    weights = np.sign(vals) * np.maximum(np.abs(vals), floor)
    return summary.replace(weights=weights)


# ---------------------------------------------------------------------------
# Parameter selection


def choose_theta(m: int, n: int, t: float, spec: NoiseSpec, sided: str = "two") -> int:
    """Smallest theta >= 1 expected to upgrade at most ``t`` zero cells.

    Starts from log((1 + a) t / (m - n)) / log a (two-sided: (1 + a) / 2)
    and corrects for rounding so that (m-n) p_theta <= t < (m-n) p_(theta-1).
    """
    zeros = m - n
    if not 0 < t:
        raise ValueError("target size must be positive")
    kind = {"one": "filter1", "two": "filter2"}[sided]
    scale = (1.0 + spec.alpha) if sided == "one" else (1.0 + spec.alpha) / 2.0
    if t >= zeros * inclusion_probability(kind, spec, 1):
        return 1
    theta = max(1, int(math.ceil(math.log(scale * t / zeros) / spec.log_alpha)))
    while theta > 1 and zeros * inclusion_probability(kind, spec, theta - 1) <= t:
        theta -= 1
    while zeros * inclusion_probability(kind, spec, theta) > t:
        theta += 1
    return theta


def choose_tau(table: SparseTable, t: float, spec: NoiseSpec) -> int:
    """tau near (||M||_1 + 2 m a / (1 - a^2)) / t, at least 1."""
    if not t > 0:
        raise ValueError("target size must be positive")
    if math.isinf(t):
        return 1
    return max(1, int(round((table.l1 + table.m * geom_abs_mean(spec)) / t)))


# ---------------------------------------------------------------------------
# Reference pipelines


def geometric_full(table: SparseTable, spec: NoiseSpec, rng: np.random.Generator) -> Summary:
    """The plain geometric mechanism: every one of the m cells, noised."""
    if table.m > LABORIOUS_MAX_M:
        raise ValueError(f"m={table.m} exceeds the dense limit {LABORIOUS_MAX_M}")
    values = table.to_dense() + sample_geometric(spec, rng, table.m)
    origin = np.ones(table.m, dtype=bool)
    origin[table.indices] = False
    return Summary(np.arange(table.m, dtype=np.int64), values, values.astype(np.float64),
                   "geometric-full", spec, table.m, {}, origin)


def laborious_path(table: SparseTable, method: str, params: dict, spec: NoiseSpec,
                   rng: np.random.Generator) -> Summary:
    """Materialize all of M' and apply the literal summary definition.

    Only for verification and benchmarks; cost is O(m).
    """
    if table.m > LABORIOUS_MAX_M:
        raise ValueError(f"m={table.m} exceeds the dense limit {LABORIOUS_MAX_M}")
    dense = table.to_dense()
    zero = dense == 0
    noisy = dense + sample_geometric(spec, rng, table.m)
    theta = int(params.get("theta", 0))
    mag = np.abs(noisy)

    if method == "geometric-full":
        return Summary(np.arange(table.m), noisy, noisy.astype(np.float64), method, spec,
                       table.m, {}, zero)
    if method == "filter1":
        keep = noisy >= theta
    elif method == "filter2":
        keep = mag >= theta
    elif method in ("threshold", "filter-threshold"):
        tau = int(params["tau"])
        keep = rng.random(table.m) < np.minimum(mag / tau, 1.0)
        if method == "filter-threshold":
            keep &= mag >= theta
    elif method in ("priority", "filter-priority"):
        s = int(params["s"])
        if method == "filter-priority":
            noisy = np.where(mag >= theta, noisy, 0)
            mag = np.abs(noisy)
        prio = mag / uniform_open_closed(rng, table.m)
        cand = np.argpartition(-prio, s)[: s + 1]
        order = cand[np.lexsort((cand, -prio[cand]))]
        if prio[order[s]] <= 0:
            raise RuntimeError("fewer than s + 1 cells have positive priority")
        top = order[:s]
        out = {"s": s, "tau_s": float(prio[order[s]])}
        if theta:
            out["theta"] = theta
        summary = Summary.build(top, noisy[top], method, spec, table.m, out, zero[top])
        return adjust_weights(summary)
    else:
        raise ValueError(f"unknown method {method!r}")
    idx = np.flatnonzero(keep)
    out = {k: int(v) for k, v in params.items() if k in ("theta", "tau")}
    summary = Summary.build(idx, noisy[idx], method, spec, table.m, out, zero[idx])
    return adjust_weights(summary)


def summarize(table: SparseTable, method: str, params: dict, spec: NoiseSpec,
              rng: np.random.Generator) -> Summary:
    """Dispatches to the shortcut generator for ``method``."""
    if method == "filter1":
        return filter_shortcut(table, params["theta"], "one", spec, rng)
    if method == "filter2":
        return filter_shortcut(table, params["theta"], "two", spec, rng)
    if method == "threshold":
        return threshold_shortcut(table, params["tau"], spec, rng)
    if method == "filter-threshold":
        return filter_threshold_shortcut(table, params["theta"], params["tau"], spec, rng)
    if method == "priority":
        return priority_shortcut(table, params["s"], spec, rng, params.get("tau_guess"))
    if method == "filter-priority":
        return filter_priority_shortcut(table, params["theta"], params["s"], spec, rng,
                                        params.get("tau_guess"))
    if method == "geometric-full":
        return geometric_full(table, spec, rng)
    raise ValueError(f"unknown method {method!r}")
