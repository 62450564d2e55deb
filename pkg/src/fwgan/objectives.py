"""Critic objectives built on importance weights over generated samples.

For a critic ``T`` and weights ``r`` on the generated batch, the generalized
objective is::

    ell_f(T, r) = mean_Q f(r) + mean_P T - mean_Q (r * T)

Minimizing over ``r`` in different sets recovers familiar critics: ``r = 1``
gives the IPM/WGAN critic, ``r >= 0`` unconstrained gives the variational
f-divergence (NWJ) bound, and the simplex ``{r >= 0, mean r = 1}`` gives the
f-WGAN critic, whose KL minimizer is a softmax of ``T``.

Functions accept either :class:`~fwgan.gradcore.Tensor` inputs (and return
tensors, so they can sit inside a training graph) or array-likes (and return
floats / numpy arrays).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gradcore as gc
from .gradcore import DomainError, Tensor


class ConvergenceError(RuntimeError):
    """Iterative solver did not reach its tolerance."""


class AbsoluteContinuityError(ValueError):
    """``p`` puts mass where ``q`` has none, so the divergence is infinite."""


class ConstraintSet(enum.Enum):
    SINGLETON_ONE = "singleton1"
    SIMPLEX_DELTA = "simplex_delta"
    ALL_NONNEG = "all_nonneg"


# ---------------------------------------------------------------------------
# f-generators


@dataclass(frozen=True)
class FGenerator:
    kind: str
    f: Callable[[np.ndarray], np.ndarray]
    f_prime: Callable[[np.ndarray], np.ndarray]
    f_prime_inv: Callable[[np.ndarray], np.ndarray]
    conjugate: Callable[[np.ndarray], np.ndarray]

    def __repr__(self) -> str:
        return f"FGenerator({self.kind})"


def _kl_f(u):
    u = np.asarray(u, dtype=np.float64)
    safe = np.where(u > 0, u, 1.0)
    return np.where(u > 0, u * np.log(safe), 0.0)


def _chi2_conj(t):
    t = np.asarray(t, dtype=np.float64)
    return np.where(t >= -2.0, t + 0.25 * t * t, -1.0)


KL = FGenerator(
    kind="KL",
    f=_kl_f,
    f_prime=lambda u: np.log(u) + 1.0,
    f_prime_inv=lambda t: np.exp(np.asarray(t, dtype=np.float64) - 1.0),
    conjugate=lambda t: np.exp(np.asarray(t, dtype=np.float64) - 1.0),
)

CHI2 = FGenerator(
    kind="ChiSq",
    f=lambda u: (np.asarray(u, dtype=np.float64) - 1.0) ** 2,
    f_prime=lambda u: 2.0 * (np.asarray(u, dtype=np.float64) - 1.0),
    f_prime_inv=lambda t: np.maximum(1.0 + 0.5 * np.asarray(t, dtype=np.float64), 0.0),
    conjugate=_chi2_conj,
)

GENERATORS = {"KL": KL, "ChiSq": CHI2}


def get_generator(f: FGenerator | str) -> FGenerator:
    if isinstance(f, FGenerator):
        return f
    try:
        return GENERATORS[f]
    except KeyError:
        raise ValueError(f"unknown f-generator {f!r}; expected one of {sorted(GENERATORS)}") from None


def f_eval(f: FGenerator | str, u):
    """Generator value; ``u`` must be nonnegative (KL uses ``0 log 0 = 0``)."""
    f = get_generator(f)
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr < 0):
        raise DomainError(f"{f.kind}: f is defined on [0, inf)")
    out = f.f(arr)
    return float(out) if np.ndim(u) == 0 else out


def f_conjugate(f: FGenerator | str, t):
    f = get_generator(f)
    out = f.conjugate(t)
    return float(out) if np.ndim(t) == 0 else out


# tensor-level versions used inside graphs


def _f_tensor(f: FGenerator, r: Tensor) -> Tensor:
    if np.any(r.data < 0):
        raise DomainError(f"{f.kind}: importance weights must be nonnegative")
    if f.kind == "KL":
        # r log r with 0 log 0 = 0; the zero entries get a zero gradient
        positive = r.data > 0
        safe = gc.add(gc.mul(r, positive.astype(np.float64)), (~positive).astype(np.float64))
        return gc.mul(r, gc.log(safe))
    if f.kind == "ChiSq":
        return gc.square(gc.sub(r, 1.0))
    raise ValueError(f"no tensor form for {f.kind}")


def _conjugate_tensor(f: FGenerator, t: Tensor) -> Tensor:
    if f.kind == "KL":
        return gc.exp(gc.sub(t, 1.0))
    if f.kind == "ChiSq":
        inside = (t.data >= -2.0).astype(np.float64)
        quad = gc.add(t, gc.scale(gc.square(t), 0.25))
        return gc.add(gc.mul(quad, inside), -(1.0 - inside))
    raise ValueError(f"no tensor form for {f.kind}")


def _wrap(*values) -> tuple[bool, list[Tensor]]:
    graph = any(isinstance(v, Tensor) for v in values)
    return graph, [gc.tensor(v) for v in values]


def _out(graph: bool, t: Tensor):
    if graph:
        return t
    return t.item() if t.shape == (1, 1) else np.array(t.data)


def _out_column(graph: bool, t: Tensor):
    return t if graph else np.array(t.data[:, 0])


# ---------------------------------------------------------------------------
# objectives and estimators


def ell_f(f: FGenerator | str, t_p, t_q, r):
    """``mean f(r) + mean T_P - mean(r * T_Q)``."""
    f = get_generator(f)
    graph, (tp, tq, rr) = _wrap(t_p, t_q, r)
    if rr.shape != tq.shape:
        raise gc.DimensionError(f"weights shape {rr.shape} != critic shape {tq.shape}")
    value = gc.add(gc.mean(_f_tensor(f, rr)), gc.sub(gc.mean(tp), gc.mean(gc.mul(rr, tq))))
    return _out(graph, value)


def kl_weights(t_q, temp: float = 1.0):
    """Minimizer of ``ell_f`` over the empirical simplex for ``f(u) = u log u``.

    ``r_i = m * softmax(T / temp)_i``, computed through logsumexp so it is
    exact for constant inputs and stable for any magnitude.
    """
    if temp <= 0:
        raise ValueError("temp must be positive")
    graph, (tq,) = _wrap(t_q)
    m = tq.shape[0]
    scaled = gc.scale(tq, 1.0 / temp)
    # weights are exactly shift invariant, so the max shift carries no gradient
    scaled = gc.sub(scaled, float(np.max(scaled.data)))
    log_norm = gc.sub(gc.logsumexp(scaled), math.log(m))
    return _out_column(graph, gc.exp(gc.sub(scaled, log_norm)))


def chi2_clamp_level(t_q) -> float | None:
    """Smallest ``c`` making the weights of ``max(T, c)`` nonnegative.

    Returns ``None`` when the raw critic values already give nonnegative
    weights.  ``c - mean(max(T, c))`` is nondecreasing in ``c`` and linear
    between consecutive sorted values, so a bisection over the sorted values
    brackets the root and a linear solve finishes it.
    """
    t = np.sort(np.asarray(getattr(t_q, "data", t_q), dtype=np.float64).reshape(-1))
    m = t.size
    suffix = np.concatenate([np.cumsum(t[::-1])[::-1], [0.0]])  # suffix[k] = sum t[k:]

    def gap(k: int) -> float:
        # value of c - mean(max(T, c)) + 2 at c = t[k]; entries t[:k+1] are clamped
        c = t[k]
        return c - ((k + 1) * c + suffix[k + 1]) / m + 2.0

    if gap(0) >= 0:
        return None
    lo, hi = 0, m - 1  # gap(lo) < 0; gap(m - 1) = 2 > 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    k = lo + 1  # number clamped on the bracket [t[lo], t[hi]]
    return (suffix[k] / m - 2.0) / (1.0 - k / m)


def chi2_weights(t_q):
    """Minimizer over the empirical simplex for ``f(u) = (u - 1)^2``.

    ``r = (T - mean T + 2) / 2``; when that would go negative the critic is
    clamped from below at :func:`chi2_clamp_level` first.
    """
    graph, (tq,) = _wrap(t_q)
    c = chi2_clamp_level(tq.data)
    t_hat = tq if c is None else gc.max_scalar(tq, c)
    r = gc.scale(gc.add(gc.sub(t_hat, gc.mean(t_hat)), 2.0), 0.5)
    if c is not None:
        # the clamped minimum sits at exactly zero up to rounding
        r = gc.max_scalar(r, 0.0) if not graph else r
    return _out_column(graph, r)


def estimator_nwj(f: FGenerator | str, t_p, t_q, *, strict: bool = False):
    """Variational lower bound ``mean T_P - mean f*(T_Q)``."""
    f = get_generator(f)
    graph, (tp, tq) = _wrap(t_p, t_q)
    if strict and f.kind == "ChiSq" and np.any(tq.data < -2.0):
        raise DomainError("ChiSq: critic values below -2 fall on the flat part of f*")
    return _out(graph, gc.sub(gc.mean(tp), gc.mean(_conjugate_tensor(f, tq))))


def estimator_ipm(t_p, t_q):
    graph, (tp, tq) = _wrap(t_p, t_q)
    return _out(graph, gc.sub(gc.mean(tp), gc.mean(tq)))


def estimator_dv(t_p, t_q):
    """``mean T_P - log mean exp(T_Q)``: the KL objective at its optimal weights."""
    graph, (tp, tq) = _wrap(t_p, t_q)
    m = tq.shape[0]
    return _out(graph, gc.add(gc.sub(gc.mean(tp), gc.logsumexp(tq)), math.log(m)))


def inner_min(f: FGenerator | str, t_p, t_q, constraint: ConstraintSet):
    """Closed-form ``inf_r ell_f`` over one of the supported weight sets."""
    f = get_generator(f)
    if constraint is ConstraintSet.SINGLETON_ONE:
        return estimator_ipm(t_p, t_q)
    if constraint is ConstraintSet.ALL_NONNEG:
        return estimator_nwj(f, t_p, t_q)
    if f.kind == "KL":
        return estimator_dv(t_p, t_q)
    return ell_f(f, t_p, t_q, chi2_weights(t_q))


def f_divergence_discrete(p, q, f: FGenerator | str) -> float:
    """Exact ``sum_i q_i f(p_i / q_i)`` on a finite support."""
    f = get_generator(f)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise gc.DimensionError("p and q must share a support")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or not math.isclose(v.sum(), 1.0, abs_tol=1e-9):
            raise ValueError(f"{name} is not a probability vector")
    if np.any((q == 0) & (p > 0)):
        raise AbsoluteContinuityError("p is not absolutely continuous with respect to q")
    support = q > 0
    return float(np.sum(q[support] * f.f(p[support] / q[support])))


# ---------------------------------------------------------------------------
# brute-force verifier for the closed forms


def project_scaled_simplex(y: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum x = total}`` (sort-based)."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, y.size + 1)
    k = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[k] / (k + 1)
    return np.maximum(y - tau, 0.0)


def _inner_value_and_grad(f: FGenerator, tq: np.ndarray, r: np.ndarray) -> tuple[float, np.ndarray]:
    # summed (not averaged) form of mean f(r) - mean(r T); same minimizer
    if f.kind == "KL":
        positive = r > 0
        logs = np.log(np.where(positive, r, 1.0))
        value = float(np.sum(np.where(positive, r * logs, 0.0)) - r @ tq)
        # at r = 0 the derivative is -inf; a large finite slope keeps the step defined
        grad = np.where(positive, logs + 1.0, -50.0) - tq
        return value, grad
    value = float(np.sum((r - 1.0) ** 2) - r @ tq)
    return value, 2.0 * (r - 1.0) - tq


def simplex_inner_min_oracle(
    f: FGenerator | str,
    t_p,
    t_q,
    iters: int = 20000,
    step: float = 1.0,
    tol: float = 1e-6,
    max_batch: int = 64,
) -> tuple[np.ndarray, float]:
    """Minimize ``ell_f`` over ``{r >= 0, mean r = 1}`` numerically.

    Accelerated projected gradient with backtracking line search and
    function-value restarts; ``step`` is the initial step size.  Returns the
    minimizer and the objective value; raises :class:`ConvergenceError` if
    the projected-gradient residual is still above ``tol`` when the
    iterations run out or progress stalls at rounding level.
    """
    f = get_generator(f)
    tp = np.asarray(getattr(t_p, "data", t_p), dtype=np.float64).reshape(-1)
    tq = np.asarray(getattr(t_q, "data", t_q), dtype=np.float64).reshape(-1)
    m = tq.size
    if m > max_batch:
        raise ValueError(f"oracle is meant for small batches (m <= {max_batch}), got {m}")
    total = float(m)

    x = np.ones(m)
    fx, _ = _inner_value_and_grad(f, tq, x)
    y, theta, lip = x.copy(), 1.0, 1.0 / step
    residual = math.inf
    restarted = False
    for _ in range(iters):
        fy, gy = _inner_value_and_grad(f, tq, y)
        while True:
            candidate = project_scaled_simplex(y - gy / lip, total)
            fc, _ = _inner_value_and_grad(f, tq, candidate)
            d = candidate - y
            if fc <= fy + gy @ d + 0.5 * lip * (d @ d) + 1e-15 * abs(fy):
                break
            lip *= 2.0
        # gradient-mapping norm; zero exactly at the constrained minimizer
        residual = float(np.max(np.abs(d))) * lip
        if residual < tol:
            if fc <= fx:
                x, fx = candidate, fc
            break
        if fc > fx:
            if restarted:
                # a plain projected step from x no longer decreases f: rounding floor
                break
            y, theta, restarted = x.copy(), 1.0, True
            continue
        restarted = False
        theta_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        y = candidate + ((theta - 1.0) / theta_next) * (candidate - x)
        x, fx, theta = candidate, fc, theta_next
        lip = max(lip * 0.9, 1e-3)
    if residual > tol:
        raise ConvergenceError(
            f"projected-gradient residual {residual:.3e} > {tol:.1e} after {iters} iterations"
        )
    return x, float(ell_f(f, tp, tq, x))


# ---------------------------------------------------------------------------
# training losses (hinge form)


def _sample_weights(variant: str, t_q: Tensor, temp: float, stop_weight_grad: bool, force_unit: bool) -> Tensor | None:
    if variant in ("wgan", "wgan_hinge") or force_unit:
        return None
    if variant not in ("klwgan", "klwgan_hinge"):
        raise ValueError(f"unknown loss variant {variant!r}")
    w = kl_weights(t_q, temp)
    return gc.stop_gradient(w) if stop_weight_grad else w


def critic_loss(
    variant: str,
    t_p,
    t_q,
    temp: float = 1.0,
    *,
    stop_weight_grad: bool = False,
    force_unit_weights: bool = False,
):
    """Hinge critic losses ``(mean relu(1 - T_P), mean relu(1 + w * T_Q))``.

    ``w`` is 1 for WGAN and the KL weights of ``T_Q / temp`` for KL-WGAN; by
    default gradients flow through ``w``.
    """
    if temp <= 0:
        raise ValueError("temp must be positive")
    graph, (tp, tq) = _wrap(t_p, t_q)
    w = _sample_weights(variant, tq, temp, stop_weight_grad, force_unit_weights)
    fake = tq if w is None else gc.mul(tq, w)
    loss_real = gc.mean(gc.relu(gc.sub(1.0, tp)))
    loss_fake = gc.mean(gc.relu(gc.add(fake, 1.0)))
    return _out(graph, loss_real), _out(graph, loss_fake)


def gen_loss(
    variant: str,
    t_q,
    temp: float = 1.0,
    *,
    stop_weight_grad: bool = False,
    force_unit_weights: bool = False,
):
    """Generator loss ``-mean(w * T_Q)`` with the same weights as the critic."""
    if temp <= 0:
        raise ValueError("temp must be positive")
    graph, (tq,) = _wrap(t_q)
    w = _sample_weights(variant, tq, temp, stop_weight_grad, force_unit_weights)
    fake = tq if w is None else gc.mul(tq, w)
    return _out(graph, gc.scale(gc.mean(fake), -1.0))


def fgan_critic_loss(t_p, t_q):
    """Negative NWJ bound for ``f(u) = u log u``."""
    graph, (tp, tq) = _wrap(t_p, t_q)
    return _out(graph, gc.scale(estimator_nwj(KL, tp, tq), -1.0))


def fgan_gen_loss(t_q):
    graph, (tq,) = _wrap(t_q)
    return _out(graph, gc.scale(gc.mean(_conjugate_tensor(KL, tq)), -1.0))
