"""Shared fixtures and independent brute-force oracles.

The oracles here re-derive every metric straight from its definition with
plain O(n^2) loops so the vectorized implementations have something
independent to be checked against.
"""

import numpy as np
import pytest


def brute_force_ctd(risk_scores, times, indicators, censoring, horizon):
    """Pair-by-pair concordance: weight 1/G(T_i-)^2, ties count half."""
    numer = 0.0
    denom = 0.0
    n = len(times)
    for i in range(n):
        if indicators[i] != 1 or times[i] > horizon:
            continue
        if censoring is None:
            w = 1.0
        else:
            g = float(censoring.evaluate_before(times[i]))
            if g <= 0.0:
                continue
            w = 1.0 / g**2
        for j in range(n):
            if times[j] <= times[i]:
                continue
            denom += w
            if risk_scores[i] > risk_scores[j]:
                numer += w
            elif risk_scores[i] == risk_scores[j]:
                numer += 0.5 * w
    if denom == 0.0:
        return None
    return numer / denom


def brute_force_brier(predicted_survival, times, indicators, censoring, horizon):
    """Term-by-term weighted squared residuals, censored-early terms zero."""
    total = 0.0
    n = len(times)
    for i in range(n):
        if times[i] <= horizon and indicators[i] == 1:
            g = 1.0 if censoring is None else float(censoring.evaluate_before(times[i]))
            total += predicted_survival[i] ** 2 / g
        elif times[i] > horizon:
            g = 1.0 if censoring is None else float(censoring.evaluate(horizon))
            total += (1.0 - predicted_survival[i]) ** 2 / g
    return total / n


def brute_force_km(times, event_flags):
    """Product-limit over the flagged events with the full at-risk set.

    Returns (times, values) of the right-continuous step function; no tie
    adjustment between flagged and unflagged observations (callers pass
    tie-free data).
    """
    times = np.asarray(times, dtype=float)
    event_flags = np.asarray(event_flags)
    out_t, out_v = [], []
    value = 1.0
    for t in np.unique(times):
        at_risk = int((times >= t).sum())
        events = int(((times == t) & (event_flags == 1)).sum())
        if events:
            value *= 1.0 - events / at_risk
            out_t.append(t)
            out_v.append(value)
    return np.array(out_t), np.array(out_v)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def relu_preactivations(root):
    """Values feeding each ReLU in a built graph, one array per node."""
    out, stack, seen = [], [root], set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.op == "relu":
            out.append(node.parents[0].value)
        stack.extend(node.parents)
    return out


def is_fd_checkable(root, margin):
    """True when no ReLU input sits within ``margin`` of its kink and every
    unit is active in at least one row (dead units have exactly-zero
    gradients, which the relative-error floor turns into pure FD noise)."""
    for pre in relu_preactivations(root):
        if np.min(np.abs(pre)) < margin:
            return False
        if np.any(pre.max(axis=0) < margin):
            return False
    return True


def build_checkable_loss(encoder, risks, training, start_seed, margin, n=8, m=5, hidden=(6, 6)):
    """Random loss graph over ``n`` samples, redrawn until FD-checkable."""
    from cthazard.discretization import per_sample_grid
    from cthazard.loss import make_batch, model_loss
    from cthazard.model import HazardNetwork

    for seed in range(start_seed, start_seed + 200):
        gen = np.random.default_rng(seed)
        net = HazardNetwork(3, risks, hidden, encoder, embed_dim=4, rng=gen)
        if not training:
            net.bn1.running_mean[:] = gen.normal(size=hidden[0]) * 0.1
            net.bn1.running_var[:] = 0.5 + gen.random(hidden[0])
            net.bn2.running_mean[:] = gen.normal(size=hidden[1]) * 0.1
            net.bn2.running_var[:] = 0.5 + gen.random(hidden[1])
        X = gen.normal(size=(n, 3))
        T = np.abs(gen.normal(size=n)) + 0.1
        labels = gen.integers(0, risks + 1, size=n)
        batch = make_batch(X, T, labels, [per_sample_grid(t, m) for t in T], risks)
        loss = model_loss(net, batch, training=training)
        if is_fd_checkable(loss, margin):
            return net, batch, loss
    raise RuntimeError("no FD-checkable batch found in 200 seeds")


def random_survival_data(rng, n, censor_fraction=0.4, tie_prob=0.0):
    """Random times/indicators/scores for metric oracle comparisons."""
    times = rng.exponential(1.0, size=n)
    if tie_prob > 0:
        # introduce ties by rounding a subset to one decimal
        mask = rng.random(n) < tie_prob
        times[mask] = np.round(times[mask], 1) + 0.05
    indicators = (rng.random(n) > censor_fraction).astype(int)
    scores = rng.normal(size=n)
    return times, indicators, scores
