"""Closed-form machinery: occupancy probabilities, expected slot counts,
phase-2 selection thresholds, and expected per-node energy.

All formulas take the rough estimates as plug-in values wherever the
participation probabilities appear, mirroring how the base station actually
evaluates them online.
"""

from __future__ import annotations

import math

from .core import LOAD_FACTOR, ProtocolConfig
from .homogeneous import participation_probability

# Calibrated constants, stored exactly as printed.
C_0366 = 0.366
C_03679 = 0.3679
C_099 = 0.99
C_04751 = 0.4751   # 1 - 2.6 e^{-1.6}
C_07981 = 0.7981   # 1 - e^{-1.6}
LEVEL1_OFFSET = 3.88
LEVEL2_OFFSET = 4.0


class NoBracket(RuntimeError):
    """A threshold function does not cross the requested level in (0, 10]."""


def _ceil(x) -> int:
    return math.ceil(x - 1e-12)


def occupancy(n_b, p_b, ell):
    """(u, v): probability that no / exactly one of n_b nodes, each
    participating with probability p_b and picking one of ell blocks
    uniformly, lands in a given block."""
    if n_b == 0:
        return 1.0, 0.0
    q = p_b / ell
    u = (1.0 - q) ** n_b
    v = n_b * q * (1.0 - q) ** (n_b - 1)
    return u, v


def block_probability(h, t) -> float:
    """Trial-mode block distribution: 2^-h, tail mass folded onto block t."""
    if h < t:
        return 2.0 ** -h
    return 2.0 ** -(t - 1)


def occupancy_geometric(n, h, t):
    """(u', v') for the trial-mode geometric block choice."""
    ph = block_probability(h, t)
    if n == 0:
        return 1.0, 0.0
    u = (1.0 - ph) ** n
    v = n * ph * (1.0 - ph) ** (n - 1)
    return u, v


def _participations(rough, ell, T):
    return [participation_probability(ell, _get(rough, b))
            for b in range(1, T + 1)]


def q_probs(n, rough, ell, T):
    """Probabilities of the three all-slot-collision cases of one block:
    Q1 (>= 2 type-1 nodes), Q2 (exactly one type-1, every other type
    represented), Q3 (no type-1, >= 2 of every other type)."""
    p = _participations(rough, ell, T)
    uv = [occupancy(_get(n, b), p[b - 1], ell) for b in range(1, T + 1)]
    u1, v1 = uv[0]
    q1 = 1.0 - u1 - v1
    q2 = v1
    q3 = u1
    for u, v in uv[1:]:
        q2 *= 1.0 - u
        q3 *= 1.0 - u - v
    return q1, q2, q3


def expected_K_R(n, rough, ell, T):
    q1, q2, q3 = q_probs(n, rough, ell, T)
    return ell * (q1 + q2 + q3), ell * q1


def lambda_I(T, t_T, s_w, ek, er) -> float:
    """Expected slots of one trial-mode three-stage execution, given the
    (empirically estimated) stage-2 / stage-3 block moments."""
    return ((T - 1) * t_T + _ceil(t_T / s_w)
            + ek + _ceil(ek / s_w) + (T - 1) * er)


def lambda_II(n, rough, ell, T, s_w) -> float:
    """Expected slots of the balls-and-bins three-stage execution."""
    ek, er = expected_K_R(n, rough, ell, T)
    return ((T - 1) * ell + _ceil(ell / s_w)
            + ek + _ceil(ek / s_w) + (T - 1) * er)


def G1(T) -> float:
    return (1 + 6 * T) - 7.0 * C_04751 ** (T - 1)


def G2(T) -> float:
    return (1 + 6 * T) - 7.0 * C_07981 ** (T - 1)


def f(x, T) -> float:
    return C_0366 ** x * (G1(T) + x * G2(T))


def f1(x, T) -> float:
    return C_03679 ** x * (G1(T) + x * G2(T) / C_099)


def zeta(T, which, tol=1e-6) -> float:
    """zeta_1(T): where f crosses 6T - 3.88; zeta_2(T): where f1 crosses
    6T - 4.  Both functions are strictly decreasing in x, so a bisection
    on (0, 10] suffices."""
    if which == 1:
        fn, level = f, 6 * T - LEVEL1_OFFSET
    elif which == 2:
        fn, level = f1, 6 * T - LEVEL2_OFFSET
    else:
        raise ValueError("which must be 1 or 2")
    lo, hi = 1e-9, 10.0
    g = lambda x: fn(x, T) - level
    if g(lo) <= 0 or g(hi) >= 0:
        raise NoBracket(f"threshold function does not cross level for T={T}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def case2_condition_lhs(n1) -> tuple:
    """Left sides (G1-coefficient, G2-coefficient) of the large-population
    necessary condition; callers compare G1(T)*a + G2(T)*b against 6T-4."""
    a = (1.0 - LOAD_FACTOR / n1) ** n1
    b = LOAD_FACTOR * (1.0 - LOAD_FACTOR / n1) ** (n1 - 1)
    return a, b


def select_phase2(rough, ell, T, s_w=6):
    """Choose the phase-2 method from the rough estimates.

    Returns (method, zone) with method in {"SSBB", "TRepBB"} and zone
    recording whether a threshold decided ("zeta1" / "zeta2" / "load") or
    the indeterminate band was resolved by the direct expected-slot
    comparison ("indeterminate").
    """
    n1 = _get(rough, 1)
    if n1 >= LOAD_FACTOR * ell:
        return "TRepBB", "load"
    if n1 <= zeta(T, 1) * ell:
        return "SSBB", "zeta1"
    if n1 >= zeta(T, 2) * ell:
        return "TRepBB", "zeta2"
    lam = lambda_II(rough, rough, ell, T, s_w)
    return ("SSBB" if lam <= T * ell else "TRepBB"), "indeterminate"


def n1_star(T, ell, s_w=6) -> float:
    """Rough type-1 population at which the balls-and-bins scheme and the
    per-type repetition baseline take equal expected phase-2 time, with the
    other types' populations taken to infinity."""
    one_minus_u = C_07981
    one_minus_uv = C_04751

    def gap(n1):
        p1 = participation_probability(ell, n1)
        u1, v1 = occupancy(n1, p1, ell)
        q1 = 1.0 - u1 - v1
        q2 = v1 * one_minus_u ** (T - 1)
        q3 = u1 * one_minus_uv ** (T - 1)
        ek = ell * (q1 + q2 + q3)
        er = ell * q1
        lam = ((T - 1) * ell + _ceil(ell / s_w)
               + ek + _ceil(ek / s_w) + (T - 1) * er)
        return lam - T * ell

    lo, hi = 1e-6, LOAD_FACTOR * ell
    if gap(lo) >= 0 or gap(hi) <= 0:
        raise NoBracket("no crossover in (0, 1.6*ell)")
    while hi - lo > 1e-6 * ell:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _energy_components_uniform(n, rough, ell, T, b, gammas, bp1, frame_slots):
    """Expected (tx, rx, idle) slot counts and energy of a type-b node in a
    uniform-block (balls-and-bins) execution, participation included."""
    gt, gr, gi = gammas
    p = _participations(rough, ell, T)
    uv = [occupancy(_get(n, i), p[i - 1], ell) for i in range(1, T + 1)]
    if b == 1:
        u1m, _ = occupancy(max(_get(n, 1) - 1, 0), p[0], ell)
        qp1 = 1.0 - u1m
        qp2 = u1m
        for u, _v in uv[1:]:
            qp2 *= 1.0 - u
        tx = p[0] * ((T - 1) + qp1 + qp2)
        rx = float(bp1)
    else:
        u1, v1 = uv[0]
        qpp1 = 1.0 - u1 - v1
        qppp2 = v1
        qppp3 = u1
        ubm, _ = occupancy(max(_get(n, b) - 1, 0), p[b - 1], ell)
        qppp3 *= 1.0 - ubm
        for i in range(2, T + 1):
            if i == b:
                continue
            u, v = uv[i - 1]
            qppp2 *= 1.0 - u
            qppp3 *= 1.0 - u - v
        tx = p[b - 1] * (1.0 + qpp1)
        rx = bp1 + p[b - 1] * (qpp1 + qppp2 + qppp3)
    idle = frame_slots - tx - rx
    return {"tx_slots": tx, "rx_slots": rx, "idle_slots": idle,
            "energy": tx * gt + rx * gr + idle * gi}


def _energy_components_trial(n, t_T, T, b, gammas, s_w, frame_slots):
    """Same as above for the trial mode, averaging over the node's own
    geometrically chosen block."""
    gt, gr, gi = gammas
    bp1 = _ceil(t_T / s_w)
    tx = 0.0
    rx = float(bp1)
    for h in range(1, t_T + 1):
        ph = block_probability(h, t_T)
        if b == 1:
            u1m, _ = occupancy_geometric(max(_get(n, 1) - 1, 0), h, t_T)
            qp1 = 1.0 - u1m
            qp2 = u1m
            for i in range(2, T + 1):
                u, _v = occupancy_geometric(_get(n, i), h, t_T)
                qp2 *= 1.0 - u
            tx += ph * ((T - 1) + qp1 + qp2)
        else:
            u1, v1 = occupancy_geometric(_get(n, 1), h, t_T)
            qpp1 = 1.0 - u1 - v1
            qppp2 = v1
            ubm, _ = occupancy_geometric(max(_get(n, b) - 1, 0), h, t_T)
            qppp3 = u1 * (1.0 - ubm)
            for i in range(2, T + 1):
                if i == b:
                    continue
                u, v = occupancy_geometric(_get(n, i), h, t_T)
                qppp2 *= 1.0 - u
                qppp3 *= 1.0 - u - v
            tx += ph * (1.0 + qpp1)
            rx += ph * (qpp1 + qppp2 + qppp3)
    idle = frame_slots - tx - rx
    return {"tx_slots": tx, "rx_slots": rx, "idle_slots": idle,
            "energy": tx * gt + rx * gr + idle * gi}


def expected_energy_3ss(n, config: ProtocolConfig, mode, rough=None,
                        frame_slots=None, moments=None):
    """Per-type expected energy components of one three-stage execution.

    mode "trial": geometric blocks over t_T; frame_slots defaults to
    lambda_I evaluated at the supplied (empirical) moments = (ek, er).
    mode "bb": uniform blocks over ell with participation from rough;
    frame_slots defaults to lambda_II.
    """
    T = len(n) if not isinstance(n, dict) else len(n.keys())
    gammas = config.gammas
    out = {}
    if mode == "trial":
        if frame_slots is None:
            if moments is None:
                raise ValueError("trial mode needs frame_slots or moments")
            frame_slots = lambda_I(T, config.t_T, config.s_w, *moments)
        for b in range(1, T + 1):
            out[b] = _energy_components_trial(n, config.t_T, T, b, gammas,
                                              config.s_w, frame_slots)
    elif mode == "bb":
        if rough is None:
            raise ValueError("bb mode needs rough estimates")
        if frame_slots is None:
            frame_slots = lambda_II(n, rough, config.ell, T, config.s_w)
        bp1 = _ceil(config.ell / config.s_w)
        for b in range(1, T + 1):
            out[b] = _energy_components_uniform(n, rough, config.ell, T, b,
                                                gammas, bp1, frame_slots)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out


def expected_energy_trepbb(rough_b, ell, gammas):
    """Per-node expected energy of one repetition-baseline trial for the
    node's own type: transmit with probability p_b, otherwise idle; the
    node sleeps outside its own type's trial."""
    gt, _gr, gi = gammas
    p = participation_probability(ell, rough_b)
    return {"tx_slots": p, "rx_slots": 0.0, "idle_slots": ell - p,
            "energy": p * gt + (ell - p) * gi}


def expected_energy_hsrc1(n, rough, config: ProtocolConfig, phase2_method,
                          trial_frame_slots, phase2_frame_slots=None,
                          boundary_slots=0):
    """Per-type expected total energy of the composite scheme: m_prime
    trial-mode executions, the phase-boundary broadcast (received in full
    by every node), and the chosen phase-2 method."""
    T = len(n) if not isinstance(n, dict) else len(n.keys())
    phase1 = expected_energy_3ss(n, config, "trial",
                                 frame_slots=trial_frame_slots)
    out = {}
    for b in range(1, T + 1):
        total = config.m_prime * phase1[b]["energy"]
        total += boundary_slots * config.gamma_rho
        if phase2_method == "TRepBB":
            total += expected_energy_trepbb(_get(rough, b), config.ell,
                                            config.gammas)["energy"]
        else:
            p2 = expected_energy_3ss(n, config, "bb", rough=rough,
                                     frame_slots=phase2_frame_slots)
            total += p2[b]["energy"]
        out[b] = total
    return out


def _get(seq, b):
    """Type-b lookup: dicts are keyed 1-based, sequences are 0-based."""
    if isinstance(seq, dict):
        return seq[b]
    return seq[b - 1]
