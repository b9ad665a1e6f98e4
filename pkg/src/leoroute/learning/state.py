"""MDP encoding: 26-feature routing state and the four-term reward."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..orbital import NO_NEIGHBOR

STATE_DIM = 26
N_ACTIONS = 4

# slices into the state vector
CUR = slice(0, 3)
NBR = slice(3, 15)
OCC = slice(15, 19)
DST = slice(19, 22)
RES = slice(22, 26)


def encode_state(cur_pos, nbr_pos, nbr_occupancy, dest_pos, link_resilience, scale: float) -> np.ndarray:
    """Pack one observation.

    ``nbr_pos`` rows for absent neighbours are ignored when the matching
    occupancy is ``None``; they are encoded as zero coordinates, occupancy 1
    and resilience 0. Occupancy and resilience are mapped affinely to [-1, 1].
    """
    s = np.empty(STATE_DIM)
    s[CUR] = np.asarray(cur_pos) / scale
    for d in range(N_ACTIONS):
        if nbr_occupancy[d] is None:
            s[3 + 3 * d: 6 + 3 * d] = 0.0
            s[15 + d] = 1.0
            s[22 + d] = -1.0
        else:
            s[3 + 3 * d: 6 + 3 * d] = np.asarray(nbr_pos[d]) / scale
            s[15 + d] = 2.0 * nbr_occupancy[d] - 1.0
            s[22 + d] = 2.0 * link_resilience[d] - 1.0
    s[DST] = np.asarray(dest_pos) / scale
    return s


def action_mask(neighbors_row) -> np.ndarray:
    return np.asarray(neighbors_row) != NO_NEIGHBOR


@dataclass(frozen=True)
class RewardWeights:
    w_queue: float = -1.0
    w_progress: float = 1.0
    w_revisit: float = -1.0
    w_resilience: float = 0.5
    delivery_bonus: float = 10.0
    drop_penalty: float = 10.0
    queue_ref_s: float = 0.01  # t_q normaliser

    def __post_init__(self):
        if self.w_queue > 0 or self.w_revisit > 0:
            raise ValueError("queue and revisit weights are penalties (<= 0)")
        if self.w_progress < 0 or self.w_resilience < 0:
            raise ValueError("progress and resilience weights are rewards (>= 0)")


@dataclass(frozen=True)
class Outcome:
    queue_delay_s: float
    d_old: float
    d_new: float
    revisit: bool
    resilience: float
    delivered: bool = False
    dropped: bool = False


def reward(outcome: Outcome, weights: RewardWeights, hop_scale: float) -> float:
    """w_q*t_q/t_ref + w_p*(d_old-d_new)/hop + w_v*revisit + w_r*resilience (+ terminal term)."""
    r = (weights.w_queue * outcome.queue_delay_s / weights.queue_ref_s
         + weights.w_progress * (outcome.d_old - outcome.d_new) / hop_scale
         + weights.w_revisit * float(outcome.revisit)
         + weights.w_resilience * outcome.resilience)
    if outcome.delivered:
        r += weights.delivery_bonus
    elif outcome.dropped:
        r -= weights.drop_penalty
    return r


def arc_distance(a, b, radius: float) -> float:
    """Great-circle distance between the directions of ``a`` and ``b`` on a sphere of ``radius``."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    c = float(np.dot(a, b) / (na * nb))
    return radius * math.acos(max(-1.0, min(1.0, c)))
