"""Continuous F_p monitoring: a geometric ladder of threshold instances.

One threshold instance per tau_i = (1+eps)**i for i in 0..i_max, each
amplified by `a` independent copies with disjoint seed streams; an instance
counts as fired once a strict majority of its copies has fired. The running
estimate is the geometric midpoint of the bracket above the highest fired
instance. Fired instances stop generating traffic; everything stays one-way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .protocol import FanRows, GlobalParams, ThresholdInstance, fanout
from .sampling import SALT_INSTANCE, derive


@dataclass
class EventOutcome:
    """Per-event accounting from the monitor."""

    messages: int
    newly_fired_instances: int


class Monitor:
    """All ladder copies multiplexed over one site->coordinator channel.

    Copies share the site vectors; each (instance, copy) pair owns disjoint
    seed streams keyed by its indices. Message accounting includes messages
    that arrive after their copy terminated (they are delivered and dropped).
    """

    def __init__(self, params: GlobalParams) -> None:
        self.params = params
        self.n_instances = params.i_max + 1
        self.a = params.a
        self.majority = self.a // 2 + 1
        self.taus = [(1.0 + params.eps) ** i for i in range(self.n_instances)]

        self.copies: list[ThresholdInstance] = []
        pair_rows: list[FanRows] = []
        for i in range(self.n_instances):
            for c in range(self.a):
                inst = ThresholdInstance(
                    params,
                    tau=self.taus[i],
                    coin_seed=derive(params.seed, SALT_INSTANCE, i, c, 0),
                    send_seed=derive(params.seed, SALT_INSTANCE, i, c, 1),
                    eta_seed=derive(params.seed, SALT_INSTANCE, i, c, 2),
                )
                self.copies.append(inst)
                pair_rows.append(inst.rows)

        # flat candidate rows over (instance, copy, z, l), canonical order
        self.block = pair_rows[0].size
        self.rows = _concat_rows(pair_rows)
        self.pair_of = np.repeat(
            np.arange(len(self.copies), dtype=np.int32), self.block
        )
        self.live = np.ones(self.rows.size, dtype=bool)

        self.fired_copies = [0] * self.n_instances
        self.instance_fired = [False] * self.n_instances
        self.max_fired = -1
        self.message_bits = params.message_bits(n_streams=len(self.copies))

    def fired_count(self) -> int:
        return sum(self.instance_fired)

    def estimate(self) -> float:
        """Geometric midpoint (1+eps)**(M + 1/2) above the highest fired
        instance M; 0 before any instance fires."""
        if self.max_fired < 0:
            return 0.0
        return (1.0 + self.params.eps) ** (self.max_fired + 0.5)

    def _silence_pair(self, pair: int) -> None:
        lo = pair * self.block
        self.live[lo : lo + self.block] = False

    def on_event(self, count_after: int, j: int, ev: int) -> EventOutcome:
        """Run one site update against every live copy. Messages are
        delivered in flat canonical order; a copy that fires mid-event drops
        the rest of that event's messages addressed to it."""
        emit = fanout(self.rows, self.live, count_after, j, ev)
        newly_fired = 0
        if emit.size:
            z_of, l_of, pair_of = self.rows.z_of, self.rows.l_of, self.pair_of
            for f in emit.tolist():
                pair = int(pair_of[f])
                inst = self.copies[pair]
                if inst.apply(j, int(z_of[f]), int(l_of[f])):
                    self._silence_pair(pair)
                    i = pair // self.a
                    self.fired_copies[i] += 1
                    if (
                        self.fired_copies[i] == self.majority
                        and not self.instance_fired[i]
                    ):
                        self.instance_fired[i] = True
                        newly_fired += 1
                        if i > self.max_fired:
                            self.max_fired = i
                        for c in range(self.a):
                            self._silence_pair(i * self.a + c)
        return EventOutcome(messages=int(emit.size), newly_fired_instances=newly_fired)


def _concat_rows(blocks: list[FanRows]) -> FanRows:
    """Concatenate per-pair row arrays without recomputing keys."""
    out = FanRows.__new__(FanRows)
    out.size = sum(b.size for b in blocks)
    out.z_of = np.concatenate([b.z_of for b in blocks])
    out.l_of = np.concatenate([b.l_of for b in blocks])
    out.coin_key = np.concatenate([b.coin_key for b in blocks])
    out.send_key = np.concatenate([b.send_key for b in blocks])
    out.member_thresh = np.concatenate([b.member_thresh for b in blocks])
    out.guard = np.concatenate([b.guard for b in blocks])
    out.qscaled = np.concatenate([b.qscaled for b in blocks])
    return out
