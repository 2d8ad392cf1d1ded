"""One-way threshold protocol for frequency moments F_p over k sites.

Each site forwards a sampled, probabilistically thinned view of its local
updates; the coordinator maintains per-repetition counters, groups them into
geometric value classes, and raises its output bit once the class-weighted
sum of medians crosses the firing line just below tau.

Communication is strictly site -> coordinator: no type in this module gives
the coordinator a channel back to the sites.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .sampling import (
    SALT_INSTANCE,
    SALT_SEND,
    PublicCoin,
    coordinate_key,
    derive,
    level_of,
    member_threshold,
    mix64_np,
    unit_open_zero,
)

_TWO53 = 2.0**53


def ceil_log2(x: int) -> int:
    """Smallest c with 2**c >= x, for integer x >= 1."""
    if x < 1:
        raise ValueError(f"ceil_log2 needs x >= 1, got {x}")
    return (x - 1).bit_length()


@dataclass
class GlobalParams:
    """Resolved run configuration shared by sites and coordinator.

    Required: k sites (power of two), universe size m, stream-length bound n,
    moment order p > 1, accuracy eps in (0, 1). tau is required for a single
    threshold run and ignored by the monitor ladder.

    Optional knobs resolve in __post_init__: gamma defaults to eps/10; the
    counter resolution b defaults to 64 (or c_b * eps**-3 * ceil(log2 n)**2,
    floored at 8, when c_b is given); the repetition count r defaults to
    c_r * ceil(log2 n); the output fires when the estimate exceeds
    (1 - c_fire * eps) * tau.
    """

    k: int
    m: int
    n: int
    p: float
    eps: float
    tau: Optional[float] = None
    gamma: Optional[float] = None
    b: Optional[float] = None
    c_b: Optional[float] = None
    r: Optional[int] = None
    c_r: int = 5
    c_fire: float = 0.25
    c_diag: float = 8.0
    seed: int = 0
    a: Optional[int] = None
    c_a: float = 0.15
    i_max: Optional[int] = None
    literal_estimation: bool = False
    l_max: int = field(init=False)

    def __post_init__(self) -> None:
        if self.k < 1 or (self.k & (self.k - 1)) != 0:
            raise ValueError(f"k must be a power of two, got {self.k}")
        if self.m < 2:
            raise ValueError(f"universe size m must be >= 2, got {self.m}")
        if self.n < 2:
            raise ValueError(f"stream bound n must be >= 2, got {self.n}")
        if not self.p > 1:
            raise ValueError(f"moment order p must exceed 1, got {self.p}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.tau is not None and self.tau < 1.0:
            raise ValueError(f"threshold tau must be >= 1, got {self.tau}")
        if self.gamma is None:
            self.gamma = self.eps / 10.0
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.b is None:
            if self.c_b is not None:
                self.b = max(8.0, self.c_b * self.eps**-3 * ceil_log2(self.n) ** 2)
            else:
                self.b = 64.0
        if self.b < 1.0:
            raise ValueError(f"counter resolution b must be >= 1, got {self.b}")
        if self.r is None:
            self.r = self.c_r * ceil_log2(self.n)
        if self.r < 1:
            raise ValueError(f"repetition count r must be >= 1, got {self.r}")
        if not 0.0 < self.c_fire <= 1.0:
            raise ValueError(f"c_fire must lie in (0, 1], got {self.c_fire}")
        self.l_max = ceil_log2(self.m)
        if self.i_max is None:
            self.i_max = math.ceil(
                math.log(self.n**2 * 2.0**self.p, 1.0 + self.eps)
            )
        if self.a is None:
            self.a = 2 * math.ceil(self.c_a * math.log(self.i_max * 10)) + 1
        if self.a < 1 or self.a % 2 == 0:
            raise ValueError(f"amplification a must be odd and >= 1, got {self.a}")

    def message_bits(self, n_streams: int = 1) -> int:
        """Bits per message: coordinate + repetition + level identifiers,
        plus a stream identifier when several protocol copies multiplex."""
        bits = ceil_log2(self.m) + ceil_log2(self.r) + ceil_log2(self.l_max + 1)
        if n_streams > 1:
            bits += ceil_log2(n_streams)
        return bits


@dataclass(frozen=True)
class Message:
    """One site -> coordinator report: coordinate j hit the level-l set of
    repetition z and survived the thinning trial."""

    j: int
    z: int
    l: int


class FanRows:
    """Per-(z, l) site-side arrays in canonical order (z-major, then l).

    Shared by every site: the guard and thinning probability depend only on
    the instance, membership and send trials are keyed per (z, l) and hashed
    with the coordinate and event keys at use time.
    """

    def __init__(self, params: GlobalParams, tau: float, coin: PublicCoin,
                 send_seed: int) -> None:
        r, lm = params.r, params.l_max
        size = r * (lm + 1)
        self.size = size
        self.z_of = np.empty(size, dtype=np.int32)
        self.l_of = np.empty(size, dtype=np.int32)
        self.coin_key = np.empty(size, dtype=np.uint64)
        self.send_key = np.empty(size, dtype=np.uint64)
        self.member_thresh = np.empty(size, dtype=np.uint64)
        self.guard = np.empty(size, dtype=np.float64)
        self.qscaled = np.empty(size, dtype=np.float64)
        root = tau ** (1.0 / params.p)
        i = 0
        for z in range(1, r + 1):
            for l in range(lm + 1):
                tau_l_root = root / 2.0 ** (l / params.p)
                self.z_of[i] = z
                self.l_of[i] = l
                self.coin_key[i] = coin.key(z, l)
                self.send_key[i] = derive(send_seed, SALT_SEND, z, l)
                self.member_thresh[i] = member_threshold(l)
                self.guard[i] = tau_l_root / (params.k * params.b)
                self.qscaled[i] = min(params.b / tau_l_root, 1.0) * _TWO53
                i += 1


def fanout(rows: FanRows, live: Optional[np.ndarray], count_after: int,
           j: int, ev: int) -> np.ndarray:
    """Flat indices of (z, l) rows that emit a message for this update:
    the post-increment count clears the guard, the coordinate is in the
    level set, and the keyed thinning trial succeeds."""
    elig = count_after > rows.guard
    if live is not None:
        elig &= live
    idx = np.flatnonzero(elig)
    if idx.size == 0:
        return idx
    jk = np.uint64(coordinate_key(j))
    hm = mix64_np(rows.coin_key[idx] ^ jk)
    idx = idx[hm <= rows.member_thresh[idx]]
    if idx.size == 0:
        return idx
    hb = mix64_np(rows.send_key[idx] ^ np.uint64(ev))
    u = (hb >> np.uint64(11)).astype(np.float64)
    return idx[u < rows.qscaled[idx]]


@dataclass
class SiteState:
    """Local view of one site: its own frequency vector, no inbox.

    Sites never receive protocol messages; the class has no receive or
    apply-message operation by design.
    """

    site_id: int
    counts: dict[int, int] = field(default_factory=dict)

    def bump(self, j: int) -> int:
        c = self.counts.get(j, 0) + 1
        self.counts[j] = c
        return c


def site_on_update(site: SiteState, j: int, ev: int,
                   inst: "ThresholdInstance") -> list[Message]:
    """Apply one insertion at a site and return the messages it emits for
    the given instance, ordered by (z, l). The local count is incremented
    even when the instance has terminated; terminated instances emit
    nothing."""
    if not 0 <= j < inst.params.m:
        raise ValueError(f"coordinate {j} outside [0, {inst.params.m})")
    c = site.bump(j)
    if inst.terminated:
        return []
    idx = fanout(inst.rows, None, c, j, ev)
    z_of, l_of = inst.rows.z_of, inst.rows.l_of
    return [Message(j, int(z_of[f]), int(l_of[f])) for f in idx]


class ThresholdInstance:
    """Coordinator state for one threshold tau, plus the site-side row arrays.

    Counters are exact rationals in disguise: each (z, l, j) holds an integer
    message count, and the counter value is count * u_l with a fixed
    per-level increment u_l = max(tau_l**(1/p) / b, 1), the reciprocal of the
    thinning probability, so each delivered message contributes one expected
    unit of local count.

    Estimation groups counter values into geometric buckets
    [eta * (1+gamma)**h, eta * (1+gamma)**(h+1)), reads bucket h at the level
    matched to its sampling rate, takes the lower median over repetitions of
    2**l * |bucket population|, and sums medians weighted by
    eta**p * (1+gamma)**(p h). The incremental path maintains histograms and
    medians per message; literal_estimation rebuilds everything from the raw
    counters on every message and must produce bit-identical results.
    """

    def __init__(self, params: GlobalParams, tau: Optional[float] = None,
                 coin_seed: Optional[int] = None,
                 send_seed: Optional[int] = None,
                 eta_seed: Optional[int] = None) -> None:
        self.params = params
        self.tau = params.tau if tau is None else tau
        if self.tau is None:
            raise ValueError("threshold tau is required")
        if self.tau < 1.0:
            raise ValueError(f"threshold tau must be >= 1, got {self.tau}")
        if coin_seed is None:
            coin_seed = derive(params.seed, SALT_INSTANCE, 0, 0, 0)
        if send_seed is None:
            send_seed = derive(params.seed, SALT_INSTANCE, 0, 0, 1)
        if eta_seed is None:
            eta_seed = derive(params.seed, SALT_INSTANCE, 0, 0, 2)
        p, b, gamma = params.p, params.b, params.gamma
        self.coin = PublicCoin(coin_seed, params.r, params.l_max)
        self.rows = FanRows(params, self.tau, self.coin, send_seed)
        self.eta = unit_open_zero(eta_seed)
        self.zeta = 1.0 + gamma

        # per-level counter increments u_l; subsampled levels have u_l > 1
        root = self.tau ** (1.0 / p)
        self.u = np.array(
            [max(root / 2.0 ** (l / p) / b, 1.0) for l in range(params.l_max + 1)]
        )

        # bucket machinery shared verbatim by both estimation passes
        h_full = math.ceil(
            (1.0 / gamma) * math.log(params.n / self.eta**p, self.zeta)
        )
        top_value = params.n * float(self.u[0])
        h_reach = (
            int(math.floor(math.log(top_value / self.eta, self.zeta))) + 2
            if top_value >= self.eta
            else 1
        )
        self.h_cap = min(h_full, h_reach)
        hs = np.arange(self.h_cap + 2, dtype=np.float64)
        self.edge = self.eta * self.zeta**hs
        self.weight = (self.eta**p) * self.zeta ** (p * hs[: self.h_cap + 1])
        self.lvl_of_h = np.array(
            [
                level_of(h, self.eta, gamma, p, self.tau, b, params.l_max)
                for h in range(self.h_cap + 1)
            ],
            dtype=np.int32,
        )
        self.fire_line = (1.0 - params.c_fire * params.eps) * self.tau
        self._med_idx = (params.r - 1) // 2

        self.counts: dict[tuple[int, int, int], int] = {}
        self.hist: dict[int, np.ndarray] = {}
        self.med = np.zeros(self.h_cap + 1, dtype=np.float64)
        self.est = 0.0
        self.out = 0
        self.terminated = False
        self.messages_received = 0
        self.dropped = 0
        self.est_decreases = 0
        self._bucket_cache: list[dict[int, int]] = [
            {} for _ in range(params.l_max + 1)
        ]

    # -- bucket helpers ----------------------------------------------------

    def bucket_of_value(self, value: float) -> int:
        """Bucket index of a counter value; -1 below the first edge,
        h_cap + 1 beyond the last tracked edge."""
        return int(np.searchsorted(self.edge, value, side="right")) - 1

    def _bucket_of_count(self, l: int, count: int) -> int:
        if count <= 0:
            return -1
        cache = self._bucket_cache[l]
        h = cache.get(count)
        if h is None:
            h = self.bucket_of_value(count * float(self.u[l]))
            cache[count] = h
        return h

    def _readable(self, h: int, l: int) -> bool:
        return 0 <= h <= self.h_cap and self.lvl_of_h[h] == l

    def counter_value(self, z: int, l: int, j: int) -> float:
        """Current counter value f_{z,l,j} = message count * u_l."""
        return self.counts.get((z, l, j), 0) * float(self.u[l])

    # -- estimation --------------------------------------------------------

    def _hist_set(self, h: int, z: int, delta: int) -> bool:
        """Adjust |bucket h| for repetition z; True if the median moved."""
        arr = self.hist.get(h)
        if arr is None:
            arr = np.zeros(self.params.r, dtype=np.int32)
            self.hist[h] = arr
        arr[z - 1] += delta
        med_count = int(np.partition(arr, self._med_idx)[self._med_idx])
        new_med = float(med_count << int(self.lvl_of_h[h]))
        if new_med != self.med[h]:
            self.med[h] = new_med
            return True
        return False

    def _full_pass(self) -> tuple[np.ndarray, float]:
        """Rebuild bucket histograms, medians, and the weighted-median sum
        from the raw counters alone."""
        hist: dict[int, np.ndarray] = {}
        for (z, l, j), c in self.counts.items():
            h = self._bucket_of_count(l, c)
            if self._readable(h, l):
                arr = hist.get(h)
                if arr is None:
                    arr = np.zeros(self.params.r, dtype=np.int32)
                    hist[h] = arr
                arr[z - 1] += 1
        med = np.zeros(self.h_cap + 1, dtype=np.float64)
        for h, arr in hist.items():
            med_count = int(np.partition(arr, self._med_idx)[self._med_idx])
            med[h] = float(med_count << int(self.lvl_of_h[h]))
        return med, float(np.dot(med, self.weight))

    def class_estimate(self, h: int) -> float:
        """Fresh scan of the counters for one bucket: the lower median over
        repetitions of 2**l(h) * |{j : f in bucket h}|."""
        if not 0 <= h <= self.h_cap:
            return 0.0
        l = int(self.lvl_of_h[h])
        cnt = np.zeros(self.params.r, dtype=np.int32)
        for (z, ll, j), c in self.counts.items():
            if ll == l and self._bucket_of_count(ll, c) == h:
                cnt[z - 1] += 1
        med_count = int(np.partition(cnt, self._med_idx)[self._med_idx])
        return float(med_count << l)

    def estimate(self) -> float:
        """Current class-weighted sum of bucket medians."""
        return self.est

    def estimate_full(self) -> float:
        """Estimate recomputed from scratch; equals estimate() exactly."""
        return self._full_pass()[1]

    # -- message path ------------------------------------------------------

    def apply(self, j: int, z: int, l: int) -> bool:
        """Deliver one message. Returns True exactly when this message
        fires the output bit. Messages for a terminated instance are dropped
        and counted."""
        if self.terminated:
            self.dropped += 1
            return False
        if not 1 <= z <= self.params.r:
            raise ValueError(f"repetition index {z} outside [1, {self.params.r}]")
        if not 0 <= l <= self.params.l_max:
            raise ValueError(f"level {l} outside [0, {self.params.l_max}]")
        if not 0 <= j < self.params.m:
            raise ValueError(f"coordinate {j} outside [0, {self.params.m})")
        self.messages_received += 1
        key = (z, l, j)
        c = self.counts.get(key, 0) + 1
        self.counts[key] = c

        if self.params.literal_estimation:
            self.med, new_est = self._full_pass()
            if new_est < self.est:
                self.est_decreases += 1
            self.est = new_est
            if self.est > self.fire_line:
                self.out = 1
                self.terminated = True
                return True
            return False

        h_new = self._bucket_of_count(l, c)
        h_old = self._bucket_of_count(l, c - 1)
        if h_old == h_new:
            return False
        changed = False
        if self._readable(h_old, l):
            changed |= self._hist_set(h_old, z, -1)
        if self._readable(h_new, l):
            changed |= self._hist_set(h_new, z, +1)
        if changed:
            new_est = float(np.dot(self.med, self.weight))
            if new_est < self.est:
                self.est_decreases += 1
            self.est = new_est
            if self.est > self.fire_line:
                self.out = 1
                self.terminated = True
                return True
        return False


def coord_on_message(inst: ThresholdInstance, msg: Message) -> ThresholdInstance:
    """Deliver one message object to the coordinator; returns the instance."""
    inst.apply(msg.j, msg.z, msg.l)
    return inst
