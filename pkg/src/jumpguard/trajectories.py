"""Quantum-jump unraveling of an open-system model.

Continuous monitoring of every decay channel splits the master-equation
evolution into records: smooth no-detection stretches interrupted by
discrete jumps. Three drivers are provided.

* Exact enumeration (`enumerate_trajectories`): a depth-limited tree over
  jump patterns on the dt grid. Branches whose conditional states coincide
  (same direction, same pending-feedback queue) are merged, with their
  probabilities summed; this is exact for every downstream use (averaged
  projectors, averaged entanglement) and is what keeps the tree finite
  when ideal feedback keeps restoring the initial state. A merged record
  reports the event list of its earliest contributing pattern.

* Monte Carlo sampling (`sample_trajectories`): standard wavefunction
  stepping, one uniform draw per step, channels resolved by cumulative
  probability in (slot, channel) order. Trajectory ``i`` consumes an
  independent stream derived from (rng_seed, i), so results are
  reproducible and order-independent.

* Density-matrix sampling (`sample_density_trajectories`): required when
  detection efficiency eta < 1. Recorded jumps update the state
  projectively (and trigger feedback); unrecorded jumps are folded into
  the smooth map, mixing the observer's conditional state.

Per step of length dt the no-jump update is the exact exponential
exp(-1/2 G dt) with G = sum_k gamma_k L_k+ L_k, so the no-jump probability
composes multiplicatively and survives machine-exact over any horizon.
Jump branches are weighted through W = sqrt((1 - e^{-G dt}) / (G dt)), which
makes the per-step splitting exactly complete; their states are placed at
mid-step and the exact driver keeps an explicit two-jumps-in-one-step
sector, so ensemble averages converge at second order in dt. The
first-order no-jump operator 1 - (dt/2) G is kept behind a flag for scaling
tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix, as_vector, dagger, embed, make_layout
from .models import OpenSystemModel

MAX_GAMMA_DT = 1e-2
_PENDING_CAP = 8
_SAMPLE_CHUNK = 2048
_NORM_FLOOR = 1e-250


class TruncationError(RuntimeError):
    """Raised when the untracked jump-pattern mass exceeds the configured bound."""


@dataclass(frozen=True)
class JumpEvent:
    time: float
    slot: int
    channel: int

    def __post_init__(self):
        if self.time < 0 or self.slot < 0 or self.channel < 0:
            raise ValueError(f"invalid jump event ({self.time}, {self.slot}, {self.channel})")


@dataclass(frozen=True)
class TrajectoryRecord:
    """One unraveling record: events, conditional state, probability/weight.

    ``state`` is a normalized state vector, or a unit-trace density matrix
    for inefficient-monitoring records.
    """

    events: tuple[JumpEvent, ...]
    state: np.ndarray
    probability: float

    def __post_init__(self):
        if not -1e-12 <= self.probability <= 1.0 + 1e-9:
            raise ValueError(f"record probability {self.probability} outside [0, 1]")
        size = np.trace(self.state).real if self.state.ndim == 2 else np.vdot(self.state, self.state).real
        if abs(size - 1.0) > 1e-8:
            raise ValueError(f"record state not normalized (got {size})")

    @property
    def n_jumps(self) -> int:
        return len(self.events)

    @property
    def is_density(self) -> bool:
        return self.state.ndim == 2


@dataclass(frozen=True)
class FeedbackPolicy:
    """Per-slot correction unitary with delay tau and detection efficiency eta.

    The correction is applied to the slot that jumped, a time ``delay``
    after the recorded jump; jumps during the delay window are processed
    first and corrections queue FIFO. ``efficiency`` is the probability
    that a physical jump is recorded at all.
    """

    unitaries: dict[int, np.ndarray]
    delay: float = 0.0
    efficiency: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if self.delay < 0:
            raise ValueError(f"delay must be >= 0, got {self.delay}")
        fixed = {}
        for slot, u in dict(self.unitaries).items():
            u = as_matrix(u)
            defect = np.max(np.abs(dagger(u) @ u - np.eye(u.shape[0])))
            if defect > 1e-10:
                raise ValueError(f"correction for slot {slot} is not unitary (defect {defect:.2e})")
            fixed[int(slot)] = u
        object.__setattr__(self, "unitaries", fixed)

    @classmethod
    def qutrit_cyclic(cls, slots=(0, 1), **kwargs) -> "FeedbackPolicy":
        """Standard cascade correction |1> -> |2>, |0> -> |1|, cyclically completed."""
        u = np.zeros((3, 3), dtype=np.complex128)
        u[2, 1] = 1.0
        u[1, 0] = 1.0
        u[0, 2] = 1.0
        return cls(unitaries={s: u for s in slots}, **kwargs)


@dataclass(frozen=True)
class UnravelingConfig:
    """Numerical controls shared by the exact and sampled drivers."""

    dt: float
    t_max: float
    max_jumps: int = 4
    n_samples: int = 10_000
    rng_seed: int = 12345
    truncation_bound: float = 1e-4
    cull_floor: float = 1e-12

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_max < 0:
            raise ValueError(f"t_max must be >= 0, got {self.t_max}")
        if self.max_jumps < 0:
            raise ValueError("max_jumps must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


def _check_rate_resolution(model: OpenSystemModel, dt: float):
    if model.max_rate * dt > MAX_GAMMA_DT * (1 + 1e-9):
        raise ValueError(
            f"gamma_max*dt = {model.max_rate * dt:.3g} exceeds {MAX_GAMMA_DT}; decrease dt"
        )


def _mass_fraction(u: np.ndarray) -> np.ndarray:
    """(1 - exp(-u)) / u, stable at u -> 0."""
    out = np.empty_like(u)
    small = u < 1e-8
    us = u[small]
    out[small] = 1.0 - us / 2.0 + us * us / 6.0
    ub = u[~small]
    out[~small] = -np.expm1(-ub) / ub
    return out


class StepOperators:
    """Precomputed per-step matrices for one (model, dt, policy) combination."""

    def __init__(self, model: OpenSystemModel, dt: float, policy: FeedbackPolicy | None = None):
        _check_rate_resolution(model, dt)
        self.model = model
        self.dt = float(dt)
        self.policy = policy if (policy is not None and policy.enabled) else None

        G = model.decay_generator
        lam, V = np.linalg.eigh(G)
        lam = np.clip(lam, 0.0, None)
        Vd = dagger(V)

        def func_of_g(vals):
            return (V * vals[None, :]) @ Vd

        self.no_jump = func_of_g(np.exp(-lam * dt / 2.0))
        self.no_jump_half = func_of_g(np.exp(-lam * dt / 4.0))
        self.weight_root = func_of_g(np.sqrt(_mass_fraction(lam * dt)))  # W
        dim = model.dim
        self.first_order_no_jump = np.eye(dim, dtype=np.complex128) - 0.5 * dt * G

        self.slots = [ch.slot for ch in model.channels]
        self.unitaries_embedded = {}
        if self.policy is not None:
            for slot in set(self.slots):
                if slot not in self.policy.unitaries:
                    raise ValueError(f"feedback policy has no correction unitary for slot {slot}")
                self.unitaries_embedded[slot] = embed(
                    self.policy.unitaries[slot], slot, model.layout
                )

        self.weight_mats = []     # M_k = gamma_k dt W L+ L W
        self.jump_maps = []       # sqrt(gamma_k dt) N_half L N_half
        self.jump_maps_fb = []    # same with the correction unitary folded in
        self.literal_jumps = []   # sqrt(gamma_k dt) L
        fb_immediate = self.policy is not None and self.policy.delay == 0.0
        for ch, L in zip(model.channels, model.embedded_ops):
            g = ch.rate * dt
            W = self.weight_root
            self.weight_mats.append(g * (W @ dagger(L) @ L @ W))
            core = self.no_jump_half @ L @ self.no_jump_half
            self.jump_maps.append(math.sqrt(g) * core)
            if fb_immediate:
                u = self.unitaries_embedded[ch.slot]
                self.jump_maps_fb.append(
                    math.sqrt(g) * (self.no_jump_half @ u @ L @ self.no_jump_half)
                )
            else:
                self.jump_maps_fb.append(self.jump_maps[-1])
            self.literal_jumps.append(math.sqrt(g) * L)
        self.weight_total = sum(self.weight_mats) if self.weight_mats else np.zeros(
            (dim, dim), dtype=np.complex128
        )

        # two-jumps-in-one-step sector (exact enumeration only): weight roots
        # sqrt(g_k g_l / 2) dt L_l L_k and mid-step placed state maps. Keeping
        # this sector makes the per-step splitting second order in dt.
        K = len(model.channels)
        self.pair_index = [(k, l) for k in range(K) for l in range(K)]
        self.pair_weight_ops = {}
        self.pair_maps = {}
        self.pair_maps_fb = {}
        for k, l in self.pair_index:
            Lk, Ll = model.embedded_ops[k], model.embedded_ops[l]
            gk, gl = model.channels[k].rate, model.channels[l].rate
            scale = math.sqrt(gk * gl / 2.0) * dt
            self.pair_weight_ops[(k, l)] = scale * (Ll @ Lk)
            core = Ll @ Lk
            if fb_immediate:
                uk = self.unitaries_embedded[model.channels[k].slot]
                ul = self.unitaries_embedded[model.channels[l].slot]
                core_fb = ul @ Ll @ uk @ Lk
            else:
                core_fb = core
            self.pair_maps[(k, l)] = scale * (self.no_jump_half @ core @ self.no_jump_half)
            self.pair_maps_fb[(k, l)] = scale * (self.no_jump_half @ core_fb @ self.no_jump_half)

    @property
    def n_channels(self) -> int:
        return len(self.model.channels)

    def spawn_uses_queue(self) -> bool:
        return self.policy is not None and self.policy.delay > 0.0

    def due_step(self, jump_step_index: int) -> int:
        assert self.policy is not None
        return int(math.ceil(jump_step_index + 0.5 + self.policy.delay / self.dt - 1e-12))


def no_jump_step(model: OpenSystemModel, psi: np.ndarray, dt: float, first_order: bool = False):
    """No-detection update: unnormalized psi' and its probability |psi'|^2.

    Default is the exact exponential exp(-1/2 G dt); ``first_order`` selects
    the truncated operator 1 - (dt/2) G instead.
    """
    psi = as_vector(psi)
    ops = StepOperators(model, dt)
    op = ops.first_order_no_jump if first_order else ops.no_jump
    out = op @ psi
    return out, float(np.vdot(out, out).real)


def jump_step(model: OpenSystemModel, psi: np.ndarray, channel: int, dt: float):
    """Detection in ``channel``: psi' = sqrt(gamma dt) L psi and p = |psi'|^2."""
    psi = as_vector(psi)
    ch = model.channels[channel]
    L = model.embedded_ops[channel]
    out = math.sqrt(ch.rate * dt) * (L @ psi)
    return out, float(np.vdot(out, out).real)


def apply_feedback(policy: FeedbackPolicy, psi: np.ndarray, slot: int, layout) -> np.ndarray:
    """Apply the slot's correction unitary, embedded in the full space."""
    if not policy.enabled:
        raise ValueError("feedback policy is disabled")
    layout = make_layout(layout)
    u = embed(policy.unitaries[slot], slot, layout)
    return u @ as_vector(psi)


def kraus_defect(model: OpenSystemModel, dt: float) -> float:
    """Operator norm of Pi0+ Pi0 + sum_k Pi1k+ Pi1k - 1 for the first-order set."""
    ops = StepOperators(model, dt)
    total = dagger(ops.first_order_no_jump) @ ops.first_order_no_jump
    for J in ops.literal_jumps:
        total = total + dagger(J) @ J
    defect = total - np.eye(model.dim)
    return float(np.max(np.abs(np.linalg.eigvalsh(defect))))


# ---------------------------------------------------------------------------
# exact enumeration
# ---------------------------------------------------------------------------


@dataclass
class EnumerationResult:
    records: list[TrajectoryRecord]
    truncation_mass: float
    culled_mass: float

    @property
    def total_probability(self) -> float:
        return float(sum(r.probability for r in self.records))


def _canonical_keys(states: np.ndarray, pending: np.ndarray) -> np.ndarray:
    """Quantized phase-fixed directions plus the pending-feedback queue.

    Rows that agree within ~1e-9 per component hash identically; distinct
    branch classes in every model here differ by at least ~gamma*dt.
    """
    mags = np.abs(states)
    mx = mags.max(axis=1)
    pivot = np.argmax(mags >= (mx * (1.0 - 1e-6))[:, None], axis=1)
    ph = states[np.arange(states.shape[0]), pivot]
    ph = ph / np.abs(ph)
    canon = states * np.conj(ph)[:, None]
    re = np.round(canon.real * 1e9).astype(np.int64)
    im = np.round(canon.imag * 1e9).astype(np.int64)
    return np.concatenate([re, im, pending], axis=1)


_HASH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _hash_multipliers(width: int):
    if width not in _HASH_CACHE:
        gen = np.random.Generator(np.random.PCG64(0xC0FFEE ^ width))
        m1 = gen.integers(1, 2**62, width, dtype=np.int64) | 1
        m2 = gen.integers(1, 2**62, width, dtype=np.int64) | 1
        _HASH_CACHE[width] = (m1, m2)
    return _HASH_CACHE[width]


def _group_rows(keys: np.ndarray):
    """Group identical integer rows via a 128-bit hash; first index wins.

    Returns (inverse group ids, representative row per group, n_groups).
    """
    m1, m2 = _hash_multipliers(keys.shape[1])
    h1 = keys @ m1  # int64 arithmetic wraps mod 2**64, which is fine for hashing
    h2 = keys @ m2
    order = np.lexsort((h2, h1))
    h1o, h2o = h1[order], h2[order]
    boundary = np.empty(order.size, dtype=bool)
    boundary[0] = True
    boundary[1:] = (h1o[1:] != h1o[:-1]) | (h2o[1:] != h2o[:-1])
    gid_sorted = np.cumsum(boundary) - 1
    inverse = np.empty(order.size, dtype=np.int64)
    inverse[order] = gid_sorted
    starts = np.nonzero(boundary)[0]
    rep = np.minimum.reduceat(order, starts)
    return inverse, rep, starts.size


class _ExactEngine:
    """Branch-merged tree enumeration on the dt grid."""

    def __init__(self, model, psi0, config: UnravelingConfig, policy: FeedbackPolicy | None):
        if policy is not None and policy.enabled and policy.efficiency < 1.0:
            raise ValueError(
                "exact enumeration supports efficiency 1 only; "
                "use sample_density_trajectories for eta < 1"
            )
        psi0 = as_vector(psi0)
        if abs(np.vdot(psi0, psi0).real - 1.0) > 1e-10:
            raise ValueError("initial state must be normalized")
        self.ops = StepOperators(model, config.dt, policy)
        self.config = config
        self.model = model
        d = model.dim
        self.states = psi0[None, :].astype(np.complex128)
        self.weights = np.ones(1)
        self.counts = np.zeros(1, dtype=np.int64)
        # pending queue columns: PENDING_CAP pairs of (due_step, slot), -1 = empty
        self.pending = -np.ones((1, 2 * _PENDING_CAP), dtype=np.int64)
        self.nodes: list[tuple[int, float, int, int]] = []  # (parent, time, slot, channel)
        self.node_of = np.array([-1], dtype=np.int64)
        self.truncation_mass = 0.0
        self.culled_mass = 0.0

    # -- queue helpers ----------------------------------------------------

    def _apply_due_corrections(self, step: int):
        if self.ops.policy is None:
            return
        front = self.pending[:, 0]
        rows = np.nonzero((front >= 0) & (front <= step))[0]
        for r in rows:
            while self.pending[r, 0] >= 0 and self.pending[r, 0] <= step:
                slot = int(self.pending[r, 1])
                self.states[r] = self.ops.unitaries_embedded[slot] @ self.states[r]
                self.pending[r, :-2] = self.pending[r, 2:]
                self.pending[r, -2:] = -1

    def _fill_queue(self, pending_row: np.ndarray, due: int, slots_seq) -> np.ndarray:
        row = pending_row.copy()
        for slot in slots_seq:
            free = np.nonzero(row[0::2] < 0)[0]
            if free.size == 0:
                raise RuntimeError(
                    "pending-feedback queue overflow; delay too long for the jump rate"
                )
            row[2 * free[0]] = due
            row[2 * free[0] + 1] = slot
        return row

    # -- main sweep --------------------------------------------------------

    def run(self, grid_steps=(), observables=None):
        """Sweep to t_max; evaluate ``observables`` at each grid step.

        observables: dict label -> fn(states, weights, counts) -> float.
        Returns {label: np.ndarray over grid_steps}.
        """
        observables = observables or {}
        grid = sorted(set(int(g) for g in grid_steps))
        n_steps = self.config.n_steps
        if grid and (grid[0] < 0 or grid[-1] > n_steps):
            raise ValueError("grid steps out of range")
        curves = {label: np.empty(len(grid)) for label in observables}
        grid_pos = 0
        ops, cfg = self.ops, self.config
        K = ops.n_channels
        spawn_queue = ops.spawn_uses_queue()

        for step in range(n_steps + 1):
            self._apply_due_corrections(step)
            while grid_pos < len(grid) and grid[grid_pos] == step:
                for label, fn in observables.items():
                    curves[label][grid_pos] = fn(self.states, self.weights, self.counts)
                grid_pos += 1
            if step == n_steps:
                break

            B = self.states.shape[0]
            use_fb_map = ops.policy is not None and not spawn_queue
            cand_states = []
            cand_weights = []
            cand_parent = []
            cand_channels = []  # per block: tuple of channel indices (length 1 or 2)
            cand_pending = []

            # per-channel raw masses (sum exactly to 1 - |N psi|^2) and the
            # two-jump sector subtracted from them
            raw_mass = np.empty((K, B))
            for k in range(K):
                qk = ((self.states.conj() @ ops.weight_mats[k]) * self.states).sum(axis=1).real
                raw_mass[k] = np.clip(qk * self.weights, 0.0, None)
            pair_mass = {}
            for k, l in ops.pair_index:
                raw2 = self.states @ ops.pair_weight_ops[(k, l)].T
                m = np.einsum("bi,bi->b", raw2.conj(), raw2).real * self.weights
                pair_mass[(k, l)] = m
                raw_mass[k] = np.clip(raw_mass[k] - m, 0.0, None)

            def queue_rows(rows, slots_seq):
                due = ops.due_step(step)
                return np.stack(
                    [
                        self._fill_queue(self.pending[r], due, slots_seq)
                        for r in rows
                    ]
                )

            def spawn_block(mass, smap, chans, needed):
                eligible = self.counts <= cfg.max_jumps - needed
                self.truncation_mass += float(mass[~eligible].sum())
                rows = np.nonzero(eligible & (mass > 0.0))[0]
                if rows.size == 0:
                    return
                raw = self.states[rows] @ smap.T
                nrm2 = np.einsum("bi,bi->b", raw.conj(), raw).real
                ok = nrm2 > _NORM_FLOOR
                if not np.all(ok):
                    self.culled_mass += float(mass[rows[~ok]].sum())
                    rows, raw, nrm2 = rows[ok], raw[ok], nrm2[ok]
                    if rows.size == 0:
                        return
                cand_states.append(raw / np.sqrt(nrm2)[:, None])
                cand_weights.append(mass[rows])
                cand_parent.append(rows)
                cand_channels.append(chans)
                if spawn_queue:
                    cand_pending.append(queue_rows(rows, [ops.slots[c] for c in chans]))
                else:
                    cand_pending.append(self.pending[rows])

            for k in range(K):
                smap = ops.jump_maps_fb[k] if use_fb_map else ops.jump_maps[k]
                spawn_block(raw_mass[k], smap, (k,), 1)
            for k, l in ops.pair_index:
                smap = ops.pair_maps_fb[(k, l)] if use_fb_map else ops.pair_maps[(k, l)]
                spawn_block(pair_mass[(k, l)], smap, (k, l), 2)

            # parents advance through the no-jump map
            adv = self.states @ ops.no_jump.T
            nrm2 = np.einsum("bi,bi->b", adv.conj(), adv).real
            self.weights = self.weights * nrm2
            self.states = adv / np.sqrt(nrm2)[:, None]

            if cand_states:
                t_mid = (step + 0.5) * cfg.dt
                block_sizes = [len(p) for p in cand_parent]
                block_of = np.repeat(np.arange(len(block_sizes)), block_sizes)
                all_states = np.concatenate([self.states] + cand_states)
                all_weights = np.concatenate([self.weights] + cand_weights)
                all_pending = np.concatenate([self.pending] + cand_pending)
                parent_map = np.concatenate(cand_parent)

                keys = _canonical_keys(all_states, all_pending)
                inverse, rep, n_groups = _group_rows(keys)
                group_w = np.bincount(inverse, weights=all_weights, minlength=n_groups)

                new_counts = np.empty(n_groups, dtype=np.int64)
                new_nodes = np.empty(n_groups, dtype=np.int64)
                old = rep < B
                idx_old = rep[old]
                new_counts[old] = self.counts[idx_old]
                new_nodes[old] = self.node_of[idx_old]
                for g in np.nonzero(~old)[0]:
                    r = rep[g] - B
                    p = parent_map[r]
                    chans = cand_channels[block_of[r]]
                    node = int(self.node_of[p])
                    for c in chans:
                        self.nodes.append((node, t_mid, ops.slots[c], int(c)))
                        node = len(self.nodes) - 1
                    new_counts[g] = self.counts[p] + len(chans)
                    new_nodes[g] = node
                self.states = all_states[rep]
                self.weights = group_w
                self.counts = new_counts
                self.node_of = new_nodes
                self.pending = all_pending[rep]

            # cull negligible classes (their mass is reported, not lost silently)
            tiny = self.weights < cfg.cull_floor
            if np.any(tiny):
                self.culled_mass += float(self.weights[tiny].sum())
                keep = ~tiny
                self.states = self.states[keep]
                self.weights = self.weights[keep]
                self.counts = self.counts[keep]
                self.node_of = self.node_of[keep]
                self.pending = self.pending[keep]

        return curves

    def _events_for(self, node: int) -> tuple[JumpEvent, ...]:
        out = []
        while node >= 0:
            parent, t, slot, ch = self.nodes[node]
            out.append(JumpEvent(time=t, slot=slot, channel=ch))
            node = parent
        return tuple(reversed(out))

    def records(self) -> list[TrajectoryRecord]:
        order = np.argsort(-self.weights, kind="stable")
        out = []
        for i in order:
            out.append(
                TrajectoryRecord(
                    events=self._events_for(int(self.node_of[i])),
                    state=self.states[i].copy(),
                    probability=float(min(self.weights[i], 1.0)),
                )
            )
        return out


def enumerate_trajectories(
    model: OpenSystemModel,
    psi0: np.ndarray,
    config: UnravelingConfig,
    policy: FeedbackPolicy | None = None,
) -> EnumerationResult:
    """Exact depth-limited enumeration of jump-pattern classes up to t_max.

    Returned probabilities plus the reported truncation mass sum to one.
    Raises :class:`TruncationError` when the mass of patterns deeper than
    ``max_jumps`` exceeds ``config.truncation_bound``.
    """
    engine = _ExactEngine(model, psi0, config, policy)
    engine.run()
    if engine.truncation_mass > config.truncation_bound:
        raise TruncationError(
            f"truncation mass {engine.truncation_mass:.3e} exceeds bound "
            f"{config.truncation_bound:.1e}; increase max_jumps"
        )
    return EnumerationResult(
        records=engine.records(),
        truncation_mass=engine.truncation_mass,
        culled_mass=engine.culled_mass,
    )


def run_exact_grid(model, psi0, config, policy, grid_steps, observables):
    """Scenario-facing sweep: observable curves over a step grid.

    Returns (curves, engine) so callers can read truncation diagnostics.
    """
    engine = _ExactEngine(model, psi0, config, policy)
    curves = engine.run(grid_steps, observables)
    return curves, engine


# ---------------------------------------------------------------------------
# Monte Carlo samplers
# ---------------------------------------------------------------------------


@dataclass
class SampleResult:
    records: list[TrajectoryRecord]


@dataclass
class SampledCurves:
    """Per-grid mean and standard error of each observable, plus diagnostics."""

    mean: dict[str, np.ndarray]
    sem: dict[str, np.ndarray]
    extras: dict[str, float] = field(default_factory=dict)


def _trajectory_streams(seed: int, n: int):
    return np.random.SeedSequence(seed).spawn(n)


class _BaseSampler:
    def __init__(self, model, config: UnravelingConfig, policy: FeedbackPolicy | None):
        self.model = model
        self.config = config
        self.policy = policy if (policy is not None and policy.enabled) else None
        self.ops = StepOperators(model, config.dt, policy)
        self.delay_steps = self.ops.spawn_uses_queue()

    def _due(self, step):
        return self.ops.due_step(step)


class _PureSampler(_BaseSampler):
    """Vectorized wavefunction Monte Carlo across trajectory chunks."""

    def __init__(self, model, psi0, config, policy):
        super().__init__(model, config, policy)
        if self.policy is not None and self.policy.efficiency < 1.0:
            raise ValueError(
                "pure-state sampling supports efficiency 1 only; "
                "use sample_density_trajectories for eta < 1"
            )
        psi0 = as_vector(psi0)
        if abs(np.vdot(psi0, psi0).real - 1.0) > 1e-10:
            raise ValueError("initial state must be normalized")
        self.psi0 = psi0

    def run(self, grid_steps=(), observables=None, collect_records=False):
        observables = observables or {}
        grid = sorted(set(int(g) for g in grid_steps))
        cfg, ops = self.config, self.ops
        n_steps = cfg.n_steps
        n = cfg.n_samples
        K = ops.n_channels
        acc = {lab: np.zeros(len(grid)) for lab in observables}
        acc2 = {lab: np.zeros(len(grid)) for lab in observables}
        records: list[TrajectoryRecord] = []
        streams = _trajectory_streams(cfg.rng_seed, n)

        for lo in range(0, n, _SAMPLE_CHUNK):
            hi = min(lo + _SAMPLE_CHUNK, n)
            m = hi - lo
            uniforms = np.empty((m, n_steps))
            for i in range(m):
                gen = np.random.Generator(np.random.PCG64(streams[lo + i]))
                uniforms[i] = gen.random(n_steps)
            states = np.tile(self.psi0, (m, 1))
            counts = np.zeros(m, dtype=np.int64)
            events: list[list[JumpEvent]] = [[] for _ in range(m)]
            pend_due = np.full((m, _PENDING_CAP), np.inf)
            pend_slot = np.zeros((m, _PENDING_CAP), dtype=np.int64)
            pend_len = np.zeros(m, dtype=np.int64)
            grid_pos = 0

            for step in range(n_steps + 1):
                if self.delay_steps:
                    due_rows = np.nonzero(pend_due[:, 0] <= step)[0]
                    for r in due_rows:
                        while pend_len[r] > 0 and pend_due[r, 0] <= step:
                            slot = int(pend_slot[r, 0])
                            states[r] = ops.unitaries_embedded[slot] @ states[r]
                            pend_due[r, :-1] = pend_due[r, 1:]
                            pend_slot[r, :-1] = pend_slot[r, 1:]
                            pend_due[r, -1] = np.inf
                            pend_len[r] -= 1
                while grid_pos < len(grid) and grid[grid_pos] == step:
                    for lab, fn in observables.items():
                        vals = fn(states, counts)
                        acc[lab][grid_pos] += vals.sum()
                        acc2[lab][grid_pos] += (vals * vals).sum()
                    grid_pos += 1
                if step == n_steps:
                    break

                q_tot = ((states.conj() @ ops.weight_total) * states).sum(axis=1).real
                u = uniforms[:, step]
                jumpers = np.nonzero(u < q_tot)[0]
                pre = states[jumpers].copy() if jumpers.size else None

                adv = states @ ops.no_jump.T
                nrm = np.sqrt(np.einsum("bi,bi->b", adv.conj(), adv).real)
                states = adv / nrm[:, None]

                if jumpers.size:
                    pk = np.stack(
                        [
                            ((pre.conj() @ ops.weight_mats[k]) * pre).sum(axis=1).real
                            for k in range(K)
                        ],
                        axis=1,
                    )
                    cum = np.cumsum(pk, axis=1)
                    # rescale the draw so the channel split uses the same
                    # floating-point total as the jump decision did
                    total = cum[:, -1]
                    ok = total > 0.0
                    jumpers, pre, cum = jumpers[ok], pre[ok], cum[ok]
                    r = u[jumpers] * (cum[:, -1] / q_tot[jumpers])
                    chosen = (r[:, None] >= cum).sum(axis=1)
                    chosen = np.minimum(chosen, K - 1)
                    t_mid = (step + 0.5) * cfg.dt
                    for k in range(K):
                        sel = chosen == k
                        if not np.any(sel):
                            continue
                        rows = jumpers[sel]
                        smap = (
                            ops.jump_maps_fb[k]
                            if ops.policy is not None and not self.delay_steps
                            else ops.jump_maps[k]
                        )
                        y = pre[sel] @ smap.T
                        ynrm = np.sqrt(np.einsum("bi,bi->b", y.conj(), y).real)
                        states[rows] = y / ynrm[:, None]
                        counts[rows] += 1
                        slot = ops.slots[k]
                        for r in rows:
                            events[r].append(JumpEvent(time=t_mid, slot=slot, channel=k))
                            if self.delay_steps:
                                if pend_len[r] >= _PENDING_CAP:
                                    raise RuntimeError("pending-feedback queue overflow")
                                pend_due[r, pend_len[r]] = self._due(step)
                                pend_slot[r, pend_len[r]] = slot
                                pend_len[r] += 1

            if collect_records:
                w = 1.0 / n
                for i in range(m):
                    records.append(
                        TrajectoryRecord(tuple(events[i]), states[i].copy(), w)
                    )

        mean = {lab: acc[lab] / n for lab in observables}
        sem = {
            lab: np.sqrt(np.clip(acc2[lab] / n - mean[lab] ** 2, 0.0, None) / n)
            for lab in observables
        }
        return SampledCurves(mean=mean, sem=sem), records


class _DensitySampler(_BaseSampler):
    """Density-matrix Monte Carlo for inefficient detection (eta <= 1).

    Recorded jumps (probability eta per physical jump) update the state
    projectively and trigger feedback; unrecorded jumps are folded into the
    smooth no-record map, so the conditional state mixes.
    """

    def __init__(self, model, rho0, config, policy):
        super().__init__(model, config, policy)
        rho0 = as_matrix(rho0)
        if abs(np.trace(rho0).real - 1.0) > 1e-10:
            raise ValueError("initial density matrix must have unit trace")
        self.rho0 = rho0
        self.eta = self.policy.efficiency if self.policy is not None else 1.0

    def run(self, grid_steps=(), observables=None, collect_records=False):
        observables = observables or {}
        grid = sorted(set(int(g) for g in grid_steps))
        cfg, ops = self.config, self.ops
        n_steps = cfg.n_steps
        n = cfg.n_samples
        K = ops.n_channels
        eta = self.eta
        acc = {lab: np.zeros(len(grid)) for lab in observables}
        acc2 = {lab: np.zeros(len(grid)) for lab in observables}
        records: list[TrajectoryRecord] = []
        streams = _trajectory_streams(cfg.rng_seed, n)
        Nd = ops.no_jump
        chunk = max(1, _SAMPLE_CHUNK // max(1, self.model.dim))

        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            m = hi - lo
            uniforms = np.empty((m, n_steps))
            for i in range(m):
                gen = np.random.Generator(np.random.PCG64(streams[lo + i]))
                uniforms[i] = gen.random(n_steps)
            rhos = np.tile(self.rho0, (m, 1, 1))
            counts = np.zeros(m, dtype=np.int64)
            events: list[list[JumpEvent]] = [[] for _ in range(m)]
            pend_due = np.full((m, _PENDING_CAP), np.inf)
            pend_slot = np.zeros((m, _PENDING_CAP), dtype=np.int64)
            pend_len = np.zeros(m, dtype=np.int64)
            grid_pos = 0

            for step in range(n_steps + 1):
                if self.delay_steps:
                    due_rows = np.nonzero(pend_due[:, 0] <= step)[0]
                    for r in due_rows:
                        while pend_len[r] > 0 and pend_due[r, 0] <= step:
                            slot = int(pend_slot[r, 0])
                            u_emb = ops.unitaries_embedded[slot]
                            rhos[r] = u_emb @ rhos[r] @ dagger(u_emb)
                            pend_due[r, :-1] = pend_due[r, 1:]
                            pend_slot[r, :-1] = pend_slot[r, 1:]
                            pend_due[r, -1] = np.inf
                            pend_len[r] -= 1
                while grid_pos < len(grid) and grid[grid_pos] == step:
                    for lab, fn in observables.items():
                        vals = fn(rhos, counts)
                        acc[lab][grid_pos] += vals.sum()
                        acc2[lab][grid_pos] += (vals * vals).sum()
                    grid_pos += 1
                if step == n_steps:
                    break

                pk = np.stack(
                    [
                        eta * np.einsum("nij,ji->n", rhos, ops.weight_mats[k]).real
                        for k in range(K)
                    ],
                    axis=1,
                )
                cum = np.cumsum(pk, axis=1)
                u = uniforms[:, step]
                jumpers = np.nonzero(u < cum[:, -1])[0]
                pre = rhos[jumpers].copy() if jumpers.size else None

                # no-record map: exact no-jump plus unrecorded-jump feedthrough
                new = Nd @ rhos @ dagger(Nd)
                if eta < 1.0:
                    for k in range(K):
                        Sk = ops.jump_maps[k]
                        new += (1.0 - eta) * (Sk @ rhos @ dagger(Sk))
                tr = np.einsum("nii->n", new).real
                rhos = new / tr[:, None, None]

                if jumpers.size:
                    chosen = (u[jumpers, None] >= cum[jumpers]).sum(axis=1)
                    chosen = np.minimum(chosen, K - 1)
                    t_mid = (step + 0.5) * cfg.dt
                    for k in range(K):
                        sel = chosen == k
                        if not np.any(sel):
                            continue
                        rows = jumpers[sel]
                        smap = (
                            ops.jump_maps_fb[k]
                            if ops.policy is not None and not self.delay_steps
                            else ops.jump_maps[k]
                        )
                        y = smap @ pre[sel] @ dagger(smap)
                        tr = np.einsum("nii->n", y).real
                        rhos[rows] = y / tr[:, None, None]
                        counts[rows] += 1
                        slot = ops.slots[k]
                        for r in rows:
                            events[r].append(JumpEvent(time=t_mid, slot=slot, channel=k))
                            if self.delay_steps:
                                if pend_len[r] >= _PENDING_CAP:
                                    raise RuntimeError("pending-feedback queue overflow")
                                pend_due[r, pend_len[r]] = self._due(step)
                                pend_slot[r, pend_len[r]] = slot
                                pend_len[r] += 1

            if collect_records:
                w = 1.0 / n
                for i in range(m):
                    records.append(TrajectoryRecord(tuple(events[i]), rhos[i].copy(), w))

        mean = {lab: acc[lab] / n for lab in observables}
        sem = {
            lab: np.sqrt(np.clip(acc2[lab] / n - mean[lab] ** 2, 0.0, None) / n)
            for lab in observables
        }
        return SampledCurves(mean=mean, sem=sem), records


def sample_trajectories(
    model: OpenSystemModel,
    psi0: np.ndarray,
    config: UnravelingConfig,
    policy: FeedbackPolicy | None = None,
) -> SampleResult:
    """Monte Carlo wavefunction records; weight 1/n_samples each."""
    sampler = _PureSampler(model, psi0, config, policy)
    _, records = sampler.run(collect_records=True)
    return SampleResult(records=records)


def sample_density_trajectories(
    model: OpenSystemModel,
    rho0: np.ndarray,
    config: UnravelingConfig,
    policy: FeedbackPolicy | None = None,
) -> SampleResult:
    """Inefficient-monitoring records: density matrices conditioned on recorded jumps."""
    sampler = _DensitySampler(model, rho0, config, policy)
    _, records = sampler.run(collect_records=True)
    return SampleResult(records=records)


def run_sampled_grid(model, psi0, config, policy, grid_steps, observables) -> SampledCurves:
    sampler = _PureSampler(model, psi0, config, policy)
    curves, _ = sampler.run(grid_steps, observables)
    return curves


def run_density_grid(model, rho0, config, policy, grid_steps, observables) -> SampledCurves:
    sampler = _DensitySampler(model, rho0, config, policy)
    curves, _ = sampler.run(grid_steps, observables)
    return curves
