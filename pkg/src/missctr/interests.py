"""Multi-interest extraction and the two contrastive auxiliary losses.

From the per-field channel stack C (B, J, L, K) a bank of 1-d kernels
slides along the time axis: branch m (width m, one kernel per branch,
shared across fields and channels) emits ReLU'd maps (B, J, L-m+1, K).
Reading one time column across all fields gives an interest vector of
width J*K; a second bank of vertical kernels (width n along the field
axis, separate per horizontal branch) refines each branch into
fine-grained maps (B, J-n+1, L-m+1, K) whose rows are K-wide feature
views.

Two InfoNCE losses sit on top.  The interest loss draws, per pair slot,
a branch, a time offset h, and an anchor column, and treats columns l
and l+h as the two views of one sample.  The feature loss draws a
refined slice, one valid time column, and two distinct rows.  Views are
passed through small weight-only MLP encoders (shared across the two
views), and the softmax denominator runs over the whole batch,
including the positive itself.  Samples whose sequences are too short
to form a view pair drop out of the loss and are counted, never
imputed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

KERNEL_INIT = 0.5


# ---------------------------------------------------------------------------
# kernel bank


@dataclass
class ConvBank:
    """Horizontal kernels g[m-1] of width m = 1..M and, per branch,
    vertical kernels ghat[m-1][n-1] of width n = 1..N."""

    horizontal: list[Tensor]
    vertical: list[list[Tensor]]

    @property
    def n_branches(self) -> int:
        return len(self.horizontal)

    @property
    def n_depths(self) -> int:
        return len(self.vertical[0]) if self.vertical else 0

    def param_count(self) -> int:
        m = self.n_branches
        n = self.n_depths
        return m * (m + 1) // 2 + m * (n * (n + 1) // 2)

    def named(self) -> dict[str, Tensor]:
        out = {f"conv_g{m + 1}": g for m, g in enumerate(self.horizontal)}
        for m, row in enumerate(self.vertical):
            for n, g in enumerate(row):
                out[f"conv_g{m + 1}v{n + 1}"] = g
        return out


def init_conv_bank(n_branches: int, n_depths: int, rng: np.random.Generator) -> ConvBank:
    if n_branches < 1 or n_depths < 0:
        raise ConfigError(f"need n_branches >= 1 and n_depths >= 0, got {n_branches}, {n_depths}")
    horizontal = [
        ad.parameter(rng.uniform(-KERNEL_INIT, KERNEL_INIT, size=m + 1), name=f"g{m + 1}")
        for m in range(n_branches)
    ]
    vertical = [
        [
            ad.parameter(rng.uniform(-KERNEL_INIT, KERNEL_INIT, size=n + 1), name=f"g{m + 1}v{n + 1}")
            for n in range(n_depths)
        ]
        for m in range(n_branches)
    ]
    return ConvBank(horizontal, vertical)


# ---------------------------------------------------------------------------
# extractors


def channel_stack(tables, seq_fields: list[str], seq_ids: np.ndarray) -> Tensor:
    """ids (B, J, L) -> C (B, J, L, K): one embedding channel block per field."""
    from .embeddings import embed

    parts = [
        ad.reshape(embed(tables, f, seq_ids[:, j, :]), (seq_ids.shape[0], 1, seq_ids.shape[2], -1))
        for j, f in enumerate(seq_fields)
    ]
    return ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]


def _conv_along(x: Tensor, kernel: Tensor, axis: int) -> Tensor:
    """Valid cross-correlation of width-w kernel along one axis, stride 1,
    followed by ReLU.  Terms accumulate left to right in tap order, so a
    per-element replay of the same sum is bitwise identical."""
    w = kernel.shape[0]
    out_len = x.shape[axis] - w + 1
    acc = None
    for i in range(w):
        window = ad.slice_window(x, axis, i, out_len)
        term = ad.mul(window, ad.slice_window(kernel, 0, i, 1))
        acc = term if acc is None else ad.add(acc, term)
    return ad.relu(acc)


@dataclass
class InterestBank:
    """Per-branch interest maps plus per-sample window validity.

    branches[i]: (B, J, L-m_i+1, K) for kernel width m_i; valid[i]:
    bool (B, L-m_i+1), true where the window covers only real events.
    With front padding the valid windows form a contiguous tail run.
    """

    branches: list[Tensor]
    widths: list[int]
    valid: list[np.ndarray]

    @property
    def n_vectors(self) -> int:
        return sum(b.shape[2] for b in self.branches)


def window_validity(mask: np.ndarray, width: int) -> np.ndarray:
    """(B, L) event mask -> (B, L-width+1) all-real window mask."""
    if width > mask.shape[1]:
        return np.zeros((mask.shape[0], 0), dtype=bool)
    view = np.lib.stride_tricks.sliding_window_view(mask.astype(bool), width, axis=1)
    return view.all(axis=-1)


def mie_forward(C: Tensor, mask: np.ndarray, bank: ConvBank) -> InterestBank:
    """Run every horizontal branch over the time axis of C (B, J, L, K).

    A branch wider than the sequence emits zero windows (logged, not an
    error); downstream sampling simply never picks it.
    """
    if C.ndim != 4:
        raise ShapeError(f"channel stack must be (B, J, L, K), got {C.shape}")
    n_l = C.shape[2]
    branches, widths, valid = [], [], []
    for g in bank.horizontal:
        w = g.shape[0]
        if w > n_l:
            log.warning("branch width %d exceeds sequence length %d: no windows", w, n_l)
            continue
        branches.append(_conv_along(C, g, axis=2))
        widths.append(w)
        valid.append(window_validity(mask, w))
    return InterestBank(branches, widths, valid)


@dataclass
class FineBank:
    """Vertically refined maps per (branch, depth): (B, J-n+1, L-m+1, K).
    Time validity is inherited from the horizontal branch."""

    maps: dict[tuple[int, int], Tensor]  # keyed by (branch index, depth index)
    depths: list[int]

    def row_count(self, j_fields: int) -> int:
        return sum(j_fields - n + 1 for n in self.depths)


def mimfe_forward(bank: InterestBank, conv: ConvBank) -> FineBank:
    """Slide each branch's vertical kernels along the field axis."""
    maps: dict[tuple[int, int], Tensor] = {}
    depths: list[int] = []
    for bi, branch in enumerate(bank.branches):
        n_j = branch.shape[1]
        for di, g in enumerate(conv.vertical[bi]):
            w = g.shape[0]
            if w > n_j:
                log.warning("vertical width %d exceeds field count %d: no rows", w, n_j)
                continue
            maps[(bi, di)] = _conv_along(branch, g, axis=1)
            if bi == 0:
                depths.append(w)
    return FineBank(maps, depths)


def interest_vector_count(seq_len: int, widths: list[int]) -> int:
    return sum(seq_len - m + 1 for m in widths)


def fine_row_count(n_fields: int, depths: list[int]) -> int:
    return sum(n_fields - n + 1 for n in depths)


# ---------------------------------------------------------------------------
# augmentation sampling (pure functions of the validity structure + rng)


@dataclass
class InterestPlan:
    """Chosen (branch, anchor, offset) per pair slot and contributor.
    rows: (n,) batch indices; branch/anchor/offset: (P, n)."""

    rows: np.ndarray
    branch: np.ndarray
    anchor: np.ndarray
    offset: np.ndarray
    n_infeasible: int = 0

    @property
    def n_pairs(self) -> int:
        return self.branch.shape[0]


def sample_interest_plan(
    bank: InterestBank, n_pairs: int, max_offset: int, rng: np.random.Generator
) -> InterestPlan:
    """Per contributor and pair slot: pick a branch uniformly among those
    with >= 2 valid windows, an offset h uniform on [1, min(max_offset,
    windows-1)], and an anchor uniform among columns where both l and
    l+h are valid.  Samples with no such branch are excluded and counted."""
    if max_offset < 1:
        raise ConfigError(f"max_offset must be >= 1, got {max_offset}")
    n_batch = bank.valid[0].shape[0] if bank.valid else 0
    counts = np.stack([v.sum(axis=1) for v in bank.valid], axis=1)  # (B, M)
    starts = np.stack(
        [np.where(v.any(axis=1), v.argmax(axis=1), 0) for v in bank.valid], axis=1
    )
    feasible = counts >= 2
    rows = np.flatnonzero(feasible.any(axis=1))
    plan = InterestPlan(
        rows=rows,
        branch=np.zeros((n_pairs, rows.size), dtype=np.int64),
        anchor=np.zeros((n_pairs, rows.size), dtype=np.int64),
        offset=np.zeros((n_pairs, rows.size), dtype=np.int64),
        n_infeasible=n_batch - rows.size,
    )
    for p in range(n_pairs):
        for ci, b in enumerate(rows):
            options = np.flatnonzero(feasible[b])
            m = int(options[rng.integers(options.size)])
            v = int(counts[b, m])
            h = int(rng.integers(1, min(max_offset, v - 1) + 1))
            l = int(starts[b, m]) + int(rng.integers(v - h))
            plan.branch[p, ci] = m
            plan.anchor[p, ci] = l
            plan.offset[p, ci] = h
    return plan


@dataclass
class FeaturePlan:
    """Chosen (branch, depth, anchor column, two distinct rows) per pair
    slot and contributor."""

    rows: np.ndarray
    branch: np.ndarray
    depth: np.ndarray
    anchor: np.ndarray
    row_a: np.ndarray
    row_b: np.ndarray
    n_infeasible: int = 0

    @property
    def n_pairs(self) -> int:
        return self.branch.shape[0]


def sample_feature_plan(
    bank: InterestBank, fine: FineBank, n_pairs: int, rng: np.random.Generator
) -> FeaturePlan:
    """Uniform over feasible (branch, depth) slices: the slice must keep
    >= 2 rows and the sample >= 1 valid time column in that branch.
    Both views share the slice and column; rows are drawn distinct."""
    keys = sorted(fine.maps)
    counts = np.stack([v.sum(axis=1) for v in bank.valid], axis=1)
    starts = np.stack(
        [np.where(v.any(axis=1), v.argmax(axis=1), 0) for v in bank.valid], axis=1
    )
    n_batch = counts.shape[0]
    usable = [k for k in keys if fine.maps[k].shape[1] >= 2]
    feas = np.zeros((n_batch, len(usable)), dtype=bool)
    for si, (bi, _) in enumerate(usable):
        feas[:, si] = counts[:, bi] >= 1
    rows = np.flatnonzero(feas.any(axis=1))
    plan = FeaturePlan(
        rows=rows,
        branch=np.zeros((n_pairs, rows.size), dtype=np.int64),
        depth=np.zeros((n_pairs, rows.size), dtype=np.int64),
        anchor=np.zeros((n_pairs, rows.size), dtype=np.int64),
        row_a=np.zeros((n_pairs, rows.size), dtype=np.int64),
        row_b=np.zeros((n_pairs, rows.size), dtype=np.int64),
        n_infeasible=n_batch - rows.size,
    )
    for p in range(n_pairs):
        for ci, b in enumerate(rows):
            options = np.flatnonzero(feas[b])
            bi, di = usable[int(options[rng.integers(options.size)])]
            n_rows = fine.maps[(bi, di)].shape[1]
            l = int(starts[b, bi]) + int(rng.integers(counts[b, bi]))
            ja = int(rng.integers(n_rows))
            jb = int(rng.integers(n_rows - 1))
            if jb >= ja:
                jb += 1
            plan.branch[p, ci] = bi
            plan.depth[p, ci] = di
            plan.anchor[p, ci] = l
            plan.row_a[p, ci] = ja
            plan.row_b[p, ci] = jb
    return plan


# ---------------------------------------------------------------------------
# view gathering


def gather_interest_views(bank: InterestBank, plan: InterestPlan) -> list[tuple[Tensor, Tensor]]:
    """For each pair slot, two (n, J*K) matrices of flattened columns at
    l and l+h.  All branches are flattened into one row table so a
    single gather serves mixed-branch plans."""
    flats, offsets = [], []
    base = 0
    for branch in bank.branches:
        nb, nj, nl, nk = branch.shape
        flat = ad.reshape(ad.transpose(branch, (0, 2, 1, 3)), (nb * nl, nj * nk))
        flats.append(flat)
        offsets.append(base)
        base += nb * nl
    table = ad.concat(flats, axis=0) if len(flats) > 1 else flats[0]
    lens = np.array([b.shape[2] for b in bank.branches])
    offs = np.array(offsets)

    out = []
    for p in range(plan.n_pairs):
        m = plan.branch[p]
        idx1 = offs[m] + plan.rows * lens[m] + plan.anchor[p]
        idx2 = offs[m] + plan.rows * lens[m] + plan.anchor[p] + plan.offset[p]
        out.append((ad.gather_rows(table, idx1), ad.gather_rows(table, idx2)))
    return out


def gather_feature_views(fine: FineBank, plan: FeaturePlan) -> list[tuple[Tensor, Tensor]]:
    """For each pair slot, two (n, K) matrices: same slice and column,
    distinct rows."""
    keys = sorted(fine.maps)
    flats, meta = [], {}
    base = 0
    for key in keys:
        t = fine.maps[key]
        nb, nj, nl, nk = t.shape
        flats.append(ad.reshape(t, (nb * nj * nl, nk)))
        meta[key] = (base, nj, nl)
        base += nb * nj * nl
    table = ad.concat(flats, axis=0) if len(flats) > 1 else flats[0]

    out = []
    for p in range(plan.n_pairs):
        n = plan.rows.size
        idx1 = np.zeros(n, dtype=np.int64)
        idx2 = np.zeros(n, dtype=np.int64)
        for ci in range(n):
            key = (int(plan.branch[p, ci]), int(plan.depth[p, ci]))
            off, nj, nl = meta[key]
            b = plan.rows[ci]
            l = plan.anchor[p, ci]
            idx1[ci] = off + (b * nj + plan.row_a[p, ci]) * nl + l
            idx2[ci] = off + (b * nj + plan.row_b[p, ci]) * nl + l
        out.append((ad.gather_rows(table, idx1), ad.gather_rows(table, idx2)))
    return out


# ---------------------------------------------------------------------------
# encoders


@dataclass
class EncoderParams:
    """Weight-only MLP (no biases), ReLU between layers, none after the last."""

    weights: list[Tensor]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}_w{i}": w for i, w in enumerate(self.weights)}

    def param_count(self) -> int:
        return sum(w.data.size for w in self.weights)


def init_encoder(d_in: int, sizes: tuple[int, ...], rng: np.random.Generator, name: str) -> EncoderParams:
    from .base_model import glorot

    weights = []
    fan = d_in
    for i, width in enumerate(sizes):
        weights.append(ad.parameter(glorot(rng, fan, width), name=f"{name}_w{i}"))
        fan = width
    return EncoderParams(weights)


def encode(x: Tensor, enc: EncoderParams) -> Tensor:
    h = x
    for i, w in enumerate(enc.weights):
        h = ad.matmul(h, w)
        if i < len(enc.weights) - 1:
            h = ad.relu(h)
    return h


# ---------------------------------------------------------------------------
# InfoNCE


def infonce(z1: Tensor, z2: Tensor, tau: float) -> Tensor:
    """-mean_x log( exp(cos(z1_x, z2_x)/tau) / sum_x' exp(cos(z1_x, z2_x')/tau) ).

    The denominator runs over every batch row including x itself.  The
    row-max shift is detached, which leaves gradients exact while
    keeping exp bounded for any tau > 0.
    """
    if tau <= 0.0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if z1.shape != z2.shape or z1.shape[0] < 2:
        raise ShapeError(f"need two equal view matrices with >= 2 rows, got {z1.shape} and {z2.shape}")
    n = z1.shape[0]
    s = ad.matmul(ad.normalize_rows(z1), ad.transpose(ad.normalize_rows(z2), (1, 0)))
    logits = ad.scale(s, 1.0 / tau)
    shift = ad.constant(logits.data.max(axis=1, keepdims=True))
    lse = ad.add(
        ad.tlog(ad.tsum(ad.texp(ad.sub(logits, shift)), axis=1)),
        ad.constant(shift.data[:, 0]),
    )
    pos = ad.tsum(ad.mul(logits, ad.constant(np.eye(n))), axis=1)
    return ad.tmean(ad.sub(lse, pos))


def mean_infonce(pairs: list[tuple[Tensor, Tensor]], tau: float) -> Tensor | None:
    """Average the loss over pair slots; None when nothing contributed."""
    terms = [infonce(z1, z2, tau) for z1, z2 in pairs if z1.shape[0] >= 2]
    if not terms:
        return None
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms))


def view_similarity_stats(pairs: list[tuple[Tensor, Tensor]]) -> tuple[float, float, float]:
    """(mean, min, max) cosine between paired views, norms floored."""
    sims = []
    for z1, z2 in pairs:
        a, b = z1.data, z2.data
        na = np.maximum(np.linalg.norm(a, axis=1), ad.COSINE_EPS)
        nb = np.maximum(np.linalg.norm(b, axis=1), ad.COSINE_EPS)
        sims.append((a * b).sum(axis=1) / (na * nb))
    if not sims:
        return (float("nan"),) * 3
    s = np.concatenate(sims)
    return float(s.mean()), float(s.min()), float(s.max())


# ---------------------------------------------------------------------------
# one-call orchestration for the trainer


@dataclass
class SslOut:
    loss_interest: Tensor | None
    loss_feature: Tensor | None
    interest_plan: InterestPlan | None
    feature_plan: FeaturePlan | None
    sim_mean: float = float("nan")
    sim_min: float = float("nan")
    sim_max: float = float("nan")
    n_infeasible_interest: int = 0
    n_infeasible_feature: int = 0


def ssl_forward(
    C: Tensor,
    mask: np.ndarray,
    conv: ConvBank,
    enc_interest: EncoderParams,
    enc_feature: EncoderParams,
    n_pairs_interest: int,
    n_pairs_feature: int,
    max_offset: int,
    tau: float,
    rng: np.random.Generator | None = None,
    plans: tuple[InterestPlan, FeaturePlan] | None = None,
) -> SslOut:
    """Extract, sample (or replay `plans`), encode, and score both
    contrastive losses for one batch."""
    bank = mie_forward(C, mask, conv)
    fine = mimfe_forward(bank, conv)
    if plans is not None:
        iplan, fplan = plans
    else:
        iplan = sample_interest_plan(bank, n_pairs_interest, max_offset, rng)
        fplan = sample_feature_plan(bank, fine, n_pairs_feature, rng)

    all_pairs: list[tuple[Tensor, Tensor]] = []
    loss_i = None
    if iplan.rows.size >= 2 and iplan.n_pairs > 0:
        raw = gather_interest_views(bank, iplan)
        enc_pairs = [(encode(a, enc_interest), encode(b, enc_interest)) for a, b in raw]
        loss_i = mean_infonce(enc_pairs, tau)
        all_pairs += enc_pairs
    loss_f = None
    if fplan.rows.size >= 2 and fplan.n_pairs > 0 and fine.maps:
        raw = gather_feature_views(fine, fplan)
        enc_pairs = [(encode(a, enc_feature), encode(b, enc_feature)) for a, b in raw]
        loss_f = mean_infonce(enc_pairs, tau)
        all_pairs += enc_pairs
    mean_s, min_s, max_s = view_similarity_stats(all_pairs)
    return SslOut(
        loss_interest=loss_i,
        loss_feature=loss_f,
        interest_plan=iplan,
        feature_plan=fplan,
        sim_mean=mean_s,
        sim_min=min_s,
        sim_max=max_s,
        n_infeasible_interest=iplan.n_infeasible,
        n_infeasible_feature=fplan.n_infeasible,
    )
