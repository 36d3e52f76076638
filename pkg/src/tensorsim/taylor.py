"""Per-load-level Taylor models of the system dynamics.

Builds the Jacobian and the symmetrized quadratic/cubic derivative
tensors around an equilibrium by central finite differences, compresses
the tensors with CP decomposition, and evaluates the reduced dynamics in
the factored form

    dxdot = A1 dx + L2 ((F2^T dx) * (G2^T dx))
               + L3 ((F3^T dx) * (G3^T dx) * (H3^T dx))

where ``*`` is an elementwise product over rank-length vectors, so one
evaluation costs O(n^2 + n r) instead of O(n^3 + n^4) for the unfolded
matrices.  The derivative tensors carry the 1/k! Taylor factors, making
the truncated series a genuine third-order expansion.

Systems with more than :data:`DENSE_STATE_LIMIT` states skip the raw
dense tensors entirely: derivative entries are enumerated from the
machine-pair coupling structure and compressed by an ALS that works on
the sparse coordinate list.  That path requires every exciter voltage
loop to be open (ka = 0), since terminal-voltage feedback couples all
machine triples and destroys the sparsity.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import power_model as pm
from .tensor_ops import (
    CpFactors,
    Tensor,
    cp_decompose,
    cp_exact,
)

__all__ = [
    "DENSE_STATE_LIMIT",
    "NumericalError",
    "ModelBuildError",
    "TaylorModel",
    "HybridModel",
    "ModelSet",
    "fd_jacobian",
    "fd_derivative_tensor",
    "jacobian",
    "nonlinear_state_columns",
    "taylor_tensors",
    "compress",
    "build_taylor_model",
    "reduced_rhs",
    "linear_rhs",
    "select_boundary_generators",
    "build_hybrid",
    "hybrid_rhs",
    "build_model_set",
    "save_model_set",
    "load_model_set",
]

DENSE_STATE_LIMIT = 60  # raw n^3 / n^4 tensors allowed up to this many states

JAC_STEP = 1e-6
QUAD_STEP = 1e-4
CUBIC_STEP = 1e-3


class NumericalError(RuntimeError):
    """Non-finite values where finite ones are required."""


class ModelBuildError(RuntimeError):
    """One or more per-level model builds failed."""


# ---------------------------------------------------------------------------
# finite differences


def fd_jacobian(f_batch, x0: np.ndarray, *, step: float = JAC_STEP) -> np.ndarray:
    """Central-difference Jacobian with per-coordinate step
    ``max(step, step*|x0_j|)``.  ``f_batch`` maps (B, n) -> (B, n);
    probes inherit the dtype of ``x0``."""
    x0 = np.asarray(x0)
    n = x0.size
    h = np.maximum(step, step * np.abs(x0)).astype(x0.dtype)
    probes = np.vstack([x0 + np.diag(h), x0 - np.diag(h)])
    vals = f_batch(probes)
    jac = (vals[:n] - vals[n:]).T / (2.0 * h)
    if not np.all(np.isfinite(jac)):
        raise NumericalError("non-finite entries in Jacobian")
    return jac


def fd_jacobian_refined(f_batch, x0: np.ndarray, *, step: float = 1e-4) -> np.ndarray:
    """Richardson-extrapolated central differences, (4 J(h/2) - J(h)) / 3.

    Kills the h^2 truncation term while the larger base step keeps
    cancellation noise near machine precision; the Jacobian entries come
    out roughly 1e4 times more accurate than the plain 1e-6 stencil,
    which is what lets fourth-order Taylor remainders stay visible above
    the noise floor in small-deviation probes.
    """
    j_h = fd_jacobian(f_batch, x0, step=step)
    j_h2 = fd_jacobian(f_batch, x0, step=step / 2.0)
    return (4.0 * j_h2 - j_h) / 3.0


def _multiset_values(f_batch, x0, h, tuples, order, chunk=4096):
    """Symmetric derivative values for column multisets.

    Returns (len(tuples), n) with entry ``[t, i] = (1/order!) *
    d^order f_i / dx_{t}`` from the tensor-product central stencil.
    Probes inherit the dtype of ``x0``, so passing extended-precision
    points runs the whole stencil in extended precision.
    """
    x0 = np.asarray(x0)
    n = x0.size
    h = np.asarray(h, dtype=x0.dtype)
    tuples = np.asarray(tuples, dtype=int)
    fact = float(np.prod(range(1, order + 1)))
    out = np.zeros((len(tuples), n), dtype=x0.dtype)
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=order)))
    for lo in range(0, len(tuples), chunk):
        tt = tuples[lo:lo + chunk]
        hh = h[tt]  # (T, order)
        acc = np.zeros((len(tt), n), dtype=x0.dtype)
        for s in signs:
            disp = np.zeros((len(tt), n), dtype=x0.dtype)
            for pos in range(order):
                np.add.at(disp, (np.arange(len(tt)), tt[:, pos]), s[pos] * hh[:, pos])
            acc += np.prod(s) * f_batch(x0 + disp)
        denom = (2.0 ** order) * np.prod(hh, axis=1) * fact
        out[lo:lo + chunk] = acc / denom[:, None]
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite entries in order-{order} derivatives")
    return out


def _refined_multiset_values(f_batch, x0, h, tuples, order):
    """(4 D(h/2) - D(h)) / 3: cancels the h^2 stencil truncation term."""
    v_h = _multiset_values(f_batch, x0, h, tuples, order)
    v_h2 = _multiset_values(f_batch, x0, h / 2.0, tuples, order)
    return (4.0 * v_h2 - v_h) / 3.0


def fd_derivative_tensor(
    f_batch,
    x0: np.ndarray,
    order: int,
    *,
    columns=None,
    base_step: float | None = None,
    refine: bool = False,
) -> Tensor:
    """Dense symmetrized derivative tensor of the given order, scaled by
    1/order!.

    ``columns`` limits the probed coordinates (all other slices are
    structurally zero); per-coordinate steps are
    ``base_step * max(1, |x0_j|)``.
    """
    if order not in (2, 3):
        raise ValueError("order must be 2 or 3")
    x0 = np.asarray(x0)  # dtype flows through probes and stencil sums
    n = x0.size
    cols = np.arange(n) if columns is None else np.asarray(sorted(columns), dtype=int)
    step = base_step if base_step is not None else (QUAD_STEP if order == 2 else CUBIC_STEP)
    h = step * np.maximum(1.0, np.abs(x0))
    tuples = list(itertools.combinations_with_replacement(cols.tolist(), order))
    values = _refined_multiset_values if refine else _multiset_values
    vals = values(f_batch, x0, h, tuples, order)
    t = np.zeros((n,) * (order + 1))
    for tup, v in zip(tuples, vals):
        for perm in set(itertools.permutations(tup)):
            t[(slice(None),) + perm] = v
    return Tensor(t)


# ---------------------------------------------------------------------------
# system-bound builders


def _prefault_batch(sys: pm.SystemModel):
    yred = sys.y_red
    return lambda x: pm._rhs(sys, yred, np.asarray(x))


def jacobian(sys: pm.SystemModel, *, refined: bool = True, extended: bool = True) -> np.ndarray:
    """Jacobian of the pre-fault dynamics at the equilibrium.

    The default Richardson-refined extended-precision build keeps entry
    errors near 1e-12 so they never mask higher-order remainder
    measurements; ``refined=False, extended=False`` gives the plain
    1e-6-step central-difference stencil.
    """
    x0 = sys.x0.astype(np.longdouble) if extended else sys.x0
    fd = fd_jacobian_refined if refined else fd_jacobian
    return np.asarray(fd(_prefault_batch(sys), x0), dtype=float)


def nonlinear_state_columns(sys: pm.SystemModel) -> np.ndarray:
    """State columns that enter the dynamics nonlinearly: rotor angle,
    both transient EMFs, and the field voltage of each machine.  The
    remaining states appear with constant coefficients, so every
    higher-order derivative against them vanishes."""
    cols = []
    for k in range(sys.n_machines):
        base = k * pm.N_STATES
        cols += [base + 0, base + 2, base + 3, base + 4]
    return np.asarray(cols, dtype=int)


def taylor_tensors(sys: pm.SystemModel, order: int, *, extended: bool = True) -> Tensor:
    """Dense symmetrized derivative tensor (with the 1/order! factor) of
    the pre-fault dynamics around ``sys.x0``.

    Runs in extended precision with a Richardson pass on the quadratic
    term: in plain double the high-gain exciter rows bottom out near 1e-6
    per entry, enough to bury fourth-order remainders.
    """
    if sys.n_states > DENSE_STATE_LIMIT:
        raise ModelBuildError(
            f"dense derivative tensors are limited to {DENSE_STATE_LIMIT} states "
            f"(system has {sys.n_states}); use build_taylor_model, which "
            "switches to the structured sparse path"
        )
    x0 = sys.x0.astype(np.longdouble) if extended else sys.x0
    return fd_derivative_tensor(
        _prefault_batch(sys),
        x0,
        order,
        columns=nonlinear_state_columns(sys),
        refine=extended,
    )


def compress(t: Tensor, rank: int, **opts) -> CpFactors:
    """CP-compress a derivative tensor; the achieved fit rides on the
    returned factors."""
    return cp_decompose(t, rank, **opts)


# ---------------------------------------------------------------------------
# structured sparse path (n > DENSE_STATE_LIMIT)


def _machine_cols(k: int):
    base = k * pm.N_STATES
    return [base + 0, base + 2, base + 3]  # delta, eqp, edp


def _coupled_rows(k: int):
    base = k * pm.N_STATES
    return [base + 1, base + 2, base + 3]  # omega, eqp, edp equations


def _structured_tuples(sys: pm.SystemModel, order: int):
    """Column multisets with structurally nonzero derivatives, paired with
    the row sets that can carry them.  Valid only for ka = 0 machines."""
    m = sys.n_machines
    all_rows = np.asarray([r for k in range(m) for r in _coupled_rows(k)], dtype=int)
    out = []
    for p in range(m):
        vp = _machine_cols(p)
        for tup in itertools.combinations_with_replacement(vp, order):
            out.append((tup, all_rows))
        efd = p * pm.N_STATES + 4
        out.append(((efd,) * order, np.asarray([efd], dtype=int)))
    for p, q in itertools.combinations(range(m), 2):
        vp, vq = _machine_cols(p), _machine_cols(q)
        rows = np.asarray(_coupled_rows(p) + _coupled_rows(q), dtype=int)
        for tup in itertools.combinations_with_replacement(vp + vq, order):
            used = {c // pm.N_STATES for c in tup}
            if used == {p, q}:
                out.append((tuple(sorted(tup)), rows))
    return out


def _structured_coo(sys: pm.SystemModel, order: int):
    """Sparse COO representation (coords, values) of the order-2 or
    order-3 derivative tensor, enumerated from machine-pair coupling."""
    if np.any(sys._p["ka"] != 0.0):
        raise ModelBuildError(
            "structured tensor build needs open exciter voltage loops "
            "(ka = 0 on every machine); terminal-voltage feedback couples "
            "all machine triples and the derivative tensors become dense"
        )
    step = QUAD_STEP if order == 2 else CUBIC_STEP
    h = step * np.maximum(1.0, np.abs(sys.x0))
    tups = _structured_tuples(sys, order)
    values = _refined_multiset_values if order == 2 else _multiset_values
    vals = values(_prefault_batch(sys), sys.x0, h, [t for t, _ in tups], order)
    coord_parts = []
    value_parts = []
    for (tup, rows), v in zip(tups, vals):
        vr = v[rows]
        for perm in set(itertools.permutations(tup)):
            block = np.empty((rows.size, order + 1), dtype=np.int64)
            block[:, 0] = rows
            block[:, 1:] = perm
            coord_parts.append(block)
            value_parts.append(vr)
    coords = np.concatenate(coord_parts, axis=0)
    values = np.concatenate(value_parts)
    return coords, values


def _cp_als_coo(
    dims,
    coords: np.ndarray,
    values: np.ndarray,
    rank: int,
    *,
    max_iters: int = 200,
    fit_tolerance: float = 1e-8,
    restarts: int = 1,
    seed: int = 0,
) -> CpFactors:
    """ALS on a sparse coordinate-format tensor.

    Same update rule and fit definition as the dense
    :func:`tensorsim.tensor_ops.cp_decompose`; the MTTKRP is a
    gather/segment-sum over the nonzeros.
    """
    d = len(dims)
    norm_t = float(np.linalg.norm(values))
    if norm_t == 0.0:
        from .tensor_ops import _zero_factors

        return _zero_factors(dims, rank)

    # sort the nonzeros along every mode once; iterations then only gather
    # factor rows and segment-sum
    mode_plan = []
    for k in range(d):
        order_k = np.argsort(coords[:, k], kind="stable")
        ck = coords[order_k, k]
        starts = np.flatnonzero(np.r_[True, ck[1:] != ck[:-1]])
        sorted_cols = [np.ascontiguousarray(coords[order_k, j]) for j in range(d)]
        mode_plan.append((values[order_k], sorted_cols, starts, ck[starts]))

    rng = np.random.default_rng(seed)
    nnz = values.size
    p = np.empty((nnz, rank))
    g = np.empty((nnz, rank))
    best = None
    for _ in range(max(1, restarts)):
        factors = [rng.uniform(size=(n, rank)) for n in dims]
        grams = [f.T @ f for f in factors]
        history = []
        prev = None
        converged = False
        for _ in range(max_iters):
            m_last = None
            for k in range(d):
                vals_k, cols_k, starts, urows = mode_plan[k]
                p[:] = vals_k[:, None]
                for j in range(d):
                    if j != k:
                        np.take(factors[j], cols_k[j], axis=0, out=g)
                        p *= g
                m = np.zeros((dims[k], rank))
                m[urows] = np.add.reduceat(p, starts, axis=0)
                v = np.ones((rank, rank))
                for j in range(d):
                    if j != k:
                        v *= grams[j]
                try:
                    # keep C-contiguous: the np.take(out=) gathers need it
                    factors[k] = np.ascontiguousarray(np.linalg.solve(v, m.T).T)
                except np.linalg.LinAlgError:
                    factors[k] = m @ np.linalg.pinv(v)
                grams[k] = factors[k].T @ factors[k]
                m_last = m
            inner = float(np.sum(m_last * factors[d - 1]))
            v = np.ones((rank, rank))
            for gram in grams:
                v *= gram
            resid_sq = max(norm_t**2 - 2.0 * inner + float(np.sum(v)), 0.0)
            fit = 1.0 - np.sqrt(resid_sq) / norm_t
            history.append(fit)
            if prev is not None and abs(fit - prev) < fit_tolerance:
                converged = True
                break
            prev = fit
        if best is None or history[-1] > best[0]:
            best = (history[-1], [f.copy() for f in factors], history, converged)

    from .tensor_ops import _normalize_columns

    fit, factors, history, converged = best
    factors, weights = _normalize_columns(factors)
    return CpFactors(
        rank=rank,
        factors=factors,
        weights=weights,
        fit=float(fit),
        converged=converged,
        fit_history=np.asarray(history),
    )


# ---------------------------------------------------------------------------
# the reduced model


@dataclass
class TaylorModel:
    """Third-order Taylor model of the dynamics around one equilibrium."""

    load_level: float
    x0: np.ndarray
    a1: np.ndarray
    a2: CpFactors
    a3: CpFactors
    ranks: tuple
    fits: tuple
    a2_raw: Tensor | None = field(default=None, repr=False)
    a3_raw: Tensor | None = field(default=None, repr=False)

    # evaluation caches (leading factors with weights folded in, stacked
    # projection matrix) built once per model
    _proj: np.ndarray = field(default=None, repr=False)
    _lead: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        r2, r3 = self.a2.rank, self.a3.rank
        self._proj = np.ascontiguousarray(
            np.vstack(
                [
                    self.a2.factors[1].T,
                    self.a2.factors[2].T,
                    self.a3.factors[1].T,
                    self.a3.factors[2].T,
                    self.a3.factors[3].T,
                ]
            )
        )
        self._lead = np.ascontiguousarray(
            np.hstack(
                [self.a2.factors[0] * self.a2.weights,
                 self.a3.factors[0] * self.a3.weights]
            )
        )
        self._r2 = r2
        self._r3 = r3

    @property
    def n(self) -> int:
        return self.x0.size


def reduced_rhs(model: TaylorModel, dx: np.ndarray) -> np.ndarray:
    """Factored evaluation of the third-order deviation dynamics."""
    r2, r3 = model._r2, model._r3
    y = model._proj @ dx
    g2 = y[:r2] * y[r2:2 * r2]
    z = y[2 * r2:]
    g3 = z[:r3] * z[r3:2 * r3] * z[2 * r3:]
    return model.a1 @ dx + model._lead @ np.concatenate([g2, g3])


def linear_rhs(model: TaylorModel, dx: np.ndarray) -> np.ndarray:
    """First-order (Jacobian-only) deviation dynamics, the comparison
    baseline for linear model reduction."""
    return model.a1 @ dx


def build_taylor_model(
    sys: pm.SystemModel,
    ranks,
    *,
    seed: int = 0,
    cp_options: dict | None = None,
    keep_raw: bool | None = None,
) -> TaylorModel:
    """Build the per-level Taylor model.

    ``ranks`` is ``(r2, r3)`` for ALS compression or the string ``"full"``
    for the exact constructive factorization (dense path only).  Raw
    tensors are retained for oracle checks when the state count allows.
    """
    n = sys.n_states
    opts = dict(cp_options or {})
    dense = n <= DENSE_STATE_LIMIT
    if keep_raw is None:
        keep_raw = dense
    if not dense:
        if ranks == "full":
            raise ModelBuildError(
                f"exact full-rank factors need dense tensors (n <= {DENSE_STATE_LIMIT})"
            )
        if keep_raw:
            raise ModelBuildError(
                f"raw tensors cannot be retained above {DENSE_STATE_LIMIT} states"
            )

    a1 = jacobian(sys)
    if dense:
        t2 = taylor_tensors(sys, 2)
        t3 = taylor_tensors(sys, 3)
        if ranks == "full":
            f2, f3 = cp_exact(t2), cp_exact(t3)
        else:
            r2, r3 = ranks
            f2 = compress(t2, int(r2), seed=seed, **opts)
            f3 = compress(t3, int(r3), seed=seed + 1, **opts)
        return TaylorModel(
            load_level=sys.load_level,
            x0=sys.x0.copy(),
            a1=a1,
            a2=f2,
            a3=f3,
            ranks=(f2.rank, f3.rank),
            fits=(f2.fit, f3.fit),
            a2_raw=t2 if keep_raw else None,
            a3_raw=t3 if keep_raw else None,
        )

    r2, r3 = int(ranks[0]), int(ranks[1])
    c2, v2 = _structured_coo(sys, 2)
    c3, v3 = _structured_coo(sys, 3)
    als = {k: v for k, v in opts.items() if k in ("max_iters", "fit_tolerance", "restarts")}
    # offline large-system compression: favor build time, the evaluation
    # cost downstream depends only on the chosen ranks
    als.setdefault("max_iters", 30)
    als.setdefault("fit_tolerance", 1e-6)
    f2 = _cp_als_coo((n,) * 3, c2, v2, r2, seed=seed, **als)
    f3 = _cp_als_coo((n,) * 4, c3, v3, r3, seed=seed + 1, **als)
    return TaylorModel(
        load_level=sys.load_level,
        x0=sys.x0.copy(),
        a1=a1,
        a2=f2,
        a3=f3,
        ranks=(f2.rank, f3.rank),
        fits=(f2.fit, f3.fit),
    )


# ---------------------------------------------------------------------------
# hybrid model


def select_boundary_generators(sys: pm.SystemModel, threshold: float) -> set:
    """Machines kept nonlinear: the whole study area plus external
    machines whose admittance column norm exceeds ``threshold``."""
    norms = pm.admittance_column_norms(sys)
    keep = set(sys.study)
    keep.update(g for g, v in norms.items() if v > threshold)
    return keep


@dataclass
class HybridModel:
    """Row-partitioned model: selected machines follow the full nonlinear
    equations, the rest follow the reduced Taylor dynamics; both see the
    same state vector."""

    taylor: TaylorModel
    nonlinear_ids: tuple
    row_mask: np.ndarray  # True rows come from the full model

    @property
    def all_nonlinear(self) -> bool:
        return bool(self.row_mask.all())


def build_hybrid(sys: pm.SystemModel, taylor: TaylorModel, nonlinear_ids) -> HybridModel:
    ids = tuple(sorted(set(nonlinear_ids)))
    missing = set(sys.study) - set(ids)
    if missing:
        raise ValueError(f"study-area machines must stay nonlinear: {sorted(missing)}")
    mask = np.zeros(sys.n_states, dtype=bool)
    for g in ids:
        k = sys.machine_pos(g)
        mask[k * pm.N_STATES:(k + 1) * pm.N_STATES] = True
    return HybridModel(taylor=taylor, nonlinear_ids=ids, row_mask=mask)


def hybrid_rhs(
    h: HybridModel,
    x: np.ndarray,
    sys: pm.SystemModel,
    condition="prefault",
    yred: np.ndarray | None = None,
) -> np.ndarray:
    """Combine full-model rows (nonlinear set) with reduced rows.

    Full rows are evaluated by the same kernel as the plain full model, so
    they match it bit for bit.
    """
    if yred is None:
        yred = pm._resolve_yred(sys, condition)
    full = pm._rhs(sys, yred, x)
    if h.all_nonlinear:
        return full
    red = reduced_rhs(h.taylor, x - h.taylor.x0)
    return np.where(h.row_mask, full, red)


# ---------------------------------------------------------------------------
# model sets and persistence


@dataclass
class ModelSet:
    levels: tuple
    models: dict
    meta: dict = field(default_factory=dict)

    def __getitem__(self, level: float) -> TaylorModel:
        return self.models[level]

    def nearest_level(self, level: float) -> float:
        return min(self.levels, key=lambda l: (abs(l - level), l))


def build_model_set(
    sys: pm.SystemModel,
    levels=(0.8, 1.0, 1.2),
    ranks=(16, 16),
    *,
    seed: int = 0,
    cp_options: dict | None = None,
) -> ModelSet:
    """One Taylor model per representative load level, each built around
    that level's own re-solved equilibrium.  Any per-level failure aborts
    the set build with a combined diagnostic."""
    models = {}
    failures = []
    for lv in levels:
        try:
            sys_l = sys if lv == sys.load_level else pm.build_system(sys.spec, lv)
            models[lv] = build_taylor_model(sys_l, ranks, seed=seed, cp_options=cp_options)
        except (pm.PowerFlowError, pm.EquilibriumError, ModelBuildError, NumericalError) as exc:
            failures.append(f"level {lv}: {exc}")
    if failures:
        raise ModelBuildError("model set build aborted: " + "; ".join(failures))
    meta = {
        "levels": list(levels),
        "ranks": list(models[levels[0]].ranks),
        "seed": seed,
        "fits": {str(lv): list(models[lv].fits) for lv in levels},
    }
    return ModelSet(levels=tuple(levels), models=models, meta=meta)


def save_model_set(ms: ModelSet, path, extra_meta: dict | None = None) -> None:
    """Persist a model set to ``.npz``.  Arrays round-trip bit-faithfully;
    raw oracle tensors are not persisted."""
    meta = dict(ms.meta)
    if extra_meta:
        meta.update(extra_meta)
    arrays = {
        "levels": np.asarray(ms.levels, dtype=float),
        "meta_json": np.frombuffer(
            json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
        ),
    }
    for i, lv in enumerate(ms.levels):
        mdl = ms.models[lv]
        pre = f"m{i}_"
        arrays[pre + "x0"] = mdl.x0
        arrays[pre + "a1"] = mdl.a1
        arrays[pre + "info"] = np.array(
            [mdl.load_level, mdl.fits[0], mdl.fits[1]], dtype=float
        )
        for tag, f in (("a2", mdl.a2), ("a3", mdl.a3)):
            arrays[pre + tag + "_w"] = f.weights
            for k, mat in enumerate(f.factors):
                arrays[pre + f"{tag}_f{k}"] = mat
    np.savez(path, **arrays)


def load_model_set(path) -> ModelSet:
    with np.load(path) as z:
        levels = tuple(float(v) for v in z["levels"])
        meta = json.loads(bytes(z["meta_json"].tobytes()).decode())
        models = {}
        for i, lv in enumerate(levels):
            pre = f"m{i}_"
            info = z[pre + "info"]
            facs = {}
            for tag, d in (("a2", 3), ("a3", 4)):
                w = z[pre + tag + "_w"]
                mats = [z[pre + f"{tag}_f{k}"] for k in range(d)]
                facs[tag] = CpFactors(
                    rank=w.size, factors=mats, weights=w,
                    fit=float(info[1 if tag == "a2" else 2]),
                )
            models[lv] = TaylorModel(
                load_level=float(info[0]),
                x0=z[pre + "x0"],
                a1=z[pre + "a1"],
                a2=facs["a2"],
                a3=facs["a3"],
                ranks=(facs["a2"].rank, facs["a3"].rank),
                fits=(float(info[1]), float(info[2])),
            )
    return ModelSet(levels=levels, models=models, meta=meta)
