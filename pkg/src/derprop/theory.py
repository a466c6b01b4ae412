"""Machine checks for the well-posedness and boundedness claims, plus the
identical-cosine demonstration.

Everything here is numerical rather than symbolic: ranks come from SVD
with a relative threshold, bounds are evaluated on seeded random feature
maps, and the uniqueness statements are certified by brute-force search
over a grid on the L1 unit sphere.  The constraint systems solved here
are the *linearized* ones (similarity denominators dropped, one side of
each pixel pair held fixed as an anchor); reports label them as such.

Each check returns a :class:`VerificationReport` carrying (claim,
instances, violations, worst margin) so callers can render both a text
summary and machine-readable JSON.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import ndimage

from .core import entrywise_l1
from .derivative import build_operator_matrix, induced_one_norm, numerical_rank
from .propagation import cosine
from .seeding import make_rng


@dataclass
class VerificationReport:
    """Outcome of one verification claim over a batch of instances."""

    claim: str
    instances: int
    violations: int
    worst_margin: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.claim}: instances={self.instances} "
            f"violations={self.violations} worst_margin={self.worst_margin:.3e}"
        )

    def to_dict(self) -> dict:
        return {
            "claim": self.claim,
            "instances": self.instances,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "passed": self.passed,
            "details": self.details,
        }


@dataclass(frozen=True)
class StackedSystem:
    """Identity block stacked on top of every derivative operator order.

    For dimension D the matrix has D + (D-1) + ... + 1 = D(D+1)/2 rows;
    block q (0-based, q = 0 being the identity) contributes D - q rows.
    ``targets`` optionally carries the per-order similarity constraints.
    """

    d: int
    matrix: np.ndarray
    block_rows: tuple
    targets: np.ndarray | None = None


def joint_coefficient_matrix(d: int) -> StackedSystem:
    """Stack I, A_1, ..., A_{D-1} (forward variant) into one system."""
    if d < 2:
        raise ValueError(f"stacked system needs dimension >= 2, got {d}")
    blocks = [np.eye(d)]
    for q in range(1, d):
        blocks.append(build_operator_matrix(q, d, "forward").matrix)
    matrix = np.vstack(blocks)
    matrix.setflags(write=False)
    return StackedSystem(d=d, matrix=matrix, block_rows=tuple(b.shape[0] for b in blocks))


def verify_well_posedness(d: int, tol: float = 1e-10) -> VerificationReport:
    """Check Rank(A_q) = D - q for every block and Rank(stack) = D."""
    system = joint_coefficient_matrix(d)
    violations = 0
    ranks = {}
    for q in range(1, d):
        op = build_operator_matrix(q, d, "forward")
        r = numerical_rank(op.matrix, tol)
        ranks[f"A_{q}"] = r
        if r != d - q:
            violations += 1
    stack_rank = numerical_rank(system.matrix, tol)
    ranks["stack"] = stack_rank
    if stack_rank != d:
        violations += 1
    s = np.linalg.svd(system.matrix, compute_uv=False)
    margin = float(s[d - 1] / s[0])  # smallest kept relative singular value
    return VerificationReport(
        claim=f"well-posedness ranks (D={d})",
        instances=d,  # D-1 block checks plus the stack check
        violations=violations,
        worst_margin=margin,
        details={"ranks": ranks, "tol": tol},
    )


def well_posedness_sweep(d_max: int, tol: float = 1e-10) -> VerificationReport:
    """Aggregate rank checks over every dimension 2..d_max."""
    if d_max < 2:
        raise ValueError(f"need d_max >= 2, got {d_max}")
    instances = violations = 0
    worst = math.inf
    per_dim = {}
    for d in range(2, d_max + 1):
        rep = verify_well_posedness(d, tol)
        instances += rep.instances
        violations += rep.violations
        worst = min(worst, rep.worst_margin)
        per_dim[str(d)] = rep.details["ranks"]["stack"]
    return VerificationReport(
        claim=f"well-posedness ranks for all D in 2..{d_max}",
        instances=instances,
        violations=violations,
        worst_margin=float(worst),
        details={"stack_ranks": per_dim, "tol": tol},
    )


def constraint_matrix(anchor) -> np.ndarray:
    """Rows anchor^T A_q^T A_q of the linearized constraint system, q = 0..D-1."""
    a = np.asarray(anchor, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] < 2:
        raise ValueError(f"anchor must be a vector of dimension >= 2, got shape {a.shape}")
    d = a.shape[0]
    rows = [a.copy()]
    for q in range(1, d):
        op = build_operator_matrix(q, d, "forward")
        rows.append((op.matrix @ a) @ op.matrix)
    return np.vstack(rows)


@dataclass
class SolveResult:
    """Solution of the anchored linear constraint system."""

    solution: np.ndarray
    residual: float
    rank: int
    cond: float
    nullspace_dim: int
    matrix: np.ndarray

    @property
    def unique(self) -> bool:
        return self.nullspace_dim == 0


def solve_features_from_similarities(anchor, targets, tol: float = 1e-10) -> SolveResult:
    """Solve the linearized system M x = targets for one feature vector.

    Row q of M is anchor^T A_q^T A_q.  A rank-deficient M is not an
    error: the result reports the null-space dimension and the computed
    minimum-norm solution instead.
    """
    m = constraint_matrix(anchor)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if t.shape[0] != m.shape[0]:
        raise ValueError(f"expected {m.shape[0]} targets, got {t.shape[0]}")
    u, s, vt = np.linalg.svd(m)
    rank = int((s > tol * s[0]).sum()) if s[0] > 0 else 0
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    inv = np.where(s > tol * (s[0] if s[0] > 0 else 1.0), 1.0 / np.where(s == 0, 1.0, s), 0.0)
    x = vt.T @ (inv * (u.T @ t))
    residual = float(np.linalg.norm(m @ x - t))
    return SolveResult(
        solution=x,
        residual=residual,
        rank=rank,
        cond=cond,
        nullspace_dim=m.shape[1] - rank,
        matrix=m,
    )


def verify_lemma_norms(
    max_q: int = 6, max_d: int = 12, trials: int = 1000, seed: int = 0
) -> VerificationReport:
    """Operator-norm facts of the forward derivative.

    Exact part: the induced 1-norm of A_q equals 2^q for every q and D in
    range (zero tolerance; the matrices are integer-built).  Random part:
    ||d^q v||_1 <= 2^q ||v||_1 on seeded random vectors.
    """
    violations = 0
    instances = 0
    worst = 0.0
    for q in range(1, max_q + 1):
        for d in range(q + 1, max_d + 1):
            op = build_operator_matrix(q, d, "forward")
            instances += 1
            gap = abs(induced_one_norm(op.matrix) - 2.0**q)
            worst = max(worst, gap)
            if gap != 0.0:
                violations += 1
    rng = make_rng(seed, "lemma-vectors")
    for _ in range(trials):
        d = int(rng.integers(2, max_d + 1))
        q = int(rng.integers(1, d))
        v = rng.normal(size=d)
        op = build_operator_matrix(q, d, "forward")
        lhs = np.abs(op.matrix @ v).sum()
        rhs = 2.0**q * np.abs(v).sum()
        instances += 1
        slack = rhs - lhs
        if lhs > rhs + 1e-9:
            violations += 1
        worst = max(worst, max(0.0, lhs - rhs))
    return VerificationReport(
        claim="derivative operator 1-norm equals 2^q and bounds L1 growth",
        instances=instances,
        violations=violations,
        worst_margin=worst,
        details={"max_q": max_q, "max_d": max_d, "trials": trials, "seed": seed},
    )


def verify_boundedness(
    trials: int,
    d: int,
    m: int,
    seed: int = 0,
    slack_tol: float = 1e-9,
    keep_slacks: bool = False,
) -> VerificationReport:
    """High-order similarity mass against the second-derivative bound.

    Samples feature maps with per-column L1 mass <= 1 and checks, for
    every order q in {2, ..., D-1}:

        ||S_q||_1 <= (2^(q-2) ||d2 V||_1)^2 + slack_tol

    where S_q is the Gram matrix of the order-q derivative features.  The
    intermediate inequality ||S_q||_1 <= (||d^q V||_1)^2 is counted as its
    own sub-instance.  Worst margin is the smallest observed slack
    (negative would be a violation).
    """
    if d < 4:
        raise ValueError(f"need dimension >= 4 so the order range is nonempty, got {d}")
    rng = make_rng(seed, "thm2")
    ops: dict = {}
    violations = 0
    instances = 0
    worst_slack = math.inf
    slacks: list = []
    for _ in range(trials):
        dt = int(rng.integers(4, d + 1))
        mt = int(rng.integers(1, m + 1))
        # Columns on the L1 ball: random simplex point, random signs, random scale.
        g = rng.dirichlet(np.ones(dt), size=mt).T
        signs = rng.choice([-1.0, 1.0], size=(dt, mt))
        scale = rng.uniform(0.0, 1.0, size=mt)
        v = g * signs * scale[None, :]
        key2 = (2, dt)
        if key2 not in ops:
            ops[key2] = build_operator_matrix(2, dt, "forward").matrix
        base = entrywise_l1(ops[key2] @ v)
        for q in range(2, dt):
            key = (q, dt)
            if key not in ops:
                ops[key] = build_operator_matrix(q, dt, "forward").matrix
            dv = ops[key] @ v
            lhs = entrywise_l1(dv.T @ dv)
            mid = entrywise_l1(dv) ** 2
            bound = (2.0 ** (q - 2) * base) ** 2
            instances += 2
            if lhs > mid + slack_tol:
                violations += 1
            if lhs > bound + slack_tol:
                violations += 1
            worst_slack = min(worst_slack, bound - lhs)
            if keep_slacks:
                slacks.append(bound - lhs)
    details = {"trials": trials, "max_d": d, "max_m": m, "seed": seed}
    if keep_slacks:
        details["slacks"] = slacks
    return VerificationReport(
        claim="high-order similarity mass bounded by squared d2 feature mass",
        instances=instances,
        violations=violations,
        worst_margin=float(worst_slack),
        details=details,
    )


# -- brute-force uniqueness oracle (D = 3) -----------------------------------

_GRID_CACHE: dict = {}


def _simplex_grid(n: int):
    """Integer barycentric grid on the 2-simplex at resolution 1/n."""
    if n not in _GRID_CACHE:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        valid = i + j <= n
        k = n - i - j
        _GRID_CACHE[n] = (i / n, j / n, np.where(valid, k, 0) / n, valid)
    return _GRID_CACHE[n]


def count_solution_clusters(
    anchor,
    targets,
    orders,
    resolution: float = 1e-3,
    satisfy_tol: float = 1e-2,
) -> dict:
    """Count connected near-solution clusters on the L1 unit sphere (D = 3).

    The sphere is covered by the simplex grid in each of the eight sign
    orthants; a grid point is a near-solution when every selected
    constraint |row_q . x - s_q| is within ``satisfy_tol``.  Clusters are
    8-connected components counted per orthant face (faces are not merged
    across shared edges, so a constraint band crossing several faces
    counts once per face).
    """
    a = np.asarray(anchor, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError("the brute-force oracle is implemented for D = 3 only")
    rows = constraint_matrix(a)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    n = int(round(1.0 / resolution))
    xi, xj, xk, valid = _simplex_grid(n)
    clusters = 0
    points: list = []
    structure = np.ones((3, 3), dtype=bool)
    for sgn in product((1.0, -1.0), repeat=3):
        mask = valid.copy()
        for q in orders:
            row = rows[q]
            val = (row[0] * sgn[0]) * xi + (row[1] * sgn[1]) * xj + (row[2] * sgn[2]) * xk
            mask &= np.abs(val - t[q]) <= satisfy_tol
        if not mask.any():
            continue
        labeled, count = ndimage.label(mask, structure=structure)
        clusters += count
        for c in range(1, count + 1):
            ii, jj = np.nonzero(labeled == c)
            r = ii[0], jj[0]
            points.append(
                (sgn[0] * xi[r], sgn[1] * xj[r], sgn[2] * xk[r])
            )
    return {"clusters": clusters, "representatives": points}


def verify_uniqueness(
    n_anchors: int = 20,
    seed: int = 0,
    resolution: float = 1e-3,
    satisfy_tol: float = 1e-2,
    max_cond: float = 50.0,
) -> VerificationReport:
    """Brute-force certificate for the stacked-constraint uniqueness claim.

    For each seeded generic anchor (D = 3): sample a true feature vector
    on the interior of the simplex, generate its constraint targets, and
    require >= 2 solution clusters under the order-0 constraint alone but
    exactly 1 under the full stack; the linear solve must hit the truth
    with residual < 1e-8.  Anchors whose constraint matrix is poorly
    conditioned are re-sampled (the claim addresses generic anchors).
    """
    rng = make_rng(seed, "uniqueness")
    violations = 0
    worst_residual = 0.0
    cases = []
    for _ in range(n_anchors):
        while True:
            anchor = rng.dirichlet(np.ones(3) * 2.0)
            truth = rng.dirichlet(np.ones(3) * 2.0)
            if anchor.min() < 0.1 or truth.min() < 0.1:
                continue
            m = constraint_matrix(anchor)
            s = np.linalg.svd(m, compute_uv=False)
            if s[-1] > 0 and s[0] / s[-1] <= max_cond:
                break
        targets = m @ truth
        res = solve_features_from_similarities(anchor, targets)
        worst_residual = max(worst_residual, res.residual)
        q0 = count_solution_clusters(anchor, targets, orders=(0,), resolution=resolution,
                                     satisfy_tol=satisfy_tol)
        full = count_solution_clusters(anchor, targets, orders=(0, 1, 2),
                                       resolution=resolution, satisfy_tol=satisfy_tol)
        ok = (
            q0["clusters"] >= 2
            and full["clusters"] == 1
            and res.unique
            and res.residual < 1e-8
            and np.max(np.abs(res.solution - truth)) < 1e-8
        )
        if not ok:
            violations += 1
        cases.append(
            {
                "anchor": [float(x) for x in anchor],
                "clusters_q0_only": q0["clusters"],
                "clusters_full_stack": full["clusters"],
                "solver_residual": res.residual,
            }
        )
    return VerificationReport(
        claim="order-0 constraint admits multiple clusters; full stack exactly one",
        instances=n_anchors,
        violations=violations,
        worst_margin=worst_residual,
        details={"seed": seed, "resolution": resolution, "cases": cases},
    )


def joint_pair_experiment(
    seed: int = 0, resolution: float = 0.025, satisfy_tol: float = 0.02
) -> dict:
    """Reported experiment: two unknown vectors from their mutual similarities.

    With M = 2 and D = 3, the pairwise constraints s_q = (A_q x)^T (A_q y)
    for q = 0..2 give three equations for four degrees of freedom, so the
    solution set is expected to have positive extent.  This searches pairs
    on the positive simplex face and reports survivor count, cluster
    count, and the solution set's diameter; nothing is asserted.
    """
    rng = make_rng(seed, "joint-pair")
    x = rng.dirichlet(np.ones(3) * 2.0)
    y = rng.dirichlet(np.ones(3) * 2.0)
    ops = [np.eye(3)] + [build_operator_matrix(q, 3, "forward").matrix for q in (1, 2)]
    targets = [float((op @ x) @ (op @ y)) for op in ops]
    n = int(round(1.0 / resolution))
    xi, xj, xk, valid = _simplex_grid(n)
    pts = np.stack([xi[valid], xj[valid], xk[valid]], axis=1)
    mask = np.ones((pts.shape[0], pts.shape[0]), dtype=bool)
    for op, s in zip(ops, targets):
        u = pts @ op.T
        mask &= np.abs(u @ u.T - s) <= satisfy_tol
    survivors = int(mask.sum())
    diameter = 0.0
    if survivors:
        ii, jj = np.nonzero(mask)
        pairs = np.concatenate([pts[ii], pts[jj]], axis=1)
        span = pairs.max(axis=0) - pairs.min(axis=0)
        diameter = float(np.linalg.norm(span))
    return {
        "true_pair": [[float(v) for v in x], [float(v) for v in y]],
        "targets": targets,
        "survivor_pairs": survivors,
        "solution_set_diameter": diameter,
        "resolution": resolution,
        "satisfy_tol": satisfy_tol,
    }


# -- identical-cosine demonstration ------------------------------------------

SQRT2_OVER_2 = math.sqrt(2.0) / 2.0


@dataclass
class CounterexampleReport:
    """Numbers behind the identical-cosine demonstration."""

    cos_plus: float
    cos_minus: float
    reference: float
    q0_constraint_plus: float
    q0_constraint_minus: float
    constant_anchor_rank: int
    generic_anchor: list
    generic_q0_values: tuple
    generic_q1_values: tuple
    passed: bool

    def lines(self) -> list[str]:
        fmt = "0.7071067811865476"
        out = [
            "identical-cosine demonstration",
            f"  cos_l2([1,1,1], [2+sqrt(3),1,0]) = {self.cos_plus!r}"
            f" (reference sqrt(2)/2 = {fmt}, diff = {self.cos_plus - self.reference:.1e})",
            f"  cos_l2([1,1,1], [2-sqrt(3),1,0]) = {self.cos_minus!r}"
            f" (reference sqrt(2)/2 = {fmt}, diff = {self.cos_minus - self.reference:.1e})",
            "  order-0 linearized constraint (anchor [1,1,1], L1-normalized candidates):",
            f"    candidate '+': {self.q0_constraint_plus!r}",
            f"    candidate '-': {self.q0_constraint_minus!r}",
            "    -> equal: the order-0 constraint alone admits both candidates",
            f"  constant anchor [1,1,1]: stacked constraint matrix rank = "
            f"{self.constant_anchor_rank} (derivative rows vanish; not disambiguated)",
            f"  generic anchor {self.generic_anchor}: two candidates with equal order-0 value",
            f"    order-0 values: {self.generic_q0_values[0]:.12f} vs {self.generic_q0_values[1]:.12f}",
            f"    order-1 values: {self.generic_q1_values[0]:.12f} vs {self.generic_q1_values[1]:.12f}",
            "    -> distinct: the first-order constraint disambiguates the pair",
            f"  verdict: {'PASS' if self.passed else 'FAIL'}",
        ]
        return out

    def to_dict(self) -> dict:
        return {
            "cos_plus": self.cos_plus,
            "cos_minus": self.cos_minus,
            "reference": self.reference,
            "q0_constraint_plus": self.q0_constraint_plus,
            "q0_constraint_minus": self.q0_constraint_minus,
            "constant_anchor_rank": self.constant_anchor_rank,
            "generic_anchor": self.generic_anchor,
            "generic_q0_values": list(self.generic_q0_values),
            "generic_q1_values": list(self.generic_q1_values),
            "passed": self.passed,
        }


def counterexample_demo() -> CounterexampleReport:
    """Two distinct feature vectors with the same cosine to a common anchor.

    Shows the sqrt(2)/2 coincidence, then the stacked-system view: with
    the constant anchor [1,1,1] every derivative row vanishes (rank 1, no
    disambiguation possible), while for a generic anchor two candidates
    with equal order-0 similarity get distinct order-1 constraint values.
    """
    anchor = np.array([1.0, 1.0, 1.0])
    plus = np.array([2.0 + math.sqrt(3.0), 1.0, 0.0])
    minus = np.array([2.0 - math.sqrt(3.0), 1.0, 0.0])
    cos_plus = cosine(anchor, plus, "l2")
    cos_minus = cosine(anchor, minus, "l2")

    # Order-0 linearized constraint on L1-normalized vectors.
    anchor_n = anchor / np.abs(anchor).sum()
    plus_n = plus / np.abs(plus).sum()
    minus_n = minus / np.abs(minus).sum()
    q0_plus = float(anchor_n @ plus_n)
    q0_minus = float(anchor_n @ minus_n)

    const_rank = numerical_rank(constraint_matrix(anchor_n), 1e-10)

    # Generic anchor: candidates on the plane {order-0 value fixed, L1 sum
    # fixed} differ only along the direction orthogonal to both normals,
    # which on the positive face keeps them L1-normalized.
    generic = np.array([0.5, 0.3, 0.2])
    c1 = np.array([0.2, 0.5, 0.3])
    direction = np.cross(np.ones(3), generic)
    c2 = c1 + 0.25 * direction
    rows = constraint_matrix(generic)
    g_q0 = (float(rows[0] @ c1), float(rows[0] @ c2))
    g_q1 = (float(rows[1] @ c1), float(rows[1] @ c2))

    passed = (
        abs(cos_plus - SQRT2_OVER_2) <= 1e-12
        and abs(cos_minus - SQRT2_OVER_2) <= 1e-12
        and abs(q0_plus - q0_minus) <= 1e-12
        and const_rank == 1
        and c2.min() > 0
        and abs(g_q0[0] - g_q0[1]) <= 1e-12
        and abs(g_q1[0] - g_q1[1]) > 1e-6
    )
    return CounterexampleReport(
        cos_plus=cos_plus,
        cos_minus=cos_minus,
        reference=SQRT2_OVER_2,
        q0_constraint_plus=q0_plus,
        q0_constraint_minus=q0_minus,
        constant_anchor_rank=const_rank,
        generic_anchor=[float(x) for x in generic],
        generic_q0_values=g_q0,
        generic_q1_values=g_q1,
        passed=passed,
    )
