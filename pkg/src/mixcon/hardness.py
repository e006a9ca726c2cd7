"""3-CNF to two-layer ReLU network encoding and its verification.

A formula with n variables and m exactly-3-literal clauses becomes a
network h(x) = W2 relu(W1 x + b) over inputs x in [-1, 1]^n, with the
convention x_i = -1 for "variable i true" and +1 for "false". The first
m first-layer neurons score the clauses: a clause row has +1 for a
positive literal, -1 for a negated one and bias -2, so on binary inputs
it outputs 1 exactly when the clause is unsatisfied. The remaining
2*K*n neurons hold K copies each of max(x_i, 0) and max(-x_i, 0); the
second layer passes clause scores through and sums each copy pair, so
output coordinate m + i*K + k equals |x_i|. Against the target

    z = (0, ..., 0  [m],  1, ..., 1  [K*n])

the squared residual of a binary input counts unsatisfied clauses
exactly, which is the mechanism every check in this module leans on.

K is a free copy count; the rounding bound is verified at K = 100*B^2
where B is the per-variable occurrence bound. Because W2 has
(m + K*n) * (m + 2*K*n) entries, dense matrices are only materialized
on demand and the scans below evaluate the network structurally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, FormatError
from .network import (
    Conv2d,
    Linear,
    Network,
    NetworkSpec,
    ReLU,
    power_iteration,
    spectral_norm,
)

DENSE_W2_LIMIT = 50_000_000  # entries; refuse to materialize beyond this
BRUTE_FORCE_CAP = 20  # maximum n for exhaustive assignment enumeration


@dataclass(frozen=True)
class CnfFormula:
    n: int
    clauses: tuple  # ((lit, lit, lit), ...) with 1-based signed literals
    B: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(tuple(c) for c in self.clauses))
        counts = {}
        for idx, clause in enumerate(self.clauses):
            if len(clause) != 3:
                raise ContractError(f"clause {idx} has {len(clause)} literals")
            seen = set()
            for lit in clause:
                v = abs(lit)
                if lit == 0 or v > self.n:
                    raise ContractError(f"clause {idx}: literal {lit} out of range")
                if v in seen:
                    raise ContractError(f"clause {idx}: variable {v} repeated")
                seen.add(v)
                counts[v] = counts.get(v, 0) + 1
        object.__setattr__(self, "B", max(counts.values()) if counts else 0)

    @property
    def m(self) -> int:
        return len(self.clauses)


def parse_dimacs(text: str) -> CnfFormula:
    """Parse DIMACS CNF text into a formula of exactly-3-literal clauses."""
    n = None
    declared = None
    clauses = []
    current = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise FormatError(f"line {lineno}: malformed problem line {line!r}")
            try:
                n, declared = int(parts[2]), int(parts[3])
            except ValueError:
                raise FormatError(f"line {lineno}: non-integer header counts")
            continue
        if n is None:
            raise FormatError(f"line {lineno}: clause before problem line")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise FormatError(f"line {lineno}: bad literal {tok!r}")
            if lit == 0:
                if len(current) != 3:
                    raise FormatError(
                        f"line {lineno}: clause with {len(current)} literals "
                        "(exactly 3 required)"
                    )
                if len({abs(l) for l in current}) != 3:
                    raise FormatError(f"line {lineno}: repeated variable in clause")
                if any(abs(l) > n for l in current):
                    raise FormatError(f"line {lineno}: variable index exceeds {n}")
                clauses.append(tuple(current))
                current = []
            else:
                current.append(lit)
    if current:
        raise FormatError("unterminated clause at end of input")
    if n is None:
        raise FormatError("missing problem line")
    if declared != len(clauses):
        raise FormatError(
            f"header declares {declared} clauses, found {len(clauses)}"
        )
    return CnfFormula(n=n, clauses=tuple(clauses))


def format_dimacs(phi: CnfFormula) -> str:
    lines = [f"p cnf {phi.n} {phi.m}"]
    for clause in phi.clauses:
        lines.append(" ".join(str(l) for l in clause) + " 0")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Assignment/input conversions


def assignment_to_input(assignment) -> np.ndarray:
    """Booleans to the signed encoding: true -> -1, false -> +1."""
    a = np.asarray(assignment, dtype=bool)
    return np.where(a, -1.0, 1.0)


def input_to_assignment(x) -> np.ndarray:
    """Sign rounding of a real input; exact zeros round to +1 (false)."""
    x = np.asarray(x, dtype=np.float64)
    return x < 0.0


def unsat_count(phi: CnfFormula, assignment) -> int:
    """Number of clauses with all three literals false."""
    a = np.asarray(assignment, dtype=bool)
    if a.shape != (phi.n,):
        raise ContractError(f"assignment length {a.shape} for n={phi.n}")
    count = 0
    for clause in phi.clauses:
        if not any((a[abs(l) - 1] if l > 0 else not a[abs(l) - 1]) for l in clause):
            count += 1
    return count


# ---------------------------------------------------------------------------
# The reduction


@dataclass
class ReducedNetwork:
    """Encoded network, stored structurally.

    ``clause_matrix`` is the m-by-n block of W1; the copy blocks and the
    whole of W2 are index patterns, so they are generated on demand by
    the ``w1``/``bias``/``w2``/``z`` properties (refusing absurd sizes)
    while the evaluation helpers below work at any K.
    """

    phi: CnfFormula
    K: int
    clause_matrix: np.ndarray  # (m, n) entries in {-1, 0, +1}

    @property
    def n(self) -> int:
        return self.phi.n

    @property
    def m(self) -> int:
        return self.phi.m

    @property
    def m1(self) -> int:
        return self.m + 2 * self.K * self.n

    @property
    def m2(self) -> int:
        return self.m + self.K * self.n

    @property
    def w1(self) -> np.ndarray:
        m, n, K = self.m, self.n, self.K
        w = np.zeros((self.m1, n))
        w[:m] = self.clause_matrix
        eye = np.eye(n)
        pos = np.repeat(eye, K, axis=0)  # rows m + i*K + k pick +x_i
        w[m : m + K * n] = pos
        w[m + K * n :] = -pos
        return w

    @property
    def bias(self) -> np.ndarray:
        b = np.zeros(self.m1)
        b[: self.m] = -2.0
        return b

    @property
    def w2(self) -> np.ndarray:
        if self.m2 * self.m1 > DENSE_W2_LIMIT:
            raise ConfigError(
                f"dense W2 would hold {self.m2 * self.m1} entries; use the "
                "structural evaluators at this K"
            )
        m, n, K = self.m, self.n, self.K
        w = np.zeros((self.m2, self.m1))
        w[:m, :m] = np.eye(m)
        rows = np.arange(K * n)
        w[m + rows, m + rows] = 1.0
        w[m + rows, m + K * n + rows] = 1.0
        return w

    @property
    def z(self) -> np.ndarray:
        out = np.ones(self.m2)
        out[: self.m] = 0.0
        return out

    def to_network(self) -> Network:
        """Materialize as a plain (Linear, ReLU, Linear) network.

        The cut index sits after the last layer, so the feature map used
        by the inversion attack is the whole network.
        """
        spec = NetworkSpec(
            layers=(Linear(self.n, self.m1), ReLU(), Linear(self.m1, self.m2)),
            cut_index=3,
        )
        params = [
            (self.w1, self.bias),
            None,
            (self.w2, np.zeros(self.m2)),
        ]
        return Network(spec, params)

    # -- structural evaluation ------------------------------------------

    def clause_outputs(self, x) -> np.ndarray:
        """relu(Cx - 2) rows for a batch of inputs (N, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.maximum(x @ self.clause_matrix.T - 2.0, 0.0)

    def apply(self, x) -> np.ndarray:
        """Full h(x) including the K*n copy coordinates."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        copies = np.repeat(np.abs(xb), self.K, axis=1)
        out = np.concatenate([self.clause_outputs(xb), copies], axis=1)
        return out[0] if single else out

    def residual_sq(self, x) -> np.ndarray:
        """||h(x) - z||_2^2 per input row, computed without copies."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        clause_part = np.sum(self.clause_outputs(x) ** 2, axis=1)
        copy_part = self.K * np.sum((np.abs(x) - 1.0) ** 2, axis=1)
        return clause_part + copy_part

    def residual_inf(self, x) -> np.ndarray:
        """||h(x) - z||_inf per input row."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        clause_part = np.max(np.abs(self.clause_outputs(x)), axis=1, initial=0.0)
        copy_part = np.max(np.abs(np.abs(x) - 1.0), axis=1, initial=0.0)
        return np.maximum(clause_part, copy_part)


def build_reduction(phi: CnfFormula, K: int) -> ReducedNetwork:
    """Encode a formula as the two-layer ReLU network described above."""
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    c = np.zeros((phi.m, phi.n))
    for j, clause in enumerate(phi.clauses):
        for lit in clause:
            c[j, abs(lit) - 1] = 1.0 if lit > 0 else -1.0
    return ReducedNetwork(phi=phi, K=K, clause_matrix=c)


# ---------------------------------------------------------------------------
# Brute-force oracles


def all_assignments(n: int) -> np.ndarray:
    """All 2^n boolean assignments as rows, low variable = low bit."""
    if n > BRUTE_FORCE_CAP:
        raise ContractError(f"exhaustive enumeration capped at n={BRUTE_FORCE_CAP}")
    codes = np.arange(2 ** n, dtype=np.uint32)
    return (codes[:, None] >> np.arange(n)) & 1 == 1


def unsat_counts_all(phi: CnfFormula) -> np.ndarray:
    """Unsatisfied-clause count for every assignment, vectorized."""
    assigns = all_assignments(phi.n)
    unsat = np.zeros(assigns.shape[0], dtype=np.int64)
    for clause in phi.clauses:
        sat = np.zeros(assigns.shape[0], dtype=bool)
        for lit in clause:
            v = assigns[:, abs(lit) - 1]
            sat |= v if lit > 0 else ~v
        unsat += ~sat
    return unsat


def brute_force_model(phi: CnfFormula) -> Optional[np.ndarray]:
    """A satisfying assignment found by enumeration, or None."""
    counts = unsat_counts_all(phi)
    idx = np.flatnonzero(counts == 0)
    if idx.size == 0:
        return None
    return all_assignments(phi.n)[idx[0]]


# ---------------------------------------------------------------------------
# Verification


def verify_completeness(phi: CnfFormula, K: int, assignment,
                        tol: float = 1e-9) -> bool:
    """Whether the encoded input of an assignment hits the target exactly."""
    rn = build_reduction(phi, K)
    x = assignment_to_input(assignment)
    return bool(rn.residual_inf(x)[0] <= tol)


def rounding_bound(phi: CnfFormula, K: int) -> float:
    """n * max over delta in [0, 1] of (2*B*delta - K*delta^2).

    The inner maximum is B^2/K at delta = B/K when K >= B, else 2*B - K
    at delta = 1; with K = 100*B^2 the bound is n/100.
    """
    B = phi.B
    inner = B * B / K if K >= B else 2.0 * B - K
    return phi.n * inner


@dataclass
class SoundnessReport:
    samples: int
    max_d: float
    bound: float
    violations: int


def soundness_scan(phi: CnfFormula, K: int, samples: int, seed: int,
                   batch: int = 4096) -> SoundnessReport:
    """Check the rounding penalty on random relaxed inputs.

    Draws x uniformly from [-1, 1]^n and computes
    D(x) = ||h(round(x)) - z||^2 - ||h(x) - z||^2, which must stay below
    :func:`rounding_bound`. Violations are counted, not raised.
    """
    if samples < 1:
        raise ContractError(f"samples must be >= 1, got {samples}")
    rn = build_reduction(phi, K)
    bound = rounding_bound(phi, K)
    rng = np.random.default_rng(seed)
    max_d = -np.inf
    violations = 0
    left = samples
    while left > 0:
        take = min(left, batch)
        x = rng.uniform(-1.0, 1.0, size=(take, phi.n))
        xr = np.where(x < 0.0, -1.0, 1.0)
        d = rn.residual_sq(xr) - rn.residual_sq(x)
        max_d = max(max_d, float(d.max()))
        violations += int(np.sum(d > bound))
        left -= take
    return SoundnessReport(samples=samples, max_d=max_d, bound=bound,
                           violations=violations)


@dataclass
class LipschitzReport:
    trials: int
    bound: float  # spectral_norm(W2) * spectral_norm(W1)
    max_ratio: float
    violations: int


def _w2_spectral_norm(rn: ReducedNetwork, iters: int, seed: int) -> float:
    # W2 acts as identity on clause coordinates and sums copy pairs; the
    # matvec pair below realizes it without materializing the matrix
    m, kn = rn.m, rn.K * rn.n

    def matvec(v):
        return np.concatenate([v[:m], v[m : m + kn] + v[m + kn :]])

    def rmatvec(u):
        return np.concatenate([u[:m], u[m:], u[m:]])

    return power_iteration(matvec, rmatvec, rn.m1, iters, seed)


def lipschitz_check(rn: ReducedNetwork, trials: int, seed: int,
                    batch: int = 1024) -> LipschitzReport:
    """Empirical Lipschitz ratios against the product of operator norms."""
    if trials < 1:
        raise ContractError(f"trials must be >= 1, got {trials}")
    u = _w2_spectral_norm(rn, 200, seed) * spectral_norm(rn.w1, 200, seed + 1)
    rng = np.random.default_rng(seed)
    max_ratio = 0.0
    violations = 0
    left = trials
    while left > 0:
        take = min(left, batch)
        x1 = rng.uniform(-1.0, 1.0, size=(take, rn.n))
        x2 = rng.uniform(-1.0, 1.0, size=(take, rn.n))
        num = np.linalg.norm(rn.apply(x1) - rn.apply(x2), axis=1)
        den = np.linalg.norm(x1 - x2, axis=1)
        ok = den > 0.0
        ratios = num[ok] / den[ok]
        if ratios.size:
            max_ratio = max(max_ratio, float(ratios.max()))
            violations += int(np.sum(ratios > u + 1e-9))
        left -= take
    return LipschitzReport(trials=trials, bound=float(u), max_ratio=max_ratio,
                           violations=violations)


@dataclass
class AttackReport:
    epsilon: float  # ||h(s*) - z||_2 / sqrt(m2), Definition-style value error
    unsat: int  # unsatisfied clauses of the rounded recovered input
    final_objective: float
    solution_distance: Optional[float] = None  # ||s* - x_ref||_2 / sqrt(n)


def attack_reduction(phi: CnfFormula, K: int, cfg,
                     reference_assignment=None, s0=None) -> AttackReport:
    """Run the gradient-descent inversion against the encoded target.

    The attack is clamped to the hypercube. Reports the normalized
    feature-space error (the epsilon of value approximation) and the
    unsat count after sign rounding; when a reference satisfying
    assignment is supplied, the normalized input-space distance to it is
    included as well.
    """
    from dataclasses import replace

    from .invert import invert

    rn = build_reduction(phi, K)
    net = rn.to_network()
    cfg = replace(cfg, clamp_range=(-1.0, 1.0), input_shape=(phi.n,))
    result = invert(net, rn.z, cfg, s0=s0)
    s = result.recovered
    eps = float(np.sqrt(rn.residual_sq(s)[0] / rn.m2))
    rounded = input_to_assignment(s)
    report = AttackReport(
        epsilon=eps,
        unsat=unsat_count(phi, rounded),
        final_objective=result.final_objective,
    )
    if reference_assignment is not None:
        x_ref = assignment_to_input(reference_assignment)
        report.solution_distance = float(
            np.linalg.norm(s - x_ref) / np.sqrt(phi.n)
        )
    return report


def verification_report(phi: CnfFormula, K: int, samples: int = 10_000,
                        trials: int = 1_000, seed: int = 0) -> dict:
    """The combined JSON-able report emitted by the reduce command."""
    model = brute_force_model(phi) if phi.n <= BRUTE_FORCE_CAP else None
    completeness = (
        verify_completeness(phi, K, model) if model is not None else None
    )
    sound = soundness_scan(phi, K, samples, seed)
    lip = lipschitz_check(build_reduction(phi, K), trials, seed + 1)
    return {
        "n": phi.n,
        "m": phi.m,
        "B": phi.B,
        "K": K,
        "completeness": completeness,
        "max_D": sound.max_d,
        "bound": sound.bound,
        "violations": sound.violations,
        "lipschitz_U": lip.bound,
        "max_ratio": lip.max_ratio,
    }
