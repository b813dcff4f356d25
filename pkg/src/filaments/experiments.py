"""Mean-field, continuous-dependence and propagation-of-chaos studies.

The unknown limit current is stood in for by a large reference system whose
initial curves come from a scrambled Sobol sequence pushed through the
law's uniform parametrization.  Every (N, trial) run draws from its own
stream ``SeedSequence(seed, spawn_key=(n_index, trial))`` and results are
folded in (N, trial) order, so reports depend only on the configuration.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .currents import FilamentCurrent, TestFieldDictionary, mass_norm_upper
from .geometry import CurveFamily, sigma_grid
from .kernels import Kernel
from .solver import default_dictionary, simulate_filaments

REFERENCE_STREAM = 2**20


def _rodrigues(axis, angle):
    """Rotation matrices about unit ``axis`` (n, 3) by ``angle`` (n,)."""
    kx, ky, kz = axis.T
    K = np.zeros((len(angle), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -kz, ky
    K[:, 1, 0], K[:, 1, 2] = kz, -kx
    K[:, 2, 0], K[:, 2, 1] = -ky, kx
    s = np.sin(angle)[:, None, None]
    c = np.cos(angle)[:, None, None]
    return np.eye(3) + s * K + (1 - c) * K @ K


@dataclass(frozen=True)
class RandomCurveLaw:
    """Law of a random closed curve, sampled through ``u ~ U[0,1]^dim_uniform``.

    ``kind="circle"``: center uniform in the box, radius uniform in
    ``radius``, and (d = 3) a unit normal tilted from ``e_z`` by a polar
    angle of at most ``tilt``; with ``tilt = 0`` all circles lie in planes
    normal to ``e_z``.  Degenerate parameters draw no uniform coordinates.  ``kind="fourier"``: center plus
    ``amplitude * sum_{m<=order} m^-decay (a_m cos 2 pi m s + b_m sin 2 pi m s)``
    with coefficients uniform in [-1, 1]^d.
    """

    kind: str = "circle"
    dim: int = 3
    center_lo: tuple = (-1.0, -1.0, -1.0)
    center_hi: tuple = (1.0, 1.0, 1.0)
    radius: tuple = (0.5, 1.5)
    tilt: float = 0.0
    amplitude: float = 1.0
    order: int = 8
    decay: float = 3.0

    def __post_init__(self):
        if self.kind not in ("circle", "fourier"):
            raise ValueError(f"unknown curve law {self.kind!r}")
        if self.dim not in (2, 3):
            raise ValueError("curve laws are defined for d = 2 or 3")
        if len(self.center_lo) != self.dim or len(self.center_hi) != self.dim:
            raise ValueError("center box dimension does not match dim")
        if np.any(np.greater(self.center_lo, self.center_hi)):
            raise ValueError("center_lo must not exceed center_hi")
        if self.kind == "circle" and not 0 < self.radius[0] <= self.radius[1]:
            raise ValueError("radius range must satisfy 0 < r0 <= r1")
        if self.kind == "fourier" and (self.order < 1 or self.decay <= 2 or self.amplitude <= 0):
            raise ValueError("Fourier loops need order >= 1, decay > 2, amplitude > 0")

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        for key in ("center_lo", "center_hi", "radius"):
            if key in spec:
                spec[key] = tuple(float(v) for v in spec[key])
        return cls(**spec)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @property
    def _random_radius(self):
        return int(self.radius[1] > self.radius[0])

    @property
    def _random_tilt(self):
        return self.dim == 3 and self.tilt > 0

    @property
    def dim_uniform(self):
        d = self.dim
        if self.kind == "circle":
            return d + self._random_radius + (2 if self._random_tilt else 0)
        return d + 2 * self.order * d

    @property
    def arclength_cap(self):
        """Upper bound on the length of every curve the law produces."""
        if self.kind == "circle":
            return 2 * math.pi * self.radius[1]
        m = np.arange(1, self.order + 1)
        return float(2 * math.pi * self.amplitude * 2 * math.sqrt(self.dim) * np.sum(m ** (1.0 - self.decay)))

    def curve_from_uniform(self, u, M):
        """Sample points (n, M, d) for uniforms ``u`` of shape (n, dim_uniform)."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        n, d = u.shape[0], self.dim
        lo, hi = np.asarray(self.center_lo, float), np.asarray(self.center_hi, float)
        center = lo + u[:, :d] * (hi - lo)
        ang = 2 * np.pi * sigma_grid(M, True)
        if self.kind == "circle":
            r0, r1 = self.radius
            r = r0 + u[:, d] * (r1 - r0) if self._random_radius else np.full(n, float(r0))
            j = d + self._random_radius
            ring = np.zeros((M, d))
            ring[:, 0], ring[:, 1] = np.cos(ang), np.sin(ang)
            if self._random_tilt:
                polar = np.arccos(1.0 - u[:, j] * (1.0 - math.cos(self.tilt)))
                az = 2 * np.pi * u[:, j + 1]
                axis = np.stack([-np.sin(az), np.cos(az), np.zeros(n)], 1)
                R = _rodrigues(axis, polar)
                loops = np.einsum("nij,mj->nmi", R, ring)
            else:
                loops = np.broadcast_to(ring, (n, M, d))
            return center[:, None, :] + r[:, None, None] * loops
        coef = 2 * u[:, d:].reshape(n, self.order, 2, d) - 1
        m = np.arange(1, self.order + 1)
        scale = self.amplitude * m ** (-self.decay)
        cos = np.cos(np.outer(ang, m))
        sin = np.sin(np.outer(ang, m))
        loops = np.einsum("sm,m,nmd->nsd", cos, scale, coef[:, :, 0]) + np.einsum(
            "sm,m,nmd->nsd", sin, scale, coef[:, :, 1]
        )
        return center[:, None, :] + loops

    def sample(self, rng, n, M):
        return self.curve_from_uniform(rng.random((n, self.dim_uniform)), M)


def run_rng(seed, *key):
    """Independent stream for run ``key`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def sample_family(law: RandomCurveLaw, N, M=16, weights=None, seed=0, rng=None):
    """N i.i.d. curves from ``law``; weights default to 1/N."""
    if N < 1:
        raise ValueError("N must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed))) if rng is None else rng
    w = np.full(N, 1.0 / N) if weights is None else weights
    return CurveFamily(law.sample(rng, N, M), w, True)


def reference_family(law: RandomCurveLaw, N_ref, M=16, seed=0):
    """Scrambled-Sobol family with weights 1/N_ref standing in for the limit law."""
    if law.dim_uniform == 0:
        return CurveFamily(law.curve_from_uniform(np.zeros((N_ref, 0)), M), np.full(N_ref, 1.0 / N_ref), True)
    sob = qmc.Sobol(law.dim_uniform, scramble=True, seed=run_rng(seed, REFERENCE_STREAM))
    m = int(math.log2(N_ref))
    u = sob.random_base2(m) if 2**m == N_ref else sob.random(N_ref)
    return CurveFamily(law.curve_from_uniform(u, M), np.full(N_ref, 1.0 / N_ref), True)


def loglog_slope(x, y):
    """Least-squares slope of log y on log x and the rms residual."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    coef, res, *_ = np.polyfit(lx, ly, 1, full=True)
    rms = math.sqrt(float(res[0]) / len(lx)) if len(res) else 0.0
    return float(coef[0]), rms


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


@dataclass
class StudyReport:
    """Study output.

    ``index`` holds the study axis (N values or perturbation scales);
    ``metrics[name]`` is an array of shape (len(index), trials).
    ``summary`` holds derived scalars (slopes, pass flags).
    """

    kind: str
    index: list
    metrics: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    index_name: str = "N"

    def __post_init__(self):
        idx = np.asarray(self.index, dtype=float)
        if len(idx) > 1 and np.any(np.diff(idx) == 0):
            raise ValueError("study index values must be distinct")

    def mean(self, name):
        return np.asarray(self.metrics[name], float).mean(axis=1)

    def stderr(self, name):
        a = np.asarray(self.metrics[name], float)
        if a.shape[1] < 2:
            return np.zeros(a.shape[0])
        return a.std(axis=1, ddof=1) / math.sqrt(a.shape[1])

    def to_dict(self):
        return _jsonable(dict(kind=self.kind, index_name=self.index_name, index=self.index,
                              config=self.config, summary=self.summary, metrics=self.metrics))

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        """Long format: one row per (index, trial, metric)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.index_name, "trial", "metric", "value"])
            for name in sorted(self.metrics):
                arr = np.asarray(self.metrics[name], float)
                for i, key in enumerate(self.index):
                    for t, v in enumerate(arr[i]):
                        w.writerow([f"{key:.17g}" if isinstance(key, float) else key, t, name, f"{v:.17g}"])


def _sup_metric(pairs_a, pairs_b):
    return float(np.abs(pairs_a - pairs_b).max())


def meanfield_study(law: RandomCurveLaw, Ns, k: Kernel, T, dt, D: TestFieldDictionary | None = None,
                    M=16, trials=30, N_ref=1024, tagged=2, seed=0, reference: CurveFamily | None = None):
    """Mean-field convergence errors e1(N) and e2(N).

    e2 is ``sup_t d_D(xi^N_t, xi^ref_t)``.  e1 is ``sup_{t, s}`` distance
    between each of the first ``tagged`` filaments and the mean-field
    filament started from the same curve, which is carried as a passive
    tracer through the reference run.  The reference discretization error
    is ``sup_t d_D`` between the reference and its first half.
    """
    Ns = [int(n) for n in Ns]
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("Ns must be strictly increasing")
    D = D or default_dictionary(law.dim)
    ref_fam = reference if reference is not None else reference_family(law, N_ref, M, seed)
    families = [[sample_family(law, N, M, rng=run_rng(seed, i, t)) for t in range(trials)]
                for i, N in enumerate(Ns)]
    ntag = [min(tagged, N) for N in Ns]
    tracer0 = np.concatenate([f.points[:nt].reshape(-1, law.dim)
                              for fams, nt in zip(families, ntag) for f in fams])
    ref = simulate_filaments(ref_fam, k, T, dt, tracers=tracer0)
    ref_pairs = ref.pair_values(D)
    half = ref_fam.N // 2
    half_fam = CurveFamily(ref_fam.points[:half], np.full(half, 1.0 / half), ref_fam.closed[:half])
    ref_error = _sup_metric(simulate_filaments(half_fam, k, T, dt).pair_values(D), ref_pairs)

    e1 = np.zeros((len(Ns), trials))
    e2 = np.zeros((len(Ns), trials))
    offset = 0
    for i, fams in enumerate(families):
        for t, fam in enumerate(fams):
            path = simulate_filaments(fam, k, T, dt)
            e2[i, t] = _sup_metric(path.pair_values(D), ref_pairs)
            n = ntag[i] * M
            bar = ref.tracers[:, offset : offset + n]
            offset += n
            mine = path.positions[:, : ntag[i]].reshape(len(path), -1, law.dim)
            e1[i, t] = float(np.linalg.norm(mine - bar, axis=-1).max())
    rep = StudyReport("meanfield", Ns, {"e1": e1, "e2": e2})
    m1, m2 = rep.mean("e1"), rep.mean("e2")
    s1 = rep.stderr("e1")
    summary = dict(reference_error=ref_error, e1_mean=m1, e2_mean=m2, e1_se=s1, e2_se=rep.stderr("e2"))
    if len(Ns) > 1 and np.all(m2 > 0):
        summary["e2_slope"], summary["e2_fit_rms"] = loglog_slope(Ns, m2)
    if len(Ns) > 1 and np.all(m1 > 0):
        summary["e1_slope"], summary["e1_fit_rms"] = loglog_slope(Ns, m1)
    summary["e1_nonincreasing"] = bool(all(
        m1[j + 1] <= m1[j] + 2 * math.hypot(s1[j], s1[j + 1]) for j in range(len(Ns) - 1)))
    summary["reference_ok"] = bool(ref_error <= 0.1 * m2.min()) if m2.min() > 0 else ref_error == 0
    rep.summary = summary
    rep.config = dict(law=law.to_dict(), Ns=Ns, kernel=k.spec, T=T, dt=dt, M=M, trials=trials,
                      N_ref=ref_fam.N, tagged=tagged, seed=seed, dictionary=D.spec)
    return rep


def translate_family(fam: CurveFamily, v):
    return fam.with_points(fam.points + np.asarray(v, dtype=float))


def deform_family(fam: CurveFamily, scale, seed=0, freq=1.0):
    """Move samples by ``scale * psi(x)`` with a seeded smooth field ``psi``, |psi| <= 1."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    d = fam.dim
    w = rng.normal(scale=freq, size=(4, d))
    a = rng.normal(size=(4, d))
    a /= np.abs(a).sum() * math.sqrt(d)
    ph = rng.uniform(0, 2 * np.pi, size=4)
    x = fam.points
    psi = np.einsum("nmf,fd->nmd", np.sin(x @ w.T + ph), a)
    return fam.with_points(x + scale * psi)


def perturbations(fam: CurveFamily, scales, kind="translation", direction=None, seed=0):
    """Perturbed copies of ``fam`` at each scale."""
    if kind == "translation":
        v = np.ones(fam.dim) if direction is None else np.asarray(direction, float)
        v = v / np.linalg.norm(v)
        return [translate_family(fam, s * v) for s in scales]
    if kind == "deformation":
        return [deform_family(fam, s, seed) for s in scales]
    raise ValueError(f"unknown perturbation kind {kind!r}")


def contdep_study(xi0: FilamentCurrent, perturbed, k: Kernel, T, dt, D: TestFieldDictionary | None = None,
                  scales=None, guard=1e-12):
    """Ratios ``sup_t d_D(xi^n_t, xi_t) / d_D(xi^n_0, xi_0)`` per perturbation.

    Perturbations whose initial distance is below ``guard`` are skipped
    and reported with ratio NaN.
    """
    fam = xi0.family
    D = D or default_dictionary(fam.dim)
    base = simulate_filaments(fam, k, T, dt).pair_values(D)
    ratios, initial, sup = [], [], []
    for p in perturbed:
        pf = p.family if isinstance(p, FilamentCurrent) else p
        pairs = simulate_filaments(pf, k, T, dt).pair_values(D)
        d0 = float(np.abs(pairs[0] - base[0]).max())
        dsup = _sup_metric(pairs, base)
        initial.append(d0)
        sup.append(dsup)
        ratios.append(dsup / d0 if d0 >= guard else math.nan)
    index = list(scales) if scales is not None else list(range(len(perturbed)))
    rep = StudyReport("contdep", index, {"ratio": np.array(ratios)[:, None],
                                         "initial_distance": np.array(initial)[:, None],
                                         "sup_distance": np.array(sup)[:, None]},
                      index_name="scale" if scales is not None else "perturbation")
    valid = [r for r in ratios if not math.isnan(r)]
    rep.summary = dict(
        max_ratio=max(valid) if valid else math.nan,
        min_ratio=min(valid) if valid else math.nan,
        spread=(max(valid) / min(valid)) if valid and min(valid) > 0 else math.nan,
        skipped=sum(math.isnan(r) for r in ratios),
    )
    rep.config = dict(kernel=k.spec, T=T, dt=dt, N=fam.N, M=fam.M, dictionary=D.spec)
    return rep


def _pair_moments(G):
    """Per-trial statistics of filament values ``G`` (N, 2) for r = 2."""
    N = G.shape[0]
    s0, s1 = G[:, 0].sum(), G[:, 1].sum()
    diag = float(np.dot(G[:, 0], G[:, 1]))
    ustat = (s0 * s1 - diag) / (N * (N - 1))
    return ustat, diag / N, (s0 / N) * (s1 / N)


def chaos_study(law: RandomCurveLaw, Ns, k: Kernel, T, dt, D: TestFieldDictionary | None = None,
                fields=(0, 1), trials=100, M=16, N_ref=1024, seed=0, reference: CurveFamily | None = None):
    """Factorization gap ``|E[prod_i gamma^i_T(theta_i)] - prod_i xi_T(theta_i)|``.

    Weights are 1/N.  For r = 2 the tagged expectation is estimated by the
    U-statistic over ordered pairs of distinct filaments, which has the
    same mean by exchangeability.  Also reported: the empirical-vs-limit
    term ``E[xi^N(theta_1) xi^N(theta_2)] - prod xi(theta_i)``, the
    exchangeability term ``E[gamma^1 gamma^2] - E[xi^N xi^N]`` measured on
    tagged filaments 1 and 2, its closed form
    ``(E[gamma^1(theta_1) gamma^2(theta_2)] - E[gamma^1(theta_1) gamma^1(theta_2)]) / N``,
    and the bound ``(E|gamma^1 gamma^2| + E[gamma^1(theta_1)^2]) / N``.
    """
    Ns = [int(n) for n in Ns]
    r = len(fields)
    if r < 1 or min(Ns) < r:
        raise ValueError("need 1 <= r <= min(Ns)")
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("Ns must be strictly increasing")
    D = D or default_dictionary(law.dim)
    fields = [int(f) for f in fields]
    ref_fam = reference if reference is not None else reference_family(law, N_ref, M, seed)
    ref = simulate_filaments(ref_fam, k, T, dt)
    limit_vals = D.pair_values(ref.state(len(ref) - 1))[fields]
    limit = float(np.prod(limit_vals))

    names = ["estimate", "tagged", "empirical", "exch_direct", "exch_formula", "exch_stated", "exch_bound"]
    out = {n: np.zeros((len(Ns), trials)) for n in names}
    for i, N in enumerate(Ns):
        for t in range(trials):
            fam = sample_family(law, N, M, rng=run_rng(seed, i, t))
            path = simulate_filaments(fam, k, T, dt)
            G = D.curve_values(path.state(len(path) - 1))[:, fields]
            tagged = float(np.prod(G[np.arange(r), np.arange(r)]))
            emp = float(np.prod(G.mean(axis=0)))
            out["tagged"][i, t] = tagged
            out["empirical"][i, t] = emp
            if r == 2:
                ustat, diag, prod = _pair_moments(G)
                out["estimate"][i, t] = ustat
                out["exch_direct"][i, t] = tagged - prod
                out["exch_formula"][i, t] = (ustat - diag) / N
                out["exch_stated"][i, t] = (tagged + G[0, 0] ** 2) / N
                out["exch_bound"][i, t] = (abs(tagged) + G[0, 0] ** 2) / N
            elif r == 1:
                out["estimate"][i, t] = emp
            else:
                out["estimate"][i, t] = tagged
    rep = StudyReport("chaos", Ns, out)
    est, se = rep.mean("estimate"), rep.stderr("estimate")
    gap = np.abs(est - limit)
    summary = dict(limit=limit, limit_values=limit_vals, gap=gap, gap_se=se,
                   gap_strictly_decreasing=bool(np.all(np.diff(gap) < 0)),
                   empirical_term=rep.mean("empirical") - limit)
    if r == 2:
        def paired(other):
            diff = out["exch_direct"] - out[other]
            se = diff.std(axis=1, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros(len(Ns))
            return diff.mean(axis=1), se

        dmean, dse = paired("exch_formula")
        smean, sse = paired("exch_stated")
        summary.update(
            exch_direct=rep.mean("exch_direct"), exch_formula=rep.mean("exch_formula"),
            exch_stated=rep.mean("exch_stated"), exch_bound=rep.mean("exch_bound"),
            exch_diff_se=dse, exch_stated_diff_se=sse,
            exch_match=bool(np.all(np.abs(dmean) <= 2 * dse)),
            exch_stated_match=bool(np.all(np.abs(smean) <= 2 * sse)),
            exch_bounded=bool(np.all(np.abs(rep.mean("exch_direct")) <= rep.mean("exch_bound"))),
        )
    rep.summary = summary
    rep.config = dict(law=law.to_dict(), Ns=Ns, kernel=k.spec, T=T, dt=dt, M=M, trials=trials,
                      N_ref=ref_fam.N, fields=fields, seed=seed, dictionary=D.spec)
    return rep


def boundedness_check(path, k: Kernel, D: TestFieldDictionary, slack=1.01):
    """``|gamma^j_t(theta_k)| <= length(gamma^j_t) <= envelope`` along ``path``.

    Dictionary fields have sup-norm at most one.  The envelope is
    ``length(gamma^j_0) exp(C_B t (m_t + 1))`` with m_t the running mass
    bound.  Returns True when every filament passes at every node.
    """
    from .geometry import arclength

    mass = np.maximum.accumulate([mass_norm_upper(path.state(n)) for n in range(len(path))])
    len0 = None
    for n in range(len(path)):
        cur = path.state(n)
        lengths = np.array([arclength(c) for c in cur.family.curves])
        len0 = lengths if len0 is None else len0
        with np.errstate(over="ignore"):
            env = slack * len0 * np.exp(k.C_B * path.times[n] * (mass[n] + 1.0))
        vals = np.abs(D.curve_values(cur)).max(axis=1)
        if np.any(vals > lengths * (1 + 1e-9) + 1e-14) or np.any(lengths > env):
            return False
    return True
