"""Acceptance criteria, one test per criterion, each reporting a PASS/FAIL line."""

import itertools
import math
import time

import numpy as np
import pytest

from elmax.calibration import estimate_active_set
from elmax.cli import main, write_scores
from elmax.geometry import ConeSpec, distance_to_cone, distance_to_hyperplane
from elmax.kernel import RngStream, ScoreSummary, chi2_quantile, summarize
from elmax.policy import (
    NuisanceFit,
    PolicyClass,
    baseline_outcome,
    cross_fit_scores,
    gen_semiparametric_data,
    oracle_nuisance,
    treatment_effect,
    true_policy_values,
    true_propensity,
)
from elmax.profile import inflation_ratio, invert_profile_bound, profile_statistic, simplex_lower_bound
from elmax.simlab import (
    ExperimentConfig,
    gen_scores_correlation,
    gen_scores_dimension,
    gen_scores_ties,
    per_draw_scaling,
    run_experiment,
    timing_experiment,
)

pytestmark = pytest.mark.acceptance

C1 = chi2_quantile(1, 0.95)


def spd(rng, J):
    A = rng.standard_normal((J, J))
    return A @ A.T / J + 0.3 * np.eye(J)


def enumerate_level_set(mean, cov, n, tau):
    """n * min (m - mean)' cov^-1 (m - mean) over max m = tau, by all 2^J - 1 faces."""
    J = len(mean)
    best = math.inf
    for r in range(1, J + 1):
        for face in itertools.combinations(range(J), r):
            rest = [j for j in range(J) if j not in face]
            f = list(face)
            d = np.full(len(f), tau) - mean[f]
            m_rest = mean[rest] + cov[np.ix_(rest, f)] @ np.linalg.solve(cov[np.ix_(f, f)], d)
            if rest and np.any(m_rest > tau):
                continue
            best = min(best, n * d @ np.linalg.solve(cov[np.ix_(f, f)], d))
    return best


def grid_two(mean, cov, n, c, step=1e-6):
    t = np.arange(0.0, 1.0 + step / 2, step)
    W = np.column_stack([t, 1.0 - t])
    vals = W @ mean - math.sqrt(c / n) * np.sqrt(np.einsum("ij,jk,ik->i", W, cov, W))
    return float(vals.max())


# ------------------------------------------------------------ 1


def test_criterion_01_geometric_reduction(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_cost = worst_enum = 0.0
    interior = 0
    for _ in range(500):
        n = int(rng.integers(50, 201))
        J = int(rng.choice([2, 3, 4]))
        X = rng.standard_normal((n, J)) @ np.linalg.cholesky(spd(rng, J)).T
        s = summarize(X)
        tau = float(s.mean.max() + 0.1 * rng.normal())
        res = profile_statistic(X, tau)
        if res.weights.interior:
            interior += 1
            worst_cost = max(worst_cost, abs(res.value - res.weights.cost) / max(abs(res.value), 1e-300))
        ref = enumerate_level_set(s.mean, s.cov, n, tau)
        worst_enum = max(worst_enum, abs(res.value - ref) / max(abs(ref), 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_cost <= 1e-8 and worst_enum <= 1e-8 and interior > 0 and elapsed < 60
    criterion(1, "geometric-reduction oracle", ok,
              f"weight-cost rel err {worst_cost:.1e} on {interior} interior cases, "
              f"enumeration err {worst_enum:.1e}, {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 2


def test_criterion_02_simplex_inversion_duality(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        J = int(rng.integers(2, 9))
        mean = 0.1 * rng.normal(size=J)
        if rng.random() < 0.5:
            mean[: max(1, J // 2)] = mean.max()
        s = ScoreSummary.from_moments(mean, spd(rng, J), int(rng.integers(30, 2000)))
        c = float(rng.uniform(0.5, 20))
        worst = max(worst, abs(simplex_lower_bound(s, c).lower - invert_profile_bound(s, c)))
    grid_err = 0.0
    for _ in range(5):
        s = ScoreSummary.from_moments(0.1 * rng.normal(size=2), spd(rng, 2), int(rng.integers(30, 2000)))
        c = float(rng.uniform(1, 10))
        g = grid_two(s.mean, s.cov, s.n, c)
        grid_err = max(grid_err, abs(simplex_lower_bound(s, c).lower - g), abs(invert_profile_bound(s, c) - g))
    worked = ScoreSummary.from_moments([0.5, 0.5], np.eye(2), 100)
    w_simplex = simplex_lower_bound(worked, 4.0).lower
    w_invert = invert_profile_bound(worked, 4.0)
    w_grid = grid_two(worked.mean, worked.cov, 100, 4.0)
    worked_err = max(abs(w_simplex - 0.358579), abs(w_invert - 0.358579), abs(w_grid - 0.358579))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and grid_err <= 1e-6 and worked_err <= 1e-6 and elapsed < 60
    criterion(2, "simplex/inversion duality", ok,
              f"max |L - inverted| {worst:.1e}, grid err {grid_err:.1e}, worked example L = {w_simplex:.6f}, "
              f"{elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 3


def test_criterion_03_wilks_calibration(criterion):
    t0 = time.perf_counter()
    reps, hits = 2000, 0
    for r in range(reps):
        X, theta = gen_scores_dimension(1000, 5, RngStream(3, (r,)))
        hits += profile_statistic(X, float(theta.max())).value > C1
    rate = hits / reps
    elapsed = time.perf_counter() - t0
    ok = abs(rate - 0.05) <= 0.015 and elapsed < 120
    criterion(3, "Wilks calibration", ok, f"rejection rate {rate:.4f} (target 0.05 +/- 0.015), {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 4


def test_criterion_04_inflation_factor(criterion):
    t0 = time.perf_counter()
    ratio = inflation_ratio(20, 0.05)
    cfg = ExperimentConfig("dimension", n=1000, J=20, reps=300, B=500, master_seed=4, methods=("auto", "joint"))
    res = run_experiment(cfg)
    mc = res.methods["joint"].mean_shortfall / res.methods["auto"].mean_shortfall
    elapsed = time.perf_counter() - t0
    ok = abs(ratio - 2.86) <= 0.005 and 2.5 <= mc <= 3.3 and elapsed < 180
    criterion(4, "inflation factor", ok, f"computed ratio {ratio:.4f}, Monte Carlo shortfall ratio {mc:.3f}, "
              f"{elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 5


def test_criterion_05_tie_robustness(criterion):
    t0 = time.perf_counter()
    cfg = ExperimentConfig("ties", n=1000, J=10, k=4, reps=500, B=500, master_seed=5)
    m = run_experiment(cfg).methods
    ours, wald, joint = m["auto"].coverage, m["wald"].coverage, m["joint"].coverage
    elapsed = time.perf_counter() - t0
    ok = ours >= 0.93 and wald <= ours - 0.02 and joint == 1.0 and elapsed < 600
    criterion(5, "tie robustness", ok,
              f"coverage ours {ours:.3f}, selected Wald {wald:.3f}, projected joint {joint:.3f}, {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 6


def test_criterion_06_active_set_consistency(criterion):
    t0 = time.perf_counter()
    freq = {}
    for n in (500, 2000, 8000):
        hits = 0
        for seed in range(200):
            X, _ = gen_scores_ties(n, 10, 4, RngStream(6, (n, seed)))
            hits += estimate_active_set(summarize(X)).indices.active == (0, 1, 2, 3)
        freq[n] = hits / 200
    elapsed = time.perf_counter() - t0
    ok = freq[8000] >= 0.95 and freq[500] <= freq[2000] <= freq[8000] and elapsed < 300
    criterion(6, "active-set consistency", ok,
              "recovery " + ", ".join(f"n={n}: {f:.3f}" for n, f in freq.items()) + f", {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 7


def test_criterion_07_cone_containment(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_gap = math.inf
    worst_eq = 0.0
    for _ in range(1000):
        J = int(rng.integers(1, 9))
        s = ScoreSummary.from_moments(np.zeros(J), spd(rng, J), 100)
        size = int(rng.integers(1, J + 1))
        active = tuple(sorted(rng.choice(J, size=size, replace=False).tolist()))
        z = 2 * rng.standard_normal(J)
        d = distance_to_cone(z, s, ConeSpec(active, J))[0]
        hyper = min(distance_to_hyperplane(z, s, np.eye(J)[j]) for j in active)
        worst_gap = min(worst_gap, d - hyper)
        if size == 1:
            worst_eq = max(worst_eq, abs(d - hyper) / max(hyper, 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_gap >= -1e-10 and worst_eq <= 1e-10 and elapsed < 10
    criterion(7, "cone containment", ok,
              f"min (cone - hyperplane) {worst_gap:.1e}, single-face mismatch {worst_eq:.1e}, {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 8


def test_criterion_08_dgp_moments(criterion):
    t0 = time.perf_counter()
    X, _ = gen_scores_dimension(200_000, 10, RngStream(8))
    var = X.values.var(axis=0)
    e1, eJ = var[0] / 0.54 - 1, var[-1] / 0.3855 - 1
    mix = []
    for rho in (0.0, 0.2, 0.5, 0.8):
        Y, _ = gen_scores_correlation(200_000, 10, 3, rho, RngStream(8, (int(10 * rho),)))
        mix.append(Y.values[:, :3].mean(axis=1).var() / ((1 + 2 * rho) / 3) - 1)
    elapsed = time.perf_counter() - t0
    worst_mix = max(abs(v) for v in mix)
    ok = abs(e1) <= 0.02 and abs(eJ) <= 0.02 and worst_mix <= 0.02 and elapsed < 60
    criterion(8, "DGP moment audit", ok,
              f"variance rel err j=1 {e1:+.4f}, j=J {eJ:+.4f}, mixture worst {worst_mix:.4f}, {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 9


def _double_robustness():
    data = gen_semiparametric_data(20_000, RngStream(9, (1,)))
    pols = PolicyClass(
        np.array([[0.6, 0.4, -0.3], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, -0.5, 0.2]]),
        np.array([0.2, -1.0, 1.0, 0.0]),
    )
    truth = true_policy_values(pols, 2_000_000, RngStream(9, (2,)))
    treat = lambda W: baseline_outcome(W) + treatment_effect(W)  # noqa: E731
    fits = {
        "oracle": oracle_nuisance(),
        "true propensity, zero outcomes": NuisanceFit(true_propensity, lambda W: 0 * W[:, 0], lambda W: 0 * W[:, 0]),
        "flat propensity, true outcomes": NuisanceFit(lambda W: 0.5 + 0 * W[:, 0], baseline_outcome, treat),
    }
    worst = 0.0
    for fit in fits.values():
        X = cross_fit_scores(data, pols, factory=lambda _, f=fit: f, stream=RngStream(9, (3,))).values
        se = X.std(axis=0, ddof=1) / math.sqrt(X.shape[0])
        z = np.abs(X.mean(axis=0) - truth.values) / np.sqrt(se**2 + truth.std_error**2)
        worst = max(worst, float(z.max()))
    return worst


def test_criterion_09_semiparametric_band(criterion):
    t0 = time.perf_counter()
    cfg = ExperimentConfig("semiparametric", n=1000, J=8, k=5, reps=100, B=500, master_seed=9)
    m = run_experiment(cfg).methods
    ours, joint = m["auto"].coverage, m["joint"].coverage
    z = _double_robustness()
    elapsed = time.perf_counter() - t0
    ok = ours >= 0.90 and joint == 1.0 and z <= 3.0 and elapsed < 1200
    criterion(9, "semiparametric band", ok,
              f"coverage ours {ours:.3f}, projected joint {joint:.3f}, double-robustness max |z| {z:.2f}, "
              f"{elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 10


def test_criterion_10_timing(criterion):
    t0 = time.perf_counter()
    rep = timing_experiment(2000, 10, 200, 1, RngStream(10))
    grid = [(n, J) for n in (2000, 4000, 8000) for J in (10, 20)]
    scale = per_draw_scaling(grid, 300, RngStream(10, (1,)))
    elapsed = time.perf_counter() - t0
    ok = rep.ratio >= 20 and scale["max_deviation"] <= 2.0 and elapsed < 600
    criterion(10, "timing", ok,
              f"refit/score-level ratio {rep.ratio:.0f}, per-draw n*J proportionality deviation "
              f"{scale['max_deviation']:.2f}x (limit 2x), {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ 11


def test_criterion_11_reproducibility(criterion, tmp_path):
    t0 = time.perf_counter()
    cells = {
        "dimension": ["--J", "5,10", "--n", "300"],
        "ties": ["--J", "10", "--k", "1,4", "--n", "300"],
        "correlation": ["--J", "6", "--k", "3", "--rho", "0.2,0.8", "--n", "300"],
        "semi": ["--J", "4", "--k", "2", "--n", "300", "--mc-draws", "200000"],
    }
    mismatched = []
    for exp, flags in cells.items():
        files = []
        for workers in ("1", "2", "3"):
            out = tmp_path / exp / workers
            argv = ["simulate", "--experiment", exp, *flags, "--reps", "8", "--boot-draws", "100",
                    "--seed", "11", "--workers", workers, "--out", str(out)]
            assert main(argv) == 0
            files.append((out / f"simulate_{exp}.csv").read_bytes())
        replay = tmp_path / exp / "replay"
        assert main(["replay", str(tmp_path / exp / "1" / f"simulate_{exp}.csv"), "--out", str(replay)]) == 0
        files.append((replay / f"simulate_{exp}.csv").read_bytes())
        if any(f != files[0] for f in files):
            mismatched.append(exp)
    X, _ = gen_scores_ties(500, 5, 2, RngStream(11))
    write_scores(tmp_path / "scores.csv", X)
    docs = []
    for d in ("a", "b"):
        assert main(["infer", "--scores", str(tmp_path / "scores.csv"), "--boot-draws", "300",
                     "--seed", "11", "--out", str(tmp_path / d)]) == 0
        docs.append((tmp_path / d / "result.json").read_bytes())
    if docs[0] != docs[1]:
        mismatched.append("infer")
    elapsed = time.perf_counter() - t0
    ok = not mismatched
    criterion(11, "reproducibility", ok,
              f"simulate x4 experiments at 1/2/3 workers plus replay, infer twice: "
              f"{'byte-identical' if ok else 'mismatch in ' + ', '.join(mismatched)}, {elapsed:.1f}s")
    assert ok
