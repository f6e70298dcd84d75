import math

import numpy as np
import pytest

from elmax.errors import FitError, GenerationError
from elmax.kernel import RngStream
from elmax.policy import (
    ANCHOR_OFFSET,
    ANCHOR_WEIGHTS,
    NuisanceFit,
    PolicyClass,
    PolicyDataset,
    aipw_scores,
    baseline_outcome,
    cross_fit_scores,
    fit_baseline_nuisance,
    fold_labels,
    gen_semiparametric_data,
    make_policy_class,
    oracle_nuisance,
    random_policy_class,
    treatment_effect,
    true_policy_values,
    true_propensity,
)

NEVER = PolicyClass(np.zeros((1, 3)), np.array([-1.0]))


def const(v):
    return lambda W: np.full(len(W), float(v))


@pytest.fixture(scope="module")
def big_data():
    return gen_semiparametric_data(20_000, RngStream(100))


@pytest.fixture(scope="module")
def eval_class():
    rand = random_policy_class(3, RngStream(101))
    return PolicyClass(
        np.vstack([ANCHOR_WEIGHTS, rand.weights, np.zeros((2, 3))]),
        np.concatenate([[ANCHOR_OFFSET], rand.offsets, [-1.0, 1.0]]),
    )


@pytest.fixture(scope="module")
def eval_truth(eval_class):
    return true_policy_values(eval_class, 2_000_000, RngStream(102))


# ------------------------------------------------------------ data law


def test_dataset_validation():
    W = np.zeros((3, 6))
    with pytest.raises(ValueError):
        PolicyDataset(W, [0, 1, 2], np.zeros(3))
    with pytest.raises(ValueError):
        PolicyDataset(W, [0, 1], np.zeros(3))
    with pytest.raises(ValueError):
        PolicyDataset(np.zeros((3, 5)), [0, 1, 0], np.zeros(3))
    with pytest.raises(ValueError):
        PolicyDataset(W, [0, 1, 0], [0.0, np.inf, 0.0])
    with pytest.raises(ValueError):
        gen_semiparametric_data(0, RngStream(0))


def test_marginal_treatment_rate_and_noise():
    d = gen_semiparametric_data(1_000_000, RngStream(1))
    assert 0.4 <= d.treatment.mean() <= 0.6
    e = true_propensity(d.covariates)
    assert e.min() >= 0.1 and e.max() <= 0.9
    resid = d.outcome - baseline_outcome(d.covariates) - d.treatment * treatment_effect(d.covariates)
    assert abs(resid.var() - 1.0) <= 0.01


def test_same_stream_same_data():
    a = gen_semiparametric_data(50, RngStream(2, (4,)))
    b = gen_semiparametric_data(50, RngStream(2, (4,)))
    assert np.array_equal(a.covariates, b.covariates) and np.array_equal(a.outcome, b.outcome)


# ------------------------------------------------------------ policy values


def test_never_and_always_treat_values():
    both = PolicyClass(np.zeros((2, 3)), np.array([-1.0, 1.0]))
    v = true_policy_values(both, 2_000_000, RngStream(3))
    never = 0.2 + 0.2 * math.exp(-0.5)
    assert never == pytest.approx(0.32131, abs=1e-5)
    assert abs(v.values[0] - never) <= 3 * v.std_error[0]
    # the two estimates share draws, so the difference is the mean effect estimate
    W = RngStream(3).child(0).generator.standard_normal((500_000, 6))
    se_diff = treatment_effect(W).std() / math.sqrt(2_000_000)
    assert abs(v.values[1] - v.values[0] - 0.2) <= 3 * se_diff
    assert v.mc_draws == 2_000_000


def test_doubling_draws_halves_variance():
    pol = PolicyClass(ANCHOR_WEIGHTS[None, :], np.array([ANCHOR_OFFSET]))
    reps = 400
    small = [true_policy_values(pol, 2000, RngStream(4, (0, r))).values[0] for r in range(reps)]
    large = [true_policy_values(pol, 4000, RngStream(4, (1, r))).values[0] for r in range(reps)]
    ratio = np.var(small, ddof=1) / np.var(large, ddof=1)
    # F(399, 399) around 2 has sd about 0.2
    assert 1.5 <= ratio <= 2.6


def test_true_values_reject_zero_draws():
    with pytest.raises(ValueError):
        true_policy_values(NEVER, 0, RngStream(0))


# ------------------------------------------------------------ policy class


def test_policy_actions_deterministic():
    pc = random_policy_class(4, RngStream(5))
    W = np.random.default_rng(5).standard_normal((100, 6))
    a = pc.actions(W)
    assert a.shape == (100, 4)
    assert np.array_equal(a, pc.actions(W.copy()))
    assert np.array_equal(a[:, 0], (W[:, :3] @ pc.weights[0] + pc.offsets[0] > 0).astype(np.int8))


@pytest.fixture(scope="module")
def tied_class():
    return make_policy_class(10, 5, RngStream(6))


def test_policy_class_certificates(tied_class):
    assert tied_class.J == 10
    assert np.array_equal(tied_class.weights[0], ANCHOR_WEIGHTS)
    # the construction grid reproduces the certificates exactly
    v = true_policy_values(tied_class, 2_000_000, RngStream(6).child(0)).values
    best = v.max()
    assert np.ptp(v[:5]) < 0.01
    assert np.all(v[5:] <= best - 0.05)
    # an independent grid agrees up to Monte Carlo error
    ind = true_policy_values(tied_class, 2_000_000, RngStream(7))
    slack = 3 * ind.std_error.max()
    assert best - ind.values[:5].min() < 0.01 + 2 * slack
    assert np.all(ind.values[5:] <= ind.values.max() - 0.05 + 2 * slack)


def test_policy_class_single_optimum():
    pc = make_policy_class(6, 1, RngStream(8), mc_draws=400_000)
    v = true_policy_values(pc, 400_000, RngStream(8).child(0)).values
    assert np.argmax(v) == 0
    assert np.all(v[1:] <= v[0] - 0.05)


def test_policy_class_deterministic(tied_class):
    again = make_policy_class(10, 5, RngStream(6))
    assert np.array_equal(again.weights, tied_class.weights)
    assert np.array_equal(again.offsets, tied_class.offsets)


def test_policy_class_errors():
    with pytest.raises(ValueError):
        make_policy_class(3, 0, RngStream(0), mc_draws=1000)
    with pytest.raises(ValueError):
        make_policy_class(3, 4, RngStream(0), mc_draws=1000)
    with pytest.raises(GenerationError):
        make_policy_class(3, 1, RngStream(0), mc_draws=1000, margin=10.0, max_tries=20)


# ------------------------------------------------------------ baseline learner


def test_separable_input_stays_clipped():
    rng = np.random.default_rng(9)
    W = rng.standard_normal((200, 6))
    A = (W[:, 0] > 0).astype(int)
    fit = fit_baseline_nuisance(PolicyDataset(W, A, rng.standard_normal(200)))
    e = fit.propensity(rng.standard_normal((1000, 6)) * 5)
    assert np.all(np.isfinite(e))
    assert e.min() >= 0.1 and e.max() <= 0.9
    assert e.min() == 0.1 and e.max() == 0.9


def test_propensity_accuracy(big_data):
    fit = fit_baseline_nuisance(big_data)
    W = np.random.default_rng(10).standard_normal((50_000, 6))
    mse = np.mean((fit.propensity(W) - true_propensity(W)) ** 2)
    assert mse <= 0.01


def test_infinite_ridge_gives_arm_means():
    d = gen_semiparametric_data(2000, RngStream(11))
    fit = fit_baseline_nuisance(d, ridge=1e12)
    W = np.random.default_rng(11).standard_normal((50, 6))
    for arm, f in ((0, fit.outcome0), (1, fit.outcome1)):
        assert np.allclose(f(W), d.outcome[d.treatment == arm].mean(), atol=1e-6)
    assert np.allclose(fit.propensity(W), d.treatment.mean(), atol=1e-6)


def test_missing_arm_is_fit_error():
    W = np.zeros((5, 6))
    with pytest.raises(FitError):
        fit_baseline_nuisance(PolicyDataset(W, np.ones(5, dtype=int), np.zeros(5)))


# ------------------------------------------------------------ scores


def test_score_substitution_example():
    W = np.random.default_rng(12).standard_normal((30, 6))
    pol = random_policy_class(3, RngStream(12))
    A = pol.actions(W)[:, 1]
    fit = NuisanceFit(const(0.5), const(0.0), const(0.0))
    X = aipw_scores(PolicyDataset(W, A, np.full(30, 2.0)), pol, fit)
    assert np.all(X[:, 1] == 4.0)


def test_mismatched_policy_column_is_outcome_model():
    rng = np.random.default_rng(13)
    W = rng.standard_normal((40, 6))
    pol = random_policy_class(2, RngStream(13))
    A = 1 - pol.actions(W)[:, 0]
    fit = NuisanceFit(lambda W: 0.3 + 0.1 * np.tanh(W[:, 0]), lambda W: W[:, 1], lambda W: 2 * W[:, 2])
    X = aipw_scores(PolicyDataset(W, A, rng.standard_normal(40)), pol, fit)
    m_pi = np.where(pol.actions(W)[:, 0] == 1, 2 * W[:, 2], W[:, 1])
    assert np.array_equal(X[:, 0], m_pi)


def test_score_formula_by_hand():
    d = gen_semiparametric_data(25, RngStream(14))
    pol = random_policy_class(3, RngStream(15))
    fit = NuisanceFit(lambda W: expit_like(W), lambda W: W[:, 0], lambda W: W[:, 1] + 1)
    X = aipw_scores(d, pol, fit)
    e = np.clip(expit_like(d.covariates), 0.1, 0.9)
    for i in range(d.n):
        w = d.covariates[i]
        m = {0: w[0], 1: w[1] + 1}
        for j in range(3):
            p = int(pol.weights[j] @ w[:3] + pol.offsets[j] > 0)
            ep = e[i] if p == 1 else 1 - e[i]
            ref = m[p] + (d.treatment[i] == p) / ep * (d.outcome[i] - m[int(d.treatment[i])])
            assert X[i, j] == pytest.approx(ref, rel=1e-13, abs=1e-14)


def expit_like(W):
    return 1 / (1 + np.exp(-2 * W[:, 3]))


def _check_within(scores, truth, k=3.0):
    mean = scores.mean(axis=0)
    se = scores.std(axis=0, ddof=1) / math.sqrt(scores.shape[0])
    z = np.abs(mean - truth.values) / np.sqrt(se**2 + truth.std_error**2)
    assert np.all(z <= k), z


@pytest.mark.parametrize(
    "fit",
    [
        oracle_nuisance(),
        NuisanceFit(true_propensity, const(0.0), const(0.0)),
        NuisanceFit(const(0.5), baseline_outcome, lambda W: baseline_outcome(W) + treatment_effect(W)),
    ],
    ids=["oracle", "true-propensity-zero-outcome", "flat-propensity-true-outcome"],
)
def test_unbiased_and_doubly_robust(big_data, eval_class, eval_truth, fit):
    X = cross_fit_scores(big_data, eval_class, factory=lambda _: fit, stream=RngStream(16))
    _check_within(X.values, eval_truth)


def test_cross_fit_partition():
    d = gen_semiparametric_data(301, RngStream(17))
    seen = []

    def factory(train):
        seen.append(set(train.outcome.tolist()))
        return oracle_nuisance()

    cross_fit_scores(d, NEVER, folds=3, factory=factory, stream=RngStream(18))
    everyone = set(d.outcome.tolist())
    held_out = [everyone - s for s in seen]
    assert len(seen) == 3
    assert sum(len(h) for h in held_out) == d.n
    assert set().union(*held_out) == everyone
    labels = fold_labels(d, 3, RngStream(18))
    assert sorted(np.bincount(labels).tolist()) == [100, 100, 101]


def test_cross_fit_matches_per_fold_scores():
    d = gen_semiparametric_data(400, RngStream(19))
    pol = random_policy_class(4, RngStream(20))
    X = cross_fit_scores(d, pol, stream=RngStream(21)).values
    labels = fold_labels(d, 2, RngStream(21))
    for k in range(2):
        fit = fit_baseline_nuisance(d.take(labels != k))
        assert np.array_equal(X[labels == k], aipw_scores(d.take(np.flatnonzero(labels == k)), pol, fit))


def test_score_finiteness_bound():
    d = gen_semiparametric_data(3000, RngStream(22))
    pol = random_policy_class(5, RngStream(23))
    labels = fold_labels(d, 2, RngStream(24))
    X = cross_fit_scores(d, pol, stream=RngStream(24)).values
    assert np.all(np.isfinite(X))
    for k in range(2):
        fit = fit_baseline_nuisance(d.take(labels != k))
        test = d.take(np.flatnonzero(labels == k))
        m = np.max(np.abs(np.concatenate([fit.outcome0(test.covariates), fit.outcome1(test.covariates)])))
        bound = m + (m + np.max(np.abs(test.outcome))) / 0.1
        assert np.max(np.abs(X[labels == k])) <= bound


def test_row_permutation_equivariance():
    d = gen_semiparametric_data(500, RngStream(25))
    pol = random_policy_class(3, RngStream(26))
    p = np.random.default_rng(26).permutation(d.n)
    X = cross_fit_scores(d, pol, stream=RngStream(27)).values
    Xp = cross_fit_scores(d.take(p), pol, stream=RngStream(27)).values
    assert np.allclose(Xp, X[p], rtol=1e-10, atol=1e-12)


def test_cross_fit_argument_errors():
    d = gen_semiparametric_data(20, RngStream(28))
    with pytest.raises(ValueError):
        cross_fit_scores(d, NEVER, folds=1, stream=RngStream(0))
    with pytest.raises(ValueError):
        cross_fit_scores(d, NEVER)
    single = PolicyDataset(d.covariates, np.zeros(20, dtype=int), d.outcome)
    with pytest.raises(FitError):
        cross_fit_scores(single, NEVER, stream=RngStream(0))
