#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "dsmlab/objectives.hpp"
#include "dsmlab/quadrature.hpp"
#include "oracles.hpp"

using namespace dsmlab;

namespace {

LinearScoreModel zero_model(double sigma, std::size_t d = 1) { return LinearScoreModel(NoiseSchedule({sigma}), d); }

LinearScoreModel linear_model(double sigma, double a, double b) {
    LinearScoreModel m(NoiseSchedule({sigma}), 1);
    m.set_level(0, Vec{a}, Vec{b});
    return m;
}

/// Returns the pointwise denoising target of the sample that produced x_t.
/// Only meaningful on the batch it was built from (1-D).
struct DenoiserLookup {
    std::map<double, double> x_of;
    double sigma;
    ParamVector none;

    DenoiserLookup(const GaussianMixture& dist, double sigma_, const SampleBatch& b) : sigma(sigma_) {
        for (std::size_t i = 0; i < b.n; ++i) {
            const Vec x = dist.sample(b.component_u[i], b.eps_row(i));
            x_of[perturb(x, sigma, b.nu_row(i))[0]] = x[0];
        }
    }
    std::size_t dim() const { return 1; }
    std::size_t condition_dim() const { return 0; }
    const ParamVector& params() const { return none; }
    Vec eval(ConstSpan x_t, double s, ConstSpan) const {
        return conditional_score(x_t, Vec{x_of.at(x_t[0])}, s);
    }
    ModelGradients backward(ConstSpan, double, ConstSpan, ConstSpan) const { return {}; }
};

void expect_within(const MCEstimate& e, double target, double k = 3.0) {
    EXPECT_TRUE(e.within(target, k)) << "value " << e.value << " se " << e.std_error << " target " << target
                                     << " z " << e.z_score(target);
}

const GaussianMixture kUnit = DiagGaussian::from_std({0.0}, {1.0});
const GaussianMixture kTwoMode = GaussianMixture::symmetric({{-2.0}, {2.0}}, 0.5);

}  // namespace

TEST(DsmLoss, ZeroModelOnStandardNormal) {
    const SampleBatch b(101, 20000, 1);
    expect_within(dsm_loss(zero_model(1.0), kUnit, 1.0, b), 0.5);
}

TEST(DsmLoss, PointwiseDenoiserGivesExactZero) {
    const SampleBatch b(102, 500, 1);
    const DenoiserLookup oracle(kTwoMode, 0.7, b);
    const auto e = dsm_loss(oracle, kTwoMode, 0.7, b);
    EXPECT_EQ(e.value, 0.0);
    EXPECT_EQ(e.std_error, 0.0);
}

TEST(DsmLoss, RejectsEmptyAndMismatchedBatches) {
    EXPECT_THROW(dsm_loss(zero_model(1.0), kUnit, 1.0, SampleBatch(1, 0, 1)), std::invalid_argument);
    EXPECT_THROW(esm_loss(zero_model(1.0), kUnit, 1.0, SampleBatch(1, 0, 1)), std::invalid_argument);
    EXPECT_THROW(c2_term(kUnit, 1.0, SampleBatch(1, 0, 1)), std::invalid_argument);
    EXPECT_THROW(cross_term_marginal(zero_model(1.0), kUnit, 1.0, SampleBatch(1, 0, 1)), std::invalid_argument);
    EXPECT_THROW(dsm_loss(zero_model(1.0), kUnit, 1.0, SampleBatch(1, 10, 2)), std::invalid_argument);
}

TEST(EsmLoss, ZeroModelOnStandardNormal) {
    const SampleBatch b(103, 20000, 1);
    expect_within(esm_loss(zero_model(1.0), kUnit, 1.0, b), 0.25);
}

TEST(EsmLoss, VanishesAtOptimalLinearParameters) {
    const auto g = DiagGaussian::from_std({1.5, -0.5}, {0.8, 2.0});
    const auto m = LinearScoreModel::optimal_for(g, NoiseSchedule({0.6}));
    const auto e = esm_loss(m, g, 0.6, SampleBatch(104, 1000, 2));
    EXPECT_NEAR(e.value, 0.0, 1e-20);
    EXPECT_NEAR(linear_closed_form(m, g, 0.6).esm, 0.0, 1e-15);
}

TEST(LinearLosses, MatchClosedFormsWithinThreeSe) {
    Rng rng(105);
    for (int trial = 0; trial < 6; ++trial) {
        const double mu = 2.0 * rng.normal(), s = std::exp(0.5 * rng.normal()), sigma = std::exp(0.5 * rng.normal());
        const double a = -std::exp(0.5 * rng.normal()), b = rng.normal();
        const auto g = DiagGaussian::from_std({mu}, {s});
        const auto m = linear_model(sigma, a, b);
        const SampleBatch batch(1000 + trial, 20000, 1);
        const auto cf = linear_closed_form(m, g, sigma);
        // Independent evaluation of the documented closed forms.
        const double v = s * s + sigma * sigma;
        const double dsm = 0.5 * (std::pow(a * mu + b, 2) + a * a * s * s + std::pow(a * sigma + 1.0 / sigma, 2));
        const double esm = 0.5 * (std::pow(a * mu + b, 2) + std::pow(a + 1.0 / v, 2) * v);
        EXPECT_NEAR(cf.dsm, dsm, 1e-12);
        EXPECT_NEAR(cf.esm, esm, 1e-12);
        expect_within(dsm_loss(m, g, sigma, batch), dsm);
        expect_within(esm_loss(m, g, sigma, batch), esm);
    }
}

TEST(C2Term, StandardNormalAndMixture) {
    expect_within(c2_term(kUnit, 1.0, SampleBatch(106, 20000, 1)), 0.25);
    const double q = c2_quadrature(kTwoMode, 0.5, NormalQuadrature(kDefaultQuadratureNodes));
    expect_within(c2_term(kTwoMode, 0.5, SampleBatch(107, 20000, 1)), q);
}

TEST(C2Term, ApproachesC3FromBelowForLargeNoise) {
    const auto g = DiagGaussian::from_std({0.3, -1.0}, {0.5, 1.5});
    double prev_gap = INFINITY;
    for (double sigma : {2.0, 4.0, 8.0, 16.0, 32.0}) {
        const double c2 = c2_closed_form(g, sigma), c3 = c3_closed_form(2, sigma);
        EXPECT_LT(c2, c3);
        const double rel_gap = (c3 - c2) / c3;
        EXPECT_LT(rel_gap, prev_gap);
        prev_gap = rel_gap;
    }
    EXPECT_LT(prev_gap, 1e-2);
}

TEST(C3Term, Examples) {
    expect_within(c3_term(1, 1.0, SampleBatch(108, 20000, 1)), 0.5);
    expect_within(c3_term(4, 2.0, SampleBatch(109, 20000, 4)), 0.5);
}

TEST(C3Term, IndependentOfTheDistribution) {
    const SampleBatch b(110, 2000, 1);
    const auto ref = c3_term(1, 0.8, b);
    const auto z = zero_model(0.8);
    for (const auto& dist : {kUnit, kTwoMode, GaussianMixture(DiagGaussian::from_std({40.0}, {0.01}))}) {
        const auto e = evaluate_terms(z, dist, 0.8, b).c3;
        EXPECT_NEAR(e.value, ref.value, 1e-12);
        EXPECT_LT(std::abs(e.value - ref.value), 3.0 * ref.std_error);
    }
}

TEST(CrossTerms, ZeroModelGivesExactZero) {
    const SampleBatch b(111, 500, 1);
    const auto z = zero_model(0.5);
    EXPECT_EQ(cross_term_marginal(z, kTwoMode, 0.5, b).value, 0.0);
    EXPECT_EQ(cross_term_conditional(z, kTwoMode, 0.5, b).value, 0.0);
}

TEST(CrossTerms, ExactScoreGivesTwiceC2) {
    const SampleBatch b(112, 20000, 1);
    const ExactScoreModel exact(kTwoMode);
    const auto xm = cross_term_marginal(exact, kTwoMode, 0.5, b);
    const auto c2 = c2_term(kTwoMode, 0.5, b);
    EXPECT_NEAR(xm.value, 2.0 * c2.value, 1e-12);
    expect_within(xm, 2.0 * c2_quadrature(kTwoMode, 0.5, NormalQuadrature(kDefaultQuadratureNodes)));
}

TEST(CrossTerms, DenoiserGivesTwiceC3) {
    const SampleBatch b(113, 20000, 1);
    const DenoiserLookup oracle(kUnit, 1.0, b);
    expect_within(cross_term_conditional(oracle, kUnit, 1.0, b), 2.0 * c3_closed_form(1, 1.0));
}

TEST(CrossTerms, LinearModelMatchesQuadrature) {
    const auto g = DiagGaussian::from_std({0.7}, {1.3});
    const auto m = linear_model(0.9, -0.4, 0.2);
    const oracle::Mix1D ref{{1.0}, {0.7}, {1.3}};
    const double s2 = 0.81;
    const double expected = ref.expect([&](double x) { return (-0.4 * x + 0.2) * ref.score(x, s2); }, s2);
    const SampleBatch b(114, 20000, 1);
    expect_within(cross_term_marginal(m, g, 0.9, b), expected);
    expect_within(cross_term_conditional(m, g, 0.9, b), expected);
}

TEST(CrossTerms, MarginalAndConditionalAgreeForRandomLinearModels) {
    Rng rng(115);
    for (int trial = 0; trial < 20; ++trial) {
        const auto m = linear_model(0.5, rng.normal(), rng.normal());
        const auto diff = cross_term_difference(m, kTwoMode, 0.5, SampleBatch(2000 + trial, 4000, 1));
        expect_within(diff, 0.0);
    }
}

TEST(DecompositionResidual, LinearClosedFormIsZero) {
    Rng rng(116);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng.index(3);
        Vec mean(d), log_std(d), a(d), b(d);
        for (std::size_t i = 0; i < d; ++i) {
            mean[i] = 3.0 * rng.normal();
            log_std[i] = rng.normal();
            a[i] = 2.0 * rng.normal();
            b[i] = 2.0 * rng.normal();
        }
        const double sigma = std::exp(rng.normal());
        LinearScoreModel m(NoiseSchedule({sigma}), d);
        m.set_level(0, a, b);
        const auto cf = linear_closed_form(m, DiagGaussian(mean, log_std), sigma);
        EXPECT_NEAR(cf.residual(), 0.0, 1e-10);
        EXPECT_NEAR(cf.dsm - cf.esm, cf.c3 - cf.c2, 1e-10);
    }
}

TEST(DecompositionResidual, MlpOnMixtureWithinThreeSe) {
    Rng rng(117);
    const MlpScoreModel m(1, 0, {16, 16}, rng);
    for (double sigma : {0.3, 1.0}) {
        expect_within(decomposition_residual(m, kTwoMode, sigma, SampleBatch(118, 20000, 1)), 0.0);
    }
}

TEST(DecompositionResidual, PerfectScoreModel) {
    const ExactScoreModel exact(kTwoMode);
    const auto t = evaluate_terms(exact, kTwoMode, 0.4, SampleBatch(119, 20000, 1));
    EXPECT_EQ(t.esm.value, 0.0);
    expect_within(t.residual, 0.0);
    expect_within(t.dsm, t.c3.value - t.c2.value, 3.0);
}

TEST(Estimators, UnbiasedOverIndependentBatches) {
    const auto g = DiagGaussian::from_std({0.5}, {1.2});
    const auto m = linear_model(0.7, -0.3, 0.4);
    const auto cf = linear_closed_form(m, g, 0.7);
    Accumulator dsm, esm, c2, c3;
    for (std::uint64_t k = 0; k < 200; ++k) {
        const SampleBatch b(5000 + k, 200, 1);
        dsm.add(dsm_loss(m, g, 0.7, b).value);
        esm.add(esm_loss(m, g, 0.7, b).value);
        c2.add(c2_term(g, 0.7, b).value);
        c3.add(c3_term(1, 0.7, b).value);
    }
    expect_within(dsm.estimate(), cf.dsm);
    expect_within(esm.estimate(), cf.esm);
    expect_within(c2.estimate(), cf.c2);
    expect_within(c3.estimate(), cf.c3);
}

TEST(Estimators, PairingReducesVariance) {
    Rng rng(120);
    const MlpScoreModel mlp(1, 0, {8}, rng);
    const auto check = [](const TermEstimates& t) {
        EXPECT_LT(t.residual.std_error, combined_std_error(t.dsm, t.esm));
    };
    check(evaluate_terms(mlp, kTwoMode, 0.5, SampleBatch(121, 4000, 1)));
    check(evaluate_terms(linear_model(1.0, -0.2, 0.3), kUnit, 1.0, SampleBatch(122, 4000, 1)));
}

TEST(GradTheta, LinearClosedFormGradientsCoincide) {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        const double sigma = std::exp(rng.normal());
        LinearScoreModel m(NoiseSchedule({sigma}), 2, 1);
        m.set_level(0, Vec{rng.normal(), rng.normal()}, Vec{rng.normal(), rng.normal()},
                    Vec{rng.normal(), rng.normal()});
        const DiagGaussian g(Vec{rng.normal(), rng.normal()}, Vec{rng.normal(), rng.normal()});
        const Vec c{rng.normal()};
        const Vec gd = linear_closed_form_gradient(Objective::dsm, m, g, sigma, c);
        const Vec ge = linear_closed_form_gradient(Objective::esm, m, g, sigma, c);
        for (std::size_t i = 0; i < gd.size(); ++i) {
            EXPECT_NEAR(gd[i] - ge[i], 0.0, 1e-10);
        }
    }
}

TEST(GradTheta, LinearClosedFormGradientMatchesFiniteDifferences) {
    LinearScoreModel m(NoiseSchedule({0.5, 1.0}), 1);
    m.set_level(1, Vec{-0.3}, Vec{0.7});
    const auto g = DiagGaussian::from_std({1.1}, {0.6});
    for (auto obj : {Objective::dsm, Objective::esm}) {
        const Vec grad = linear_closed_form_gradient(obj, m, g, 1.0);
        for (std::size_t i = 0; i < m.params().size(); ++i) {
            auto f = [&](double v) {
                LinearScoreModel w = m;
                w.params()[i] = v;
                const auto cf = linear_closed_form(w, g, 1.0);
                return obj == Objective::dsm ? cf.dsm : cf.esm;
            };
            EXPECT_NEAR(grad[i], oracle::central_difference(f, m.params()[i], 1e-6), 1e-8);
        }
    }
}

TEST(GradTheta, MlpGradientsAgreeWithinJointSe) {
    Rng rng(124);
    const MlpScoreModel m(1, 0, {8, 8}, rng);
    const SampleBatch b(125, 20000, 1);
    const auto diff = grad_theta_estimate({1, -1, 0, 0}, m, kTwoMode, 0.5, b);
    for (std::size_t i = 0; i < diff.size(); ++i) {
        expect_within(diff.coordinate(i), 0.0);
    }
}

TEST(GradTheta, FusedPassMatchesSeparateEstimators) {
    Rng rng(128);
    const MlpScoreModel m(1, 0, {8}, rng);
    const SampleBatch b(129, 500, 1);
    for (auto obj : {Objective::dsm, Objective::esm}) {
        const auto fused = terms_and_grad_theta(TermWeights::of(obj), m, kTwoMode, 0.5, b);
        const auto terms = evaluate_terms(m, kTwoMode, 0.5, b);
        const ParamVector grad = grad_theta(obj, m, kTwoMode, 0.5, b);
        EXPECT_NEAR(fused.terms.dsm.value, terms.dsm.value, 1e-12);
        EXPECT_NEAR(fused.terms.esm.value, terms.esm.value, 1e-12);
        EXPECT_NEAR(fused.terms.c2.value, terms.c2.value, 1e-12);
        EXPECT_NEAR(fused.terms.residual.value, terms.residual.value, 1e-12);
        ASSERT_EQ(fused.grad.size(), grad.size());
        for (std::size_t i = 0; i < grad.size(); ++i) {
            EXPECT_NEAR(fused.grad[i], grad[i], 1e-12) << i;
        }
    }
}

TEST(GradTheta, MatchesFiniteDifferencesOfTheBatchLoss) {
    Rng rng(126);
    const MlpScoreModel m(2, 0, {8}, rng);
    const auto dist = GaussianMixture::symmetric({{1.0, -1.0}, {-1.0, 1.0}}, 0.6);
    const SampleBatch b(127, 300, 2);
    for (auto obj : {Objective::dsm, Objective::esm}) {
        const ParamVector grad = grad_theta(obj, m, dist, 0.8, b);
        for (std::size_t i = 0; i < m.params().size(); ++i) {
            auto f = [&](double v) {
                MlpScoreModel w = m;
                w.params()[i] = v;
                return obj == Objective::dsm ? dsm_loss(w, dist, 0.8, b).value : esm_loss(w, dist, 0.8, b).value;
            };
            const double fd = oracle::central_difference(f, m.params()[i], 1e-5);
            EXPECT_LE(std::abs(grad[i] - fd) / std::max({1.0, std::abs(grad[i]), std::abs(fd)}), 1e-4)
                << to_string(obj) << " " << i;
        }
    }
}

TEST(GradCondition, GaussianFamilyBiasTermDerivatives) {
    const GaussianFamily fam(DiagGaussian::from_std({0.4}, {1.0}));
    const auto oracle_model = fam.oracle_model(NoiseSchedule({1.0}));
    const SampleBatch b(128, 20000, 1);
    const auto g = grad_condition_total(Objective::c2, oracle_model, fam, 1.0, b);
    EXPECT_EQ(g.value[0], 0.0);
    expect_within(g.coordinate(1), -0.25);
}

TEST(GradCondition, C3HasNoConditionGradient) {
    const GaussianFamily fam(DiagGaussian::from_std({0.4, 1.0}, {2.0, 0.3}));
    const auto g = grad_condition_total(Objective::c3, LinearScoreModel(NoiseSchedule({0.7}), 2), fam, 0.7,
                                        SampleBatch(129, 100, 2));
    for (double v : g.value) {
        EXPECT_EQ(v, 0.0);
    }
    const EncoderFamily enc(NoisyEncoderModel(0.8, 1.0, DiagGaussian::from_std({0.5}, {1.5})));
    const auto ge = grad_condition_total(Objective::c3, LinearScoreModel(NoiseSchedule({0.7}), 1, 1), enc, 0.7,
                                         SampleBatch(130, 100, 1, 1));
    EXPECT_EQ(ge.value[0], 0.0);
}

TEST(GradCondition, ThreeWayIdentityForBothFamilies) {
    Rng rng(131);
    const MlpScoreModel gm(1, 2, {8}, rng);
    const GaussianFamily gf(DiagGaussian::from_std({0.3}, {0.7}));
    const auto rg = grad_condition_total_estimate({1, -1, 1, 0}, gm, gf, 0.6, SampleBatch(132, 20000, 1));
    for (std::size_t i = 0; i < rg.size(); ++i) {
        expect_within(rg.coordinate(i), 0.0);
    }
    const MlpScoreModel em(1, 1, {8}, rng);
    const EncoderFamily ef(NoisyEncoderModel(0.8, 1.0, DiagGaussian::from_std({0.5}, {1.5})));
    const auto re = grad_condition_total_estimate({1, -1, 1, 0}, em, ef, 0.6, SampleBatch(133, 20000, 1, 1));
    expect_within(re.coordinate(0), 0.0);
}

TEST(GradCondition, MatchesFiniteDifferencesOfTheBatchTerms) {
    Rng rng(134);
    const SampleBatch b(135, 200, 1, 1);
    const MlpScoreModel gm(1, 2, {6}, rng);
    const MlpScoreModel em(1, 1, {6}, rng);
    const auto check = [&](const auto& model, auto family) {
        for (auto obj : {Objective::dsm, Objective::esm, Objective::c2}) {
            const auto grad = grad_condition_total(obj, model, family, 0.8, b);
            for (std::size_t k = 0; k < family.params().size(); ++k) {
                auto f = [&](double v) {
                    auto fam = family;
                    Vec phi = fam.params();
                    phi[k] = v;
                    fam.set_params(phi);
                    const auto t = family_terms(model, fam, 0.8, b);
                    return obj == Objective::dsm ? t.dsm.value : obj == Objective::esm ? t.esm.value : t.c2.value;
                };
                const double fd = oracle::central_difference(f, family.params()[k], 1e-6);
                EXPECT_NEAR(grad.value[k], fd, 1e-6 * std::max(1.0, std::abs(fd)))
                    << family.name() << " " << to_string(obj) << " " << k;
            }
        }
    };
    check(gm, GaussianFamily(DiagGaussian::from_std({0.3}, {0.7})));
    check(em, EncoderFamily(NoisyEncoderModel(0.8, 1.0, DiagGaussian::from_std({0.5}, {1.5}))));
}

TEST(GradCondition, MixtureWeightFamilyIsUnsupported) {
    const MixtureWeightFamily fam(DiagGaussian::from_std({-2.0}, {0.5}), DiagGaussian::from_std({2.0}, {0.5}), 0.0);
    EXPECT_THROW(grad_condition_total(Objective::dsm, LinearScoreModel(NoiseSchedule({1.0}), 1, 1), fam, 1.0,
                                      SampleBatch(1, 10, 1)),
                 UnsupportedError);
}

TEST(GradDistribution, StationaryPointOfTheExactTeacher) {
    // Frozen teacher: exact score of N(0, 1). With k = 1/(1 + sigma^2),
    // DSM(m, u) = 1/2 [k^2 m^2 + k^2 u^2 + (1/sigma - k sigma)^2], so
    // dDSM/dm = 0 and dDSM/dlog u = k^2 u^2 at (0, 1).
    const ExactScoreModel teacher(kUnit);
    const auto p = DiagGaussian::from_std({0.0}, {1.0});
    const SampleBatch b(136, 20000, 1);
    const double sigma = 1.0, k = 0.5;
    const auto dsm = grad_distribution(Objective::dsm, teacher, p, sigma, b);
    const auto esm = grad_distribution(Objective::esm, teacher, p, sigma, b);
    const auto c2 = grad_distribution(Objective::c2, teacher, p, sigma, b);
    expect_within(dsm.coordinate(0), 0.0);
    expect_within(dsm.coordinate(1), k * k);
    EXPECT_GT(dsm.value[1] - 3.0 * dsm.std_error[1], 0.0);
    expect_within(esm.coordinate(1), 0.0);
    expect_within(c2.coordinate(1), -k * k);
}

TEST(GradDistribution, CorollaryIdentity) {
    const ExactScoreModel teacher(kTwoMode);
    Rng rng(137);
    for (int trial = 0; trial < 5; ++trial) {
        const auto p = DiagGaussian::from_std({rng.normal()}, {std::exp(0.3 * rng.normal())});
        const auto r = grad_condition_total_estimate({1, -1, 1, 0}, teacher, GaussianFamily(p), 0.3,
                                                     SampleBatch(3000 + trial, 20000, 1));
        expect_within(r.coordinate(0), 0.0);
        expect_within(r.coordinate(1), 0.0);
    }
}

TEST(ScoreNormMetric, Examples) {
    const NoiseSchedule one({1.0});
    expect_within(score_norm_metric(kUnit, one, SampleBatch(138, 20000, 1)), 0.25);
    const NoiseSchedule sched({0.3, 1.0});
    const SampleBatch b(139, 2000, 1);
    const auto a = score_norm_metric(GaussianFamily(DiagGaussian::from_std({0.0}, {0.8})), sched, b);
    const auto s = score_norm_metric(GaussianFamily(DiagGaussian::from_std({25.0}, {0.8})), sched, b);
    EXPECT_NEAR(a.value, s.value, 1e-10);
}

TEST(ScoreNormMetric, IncreasesAsComponentsSharpen) {
    const NoiseSchedule sched({0.3, 1.0});
    const NormalQuadrature rule(kDefaultQuadratureNodes);
    double prev = 0.0;
    for (double s : {1.2, 0.9, 0.6, 0.4, 0.2}) {
        const auto mix = GaussianMixture::symmetric({{-2.0}, {2.0}}, s);
        const double q = 0.5 * (c2_quadrature(mix, 0.3, rule) + c2_quadrature(mix, 1.0, rule));
        EXPECT_GT(q, prev) << s;
        prev = q;
        expect_within(score_norm_metric(mix, sched, SampleBatch(140, 20000, 1)), q);
    }
}
