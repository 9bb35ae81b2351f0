#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dsmlab/analytic.hpp"
#include "oracles.hpp"

using namespace dsmlab;

namespace {

GaussianMixture three_component() {
    return GaussianMixture({0.2, 0.5, 0.3}, {DiagGaussian::from_std({-1.5}, {0.4}), DiagGaussian::from_std({0.3}, {1.1}),
                                             DiagGaussian::from_std({2.2}, {0.6})});
}

GaussianMixture random_mixture(std::mt19937& gen, std::size_t d, std::size_t k) {
    std::uniform_real_distribution<double> mean(-3.0, 3.0);
    std::uniform_real_distribution<double> scale(0.2, 1.5);
    std::uniform_real_distribution<double> weight(0.1, 1.0);
    Vec w(k);
    double total = 0.0;
    for (auto& x : w) {
        x = weight(gen);
        total += x;
    }
    std::vector<DiagGaussian> comps;
    for (std::size_t j = 0; j < k; ++j) {
        Vec m(d), s(d);
        for (std::size_t i = 0; i < d; ++i) {
            m[i] = mean(gen);
            s[i] = scale(gen);
        }
        comps.push_back(DiagGaussian::from_std(m, s));
    }
    for (auto& x : w) {
        x /= total;
    }
    // Renormalize the last entry so the sum is 1 to rounding.
    double partial = 0.0;
    for (std::size_t j = 0; j + 1 < k; ++j) {
        partial += w[j];
    }
    w.back() = 1.0 - partial;
    return GaussianMixture(w, comps);
}

}  // namespace

TEST(Perturb, Examples) {
    EXPECT_EQ(perturb(Vec{0.0}, 1.0, Vec{0.0}), Vec{0.0});
    EXPECT_EQ(perturb(Vec{1.0, 2.0}, 0.5, Vec{2.0, -2.0}), (Vec{2.0, 1.0}));
    EXPECT_EQ(perturb(Vec{3.0}, 2.0, Vec{1.0}), Vec{5.0});
}

TEST(Perturb, RejectsDimensionMismatchAndBadSigma) {
    EXPECT_THROW(perturb(Vec{1.0, 2.0}, 1.0, Vec{0.0}), std::invalid_argument);
    EXPECT_THROW(perturb(Vec{1.0}, 0.0, Vec{0.0}), std::invalid_argument);
}

TEST(ConditionalScore, Examples) {
    EXPECT_DOUBLE_EQ(conditional_score(Vec{1.5}, Vec{1.0}, 1.0)[0], -0.5);
    EXPECT_EQ(conditional_score(Vec{0.7, -2.0}, Vec{0.7, -2.0}, 0.3), (Vec{0.0, 0.0}));
    EXPECT_DOUBLE_EQ(conditional_score(Vec{0.0}, Vec{2.0}, 2.0)[0], 0.5);
    EXPECT_THROW(conditional_score(Vec{0.0}, Vec{1.0, 2.0}, 1.0), std::invalid_argument);
}

TEST(Distributions, ConstructionInvariants) {
    EXPECT_THROW(DiagGaussian({}, {}), std::invalid_argument);
    EXPECT_THROW(DiagGaussian({0.0}, {0.0, 1.0}), std::invalid_argument);
    EXPECT_THROW(DiagGaussian({NAN}, {0.0}), std::invalid_argument);
    EXPECT_THROW(DiagGaussian::from_std({0.0}, {0.0}), std::invalid_argument);
    EXPECT_THROW(DiagGaussian({0.0}, {-INFINITY}), std::invalid_argument);

    const auto g = DiagGaussian::from_std({0.0}, {1.0});
    EXPECT_THROW(GaussianMixture({0.5, 0.6}, {g, g}), std::invalid_argument);
    EXPECT_THROW(GaussianMixture({1.5, -0.5}, {g, g}), std::invalid_argument);
    EXPECT_THROW(GaussianMixture({0.5, 0.5}, {g, DiagGaussian::isotropic(2, 0.0, 1.0)}), std::invalid_argument);
    EXPECT_NO_THROW(GaussianMixture({0.5, 0.5 + 1e-13}, {g, g}));

    EXPECT_THROW(NoiseSchedule(Vec{}), std::invalid_argument);
    EXPECT_THROW(NoiseSchedule(Vec{1.0, 0.5}), std::invalid_argument);
    EXPECT_THROW(NoiseSchedule(Vec{0.0, 1.0}), std::invalid_argument);
    EXPECT_THROW(NoiseSchedule(Vec{1.0, 1.0}), std::invalid_argument);

    EXPECT_THROW(NoisyEncoderModel(1.0, 0.0, g), std::invalid_argument);
}

TEST(MarginalLogDensity, SingleGaussianAtMode) {
    // N(0, 1) noised with sigma = 1 has variance 2: log(1 / sqrt(4 pi)).
    const double expected = std::log(1.0 / std::sqrt(4.0 * std::numbers::pi));
    EXPECT_NEAR(expected, -1.26551212348465, 1e-13);
    EXPECT_NEAR(marginal_log_density(DiagGaussian::from_std({0.0}, {1.0}), Vec{0.0}, 1.0), expected, 1e-14);
}

TEST(MarginalLogDensity, SymmetricPairAtCenter) {
    const auto mix = GaussianMixture::symmetric({{-2.0}, {2.0}}, 0.7);
    const double one = marginal_log_density(DiagGaussian::from_std({2.0}, {0.7}), Vec{0.0}, 0.9);
    EXPECT_NEAR(marginal_log_density(mix, Vec{0.0}, 0.9), one, 1e-14);
}

TEST(MarginalLogDensity, MatchesAdaptiveQuadratureOfConvolution) {
    const auto mix = three_component();
    const oracle::Mix1D ref{{0.2, 0.5, 0.3}, {-1.5, 0.3, 2.2}, {0.4, 1.1, 0.6}};
    std::mt19937 gen(11);
    std::uniform_real_distribution<double> xs(-4.0, 4.0);
    for (double sigma : {0.1, 0.5, 1.7}) {
        for (int rep = 0; rep < 10; ++rep) {
            const double x_t = xs(gen);
            // int p(x) N(x_t; x, sigma^2) dx
            const double conv = ref.expect([&](double x) { return oracle::normal_pdf(x_t, x, sigma * sigma); });
            EXPECT_NEAR(marginal_log_density(mix, Vec{x_t}, sigma), std::log(conv), 1e-8)
                << "x_t=" << x_t << " sigma=" << sigma;
        }
    }
}

TEST(MarginalLogDensity, StableFarInTheTails) {
    const auto mix = GaussianMixture::symmetric({{-2.0}, {2.0}}, 0.1);
    const double v = marginal_log_density(mix, Vec{60.0}, 0.2);
    EXPECT_TRUE(std::isfinite(v));
    const auto s = marginal_score(mix, Vec{60.0}, 0.2);
    EXPECT_NEAR(s[0], -(60.0 - 2.0) / (0.01 + 0.04), 1e-9);
}

TEST(MarginalScore, Examples) {
    EXPECT_DOUBLE_EQ(marginal_score(DiagGaussian::from_std({0.0}, {1.0}), Vec{2.0}, 1.0)[0], -1.0);
    EXPECT_DOUBLE_EQ(marginal_score(GaussianMixture::symmetric({{-2.0}, {2.0}}, 0.5), Vec{0.0}, 0.8)[0], 0.0);
}

TEST(MarginalScore, MatchesFiniteDifferenceOfLogDensity) {
    std::mt19937 gen(3);
    std::normal_distribution<double> probe(0.0, 2.5);
    for (std::size_t d : {1u, 2u, 3u}) {
        for (std::size_t k : {1u, 2u, 4u}) {
            const auto mix = random_mixture(gen, d, k);
            for (double sigma : {0.3, 1.0}) {
                for (int rep = 0; rep < 100; ++rep) {
                    Vec x(d);
                    for (auto& v : x) {
                        v = probe(gen);
                    }
                    const Vec s = marginal_score(mix, x, sigma);
                    for (std::size_t i = 0; i < d; ++i) {
                        const double fd = oracle::central_difference(
                            [&](double xi) {
                                Vec y = x;
                                y[i] = xi;
                                return marginal_log_density(mix, y, sigma);
                            },
                            x[i], 1e-5);
                        ASSERT_NEAR(s[i], fd, 1e-6) << "d=" << d << " k=" << k;
                    }
                }
            }
        }
    }
}

TEST(MarginalScore, JacobianMatchesFiniteDifferenceOfScore) {
    std::mt19937 gen(5);
    std::normal_distribution<double> probe(0.0, 2.0);
    const auto mix = random_mixture(gen, 2, 3);
    for (int rep = 0; rep < 50; ++rep) {
        Vec x{probe(gen), probe(gen)};
        const Matrix h = marginal_score_jacobian(mix, x, 0.6);
        for (std::size_t j = 0; j < 2; ++j) {
            Vec up = x, down = x;
            up[j] += 1e-5;
            down[j] -= 1e-5;
            const Vec su = marginal_score(mix, up, 0.6);
            const Vec sd = marginal_score(mix, down, 0.6);
            for (std::size_t i = 0; i < 2; ++i) {
                EXPECT_NEAR(h(i, j), (su[i] - sd[i]) / 2e-5, 1e-6);
            }
        }
        EXPECT_NEAR(h(0, 1), h(1, 0), 1e-14);
    }
}

TEST(C2ClosedForm, MatchesMonteCarloOracle) {
    struct Case {
        std::vector<double> s;
        double sigma;
        double expected;
    };
    for (const auto& cs : {Case{{1.0}, 1.0, 0.25}, Case{{1e-4}, 1.0, 0.5}, Case{{1.0, 1.0, 1.0}, 1.0, 0.75}}) {
        const auto dist = DiagGaussian::from_std(Vec(cs.s.size(), 0.3), cs.s);
        const double closed = c2_closed_form(dist, cs.sigma);
        EXPECT_NEAR(closed, cs.expected, 1e-8);
        // Brute force: x ~ N(mu, s^2), x_t = x + sigma nu, score of N(mu, s^2 + sigma^2).
        const auto mc = oracle::monte_carlo(1'000'000, 17, [&](std::mt19937& g) {
            std::normal_distribution<double> n01;
            double acc = 0.0;
            for (std::size_t i = 0; i < cs.s.size(); ++i) {
                const double x = 0.3 + cs.s[i] * n01(g);
                const double xt = x + cs.sigma * n01(g);
                const double score = -(xt - 0.3) / (cs.s[i] * cs.s[i] + cs.sigma * cs.sigma);
                acc += 0.5 * score * score;
            }
            return acc;
        });
        EXPECT_LE(std::abs(mc.mean - closed), 3.0 * mc.se) << "mc=" << mc.mean << " closed=" << closed;
    }
}

TEST(C2ClosedForm, StrictlyDecreasingInScaleAndNoise) {
    double prev = INFINITY;
    for (double s = 0.05; s < 4.0; s *= 1.3) {
        const double v = c2_closed_form(DiagGaussian::from_std({0.0, 0.0}, {s, 0.7}), 0.5);
        EXPECT_LT(v, prev);
        prev = v;
    }
    prev = INFINITY;
    for (double sigma = 0.05; sigma < 10.0; sigma *= 1.3) {
        const double v = c2_closed_form(DiagGaussian::from_std({0.0}, {0.7}), sigma);
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(C3ClosedForm, Examples) {
    EXPECT_DOUBLE_EQ(c3_closed_form(2, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(c3_closed_form(1, 2.0), 0.125);
    EXPECT_DOUBLE_EQ(c3_closed_form(1, 1.0), 0.5);
    EXPECT_THROW(c3_closed_form(0, 1.0), std::invalid_argument);
}

TEST(C3ClosedForm, MatchesMonteCarloOfConditionalScore) {
    for (std::size_t d : {1u, 3u}) {
        for (double sigma : {0.4, 1.0, 2.0}) {
            const auto mc = oracle::monte_carlo(100'000, 23, [&](std::mt19937& g) {
                std::normal_distribution<double> n01;
                Vec x(d), nu(d);
                for (std::size_t i = 0; i < d; ++i) {
                    x[i] = 5.0 * n01(g);
                    nu[i] = n01(g);
                }
                const Vec s = conditional_score(perturb(x, sigma, nu), x, sigma);
                return 0.5 * squared_norm(s);
            });
            EXPECT_LE(std::abs(mc.mean - c3_closed_form(d, sigma)), 3.0 * mc.se);
        }
    }
}

TEST(PosteriorMoments, UnitPriorUnitNoise) {
    const NoisyEncoderModel model(1.0, 1.0, DiagGaussian::from_std({0.0}, {1.0}));
    for (double c : {-2.0, 0.0, 0.7, 3.1}) {
        const auto pm = posterior_moments(model, c);
        EXPECT_DOUBLE_EQ(pm.variance, 0.5);
        EXPECT_DOUBLE_EQ(pm.mean, c / 2.0);
    }
}

TEST(PosteriorMoments, MatchesRegressionOracle) {
    // Jointly Gaussian (x, c): regress x on c; slope and residual variance give E[x|c], Var(x|c).
    for (const auto& [alpha, beta, mu0, s0] :
         std::vector<std::tuple<double, double, double, double>>{{1.0, 1.0, 0.0, 1.0}, {2.0, 0.5, 1.0, 0.8}, {-0.7, 1.3, -2.0, 1.5}}) {
        const NoisyEncoderModel model(alpha, beta, DiagGaussian::from_std({mu0}, {s0}));
        std::mt19937 gen(29);
        std::normal_distribution<double> n01;
        const std::size_t n = 1'000'000;
        double sx = 0, sc = 0, sxx = 0, scc = 0, sxc = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = mu0 + s0 * n01(gen);
            const double c = alpha * x + beta * n01(gen);
            sx += x;
            sc += c;
            sxx += x * x;
            scc += c * c;
            sxc += x * c;
        }
        const double nd = static_cast<double>(n);
        const double mx = sx / nd, mc = sc / nd;
        const double vxx = sxx / nd - mx * mx, vcc = scc / nd - mc * mc, vxc = sxc / nd - mx * mc;
        const double slope = vxc / vcc;
        const double resid = vxx - slope * vxc;
        const double c_probe = 0.4;
        const auto pm = posterior_moments(model, c_probe);
        EXPECT_NEAR(pm.variance, resid, 5e-3 * s0 * s0);
        EXPECT_NEAR(pm.mean, mx + slope * (c_probe - mc), 1e-2);
    }
}

TEST(PosteriorMoments, LimitsAndMonotonicity) {
    const auto prior = DiagGaussian::from_std({0.6}, {1.2});
    const auto indep = posterior_moments(NoisyEncoderModel(0.0, 1.0, prior), 5.0);
    EXPECT_DOUBLE_EQ(indep.mean, 0.6);
    EXPECT_NEAR(indep.variance, 1.44, 1e-14);
    EXPECT_LT(posterior_moments(NoisyEncoderModel(1e6, 1.0, prior), 0.0).variance, 1e-11);

    double prev = INFINITY;
    for (double alpha = 0.0; alpha < 20.0; alpha += 0.5) {
        const NoisyEncoderModel pos(alpha, 0.8, prior), neg(-alpha, 0.8, prior);
        const double v = posterior_moments(pos, 0.0).variance;
        EXPECT_LT(v, prev);
        EXPECT_DOUBLE_EQ(v, posterior_moments(neg, 0.0).variance);
        for (double c : {-3.0, 1.0, 9.0}) {
            EXPECT_DOUBLE_EQ(posterior_moments(pos, c).variance, v);
        }
        prev = v;
    }
    EXPECT_THROW(posterior_moments(NoisyEncoderModel(1.0, 1.0, DiagGaussian::isotropic(2, 0.0, 1.0)), 0.0),
                 UnsupportedError);
}

TEST(GaussianMixture, SelectHonoursWeights) {
    const auto g = DiagGaussian::from_std({0.0}, {1.0});
    const GaussianMixture mix({0.25, 0.0, 0.75}, {g, g, g});
    EXPECT_EQ(mix.select(0.0), 0u);
    EXPECT_EQ(mix.select(0.2499), 0u);
    EXPECT_EQ(mix.select(0.25), 2u);
    EXPECT_EQ(mix.select(0.9999), 2u);
    const GaussianMixture tail({1.0, 0.0}, {g, g});
    EXPECT_EQ(tail.select(0.99999), 0u);
}
