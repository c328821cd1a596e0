#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles/keyrate_oracle.hpp"
#include "wfqkd/keyrate.hpp"
#include "wfqkd/keyrate_io.hpp"
#include "wfqkd/photon_sim.hpp"

using namespace wfqkd::keyrate;

namespace {

DecoyObservation row_14_6db() {
    DecoyObservation o;
    o.q_mu = 3.2224e-3;
    o.e_mu = 0.0080;
    o.q_nu = 1.0862e-3;
    o.e_nu = 0.0077;
    o.y0 = 2e-7;
    return o;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

} // namespace

TEST(H2, Examples) {
    EXPECT_DOUBLE_EQ(h2(0.5), 1.0);
    EXPECT_EQ(h2(0.0), 0.0);
    EXPECT_EQ(h2(1.0), 0.0);
    EXPECT_NEAR(h2(0.0163), 0.12012866732, 1e-10);
    EXPECT_THROW(h2(-0.1), std::domain_error);
    EXPECT_THROW(h2(1.1), std::domain_error);
}

TEST(H2, Symmetric) {
    for (double x = 0.0; x <= 1.0; x += 0.01) EXPECT_NEAR(h2(x), h2(1.0 - x), 1e-14);
}

TEST(Y1Lower, ReferenceInputs) {
    auto o = row_14_6db();
    o.y0 = 0.0;
    EXPECT_NEAR(y1_lower(o), 5.0571612173698e-3, 1e-15);
}

TEST(Y1Lower, ClampsAndBoundary) {
    auto o = row_14_6db();
    o.y0 = 1.0;
    bool clamped = false;
    EXPECT_EQ(y1_lower(o, &clamped), 0.0);
    EXPECT_TRUE(clamped);

    o.y0 = 0.0;
    o.q_nu = o.q_mu * std::exp(o.mu - o.nu) * o.nu * o.nu / (o.mu * o.mu);
    EXPECT_NEAR(y1_lower(o), 0.0, 1e-18);
}

TEST(E1Upper, ReferenceInputs) {
    auto o = row_14_6db();
    o.y0 = 0.0;
    const double y1 = y1_lower(o);
    EXPECT_NEAR(e1_upper(o, y1), 0.010100029112625, 1e-14);
    EXPECT_NEAR(e1_upper(o, y1), o.e_nu * o.q_nu * std::exp(o.nu) / (y1 * o.nu), 1e-16);
}

TEST(E1Upper, ClampsAndUndefined) {
    auto o = row_14_6db();
    o.y0 = o.e_nu * o.q_nu * std::exp(o.nu) / o.e0 * 1.01;
    bool clamped = false;
    EXPECT_EQ(e1_upper(o, 1e-3, &clamped), 0.0);
    EXPECT_TRUE(clamped);
    o = row_14_6db();
    o.e_nu = 0.5;
    EXPECT_EQ(e1_upper(o, 1e-4, &clamped), 0.5);
    EXPECT_TRUE(clamped);
    EXPECT_THROW(e1_upper(o, 0.0), std::domain_error);
}

TEST(Delta1, Examples) {
    auto o = row_14_6db();
    EXPECT_NEAR(delta1(o, 5.0571612173698e-3), 0.51677549435750, 1e-13);
    EXPECT_EQ(delta1(o, 0.0), 0.0);
    o.q_mu = 0.01 * o.mu * std::exp(-o.mu);
    EXPECT_NEAR(delta1(o, 0.01), 1.0, 1e-15);
    bool clamped = false;
    EXPECT_EQ(delta1(o, 0.02, &clamped), 1.0);
    EXPECT_TRUE(clamped);
    o.q_mu = 0.0;
    EXPECT_THROW(delta1(o, 0.01), std::domain_error);
}

TEST(GllpRate, ReferenceRowOptimized600Grit) {
    const auto r = gllp_rate(row_14_6db());
    EXPECT_NEAR(r.rate / 6.43e-4, 1.0, 0.01);
    EXPECT_FALSE(r.rate_clamped);
}

TEST(GllpRate, ReferenceRowUnoptimized120GritIsZero) {
    DecoyObservation o;
    o.q_mu = 2.2e-7;
    o.e_mu = 0.24;
    o.q_nu = 1.2e-7;
    o.e_nu = 0.37;
    o.y0 = 2e-7;
    const auto r = gllp_rate(o);
    EXPECT_EQ(r.rate, 0.0);
    EXPECT_TRUE(r.rate_clamped);
}

TEST(GllpRate, ZeroErrorReduction) {
    auto o = row_14_6db();
    o.e_mu = o.e_nu = 0.0;
    o.y0 = 0.0;
    const KeyRateParams p;
    const auto r = gllp_rate(o, p);
    const double d = y1_lower(o) * o.mu * std::exp(-o.mu) / o.q_mu;
    EXPECT_NEAR(r.rate, p.q * o.q_mu * d, 1e-18);
    EXPECT_EQ(r.e1_upper, 0.0);
}

TEST(GllpRate, NoSignalClicks) {
    auto o = row_14_6db();
    o.q_mu = 0.0;
    o.q_nu = 0.0;
    const auto r = gllp_rate(o);
    EXPECT_EQ(r.rate, 0.0);
    EXPECT_TRUE(r.e1_undefined);
}

TEST(GllpRate, RejectsInvalidInputs) {
    auto o = row_14_6db();
    o.nu = 0.7;
    EXPECT_THROW(gllp_rate(o), std::invalid_argument);
    o = row_14_6db();
    o.e_mu = 1.5;
    EXPECT_THROW(gllp_rate(o), std::invalid_argument);
    EXPECT_THROW(gllp_rate(row_14_6db(), {0.5, 0.9}), std::invalid_argument);
    EXPECT_THROW(gllp_rate(row_14_6db(), {0.0, 1.15}), std::invalid_argument);
}

TEST(GllpRate, MonotoneInSignalQber) {
    auto o = row_14_6db();
    double prev = gllp_rate(o).rate;
    for (double e = 0.0085; e <= 0.2; e += 0.0005) {
        o.e_mu = e;
        const double r = gllp_rate(o).rate;
        EXPECT_LE(r, prev);
        prev = r;
    }
    EXPECT_EQ(prev, 0.0);
}

TEST(GllpRate, MonotoneInSinglePhotonErrorBound) {
    // e1 grows with E_nu while Y1 and Delta1 stay fixed.
    auto o = row_14_6db();
    double prev = gllp_rate(o).rate;
    double prev_e1 = gllp_rate(o).e1_upper;
    for (double e = 0.008; e <= 0.2; e += 0.002) {
        o.e_nu = e;
        const auto r = gllp_rate(o);
        EXPECT_GE(r.e1_upper, prev_e1);
        EXPECT_LE(r.rate, prev);
        prev = r.rate;
        prev_e1 = r.e1_upper;
    }
}

TEST(GllpRate, ScalingConsistency) {
    const auto base = gllp_rate(row_14_6db());
    for (double c : {0.5, 2.0}) {
        auto o = row_14_6db();
        o.q_mu *= c;
        o.q_nu *= c;
        o.y0 *= c;
        const auto r = gllp_rate(o);
        EXPECT_NEAR(r.y1_lower, c * base.y1_lower, 1e-12 * c * base.y1_lower);
        EXPECT_NEAR(r.e1_upper, base.e1_upper, 1e-12);
        EXPECT_NEAR(r.delta1, base.delta1, 1e-12);
        EXPECT_NEAR(r.rate, c * base.rate, 1e-12 * c * base.rate);
    }
}

TEST(GllpRate, ClampInvariantsOverRandomInputs) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 20000; ++i) {
        DecoyObservation o;
        o.mu = 0.1 + 0.9 * u(rng);
        o.nu = o.mu * (0.05 + 0.9 * u(rng));
        o.q_mu = std::pow(10.0, -8.0 * u(rng));
        o.q_nu = std::pow(10.0, -8.0 * u(rng));
        o.e_mu = 0.5 * u(rng);
        o.e_nu = 0.5 * u(rng);
        o.y0 = 1e-5 * u(rng);
        const auto r = gllp_rate(o);
        ASSERT_GE(r.y1_lower, 0.0);
        ASSERT_GE(r.e1_upper, 0.0);
        ASSERT_LE(r.e1_upper, 0.5);
        ASSERT_GE(r.delta1, 0.0);
        ASSERT_LE(r.delta1, 1.0);
        ASSERT_GE(r.rate, 0.0);
    }
}

TEST(GllpRate, AgreesWithExtendedPrecisionOracle) {
    std::mt19937_64 rng(12345);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int compared_rates = 0;
    for (int i = 0; i < 10000; ++i) {
        DecoyObservation o;
        o.mu = 0.3 + 0.6 * u(rng);
        o.nu = o.mu * (0.1 + 0.6 * u(rng));
        o.y0 = 3e-7 * u(rng);
        const double eta = std::pow(10.0, -1.0 - 6.0 * u(rng));
        const double ed = 0.03 * u(rng);
        o.q_mu = wfqkd::photon::expected_gain(o.mu, eta, o.y0);
        o.q_nu = wfqkd::photon::expected_gain(o.nu, eta, o.y0);
        o.e_mu = wfqkd::photon::expected_qber(o.mu, eta, o.y0, ed);
        o.e_nu = wfqkd::photon::expected_qber(o.nu, eta, o.y0, ed);
        const KeyRateParams p{0.5, 1.0 + 0.3 * u(rng)};

        const auto got = gllp_rate(o, p);
        const auto want = oracle::evaluate({o.mu, o.nu, o.q_mu, o.e_mu, o.q_nu, o.e_nu, o.y0, o.e0, p.q, p.f});
        const double y1 = want.y1.convert_to<double>();
        const double e1 = want.e1.convert_to<double>();
        const double d1 = want.delta1.convert_to<double>();
        const double rate = want.rate.convert_to<double>();
        ASSERT_GT(y1, 0.0) << "generator should stay in the positive-yield region";
        ASSERT_LE(rel(got.y1_lower, y1), 1e-12) << i;
        if (e1 > 0.0) ASSERT_LE(rel(got.e1_upper, e1), 1e-12) << i;
        else ASSERT_EQ(got.e1_upper, 0.0);
        ASSERT_LE(rel(got.delta1, d1), 1e-12) << i;
        if (rate > 0.0) {
            ASSERT_LE(rel(got.rate, rate), 1e-12) << i;
            ++compared_rates;
        } else {
            ASSERT_EQ(got.rate, 0.0) << i;
        }
        const double x = 0.5 * u(rng);
        ASSERT_LE(rel(h2(x), oracle::h2(oracle::Real(x)).convert_to<double>()), 1e-12);
    }
    EXPECT_GT(compared_rates, 1000);
}

TEST(TableBatch, EmptyInputGivesEmptyReport) {
    const auto report = table_batch({});
    EXPECT_TRUE(report.rows.empty());
    EXPECT_TRUE(report.all_within(0.0));
    EXPECT_EQ(report.max_relative_deviation(), 0.0);
}

TEST(TableBatch, NumericRowsWithinFifteenPercent) {
    const auto rows = wfqkd::io::load_batch(std::string(WFQKD_DATA_DIR) + "/decoy_sessions.csv");
    ASSERT_EQ(rows.size(), 15u);
    const auto report = table_batch(rows);
    int numeric = 0;
    for (const auto& r : report.rows) {
        if (r.reference && *r.reference > 0.0) {
            ++numeric;
            EXPECT_LE(*r.relative_deviation, 0.15) << r.label;
        }
    }
    EXPECT_EQ(numeric, 13);
    EXPECT_LE(report.max_relative_deviation(), 0.15);
}

TEST(TableBatch, ZeroReferenceRequiresZeroRate) {
    BatchRowResult r{"x", {}, 0.0, std::nullopt};
    r.result.rate = 0.0;
    EXPECT_TRUE(r.within(0.15));
    r.result.rate = 1e-12;
    EXPECT_FALSE(r.within(0.15));
    r.reference.reset();
    EXPECT_TRUE(r.within(0.0));
}
