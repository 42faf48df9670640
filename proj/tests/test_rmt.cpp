#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "tsformer/rmt.hpp"
#include "support/oracles.hpp"

using namespace tsf;

namespace {

std::vector<float> iid_normal_map(uint32_t seed, int m) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<float> map(static_cast<size_t>(m) * m);
    for (auto& v : map) v = static_cast<float>(n(rng));
    return map;
}

// Map whose rows have disjoint single-entry supports; its standardized Gram
// is close to a scaled identity, so lambda_max sits near 1.
std::vector<float> near_identity_map(int m, float amp = 1.0f) {
    std::vector<float> map(static_cast<size_t>(m) * m, 0.0f);
    for (int r = 0; r < m; ++r) map[static_cast<size_t>(r) * m + r] = amp;
    return map;
}

} // namespace

TEST_CASE("jacobi eigenvalues match the closed-form 3x3 oracle") {
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a(9);
        for (int i = 0; i < 3; ++i)
            for (int j = i; j < 3; ++j) {
                const double v = d(rng);
                a[static_cast<size_t>(i) * 3 + j] = v;
                a[static_cast<size_t>(j) * 3 + i] = v;
            }
        const auto got = jacobi_eigenvalues(a, 3);
        const auto expect = oracles::symmetric3_eigenvalues(a);
        for (int i = 0; i < 3; ++i) REQUIRE(got[static_cast<size_t>(i)] == Catch::Approx(expect[static_cast<size_t>(i)]).margin(1e-5));
    }
}

TEST_CASE("jacobi top eigenvalue matches power iteration on 4x4") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> a(16);
        for (int i = 0; i < 4; ++i)
            for (int j = i; j < 4; ++j) {
                const double v = d(rng);
                a[static_cast<size_t>(i) * 4 + j] = v;
                a[static_cast<size_t>(j) * 4 + i] = v;
            }
        // shift to positive definite so power iteration tracks the top eigenvalue
        for (int i = 0; i < 4; ++i) a[static_cast<size_t>(i) * 4 + i] += 4.0;
        const auto eig = jacobi_eigenvalues(a, 4);
        const double pi_lambda = oracles::power_iteration_lambda_max(a, 4);
        REQUIRE(eig.front() == Catch::Approx(pi_lambda).margin(1e-5));
        double trace = 0.0, sum = 0.0;
        for (int i = 0; i < 4; ++i) trace += a[static_cast<size_t>(i) * 4 + i];
        for (double e : eig) sum += e;
        REQUIRE(sum == Catch::Approx(trace).margin(1e-9));
    }
}

TEST_CASE("rank-one map gives lambda_max = m and trust sigmoid(-3)") {
    const int m = 16;
    std::vector<float> map(static_cast<size_t>(m) * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const float ui = (i % 2 == 0) ? 1.0f : -1.0f;
            const float uj = (j % 2 == 0) ? 1.0f : -1.0f;
            map[static_cast<size_t>(i) * m + j] = ui * uj;
        }
    TrustConfig cfg;
    const SpectralSummary s = spectral_summary(map.data(), m, cfg);
    REQUIRE(s.lambda_max == Catch::Approx(16.0).margin(1e-6));
    REQUIRE(s.mp_edge == 4.0);
    REQUIRE(s.trust == Catch::Approx(1.0 / (1.0 + std::exp(3.0))).margin(1e-4));
}

TEST_CASE("iid noise maps sit near the Marchenko-Pastur edge") {
    TrustConfig cfg;
    double trust_sum = 0.0, lam_sum = 0.0;
    const int trials = 100;
    for (int s = 0; s < trials; ++s) {
        const auto map = iid_normal_map(static_cast<uint32_t>(1000 + s), 16);
        const SpectralSummary sm = spectral_summary(map.data(), 16, cfg);
        trust_sum += sm.trust;
        lam_sum += sm.lambda_max;
    }
    const double mean_trust = trust_sum / trials;
    const double mean_lam = lam_sum / trials;
    INFO("mean lambda_max " << mean_lam << " mean trust " << mean_trust);
    REQUIRE(mean_lam == Catch::Approx(4.0).margin(1.0));
    REQUIRE(mean_trust == Catch::Approx(0.5).margin(0.15));
}

TEST_CASE("constant map takes the pure-structure branch") {
    std::vector<float> map(256, 3.25f);
    TrustConfig cfg;
    const SpectralSummary s = spectral_summary(map.data(), 16, cfg);
    REQUIRE(s.lambda_max == 0.0);
    REQUIRE(s.trust == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))).margin(1e-6));
}

TEST_CASE("spectral summary is invariant under map rescaling") {
    const auto base = iid_normal_map(77, 16);
    TrustConfig cfg;
    const SpectralSummary ref = spectral_summary(base.data(), 16, cfg);
    for (const double c : {-3.0, 0.5, 2.0, 100.0}) {
        auto scaled = base;
        for (auto& v : scaled) v = static_cast<float>(v * c);
        const SpectralSummary s = spectral_summary(scaled.data(), 16, cfg);
        REQUIRE(s.lambda_max == Catch::Approx(ref.lambda_max).epsilon(1e-4));
        REQUIRE(s.trust == Catch::Approx(ref.trust).margin(1e-5));
    }
}

TEST_CASE("trust decreases strictly as lambda_max grows") {
    TrustConfig cfg;
    std::vector<SpectralSummary> summaries;
    for (int s = 0; s < 20; ++s) summaries.push_back(spectral_summary(iid_normal_map(500 + s, 16).data(), 16, cfg));
    std::mt19937 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double a : {0.2, 0.5, 1.0, 2.0}) {
        std::vector<float> map(256);
        std::vector<double> u(16);
        for (auto& v : u) v = n(rng);
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j)
                map[static_cast<size_t>(i) * 16 + j] = static_cast<float>(a * u[i] * u[j] + n(rng) * 0.3);
        summaries.push_back(spectral_summary(map.data(), 16, cfg));
    }
    for (size_t i = 0; i < summaries.size(); ++i)
        for (size_t j = 0; j < summaries.size(); ++j)
            if (summaries[i].lambda_max < summaries[j].lambda_max - 1e-12)
                REQUIRE(summaries[i].trust > summaries[j].trust);
}

TEST_CASE("structured maps earn less trust than noise by a clear gap") {
    TrustConfig cfg;
    double noise_mean = 0.0, structured_mean = 0.0;
    const int trials = 100;
    for (int s = 0; s < trials; ++s) {
        noise_mean += spectral_summary(iid_normal_map(2000 + s, 16).data(), 16, cfg).trust;
        std::mt19937 rng(3000 + s);
        std::normal_distribution<double> n(0.0, 1.0);
        std::vector<double> u(16);
        for (auto& v : u) v = n(rng);
        std::vector<float> map(256);
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j)
                map[static_cast<size_t>(i) * 16 + j] = static_cast<float>(u[i] * u[j] + 0.1 * n(rng));
        structured_mean += spectral_summary(map.data(), 16, cfg).trust;
    }
    noise_mean /= trials;
    structured_mean /= trials;
    INFO("noise " << noise_mean << " structured " << structured_mean);
    REQUIRE(noise_mean - structured_mean >= 0.2);
}

TEST_CASE("adjust_threshold rescales by the trust score") {
    REQUIRE(adjust_threshold(0.8, 0.5) == Catch::Approx(0.4));
    // sigmoid range keeps the adjusted threshold strictly below the base
    for (double trust : {0.01, 0.3, 0.7311, 0.999})
        REQUIRE(adjust_threshold(0.8, trust) < 0.8);
    REQUIRE(adjust_threshold(0.8, 0.3) < adjust_threshold(0.8, 0.6));
}

TEST_CASE("downsample_map") {
    SECTION("already target-sized maps pass through unchanged") {
        const auto map = iid_normal_map(5, 16);
        const auto out = downsample_map(map.data(), 16, 16, 16);
        for (size_t i = 0; i < map.size(); ++i) REQUIRE(out[i] == map[i]);
    }
    SECTION("constant maps stay constant") {
        std::vector<float> map(64 * 64, 2.5f);
        const auto out = downsample_map(map.data(), 64, 64, 16);
        for (float v : out) REQUIRE(v == Catch::Approx(2.5f));
    }
    SECTION("matches the shared bilinear kernel") {
        std::mt19937 rng(31);
        std::vector<float> map(64 * 64);
        for (auto& v : map) v = std::uniform_real_distribution<float>(-1.0f, 1.0f)(rng);
        const auto out = downsample_map(map.data(), 64, 64, 16);
        const auto ref = bilinear_resize_plane(map.data(), 64, 64, 16, 16);
        for (size_t i = 0; i < out.size(); ++i) REQUIRE(out[i] == ref[i]);
    }
    SECTION("degenerate input is rejected") {
        std::vector<float> tiny(1, 1.0f);
        REQUIRE_THROWS_AS(downsample_map(tiny.data(), 1, 1, 16), std::invalid_argument);
    }
}

TEST_CASE("fed_filter keeps patches below tau") {
    const int m = 16;
    TrustConfig cfg;
    std::vector<std::vector<float>> patches{near_identity_map(m)};
    const auto s = spectral_summary(patches[0].data(), m, cfg);
    INFO("lambda_max of the near-identity patch: " << s.lambda_max);
    REQUIRE(s.lambda_max < 2.0);

    auto kept = fed_filter(patches, m, 2.0, cfg);
    REQUIRE(kept.size() == 1);
    REQUIRE(kept[0] == 1);
    kept = fed_filter(patches, m, 0.5, cfg);
    REQUIRE(kept[0] == 0);

    const std::vector<std::vector<float>> empty;
    REQUIRE(fed_filter(empty, m, 1.0, cfg).empty());
    REQUIRE_THROWS_AS(fed_filter(patches, m, -1.0, cfg), std::invalid_argument);
}

TEST_CASE("isa_threshold follows the variance of stable eigenvalues") {
    REQUIRE(isa_threshold({1.0, 1.0, 1.0}, 1.0, 4.0) == 4.0);  // degenerate, keep previous
    REQUIRE(isa_threshold({0.0, 2.0}, 1.0, 4.0) == Catch::Approx(1.0));
    REQUIRE(isa_threshold({5.0}, 2.0, 3.5) == 3.5);  // too few values

    std::mt19937 rng(13);
    std::uniform_real_distribution<double> d(0.0, 5.0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> xs(12);
        for (auto& v : xs) v = d(rng);
        const double alpha = 0.5 + d(rng);
        REQUIRE(isa_threshold(xs, alpha, 99.0) ==
                Catch::Approx(alpha * oracles::population_variance(xs)).margin(1e-6));
    }
}

TEST_CASE("isa state admits stable patches and evolves tau per run") {
    TrustConfig cfg;
    IsaState isa(cfg);
    REQUIRE(isa.tau == cfg.isa_tau_init);
    const auto noise = iid_normal_map(42, 16);
    const SpectralSummary sm = spectral_summary(noise.data(), 16, cfg);
    const bool kept = isa.admit(sm, cfg);
    if (kept) REQUIRE(isa.stable_eigenvalues.size() == 16);
    // a fresh state starts from tau_init again
    IsaState isa2(cfg);
    REQUIRE(isa2.tau == cfg.isa_tau_init);
    REQUIRE(isa2.stable_eigenvalues.empty());
}
