#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "txnkb/woe.hpp"

using namespace txnkb;

namespace {

using Values = std::vector<std::optional<double>>;
using Labels = std::vector<int>;

// Independent recount: given the fitted boundaries, re-derive every count,
// woe and the information value straight from the raw rows and the formula.
void cross_check(const std::vector<Bin>& bins, const Values& values, const Labels& labels,
                 double tol = 1e-12) {
    long total_events = 0, total_nonevents = 0;
    for (int y : labels) (y == 1 ? total_events : total_nonevents) += 1;
    const double nb = static_cast<double>(bins.size());
    double iv = 0.0;
    long covered = 0;
    for (const auto& bin : bins) {
        long e = 0, n = 0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!bin_contains(bin, values[i])) continue;
            (labels[i] == 1 ? e : n) += 1;
        }
        REQUIRE(e == bin.event_count);
        REQUIRE(n == bin.nonevent_count);
        covered += e + n;
        const double pe = (static_cast<double>(e) + 0.5) /
                          (static_cast<double>(total_events) + 0.5 * nb);
        const double pn = (static_cast<double>(n) + 0.5) /
                          (static_cast<double>(total_nonevents) + 0.5 * nb);
        REQUIRE(std::fabs(bin.woe - std::log(pe / pn)) < tol);
        iv += (pe - pn) * std::log(pe / pn);
    }
    REQUIRE(covered == static_cast<long>(values.size()));  // bins partition the rows
    FeatureWoE fw;
    fw.feature = "f";
    fw.bins = bins;
    REQUIRE(std::fabs(information_value(fw) - iv) < tol);
}

}  // namespace

TEST_CASE("woe of a bin follows the smoothed formula") {
    Bin b;
    b.event_count = 9;
    b.nonevent_count = 1;
    // 10 events and 10 nonevents in total, two bins: both smoothed
    // denominators are 10 + 0.5 * 2 = 11 and cancel.
    CHECK(woe_of_bin(b, 10, 10, 2) == Catch::Approx(std::log(9.5 / 1.5)).epsilon(1e-15));
    // Pure bin stays finite thanks to the +0.5.
    b.nonevent_count = 0;
    CHECK(std::isfinite(woe_of_bin(b, 9, 11, 2)));
}

TEST_CASE("information value of a symmetric split, by hand") {
    FeatureWoE fw;
    fw.feature = "f";
    Bin a;
    a.event_count = 9;
    a.nonevent_count = 1;
    Bin b;
    b.event_count = 1;
    b.nonevent_count = 9;
    fw.bins = {a, b};
    const double want = 2.0 * (8.0 / 11.0) * std::log(9.5 / 1.5);
    CHECK(information_value(fw) == Catch::Approx(want).epsilon(1e-15));
}

TEST_CASE("bin membership is half-open with an inclusive upper bound") {
    Bin b;
    b.lower = 10.0;
    b.upper = 70.5;
    CHECK(bin_contains(b, 70.5));
    CHECK_FALSE(bin_contains(b, std::nextafter(70.5, 100.0)));
    CHECK_FALSE(bin_contains(b, 10.0));
    CHECK(bin_contains(b, std::nextafter(10.0, 100.0)));
    CHECK_FALSE(bin_contains(b, std::nullopt));
    Bin m;
    m.is_missing_bin = true;
    CHECK(bin_contains(m, std::nullopt));
    CHECK_FALSE(bin_contains(m, 10.0));
}

TEST_CASE("a clean threshold collapses to two pure bins cut at the boundary") {
    Values values;
    Labels labels;
    for (int v = 1; v <= 40; ++v) {
        values.emplace_back(static_cast<double>(v));
        labels.push_back(v <= 20 ? 1 : 0);
    }
    BinningConfig cfg;
    cfg.max_bins = 4;
    const auto bins = fit_bins(values, labels, cfg);
    REQUIRE(bins.size() == 2);
    CHECK(bins[0].upper == 20.0);  // the cut is an observed value
    CHECK(bins[0].event_count == 20);
    CHECK(bins[0].nonevent_count == 0);
    CHECK(bins[1].lower == 20.0);
    CHECK(bins[1].nonevent_count == 20);
    // Smoothed pure-bin woe: ln(20.5 / 0.5) with cancelling denominators.
    CHECK(bins[0].woe == Catch::Approx(std::log(41.0)).epsilon(1e-15));
    CHECK(bins[1].woe == Catch::Approx(-std::log(41.0)).epsilon(1e-15));
    cross_check(bins, values, labels);
}

TEST_CASE("adjacent bins with equal composition merge under the woe delta") {
    // Three prebins; the first two have identical 50/50 mixes, the third is
    // skewed. The equal pair collapses, the informative boundary survives.
    Values values;
    Labels labels;
    for (int v = 0; v < 60; ++v) {
        values.emplace_back(static_cast<double>(v));
        labels.push_back(v < 40 ? (v % 2) : (v % 10 != 0));
    }
    BinningConfig cfg;
    cfg.max_bins = 3;
    const auto bins = fit_bins(values, labels, cfg);
    REQUIRE(bins.size() == 2);
    CHECK(bins[0].event_count + bins[0].nonevent_count == 40);
    cross_check(bins, values, labels);
}

TEST_CASE("missing values get a dedicated bin that never merges") {
    Values values;
    Labels labels;
    for (int v = 0; v < 50; ++v) {
        values.emplace_back(static_cast<double>(v));
        labels.push_back(v < 25 ? 1 : 0);
    }
    for (int i = 0; i < 7; ++i) {
        values.emplace_back(std::nullopt);
        labels.push_back(i % 2);
    }
    const auto bins = fit_bins(values, labels);
    std::size_t missing_bins = 0;
    for (const auto& b : bins)
        if (b.is_missing_bin) {
            ++missing_bins;
            CHECK(b.event_count == 3);   // labels 0,1,0,1,0,1,0 over the 7 missing rows
            CHECK(b.nonevent_count == 4);
        }
    CHECK(missing_bins == 1);
    CHECK(bins.back().is_missing_bin);  // kept at the end
    cross_check(bins, values, labels);
}

TEST_CASE("an all-missing feature yields only the missing bin") {
    Values values(30, std::nullopt);
    Labels labels;
    for (int i = 0; i < 30; ++i) labels.push_back(i % 2);
    const auto bins = fit_bins(values, labels);
    REQUIRE(bins.size() == 1);
    CHECK(bins[0].is_missing_bin);
}

TEST_CASE("a constant feature collapses to a catch-all bin") {
    Values values(40, 3.14);
    Labels labels;
    for (int i = 0; i < 40; ++i) labels.push_back(i % 2);
    const auto bins = fit_bins(values, labels);
    REQUIRE(bins.size() == 1);
    CHECK(bins[0].lower == -std::numeric_limits<double>::infinity());
    CHECK(bins[0].upper == std::numeric_limits<double>::infinity());
    CHECK(bins[0].event_count == 20);
}

TEST_CASE("fitted finite bins respect the support floor") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Values values;
    Labels labels;
    const int n = 300;
    for (int i = 0; i < n; ++i) {
        const double v = unit(rng);
        values.emplace_back(v);
        labels.push_back(unit(rng) < 0.3 + 0.4 * v ? 1 : 0);
    }
    BinningConfig cfg;
    const auto bins = fit_bins(values, labels, cfg);
    std::size_t finite = 0;
    for (const auto& b : bins)
        if (!b.is_missing_bin) ++finite;
    for (const auto& b : bins) {
        if (b.is_missing_bin) continue;
        if (finite > 1)
            CHECK(static_cast<double>(b.event_count + b.nonevent_count) >=
                  cfg.min_support_frac * n);
    }
    cross_check(bins, values, labels);
}

TEST_CASE("finite bins tile the real line in order") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> norm(0.0, 2.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Values values;
    Labels labels;
    for (int i = 0; i < 200; ++i) {
        values.emplace_back(unit(rng) < 0.1 ? std::optional<double>{} : norm(rng));
        labels.push_back(unit(rng) < 0.5 ? 1 : 0);
    }
    const auto bins = fit_bins(values, labels);
    const double inf = std::numeric_limits<double>::infinity();
    double prev_upper = -inf;
    bool seen_missing = false;
    for (const auto& b : bins) {
        if (b.is_missing_bin) {
            seen_missing = true;
            continue;
        }
        CHECK_FALSE(seen_missing);  // finite bins come first
        CHECK(b.lower == prev_upper);
        CHECK(b.lower < b.upper);
        prev_upper = b.upper;
    }
    CHECK(prev_upper == inf);
    cross_check(bins, values, labels);
}

TEST_CASE("the monotonic pass leaves a monotone woe sequence") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Values values;
    Labels labels;
    for (int i = 0; i < 400; ++i) {
        const double v = unit(rng);
        values.emplace_back(v);
        labels.push_back(unit(rng) < 0.15 + 0.7 * v ? 1 : 0);
    }
    BinningConfig cfg;
    cfg.monotonic = true;
    const auto bins = fit_bins(values, labels, cfg);
    std::vector<double> woes;
    for (const auto& b : bins)
        if (!b.is_missing_bin) woes.push_back(b.woe);
    REQUIRE(woes.size() >= 2);
    const bool increasing = woes.back() >= woes.front();
    for (std::size_t i = 0; i + 1 < woes.size(); ++i) {
        if (increasing)
            CHECK(woes[i] <= woes[i + 1]);
        else
            CHECK(woes[i] >= woes[i + 1]);
    }
    cross_check(bins, values, labels);
}

TEST_CASE("fitting is invariant under strictly increasing transforms") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Values raw, warped;
    Labels labels;
    for (int i = 0; i < 250; ++i) {
        const double v = unit(rng);
        const bool missing = unit(rng) < 0.05;
        raw.emplace_back(missing ? std::optional<double>{} : std::optional<double>{v});
        warped.emplace_back(missing ? std::optional<double>{}
                                    : std::optional<double>{std::exp(3.0 * v)});
        labels.push_back(unit(rng) < 0.2 + 0.6 * v ? 1 : 0);
    }
    const auto a = fit_bins(raw, labels);
    const auto b = fit_bins(warped, labels);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].event_count == b[i].event_count);
        CHECK(a[i].nonevent_count == b[i].nonevent_count);
        CHECK(a[i].woe == Catch::Approx(b[i].woe).epsilon(1e-12));
    }
}

TEST_CASE("information value is non-negative on random data") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        Values values;
        Labels labels;
        const int n = 60 + static_cast<int>(rng() % 100);
        for (int i = 0; i < n; ++i) {
            values.emplace_back(unit(rng) < 0.1 ? std::optional<double>{}
                                                : std::optional<double>{unit(rng)});
            labels.push_back(unit(rng) < 0.4 ? 1 : 0);
        }
        const auto fw = fit_feature_woe("f", values, labels);
        CHECK(fw.iv >= 0.0);
        cross_check(fw.bins, values, labels);
    }
}

TEST_CASE("degenerate inputs are rejected") {
    Values v20(20, 1.0);
    Labels ones(20, 1);
    CHECK_THROWS_AS(fit_bins(v20, ones), DataError);  // single class
    Labels short_labels(19, 0);
    Values v19(19, 1.0);
    CHECK_THROWS_AS(fit_bins(v19, short_labels), DataError);  // below min_samples
    Labels bad = ones;
    bad[0] = 2;
    CHECK_THROWS_AS(fit_bins(v20, bad), DataError);
    Labels mixed(20, 0);
    for (int i = 0; i < 10; ++i) mixed[static_cast<std::size_t>(i)] = 1;
    Values with_nan = v20;
    with_nan[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(fit_bins(with_nan, mixed), DataError);
    BinningConfig cfg;
    cfg.max_bins = 1;
    CHECK_THROWS_AS(fit_bins(v20, mixed, cfg), ConfigError);
    Values mismatch(19, 1.0);
    CHECK_THROWS_AS(fit_bins(mismatch, mixed), DataError);
}

TEST_CASE("bin_index finds the containing bin") {
    Values values;
    Labels labels;
    for (int v = 1; v <= 40; ++v) {
        values.emplace_back(static_cast<double>(v));
        labels.push_back(v <= 20 ? 1 : 0);
    }
    values.emplace_back(std::nullopt);
    labels.push_back(1);
    const auto bins = fit_bins(values, labels);
    CHECK(bin_index(bins, 5.0) == 0);
    CHECK(bin_index(bins, std::nullopt) == bins.size() - 1);
    CHECK(bins[bin_index(bins, 20.0)].upper >= 20.0);
}

TEST_CASE("two same-side pure bins merge despite their smoothed woe gap") {
    // 1..20 all events split across two prebins, 21..30 nonevents. The pure
    // pair differs in smoothed woe only through support, so it collapses.
    Values values;
    Labels labels;
    for (int v = 1; v <= 30; ++v) {
        values.emplace_back(static_cast<double>(v));
        labels.push_back(v <= 20 ? 1 : 0);
    }
    BinningConfig cfg;
    cfg.max_bins = 3;
    const auto bins = fit_bins(values, labels, cfg);
    REQUIRE(bins.size() == 2);
    CHECK(bins[0].event_count == 20);
    CHECK(bins[0].upper == 20.0);
    cross_check(bins, values, labels);
}
