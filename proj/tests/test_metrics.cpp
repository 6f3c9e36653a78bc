#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"

#include "mislead/metrics.hpp"
#include "mislead/rng.hpp"
#include "support/helpers.hpp"

using namespace mislead;
using metrics::GroupBy;
using metrics::MagVariant;
using metrics::PredictionRecord;
using data::DemographicKey;
using data::Gender;
using data::Race;
using data::Method;

namespace {

PredictionRecord rec(std::string id, double score, int label, Gender g, Race r,
                     std::optional<Method> m = {}) {
    PredictionRecord p;
    p.sample_id = std::move(id);
    p.score = score;
    p.label = label;
    p.subgroup = {g, r};
    if (label == 1 && !m) m = Method::DF;
    if (label == 0) m.reset();
    p.method = m;
    return p;
}

// Every key gets one real and one fake up front so all group metrics exist;
// quantized scores force ties.
std::vector<PredictionRecord> random_records(std::uint64_t seed, int n,
                                             const std::vector<DemographicKey>& keys) {
    rng::Stream s(seed);
    std::vector<PredictionRecord> recs;
    int id = 0;
    for (const auto& k : keys) {
        recs.push_back(rec("s" + std::to_string(id++), s.uniform(), 0, k.gender, k.race));
        recs.push_back(rec("s" + std::to_string(id++), s.uniform(), 1, k.gender, k.race));
    }
    while (int(recs.size()) < n) {
        const auto& k = keys[size_t(s.uniform_int(0, int(keys.size()) - 1))];
        const int label = s.bernoulli(0.5) ? 1 : 0;
        const double score = double(s.uniform_int(0, 16)) / 16.0;
        recs.push_back(rec("s" + std::to_string(id++), score, label, k.gender, k.race));
    }
    return recs;
}

void split_scores(const std::vector<PredictionRecord>& recs, std::vector<double>& neg,
                  std::vector<double>& pos) {
    neg.clear();
    pos.clear();
    for (const auto& r : recs) (r.label == 1 ? pos : neg).push_back(r.score);
}

bool same_bits(double a, double b) {
    return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

}  // namespace

TEST_CASE("auc separates, halves ties, and rejects one-class input") {
    std::vector<PredictionRecord> perfect = {
        rec("a", 0.9, 1, Gender::M, Race::W), rec("b", 0.8, 1, Gender::M, Race::W),
        rec("c", 0.2, 0, Gender::M, Race::W), rec("d", 0.1, 0, Gender::M, Race::W)};
    CHECK(metrics::roc_auc(perfect) == 1.0);

    std::vector<PredictionRecord> inverted = {
        rec("a", 0.1, 1, Gender::M, Race::W), rec("b", 0.2, 1, Gender::M, Race::W),
        rec("c", 0.8, 0, Gender::M, Race::W), rec("d", 0.9, 0, Gender::M, Race::W)};
    CHECK(metrics::roc_auc(inverted) == 0.0);

    std::vector<PredictionRecord> flat;
    for (int i = 0; i < 6; ++i)
        flat.push_back(rec("f" + std::to_string(i), 0.5, i % 2, Gender::F, Race::B));
    CHECK(metrics::roc_auc(flat) == 0.5);

    std::vector<PredictionRecord> fakes_only = {rec("x", 0.7, 1, Gender::M, Race::W)};
    CHECK_THROWS_AS((void)metrics::roc_auc(fakes_only), metrics::SingleClass);
    CHECK_THROWS_AS((void)metrics::roc_auc(std::vector<PredictionRecord>{}),
                    metrics::SingleClass);
}

TEST_CASE("auc matches the quadratic oracle bit for bit") {
    const std::vector<DemographicKey> keys = {{Gender::M, Race::W}};
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        const auto recs = random_records(900 + trial, 50, keys);
        std::vector<double> neg, pos;
        split_scores(recs, neg, pos);
        CHECK(same_bits(metrics::roc_auc(recs), testsup::oracle_auc(neg, pos)));
    }
}

TEST_CASE("auc is invariant under strictly increasing score transforms") {
    const std::vector<DemographicKey> keys = {{Gender::F, Race::A}};
    auto recs = random_records(77, 80, keys);
    const double before = metrics::roc_auc(recs);
    for (auto& r : recs) r.score = r.score * r.score * r.score + 2.0 * r.score;
    CHECK(same_bits(metrics::roc_auc(recs), before));
}

TEST_CASE("accuracy and the decision rule pin the threshold boundary") {
    CHECK(metrics::predicted_fake(0.5, 0.5));
    CHECK_FALSE(metrics::predicted_fake(std::nextafter(0.5, 0.0), 0.5));

    std::vector<PredictionRecord> recs = {
        rec("a", 0.7, 1, Gender::M, Race::W),   // fake, predicted fake
        rec("b", 0.5, 1, Gender::M, Race::W),   // fake, boundary score counts as fake
        rec("c", 0.49, 0, Gender::M, Race::W),  // real, predicted real
        rec("d", 0.5, 0, Gender::M, Race::W)};  // real, boundary false positive
    CHECK(metrics::accuracy(recs, 0.5) == 0.75);
    CHECK(metrics::accuracy(recs, 0.45) == 0.5);
    CHECK_THROWS_AS((void)metrics::accuracy(std::vector<PredictionRecord>{}, 0.5),
                    DataError);
}

TEST_CASE("f_fpr on a two-group construction with known rates") {
    // Group M-W: 10 reals, 2 above threshold. Group F-B: 10 reals, 4 above.
    std::vector<PredictionRecord> recs;
    for (int i = 0; i < 10; ++i) {
        recs.push_back(rec("aw" + std::to_string(i), i < 2 ? 0.9 : 0.1, 0, Gender::M, Race::W));
        recs.push_back(rec("fb" + std::to_string(i), i < 4 ? 0.9 : 0.1, 0, Gender::F, Race::B));
    }
    const double overall = 6.0 / 20.0;
    const double want = std::abs(2.0 / 10.0 - overall) + std::abs(4.0 / 10.0 - overall);
    CHECK(same_bits(metrics::f_fpr(recs, 0.5), want));
    CHECK(metrics::f_fpr(recs, 0.5) == doctest::Approx(0.2));

    // Fakes never enter false-positive rates.
    auto with_fakes = recs;
    with_fakes.push_back(rec("k0", 0.99, 1, Gender::M, Race::W));
    with_fakes.push_back(rec("k1", 0.01, 1, Gender::F, Race::B));
    CHECK(same_bits(metrics::f_fpr(with_fakes, 0.5), metrics::f_fpr(recs, 0.5)));
}

TEST_CASE("f_mag auc gap on three groups with pinned pairwise counts") {
    std::vector<PredictionRecord> recs;
    const auto add_group = [&](Gender g, Race r, const std::vector<double>& pos) {
        static int id = 0;
        for (int k = 1; k <= 10; ++k)
            recs.push_back(rec("n" + std::to_string(id++), double(k) / 100.0, 0, g, r));
        for (const double p : pos)
            recs.push_back(rec("p" + std::to_string(id++), p, 1, g, r));
    };
    add_group(Gender::M, Race::W, {0.50, 0.095});               // 19 of 20 wins -> 0.95
    add_group(Gender::M, Race::B, {0.50, 0.085});               // 18 of 20 wins -> 0.90
    add_group(Gender::F, Race::W, {0.50, 0.45, 0.40, 0.095, 0.075});  // 46 of 50 -> 0.92

    const double a1 = double(2 * 19) / double(2 * 2 * 10);
    const double a2 = double(2 * 18) / double(2 * 2 * 10);
    const double a3 = double(2 * 46) / double(2 * 5 * 10);
    CHECK(a1 == doctest::Approx(0.95));
    CHECK(a2 == doctest::Approx(0.90));
    CHECK(a3 == doctest::Approx(0.92));
    CHECK(same_bits(metrics::f_mag(recs, MagVariant::auc, 0.5), a1 - a2));
    CHECK(metrics::f_mag(recs, MagVariant::auc, 0.5) == doctest::Approx(0.05));
}

TEST_CASE("f_mag acc variant keeps single-class groups") {
    std::vector<PredictionRecord> recs;
    // M-W: 4 records all classified correctly.
    recs.push_back(rec("a0", 0.9, 1, Gender::M, Race::W));
    recs.push_back(rec("a1", 0.8, 1, Gender::M, Race::W));
    recs.push_back(rec("a2", 0.1, 0, Gender::M, Race::W));
    recs.push_back(rec("a3", 0.2, 0, Gender::M, Race::W));
    // M-B: 3 of 4 correct.
    recs.push_back(rec("b0", 0.9, 1, Gender::M, Race::B));
    recs.push_back(rec("b1", 0.2, 1, Gender::M, Race::B));
    recs.push_back(rec("b2", 0.1, 0, Gender::M, Race::B));
    recs.push_back(rec("b3", 0.3, 0, Gender::M, Race::B));
    // F-W: reals only, all correct; excluded by the auc variant but not acc.
    recs.push_back(rec("c0", 0.1, 0, Gender::F, Race::W));
    recs.push_back(rec("c1", 0.2, 0, Gender::F, Race::W));

    CHECK(metrics::f_mag(recs, MagVariant::acc, 0.5) == 0.25);

    std::vector<std::string> excluded;
    (void)metrics::f_mag(recs, MagVariant::auc, 0.5, GroupBy::subgroup, &excluded);
    CHECK(excluded == std::vector<std::string>{"F-W"});
}

TEST_CASE("f_meo equals the worst per-class rate gap") {
    // M-W: TPR 0.9, FPR 0.1. F-B: TPR 0.7, FPR 0.1.
    std::vector<PredictionRecord> recs;
    for (int i = 0; i < 10; ++i) {
        recs.push_back(rec("af" + std::to_string(i), i < 9 ? 0.9 : 0.1, 1, Gender::M, Race::W));
        recs.push_back(rec("ar" + std::to_string(i), i < 1 ? 0.9 : 0.1, 0, Gender::M, Race::W));
        recs.push_back(rec("bf" + std::to_string(i), i < 7 ? 0.9 : 0.1, 1, Gender::F, Race::B));
        recs.push_back(rec("br" + std::to_string(i), i < 1 ? 0.9 : 0.1, 0, Gender::F, Race::B));
    }
    const double want = 9.0 / 10.0 - 7.0 / 10.0;
    CHECK(same_bits(metrics::f_meo(recs, 0.5), want));
    CHECK(metrics::f_meo(recs, 0.5) == doctest::Approx(0.2));
}

TEST_CASE("one group means zero unfairness for every metric") {
    const std::vector<DemographicKey> keys = {{Gender::F, Race::O}};
    const auto recs = random_records(31, 60, keys);
    CHECK(metrics::f_fpr(recs, 0.5) == 0.0);
    CHECK(metrics::f_mag(recs, MagVariant::auc, 0.5) == 0.0);
    CHECK(metrics::f_mag(recs, MagVariant::acc, 0.5) == 0.0);
    CHECK(metrics::f_meo(recs, 0.5) == 0.0);
}

TEST_CASE("fairness metrics depend on the partition, not the labels") {
    const std::vector<DemographicKey> keys = {
        {Gender::M, Race::W}, {Gender::M, Race::B}, {Gender::F, Race::A}};
    auto recs = random_records(404, 120, keys);
    const double fpr0 = metrics::f_fpr(recs, 0.5);
    const double mag0 = metrics::f_mag(recs, MagVariant::auc, 0.5);
    const double meo0 = metrics::f_meo(recs, 0.5);

    const auto relabel = [](DemographicKey k) -> DemographicKey {
        if (k == DemographicKey{Gender::M, Race::W}) return {Gender::F, Race::O};
        if (k == DemographicKey{Gender::M, Race::B}) return {Gender::M, Race::A};
        return {Gender::F, Race::W};
    };
    for (auto& r : recs) r.subgroup = relabel(r.subgroup);

    CHECK(metrics::f_fpr(recs, 0.5) == doctest::Approx(fpr0).epsilon(1e-12));
    CHECK(same_bits(metrics::f_mag(recs, MagVariant::auc, 0.5), mag0));
    CHECK(same_bits(metrics::f_meo(recs, 0.5), meo0));
}

TEST_CASE("subgroup report fields match direct recomputation") {
    const std::vector<DemographicKey> keys = {{Gender::M, Race::W},
                                              {Gender::M, Race::B},
                                              {Gender::F, Race::W},
                                              {Gender::F, Race::B}};
    const auto recs = random_records(2024, 200, keys);
    const auto rep = metrics::subgroup_report(recs, 0.5);

    CHECK(rep.threshold == 0.5);
    CHECK(rep.group_by == GroupBy::subgroup);
    CHECK(rep.per_group.size() == 4);
    CHECK(rep.exclusions.empty());

    int n_real = 0, n_fake = 0, correct = 0, fp = 0;
    for (const auto& r : recs) {
        const bool pred = metrics::predicted_fake(r.score, 0.5);
        (r.label == 1 ? n_fake : n_real)++;
        if (int(pred) == r.label) ++correct;
        if (r.label == 0 && pred) ++fp;
    }
    CHECK(rep.overall.n_real == n_real);
    CHECK(rep.overall.n_fake == n_fake);
    CHECK(rep.overall.acc == double(correct) / 200.0);
    REQUIRE(rep.overall.fpr.has_value());
    CHECK(*rep.overall.fpr == double(fp) / double(n_real));
    std::vector<double> neg, pos;
    split_scores(recs, neg, pos);
    REQUIRE(rep.overall.auc.has_value());
    CHECK(same_bits(*rep.overall.auc, testsup::oracle_auc(neg, pos)));

    for (const auto& key : keys) {
        std::vector<PredictionRecord> sub;
        for (const auto& r : recs)
            if (r.subgroup == key) sub.push_back(r);
        const auto& gm = rep.per_group.at(data::format_key(key));
        int gr = 0, gf = 0, gc = 0, gfp = 0;
        for (const auto& r : sub) {
            const bool pred = metrics::predicted_fake(r.score, 0.5);
            (r.label == 1 ? gf : gr)++;
            if (int(pred) == r.label) ++gc;
            if (r.label == 0 && pred) ++gfp;
        }
        CHECK(gm.n_real == gr);
        CHECK(gm.n_fake == gf);
        CHECK(gm.acc == double(gc) / double(sub.size()));
        REQUIRE(gm.fpr.has_value());
        CHECK(*gm.fpr == double(gfp) / double(gr));
        split_scores(sub, neg, pos);
        REQUIRE(gm.auc.has_value());
        CHECK(same_bits(*gm.auc, testsup::oracle_auc(neg, pos)));
    }

    CHECK(same_bits(rep.fairness.f_fpr, metrics::f_fpr(recs, 0.5)));
    CHECK(same_bits(rep.fairness.f_mag_auc, metrics::f_mag(recs, MagVariant::auc, 0.5)));
    CHECK(same_bits(rep.fairness.f_mag_acc, metrics::f_mag(recs, MagVariant::acc, 0.5)));
    CHECK(same_bits(rep.fairness.f_meo, metrics::f_meo(recs, 0.5)));
}

TEST_CASE("method grouping copies every real into each method group") {
    std::vector<PredictionRecord> recs;
    rng::Stream s(512);
    for (int i = 0; i < 30; ++i)
        recs.push_back(rec("r" + std::to_string(i), s.uniform(0.0, 0.5), 0,
                           i % 2 ? Gender::M : Gender::F, Race::W));
    const auto add_fakes = [&](Method m, int n) {
        for (int i = 0; i < n; ++i)
            recs.push_back(rec(data::to_string(m) + std::to_string(i), s.uniform(0.5, 1.0),
                               1, Gender::M, Race::B, m));
    };
    add_fakes(Method::DF, 10);
    add_fakes(Method::F2F, 10);
    add_fakes(Method::NT, 5);

    const auto rep = metrics::subgroup_report(recs, 0.5, GroupBy::method);
    REQUIRE(rep.per_group.size() == 3);
    CHECK(rep.per_group.at(data::to_string(Method::DF)).n_real == 30);
    CHECK(rep.per_group.at(data::to_string(Method::F2F)).n_real == 30);
    CHECK(rep.per_group.at(data::to_string(Method::NT)).n_real == 30);
    CHECK(rep.per_group.at(data::to_string(Method::DF)).n_fake == 10);
    CHECK(rep.per_group.at(data::to_string(Method::F2F)).n_fake == 10);
    CHECK(rep.per_group.at(data::to_string(Method::NT)).n_fake == 5);

    auto bad = recs;
    bad.push_back(rec("orphan", 0.9, 1, Gender::M, Race::W));
    bad.back().method.reset();
    CHECK_THROWS_AS((void)metrics::f_meo(bad, 0.5, GroupBy::method), DataError);
}

TEST_CASE("incomplete groups are excluded and reported by name") {
    std::vector<PredictionRecord> recs;
    // M-W: complete. M-B: fakes only. F-W: reals only.
    recs.push_back(rec("a0", 0.9, 1, Gender::M, Race::W));
    recs.push_back(rec("a1", 0.8, 1, Gender::M, Race::W));
    recs.push_back(rec("a2", 0.6, 0, Gender::M, Race::W));
    recs.push_back(rec("a3", 0.1, 0, Gender::M, Race::W));
    recs.push_back(rec("b0", 0.7, 1, Gender::M, Race::B));
    recs.push_back(rec("b1", 0.9, 1, Gender::M, Race::B));
    recs.push_back(rec("c0", 0.2, 0, Gender::F, Race::W));
    recs.push_back(rec("c1", 0.3, 0, Gender::F, Race::W));

    std::vector<std::string> excluded;
    const double overall_fpr = 1.0 / 4.0;  // a2 crosses 0.5, the three others do not
    const double want_fpr = std::abs(1.0 / 2.0 - overall_fpr) + std::abs(0.0 - overall_fpr);
    CHECK(same_bits(metrics::f_fpr(recs, 0.5, GroupBy::subgroup, &excluded), want_fpr));
    CHECK(excluded == std::vector<std::string>{"M-B"});

    excluded.clear();
    CHECK(metrics::f_mag(recs, MagVariant::auc, 0.5, GroupBy::subgroup, &excluded) == 0.0);
    std::sort(excluded.begin(), excluded.end());
    CHECK(excluded == std::vector<std::string>{"F-W", "M-B"});

    excluded.clear();
    CHECK(metrics::f_meo(recs, 0.5, GroupBy::subgroup, &excluded) == 0.0);
    CHECK(excluded.size() == 2);

    const auto rep = metrics::subgroup_report(recs, 0.5);
    CHECK(rep.per_group.size() == 3);
    CHECK_FALSE(rep.per_group.at("M-B").auc.has_value());
    CHECK_FALSE(rep.per_group.at("M-B").fpr.has_value());
    CHECK_FALSE(rep.per_group.at("F-W").auc.has_value());
    CHECK(rep.per_group.at("F-W").fpr.has_value());
    CHECK(rep.exclusions.at("f_fpr") == std::vector<std::string>{"M-B"});
    CHECK(rep.exclusions.at("f_mag_auc").size() == 2);
    CHECK(rep.exclusions.count("f_mag_acc") == 0);
}

TEST_CASE("degenerate inputs raise the contracted errors") {
    std::vector<PredictionRecord> fakes_only = {rec("x", 0.7, 1, Gender::M, Race::W),
                                                rec("y", 0.6, 1, Gender::F, Race::B)};
    CHECK_THROWS_AS((void)metrics::f_fpr(fakes_only, 0.5), metrics::NoRealSamples);

    // One group holds only fakes, the other only reals: nothing supports an
    // AUC gap or an odds comparison.
    std::vector<PredictionRecord> split_classes = {
        rec("x", 0.7, 1, Gender::M, Race::W), rec("y", 0.6, 1, Gender::M, Race::W),
        rec("u", 0.2, 0, Gender::F, Race::B), rec("v", 0.1, 0, Gender::F, Race::B)};
    CHECK_THROWS_AS((void)metrics::f_mag(split_classes, MagVariant::auc, 0.5),
                    metrics::FewerThanTwoGroups);
    CHECK_THROWS_AS((void)metrics::f_meo(split_classes, 0.5), metrics::NoValidGroupPair);

    CHECK_THROWS_AS((void)metrics::subgroup_report(std::vector<PredictionRecord>{}, 0.5),
                    DataError);

    CHECK(metrics::parse_group_by("subgroup") == GroupBy::subgroup);
    CHECK(metrics::parse_group_by("method") == GroupBy::method);
    CHECK(metrics::to_string(GroupBy::method) == "method");
    CHECK_THROWS_AS((void)metrics::parse_group_by("banana"), ConfigError);
}

TEST_CASE("robustness delta is perturbed minus clean, field by field") {
    metrics::MetricsReport clean, perturbed;
    clean.overall.auc = 0.93;
    clean.fairness.f_fpr = 0.10;
    clean.fairness.f_mag_auc = 0.04;
    perturbed.overall.auc = 0.88;
    perturbed.fairness.f_fpr = 0.25;
    perturbed.fairness.f_mag_auc = 0.07;

    const auto d = metrics::robustness_delta(clean, perturbed);
    CHECK(same_bits(d.delta_f_fpr, 0.25 - 0.10));
    CHECK(same_bits(d.delta_f_mag, 0.07 - 0.04));
    CHECK(same_bits(d.delta_auc, 0.88 - 0.93));
    CHECK(d.delta_f_fpr == doctest::Approx(0.15));

    const auto zero = metrics::robustness_delta(clean, clean);
    CHECK(zero.delta_f_fpr == 0.0);
    CHECK(zero.delta_f_mag == 0.0);
    CHECK(zero.delta_auc == 0.0);

    auto wrong_group = perturbed;
    wrong_group.group_by = GroupBy::method;
    CHECK_THROWS_AS((void)metrics::robustness_delta(clean, wrong_group),
                    metrics::MismatchedReports);
    auto wrong_thr = perturbed;
    wrong_thr.threshold = 0.6;
    CHECK_THROWS_AS((void)metrics::robustness_delta(clean, wrong_thr),
                    metrics::MismatchedReports);
    auto no_auc = perturbed;
    no_auc.overall.auc.reset();
    CHECK_THROWS_AS((void)metrics::robustness_delta(clean, no_auc),
                    metrics::MismatchedReports);
}

TEST_CASE("robustness delta from end-to-end reports") {
    const std::vector<DemographicKey> keys = {{Gender::M, Race::W}, {Gender::F, Race::B}};
    const auto clean_recs = random_records(11, 90, keys);
    const auto pert_recs = random_records(12, 90, keys);
    const auto clean = metrics::subgroup_report(clean_recs, 0.5);
    const auto pert = metrics::subgroup_report(pert_recs, 0.5);
    const auto d = metrics::robustness_delta(clean, pert);
    CHECK(same_bits(d.delta_f_fpr, pert.fairness.f_fpr - clean.fairness.f_fpr));
    CHECK(same_bits(d.delta_f_mag, pert.fairness.f_mag_auc - clean.fairness.f_mag_auc));
    CHECK(same_bits(d.delta_auc, *pert.overall.auc - *clean.overall.auc));

    const auto self = metrics::robustness_delta(clean, clean);
    CHECK(self.delta_auc == 0.0);
}

TEST_CASE("prediction csv round-trips scores bit for bit") {
    testsup::TempDir dir("pred");
    std::vector<PredictionRecord> recs = {
        rec("awkward0", 1.0 / 3.0, 1, Gender::M, Race::W, Method::F2F),
        rec("awkward1", 0.1 + 0.2, 0, Gender::F, Race::B),
        rec("awkward2", std::nextafter(0.5, 0.0), 1, Gender::M, Race::A, Method::SYNTH),
        rec("awkward3", 1e-17, 0, Gender::F, Race::O),
        rec("awkward4", 5e-324, 1, Gender::M, Race::B, Method::FST)};
    rng::Stream s(3000);
    for (int i = 0; i < 50; ++i)
        recs.push_back(rec("r" + std::to_string(i), s.uniform(), i % 2,
                           i % 4 < 2 ? Gender::M : Gender::F, Race::W));

    const auto path = dir.path() / "preds.csv";
    metrics::write_predictions(path, recs);
    const auto back = metrics::read_predictions(path);
    REQUIRE(back.size() == recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
        CHECK(back[i].sample_id == recs[i].sample_id);
        CHECK(same_bits(back[i].score, recs[i].score));
        CHECK(back[i].label == recs[i].label);
        CHECK(back[i].subgroup == recs[i].subgroup);
        CHECK(back[i].method == recs[i].method);
    }
}

TEST_CASE("prediction csv reader rejects malformed rows") {
    testsup::TempDir dir("predbad");
    const auto write = [&](const std::string& name, const std::string& body) {
        std::ofstream out(dir.path() / name);
        out << body;
        return dir.path() / name;
    };
    const std::string hdr = "sample_id,score,label,gender,race,method\n";
    CHECK_THROWS_AS((void)metrics::read_predictions(write("h.csv", "id,score\n")),
                    DataError);
    CHECK_THROWS_AS(
        (void)metrics::read_predictions(write("c.csv", hdr + "a,0.5,1,M,W\n")),
        DataError);
    CHECK_THROWS_AS(
        (void)metrics::read_predictions(write("s.csv", hdr + "a,xyz,1,M,W,DF\n")),
        DataError);
    CHECK_THROWS_AS(
        (void)metrics::read_predictions(write("l.csv", hdr + "a,0.5,2,M,W,DF\n")),
        DataError);
    CHECK_THROWS_AS(
        (void)metrics::read_predictions(write("m.csv", hdr + "a,0.5,1,M,W,\n")),
        DataError);
    CHECK_THROWS_AS(
        (void)metrics::read_predictions(write("rm.csv", hdr + "a,0.5,0,M,W,DF\n")),
        DataError);
    CHECK_THROWS_AS((void)metrics::read_predictions(dir.path() / "absent.csv"), DataError);
}

TEST_CASE("report writers emit the documented layout") {
    std::vector<PredictionRecord> recs;
    recs.push_back(rec("a0", 0.9, 1, Gender::M, Race::W));
    recs.push_back(rec("a1", 0.8, 1, Gender::M, Race::W));
    recs.push_back(rec("a2", 0.6, 0, Gender::M, Race::W));
    recs.push_back(rec("a3", 0.1, 0, Gender::M, Race::W));
    recs.push_back(rec("b0", 1.0 / 3.0, 0, Gender::F, Race::B));
    recs.push_back(rec("b1", 0.7, 1, Gender::F, Race::B));
    recs.push_back(rec("c0", 0.4, 1, Gender::F, Race::O));  // fakes only
    const auto rep = metrics::subgroup_report(recs, 0.5);

    const auto j = nlohmann::json::parse(metrics::report_to_json(rep));
    CHECK(j["threshold"].get<double>() == 0.5);
    CHECK(j["group_by"].get<std::string>() == "subgroup");
    CHECK(j["per_group"].size() == 3);
    CHECK(j["per_group"]["M-W"]["n_real"].get<int>() == 2);
    CHECK(j["per_group"]["F-O"]["auc"].is_null());
    CHECK(j["per_group"]["F-O"]["fpr"].is_null());
    CHECK(same_bits(j["per_group"]["M-W"]["auc"].get<double>(), *rep.per_group.at("M-W").auc));
    CHECK(same_bits(j["fairness"]["f_fpr"].get<double>(), rep.fairness.f_fpr));
    CHECK(j["exclusions"]["f_fpr"].get<std::vector<std::string>>() ==
          std::vector<std::string>{"F-O"});

    testsup::TempDir dir("report");
    metrics::write_report_json(dir.path() / "rep.json", rep);
    std::ifstream jin(dir.path() / "rep.json");
    const auto j2 = nlohmann::json::parse(jin);
    CHECK(j2 == j);

    metrics::write_report_csv(dir.path() / "rep.csv", rep);
    std::ifstream cin_(dir.path() / "rep.csv");
    std::vector<std::string> lines;
    for (std::string line; std::getline(cin_, line);) lines.push_back(line);
    REQUIRE(lines.size() == 5);  // header + overall + 3 groups
    CHECK(lines[0] == "group,n_real,n_fake,auc,acc,fpr");
    CHECK(lines[1].rfind("overall,3,4,", 0) == 0);
    // Missing metrics serialize as empty cells.
    bool saw_fo = false;
    for (const auto& line : lines)
        if (line.rfind("F-O,", 0) == 0) {
            saw_fo = true;
            CHECK(line == "F-O,0,1,,0,");
        }
    CHECK(saw_fo);
}

TEST_CASE("report JSON round-trips through the strict reader") {
    const std::vector<DemographicKey> keys = {{Gender::M, Race::W},
                                             {Gender::F, Race::B},
                                             {Gender::F, Race::A}};
    auto recs = random_records(7, 200, keys);
    auto rep = metrics::subgroup_report(recs, 0.5);
    rep.dataset = "synth-demo";
    rep.disturbance = "GB:3";

    const auto back = metrics::report_from_json(metrics::report_to_json(rep));
    CHECK(back.dataset == rep.dataset);
    CHECK(back.disturbance == rep.disturbance);
    CHECK(same_bits(back.threshold, rep.threshold));
    CHECK(back.group_by == rep.group_by);
    CHECK(back.exclusions == rep.exclusions);
    const auto check_group = [](const metrics::GroupMetrics& a,
                                const metrics::GroupMetrics& b) {
        CHECK(a.auc.has_value() == b.auc.has_value());
        if (a.auc) CHECK(same_bits(*a.auc, *b.auc));
        CHECK(same_bits(a.acc, b.acc));
        CHECK(a.fpr.has_value() == b.fpr.has_value());
        if (a.fpr) CHECK(same_bits(*a.fpr, *b.fpr));
        CHECK(a.n_real == b.n_real);
        CHECK(a.n_fake == b.n_fake);
    };
    check_group(back.overall, rep.overall);
    REQUIRE(back.per_group.size() == rep.per_group.size());
    for (const auto& [key, gm] : rep.per_group) check_group(back.per_group.at(key), gm);
    CHECK(same_bits(back.fairness.f_fpr, rep.fairness.f_fpr));
    CHECK(same_bits(back.fairness.f_mag_auc, rep.fairness.f_mag_auc));
    CHECK(same_bits(back.fairness.f_mag_acc, rep.fairness.f_mag_acc));
    CHECK(same_bits(back.fairness.f_meo, rep.fairness.f_meo));

    testsup::TempDir dir("repio");
    metrics::write_report_json(dir.path() / "r.json", rep);
    const auto from_file = metrics::read_report_json(dir.path() / "r.json");
    CHECK(metrics::report_to_json(from_file) == metrics::report_to_json(rep));
}

TEST_CASE("the report reader rejects malformed input") {
    const std::vector<DemographicKey> keys = {{Gender::M, Race::W},
                                             {Gender::F, Race::B}};
    auto rep = metrics::subgroup_report(random_records(3, 40, keys), 0.5);
    const auto good = nlohmann::json::parse(metrics::report_to_json(rep));

    CHECK_THROWS_AS((void)metrics::report_from_json("not json"), DataError);
    CHECK_THROWS_AS((void)metrics::report_from_json("[1,2]"), DataError);

    auto extra = good;
    extra["surprise"] = 1;
    CHECK_THROWS_AS((void)metrics::report_from_json(extra.dump()), DataError);

    auto missing = good;
    missing.erase("fairness");
    CHECK_THROWS_AS((void)metrics::report_from_json(missing.dump()), DataError);

    auto badgroup = good;
    badgroup["overall"].erase("acc");
    CHECK_THROWS_AS((void)metrics::report_from_json(badgroup.dump()), DataError);

    auto badtype = good;
    badtype["threshold"] = "high";
    CHECK_THROWS_AS((void)metrics::report_from_json(badtype.dump()), DataError);

    CHECK_THROWS_AS((void)metrics::read_report_json("/no/such/report.json"), DataError);
}
