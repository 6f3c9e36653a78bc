#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "mislead/digest.hpp"
#include "mislead/library.hpp"
#include "mislead/metrics.hpp"
#include "mislead/srm.hpp"
#include "mislead/synthgen.hpp"
#include "mislead/trainer.hpp"
#include "support/helpers.hpp"

using namespace mislead;
using data::Gender;
using data::Race;
using train::TrainConfig;

namespace {

bool same_bits(double a, double b) {
    return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

// Shared 2-subgroup dataset: 32px, strong fingerprint, 48/16/16 split.
const data::DatasetManifest& manifest32() {
    static testsup::TempDir dir("trainds");
    static data::DatasetManifest m = [] {
        synth::SynthConfig sc;
        sc.image_size = 32;
        sc.n_per_split = {{data::Split::train, 48},
                          {data::Split::val, 16},
                          {data::Split::test, 16}};
        sc.subgroup_proportions = {{{Gender::M, Race::W}, 0.5},
                                   {{Gender::F, Race::B}, 0.5}};
        sc.fingerprint_strength = 0.3;
        sc.seed = 9;
        return synth::generate_dataset(sc, dir.path() / "ds");
    }();
    return m;
}

TrainConfig base_cfg() {
    TrainConfig cfg;
    cfg.model.input_size = 32;
    cfg.model.feature_dim = 8;
    cfg.model.dsub_widths = {4, 8};
    cfg.model.daux_widths = {4};
    cfg.model.scam_stages = {1};
    cfg.model.seed = 21;
    cfg.batch_size = 8;
    cfg.epochs_pretrain = 2;
    cfg.epochs_misleading = 2;
    cfg.augment = false;  // structural tests want the raw pipeline
    // Unit vectors are at most 2 apart, so this margin keeps the hinge
    // active and the contrastive path exercised.
    cfg.weights.margin = 2.0;
    return cfg;
}

const train::TrainResult& base_pretrain() {
    static train::TrainResult r = train::pretrain_dsub(base_cfg(), manifest32());
    return r;
}

const train::TrainResult& base_mislead() {
    static train::TrainResult r =
        train::misleading_train(base_cfg(), manifest32(), base_pretrain().checkpoint);
    return r;
}

int count_split(const data::DatasetManifest& m, data::Split split,
                std::optional<data::Label> label = {}) {
    int n = 0;
    for (const auto& e : m.entries)
        if (e.split == split && (!label || e.label == *label)) ++n;
    return n;
}

std::map<std::string, data::DemographicKey> subgroup_of(const data::DatasetManifest& m) {
    std::map<std::string, data::DemographicKey> out;
    for (const auto& e : m.entries) out.emplace(e.id, e.subgroup);
    return out;
}

}  // namespace

TEST_CASE("config validation rejects out-of-contract values") {
    auto cfg = base_cfg();
    CHECK_NOTHROW(train::validate(cfg));
    cfg.batch_size = 1;
    CHECK_THROWS_AS(train::validate(cfg), ConfigError);
    cfg = base_cfg();
    cfg.lr = 0.0;
    CHECK_THROWS_AS(train::validate(cfg), ConfigError);
    cfg = base_cfg();
    cfg.epochs_misleading = -1;
    CHECK_THROWS_AS(train::validate(cfg), ConfigError);
    cfg = base_cfg();
    cfg.lambda_srm = -1e-4;
    CHECK_THROWS_AS(train::validate(cfg), ConfigError);
    cfg = base_cfg();
    cfg.weights.alpha = -0.1;
    CHECK_THROWS_AS(train::validate(cfg), ConfigError);
}

TEST_CASE("config json round-trips and rejects unknown keys") {
    TrainConfig cfg;
    cfg.model.preprocess = srm::Preprocess::dct;
    cfg.model.input_size = 48;
    cfg.model.feature_dim = 16;
    cfg.model.dsub_widths = {4, 8, 16};
    cfg.model.daux_widths = {4};
    cfg.model.scam_stages = {0, 2};
    cfg.model.use_scam = false;
    cfg.model.truncate_residual = false;
    cfg.model.seed = 12345678901234567ULL;
    cfg.model.ered_seed = 42;
    cfg.lr = 0.25;
    cfg.batch_size = 4;
    cfg.epochs_pretrain = 7;
    cfg.epochs_misleading = 9;
    cfg.weights = {0.5, 2.0, 0.125};
    cfg.lambda_srm = 0.5;
    cfg.use_bias_sampling = false;
    cfg.use_contrastive = false;
    cfg.paired_reals = true;
    cfg.augment = false;

    const auto text = train::config_to_json_text(cfg);
    CHECK(train::config_from_json_text(text) == cfg);

    CHECK(train::config_from_json_text("{\"lr\": 0.5}").lr == 0.5);
    CHECK(train::config_from_json_text("{}") == TrainConfig{});
    CHECK_THROWS_AS((void)train::config_from_json_text("{\"zzz\": 1}"), ConfigError);
    CHECK_THROWS_AS((void)train::config_from_json_text("{\"model\": {\"bogus\": 1}}"),
                    ConfigError);
    CHECK_THROWS_AS((void)train::config_from_json_text("{\"weights\": {\"gamma\": 1}}"),
                    ConfigError);
    CHECK_THROWS_AS((void)train::config_from_json_text("not json"), ConfigError);
    CHECK_THROWS_AS((void)train::config_from_json_text("{\"lr\": \"fast\"}"),
                    ConfigError);
}

TEST_CASE("zero pretrain epochs returns the initialization") {
    auto cfg = base_cfg();
    cfg.epochs_pretrain = 0;
    const auto res = train::pretrain_dsub(cfg, manifest32());
    CHECK(res.checkpoint.stage == train::kStagePretrain);
    CHECK(res.checkpoint.epoch == 0);
    CHECK(res.log.empty());

    const auto fresh = model::build_model(cfg.model);
    CHECK(res.checkpoint.trainable == fresh.trainable.data);
    CHECK(res.checkpoint.frozen == fresh.frozen.data);
    CHECK(res.checkpoint.bank == fresh.bank.kernels);
}

TEST_CASE("pretraining touches only the subtle extractor and its head") {
    const auto& res = base_pretrain();
    const auto fresh = model::build_model(base_cfg().model);
    const auto trained = train::restore(res.checkpoint);

    const auto range_equal = [&](std::size_t b, std::size_t e) {
        return std::equal(trained.trainable.data.begin() + long(b),
                          trained.trainable.data.begin() + long(e),
                          fresh.trainable.data.begin() + long(b));
    };
    CHECK_FALSE(range_equal(trained.dsub->param_begin(), trained.dsub->param_end()));
    CHECK(range_equal(trained.daux->param_begin(), trained.daux->param_end()));
    // Subtle head weights sit right after the fusion stages; the fused head is
    // the final segment. Locate both by name.
    const auto* hs = trained.trainable.find("head_sub.w");
    const auto* hf = trained.trainable.find("head_fused.w");
    REQUIRE(hs != nullptr);
    REQUIRE(hf != nullptr);
    CHECK_FALSE(range_equal(hs->offset, hs->offset + hs->count));
    CHECK(range_equal(hf->offset, hf->offset + hf->count));
    CHECK(res.checkpoint.bank == fresh.bank.kernels);
    CHECK(res.checkpoint.frozen == fresh.frozen.data);
}

TEST_CASE("pretraining is deterministic and learns the planted signal") {
    const auto& res = base_pretrain();
    const auto res2 = train::pretrain_dsub(base_cfg(), manifest32());
    CHECK(res.checkpoint.trainable_digest == res2.checkpoint.trainable_digest);
    CHECK(res.checkpoint.bank_digest == res2.checkpoint.bank_digest);
    REQUIRE(res.log.size() == res2.log.size());
    for (std::size_t i = 0; i < res.log.size(); ++i)
        CHECK(same_bits(res.log[i].total, res2.log[i].total));

    const auto preds =
        train::run_inference(res.checkpoint, manifest32(), data::Split::val);
    CHECK(int(preds.size()) == count_split(manifest32(), data::Split::val));
    CHECK(metrics::roc_auc(preds) >= 0.95);
}

TEST_CASE("pretrain log rows keep the bookkeeping identity") {
    const auto& res = base_pretrain();
    const auto cfg = base_cfg();
    // 48 samples, batch 8, 2 epochs.
    REQUIRE(res.log.size() == 12);
    long want_step = 1;
    for (const auto& row : res.log) {
        CHECK(row.step == want_step++);
        CHECK(row.l_con == 0.0);
        CHECK(row.l_final == 0.0);
        CHECK(same_bits(row.total, losses::total_misleading_loss(
                                       row.l_cls, row.l_con, row.l_final, cfg.weights)));
    }
    CHECK(res.log.front().epoch == 1);
    CHECK(res.log.back().epoch == 2);
    CHECK(res.pairings.empty());
}

TEST_CASE("checkpoints round-trip bit for bit and verify digests") {
    testsup::TempDir dir("ckpt");
    const auto& ck = base_pretrain().checkpoint;
    const auto path = dir.path() / "pre.ckpt";
    train::save_checkpoint(path, ck);
    const auto back = train::load_checkpoint(path);
    CHECK(back.cfg == ck.cfg);
    CHECK(back.stage == ck.stage);
    CHECK(back.epoch == ck.epoch);
    CHECK(back.trainable == ck.trainable);
    CHECK(back.frozen == ck.frozen);
    CHECK(back.bank == ck.bank);
    CHECK(back.trainable_digest == ck.trainable_digest);

    const auto before = train::run_inference(ck, manifest32(), data::Split::test);
    const auto after = train::run_inference(back, manifest32(), data::Split::test);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(same_bits(before[i].score, after[i].score));

    // Flip one parameter byte: the digest check must catch it.
    auto bytes = [&] {
        std::ifstream in(path, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    }();
    const auto header_end = bytes.find('\n');
    REQUIRE(header_end != std::string::npos);
    bytes[header_end + 100] ^= 0x40;
    {
        std::ofstream out(dir.path() / "bad.ckpt", std::ios::binary);
        out << bytes;
    }
    CHECK_THROWS_AS((void)train::load_checkpoint(dir.path() / "bad.ckpt"),
                    train::CheckpointError);
    {
        std::ofstream out(dir.path() / "short.ckpt", std::ios::binary);
        out << bytes.substr(0, bytes.size() / 2);
    }
    CHECK_THROWS_AS((void)train::load_checkpoint(dir.path() / "short.ckpt"),
                    train::CheckpointError);
    {
        std::ifstream in(path, std::ios::binary);
        std::ofstream out(dir.path() / "long.ckpt", std::ios::binary);
        out << in.rdbuf() << "extra";
    }
    CHECK_THROWS_AS((void)train::load_checkpoint(dir.path() / "long.ckpt"),
                    train::CheckpointError);
    CHECK_THROWS_AS((void)train::load_checkpoint(dir.path() / "absent.ckpt"),
                    train::CheckpointError);
}

TEST_CASE("misleading training honors the frozen and pairing contracts") {
    const auto& res = base_mislead();
    const auto& pre = base_pretrain();
    CHECK(res.checkpoint.stage == train::kStageMisleading);
    CHECK(res.checkpoint.epoch == 2);
    CHECK(res.checkpoint.frozen_digest == pre.checkpoint.frozen_digest);
    CHECK(res.checkpoint.frozen == pre.checkpoint.frozen);

    const int n_fake = count_split(manifest32(), data::Split::train, data::Label::fake);
    CHECK(res.pairings.size() == std::size_t(2 * n_fake));
    const auto sub = subgroup_of(manifest32());
    for (const auto& [query, partner] : res.pairings)
        CHECK(sub.at(query) != sub.at(partner));

    // The bank must have drifted away from initialization.
    CHECK(res.checkpoint.bank != srm::init_kernel_bank().kernels);

    REQUIRE(res.log.size() == 12);
    const auto cfg = base_cfg();
    bool saw_con = false;
    for (const auto& row : res.log) {
        CHECK(same_bits(row.total, losses::total_misleading_loss(
                                       row.l_cls, row.l_con, row.l_final, cfg.weights)));
        if (row.l_con != 0.0) saw_con = true;
    }
    CHECK(saw_con);
}

TEST_CASE("misleading training is deterministic") {
    const auto& res = base_mislead();
    const auto res2 =
        train::misleading_train(base_cfg(), manifest32(), base_pretrain().checkpoint);
    CHECK(res.checkpoint.trainable_digest == res2.checkpoint.trainable_digest);
    CHECK(res.checkpoint.bank_digest == res2.checkpoint.bank_digest);
    CHECK(res.pairings == res2.pairings);
}

TEST_CASE("misleading training rejects wrong starts") {
    CHECK_THROWS_AS((void)train::misleading_train(base_cfg(), manifest32(),
                                                  base_mislead().checkpoint),
                    train::CheckpointError);
    auto cfg = base_cfg();
    cfg.model.seed = 99;
    CHECK_THROWS_AS(
        (void)train::misleading_train(cfg, manifest32(), base_pretrain().checkpoint),
        train::CheckpointError);
}

TEST_CASE("contrastive ablation logs zero l_con and changes nothing else structurally") {
    auto cfg = base_cfg();
    cfg.use_contrastive = false;
    cfg.epochs_misleading = 1;
    const auto res = train::misleading_train(cfg, manifest32(), base_pretrain().checkpoint);
    for (const auto& row : res.log) {
        CHECK(row.l_con == 0.0);
        CHECK(same_bits(row.total,
                        row.l_cls + cfg.weights.beta * row.l_final));
    }
    CHECK_FALSE(res.pairings.empty());
}

TEST_CASE("fixed-filter mode never updates the bank") {
    auto cfg = base_cfg();
    cfg.model.preprocess = srm::Preprocess::srm_fixed;
    cfg.epochs_pretrain = 1;
    cfg.epochs_misleading = 1;
    const auto pre = train::pretrain_dsub(cfg, manifest32());
    const auto mis = train::misleading_train(cfg, manifest32(), pre.checkpoint);
    CHECK(mis.checkpoint.bank == srm::init_kernel_bank().kernels);
}

TEST_CASE("uniform-pairing ablation still pairs across subgroups") {
    auto cfg = base_cfg();
    cfg.use_bias_sampling = false;
    cfg.epochs_misleading = 1;
    const auto res = train::misleading_train(cfg, manifest32(), base_pretrain().checkpoint);
    const auto sub = subgroup_of(manifest32());
    REQUIRE_FALSE(res.pairings.empty());
    for (const auto& [query, partner] : res.pairings)
        CHECK(sub.at(query) != sub.at(partner));
}

TEST_CASE("paired-reals mode pairs every sample") {
    auto cfg = base_cfg();
    cfg.paired_reals = true;
    cfg.epochs_misleading = 1;
    const auto res = train::misleading_train(cfg, manifest32(), base_pretrain().checkpoint);
    CHECK(res.pairings.size() == std::size_t(count_split(manifest32(), data::Split::train)));
    const auto sub = subgroup_of(manifest32());
    for (const auto& [query, partner] : res.pairings)
        CHECK(sub.at(query) != sub.at(partner));
}

TEST_CASE("inference is deterministic and dispatches on the checkpoint stage") {
    const auto& pre_ck = base_pretrain().checkpoint;
    const auto& mis_ck = base_mislead().checkpoint;
    const auto a = train::run_inference(pre_ck, manifest32(), data::Split::test);
    const auto b = train::run_inference(pre_ck, manifest32(), data::Split::test);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_bits(a[i].score, b[i].score));

    // Stage dispatch: pretrain scores come from the subtle head, misleading
    // scores from the fused head.
    const auto pre_model = train::restore(pre_ck);
    const auto mis_model = train::restore(mis_ck);
    const auto mis_preds = train::run_inference(mis_ck, manifest32(), data::Split::test);
    std::size_t i = 0;
    for (const auto& e : manifest32().entries) {
        if (e.split != data::Split::test) continue;
        const auto s = data::load_sample(manifest32(), e);
        CHECK(same_bits(a[i].score, model::infer_pretrain(pre_model, s.image)));
        CHECK(same_bits(mis_preds[i].score, model::infer_fused(mis_model, s.image)));
        CHECK(a[i].sample_id == e.id);
        CHECK(a[i].label == (e.label == data::Label::fake ? 1 : 0));
        CHECK(a[i].subgroup == e.subgroup);
        CHECK(a[i].method == e.method);
        ++i;
    }
    CHECK(i == a.size());
}

TEST_CASE("inference rejects size-mismatched data") {
    static testsup::TempDir dir("smallds");
    synth::SynthConfig sc;
    sc.image_size = 16;
    sc.n_per_split = {{data::Split::train, 4}, {data::Split::val, 2}, {data::Split::test, 2}};
    sc.subgroup_proportions = {{{Gender::M, Race::W}, 0.5}, {{Gender::F, Race::B}, 0.5}};
    sc.seed = 3;
    const auto small = synth::generate_dataset(sc, dir.path() / "ds");
    CHECK_THROWS_AS(
        (void)train::run_inference(base_pretrain().checkpoint, small, data::Split::test),
        ShapeMismatch);
}

TEST_CASE("degenerate splits raise the contracted errors") {
    data::DatasetManifest empty = manifest32();
    std::erase_if(empty.entries,
                  [](const auto& e) { return e.split == data::Split::train; });
    CHECK_THROWS_AS((void)train::pretrain_dsub(base_cfg(), empty), train::EmptySplit);

    data::DatasetManifest reals_only = manifest32();
    std::erase_if(reals_only.entries, [](const auto& e) {
        return e.split == data::Split::train && e.label == data::Label::fake;
    });
    CHECK_THROWS_AS((void)train::pretrain_dsub(base_cfg(), reals_only),
                    train::SingleClassSplit);
    CHECK_THROWS_AS((void)train::misleading_train(base_cfg(), reals_only,
                                                  base_pretrain().checkpoint),
                    train::SingleClassSplit);
}

TEST_CASE("a poisoned parameter raises NonFiniteLoss") {
    auto ck = base_pretrain().checkpoint;
    ck.trainable[0] = std::numeric_limits<double>::quiet_NaN();
    ck.trainable_digest = sha256_hex(std::span<const double>(ck.trainable));
    auto cfg = base_cfg();
    cfg.epochs_misleading = 1;
    CHECK_THROWS_AS((void)train::misleading_train(cfg, manifest32(), ck),
                    train::NonFiniteLoss);
}

TEST_CASE("augmentation is deterministic per stream and preserves shape") {
    const auto& mf = manifest32();
    const auto s = data::load_sample(mf, mf.entries.front());
    rng::Stream s1(77), s2(77), s3(78);
    const auto a = train::augment_image(s.image, s1);
    const auto b = train::augment_image(s.image, s2);
    const auto c = train::augment_image(s.image, s3);
    CHECK(a.c == s.image.c);
    CHECK(a.h == s.image.h);
    CHECK(a.w == s.image.w);
    CHECK(a.v == b.v);
    CHECK(a.v != c.v);
    for (const double v : a.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // Augmented runs stay deterministic end to end.
    auto cfg = base_cfg();
    cfg.augment = true;
    cfg.epochs_pretrain = 1;
    const auto r1 = train::pretrain_dsub(cfg, mf);
    const auto r2 = train::pretrain_dsub(cfg, mf);
    CHECK(r1.checkpoint.trainable_digest == r2.checkpoint.trainable_digest);
    CHECK(r1.checkpoint.trainable_digest !=
          base_pretrain().checkpoint.trainable_digest);
}

TEST_CASE("training log csv round-trips exactly") {
    testsup::TempDir dir("log");
    std::vector<train::LogRow> rows = {
        {1, 1, 0.1 + 0.2, 1.0 / 3.0, 5e-324, 0.7},
        {2, 1, 0.5, 0.0, 1e300, std::nextafter(1.0, 2.0)},
    };
    const auto path = dir.path() / "log.csv";
    train::write_log_csv(path, rows);
    const auto back = train::read_log_csv(path);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].step == rows[i].step);
        CHECK(back[i].epoch == rows[i].epoch);
        CHECK(same_bits(back[i].l_cls, rows[i].l_cls));
        CHECK(same_bits(back[i].l_con, rows[i].l_con));
        CHECK(same_bits(back[i].l_final, rows[i].l_final));
        CHECK(same_bits(back[i].total, rows[i].total));
    }
    {
        std::ofstream out(dir.path() / "bad.csv");
        out << "step,epoch\n1,1\n";
    }
    CHECK_THROWS_AS((void)train::read_log_csv(dir.path() / "bad.csv"), DataError);
}
