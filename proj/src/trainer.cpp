#include "mislead/trainer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mislead/digest.hpp"
#include "mislead/image.hpp"
#include "mislead/library.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace mislead::train {

namespace {

using nlohmann::json;

// Stream identity: (seed, stage, role, epoch) pins every random draw.
constexpr std::uint64_t kPretrainStream = 1;
constexpr std::uint64_t kMisleadStream = 2;
enum class Role : std::uint64_t { order = 0, augment = 1, pairing = 2 };

rng::Stream epoch_stream(std::uint64_t seed, std::uint64_t stage, Role role,
                         int epoch) {
    return rng::Stream(
        rng::derive(seed, stage * 8 + std::uint64_t(role), std::uint64_t(epoch)));
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const char* scope) {
    if (!j.is_object()) throw ConfigError(std::string(scope) + ": expected an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("unknown config key: " + std::string(scope) + "." +
                              item.key());
    }
}

json model_to_json(const model::ModelConfig& m) {
    return json{{"preprocess", srm::to_string(m.preprocess)},
                {"input_size", m.input_size},
                {"feature_dim", m.feature_dim},
                {"dsub_widths", m.dsub_widths},
                {"daux_widths", m.daux_widths},
                {"scam_stages", m.scam_stages},
                {"use_scam", m.use_scam},
                {"truncate_residual", m.truncate_residual},
                {"seed", m.seed},
                {"ered_seed", m.ered_seed}};
}

model::ModelConfig model_from_json(const json& j) {
    reject_unknown(j,
                   {"preprocess", "input_size", "feature_dim", "dsub_widths",
                    "daux_widths", "scam_stages", "use_scam", "truncate_residual",
                    "seed", "ered_seed"},
                   "model");
    model::ModelConfig m;
    if (j.contains("preprocess"))
        m.preprocess = srm::parse_preprocess(j.at("preprocess").get<std::string>());
    if (j.contains("input_size")) m.input_size = j.at("input_size").get<int>();
    if (j.contains("feature_dim")) m.feature_dim = j.at("feature_dim").get<int>();
    if (j.contains("dsub_widths"))
        m.dsub_widths = j.at("dsub_widths").get<std::vector<int>>();
    if (j.contains("daux_widths"))
        m.daux_widths = j.at("daux_widths").get<std::vector<int>>();
    if (j.contains("scam_stages"))
        m.scam_stages = j.at("scam_stages").get<std::vector<int>>();
    if (j.contains("use_scam")) m.use_scam = j.at("use_scam").get<bool>();
    if (j.contains("truncate_residual"))
        m.truncate_residual = j.at("truncate_residual").get<bool>();
    if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("ered_seed")) m.ered_seed = j.at("ered_seed").get<std::uint64_t>();
    return m;
}

json config_to_json(const TrainConfig& cfg) {
    return json{{"model", model_to_json(cfg.model)},
                {"lr", cfg.lr},
                {"batch_size", cfg.batch_size},
                {"epochs_pretrain", cfg.epochs_pretrain},
                {"epochs_misleading", cfg.epochs_misleading},
                {"weights",
                 {{"alpha", cfg.weights.alpha},
                  {"beta", cfg.weights.beta},
                  {"margin", cfg.weights.margin}}},
                {"lambda_srm", cfg.lambda_srm},
                {"use_bias_sampling", cfg.use_bias_sampling},
                {"use_contrastive", cfg.use_contrastive},
                {"paired_reals", cfg.paired_reals},
                {"augment", cfg.augment}};
}

TrainConfig config_from_json(const json& j) {
    reject_unknown(j,
                   {"model", "lr", "batch_size", "epochs_pretrain", "epochs_misleading",
                    "weights", "lambda_srm", "use_bias_sampling", "use_contrastive",
                    "paired_reals", "augment"},
                   "config");
    TrainConfig cfg;
    if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
    if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("epochs_pretrain"))
        cfg.epochs_pretrain = j.at("epochs_pretrain").get<int>();
    if (j.contains("epochs_misleading"))
        cfg.epochs_misleading = j.at("epochs_misleading").get<int>();
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        reject_unknown(w, {"alpha", "beta", "margin"}, "weights");
        if (w.contains("alpha")) cfg.weights.alpha = w.at("alpha").get<double>();
        if (w.contains("beta")) cfg.weights.beta = w.at("beta").get<double>();
        if (w.contains("margin")) cfg.weights.margin = w.at("margin").get<double>();
    }
    if (j.contains("lambda_srm")) cfg.lambda_srm = j.at("lambda_srm").get<double>();
    if (j.contains("use_bias_sampling"))
        cfg.use_bias_sampling = j.at("use_bias_sampling").get<bool>();
    if (j.contains("use_contrastive"))
        cfg.use_contrastive = j.at("use_contrastive").get<bool>();
    if (j.contains("paired_reals")) cfg.paired_reals = j.at("paired_reals").get<bool>();
    if (j.contains("augment")) cfg.augment = j.at("augment").get<bool>();
    return cfg;
}

std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const char* what) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw DataError(std::string("bad ") + what + ": " + s);
    return v;
}

// All samples of one split decoded up front; partner lookups go through id.
struct TrainSet {
    std::vector<data::Sample> samples;
    std::map<std::string, std::size_t> index;
    int n_real = 0, n_fake = 0;
};

TrainSet load_split(const data::DatasetManifest& manifest, data::Split split,
                    int input_size) {
    TrainSet ts;
    for (const auto& e : manifest.entries) {
        if (e.split != split) continue;
        auto s = data::load_sample(manifest, e);
        if (s.image.h != input_size || s.image.w != input_size)
            throw ShapeMismatch("sample " + s.id + " is " + std::to_string(s.image.h) +
                                "x" + std::to_string(s.image.w) + ", config wants " +
                                std::to_string(input_size));
        (s.label == data::Label::fake ? ts.n_fake : ts.n_real)++;
        ts.index.emplace(s.id, ts.samples.size());
        ts.samples.push_back(std::move(s));
    }
    if (ts.samples.empty())
        throw EmptySplit("split '" + data::to_string(split) + "' has no samples");
    return ts;
}

void write_array(std::ofstream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              std::streamsize(v.size() * sizeof(double)));
}

std::vector<double> read_array(std::ifstream& in, std::size_t count,
                               const std::string& name) {
    std::vector<double> v(count);
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(count * sizeof(double)));
    if (std::size_t(in.gcount()) != count * sizeof(double))
        throw CheckpointError("array '" + name + "' is truncated");
    return v;
}

}  // namespace

void validate(const TrainConfig& cfg) {
    losses::validate(cfg.weights);
    if (!std::isfinite(cfg.lr) || cfg.lr <= 0.0)
        throw ConfigError("lr must be positive and finite");
    if (cfg.batch_size < 2)
        throw ConfigError("batch_size must be at least 2 (a stage-4 batch needs a real "
                          "and a fake)");
    if (cfg.epochs_pretrain < 0 || cfg.epochs_misleading < 0)
        throw ConfigError("epoch counts must be non-negative");
    if (!std::isfinite(cfg.lambda_srm) || cfg.lambda_srm < 0.0)
        throw ConfigError("lambda_srm must be non-negative and finite");
}

std::string config_to_json_text(const TrainConfig& cfg) {
    return config_to_json(cfg).dump();
}

TrainConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
}

Checkpoint snapshot(const model::Model& m, const TrainConfig& cfg,
                    const std::string& stage, int epoch) {
    Checkpoint ck;
    ck.cfg = cfg;
    ck.stage = stage;
    ck.epoch = epoch;
    ck.trainable = m.trainable.data;
    ck.frozen = m.frozen.data;
    ck.bank = m.bank.kernels;
    ck.trainable_digest = sha256_hex(std::span<const double>(ck.trainable));
    ck.frozen_digest = sha256_hex(std::span<const double>(ck.frozen));
    ck.bank_digest = sha256_hex(std::span<const double>(ck.bank));
    return ck;
}

model::Model restore(const Checkpoint& ckpt) {
    model::Model m = model::build_model(ckpt.cfg.model);
    if (m.trainable.size() != ckpt.trainable.size() ||
        m.frozen.size() != ckpt.frozen.size() ||
        m.bank.kernels.size() != ckpt.bank.size())
        throw CheckpointError("checkpoint arrays do not match the configured model");
    m.trainable.data = ckpt.trainable;
    m.frozen.data = ckpt.frozen;
    m.bank.kernels = ckpt.bank;
    return m;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    json header;
    header["format"] = "mislead-checkpoint-v1";
    header["stage"] = ckpt.stage;
    header["epoch"] = ckpt.epoch;
    header["config"] = config_to_json(ckpt.cfg);
    header["rng"] = "per-epoch-derived-streams";
    header["arrays"] = json::array(
        {{{"name", "trainable"},
          {"count", ckpt.trainable.size()},
          {"sha256", ckpt.trainable_digest}},
         {{"name", "frozen"}, {"count", ckpt.frozen.size()}, {"sha256", ckpt.frozen_digest}},
         {{"name", "bank"}, {"count", ckpt.bank.size()}, {"sha256", ckpt.bank_digest}}});
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out << header.dump() << '\n';
    write_array(out, ckpt.trainable);
    write_array(out, ckpt.frozen);
    write_array(out, ckpt.bank);
    if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw CheckpointError("missing header line");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("bad header: ") + e.what());
    }
    Checkpoint ck;
    try {
        if (header.at("format").get<std::string>() != "mislead-checkpoint-v1")
            throw CheckpointError("unknown checkpoint format");
        ck.cfg = config_from_json(header.at("config"));
        ck.stage = header.at("stage").get<std::string>();
        ck.epoch = header.at("epoch").get<int>();
        for (const auto& arr : header.at("arrays")) {
            const auto name = arr.at("name").get<std::string>();
            const auto count = arr.at("count").get<std::size_t>();
            const auto want = arr.at("sha256").get<std::string>();
            auto values = read_array(in, count, name);
            if (sha256_hex(std::span<const double>(values)) != want)
                throw CheckpointError("digest mismatch in array '" + name + "'");
            if (name == "trainable") {
                ck.trainable = std::move(values);
                ck.trainable_digest = want;
            } else if (name == "frozen") {
                ck.frozen = std::move(values);
                ck.frozen_digest = want;
            } else if (name == "bank") {
                ck.bank = std::move(values);
                ck.bank_digest = want;
            } else {
                throw CheckpointError("unknown array '" + name + "'");
            }
        }
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("bad header field: ") + e.what());
    }
    if (in.peek() != std::ifstream::traits_type::eof())
        throw CheckpointError("trailing bytes after declared arrays");
    return ck;
}

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "step,epoch,l_cls,l_con,l_final,total\n";
    for (const auto& r : rows)
        out << r.step << ',' << r.epoch << ',' << fmt_double(r.l_cls) << ','
            << fmt_double(r.l_con) << ',' << fmt_double(r.l_final) << ','
            << fmt_double(r.total) << '\n';
}

std::vector<LogRow> read_log_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "step,epoch,l_cls,l_con,l_final,total")
        throw DataError("bad log header in " + path.string());
    std::vector<LogRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string col; std::getline(ss, col, ',');) cols.push_back(col);
        if (cols.size() != 6) throw DataError("log row needs 6 columns: " + line);
        LogRow r;
        r.step = std::stol(cols[0]);
        r.epoch = std::stoi(cols[1]);
        r.l_cls = parse_double(cols[2], "l_cls");
        r.l_con = parse_double(cols[3], "l_con");
        r.l_final = parse_double(cols[4], "l_final");
        r.total = parse_double(cols[5], "total");
        rows.push_back(r);
    }
    return rows;
}

Tensor augment_image(const Tensor& image, rng::Stream& stream) {
    Tensor out = stream.bernoulli(0.5) ? img::flip_horizontal(image) : image;
    out = img::rotate(out, stream.uniform(-10.0, 10.0));
    out = img::gaussian_blur(out, stream.uniform(0.0, 1.0));
    out = img::adjust_brightness_contrast(out, stream.uniform(-0.1, 0.1),
                                          stream.uniform(0.9, 1.1));
    out = img::jpeg_like_compress(out, stream.uniform_int(60, 100));
    return out;
}

TrainResult pretrain_dsub(const TrainConfig& cfg, const data::DatasetManifest& manifest) {
    validate(cfg);
    model::Model m = model::build_model(cfg.model);
    TrainSet ts = load_split(manifest, data::Split::train, cfg.model.input_size);
    if (ts.n_real == 0 || ts.n_fake == 0)
        throw SingleClassSplit("pretraining needs both labels in the train split");

    TrainResult res;
    model::Adam opt(m.trainable.size(), cfg.lr);
    std::vector<double> gbuf(m.trainable.size(), 0.0);
    std::vector<std::size_t> idx(ts.samples.size());
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
        auto order_s = epoch_stream(cfg.model.seed, kPretrainStream, Role::order, epoch);
        auto aug_s = epoch_stream(cfg.model.seed, kPretrainStream, Role::augment, epoch);
        std::iota(idx.begin(), idx.end(), 0);
        order_s.shuffle(idx);
        for (std::size_t pos = 0; pos < idx.size(); pos += std::size_t(cfg.batch_size)) {
            const std::size_t batch_end =
                std::min(idx.size(), pos + std::size_t(cfg.batch_size));
            const int b_n = int(batch_end - pos);
            std::vector<double> scores(b_n);
            std::vector<int> labels(b_n);
            std::fill(gbuf.begin(), gbuf.end(), 0.0);
            for (int b = 0; b < b_n; ++b) {
                const auto& smp = ts.samples[idx[pos + b]];
                const Tensor image =
                    cfg.augment ? augment_image(smp.image, aug_s) : smp.image;
                model::SamplePass cache;
                scores[b] = model::forward_pretrain(m, image, &cache);
                labels[b] = smp.label == data::Label::fake ? 1 : 0;
                model::backward_pretrain(m, cache, (scores[b] - labels[b]) / b_n,
                                         gbuf.data());
            }
            const double l_cls = losses::binary_cls_loss(scores, labels);
            if (!std::isfinite(l_cls))
                throw NonFiniteLoss("pretrain epoch " + std::to_string(epoch + 1) +
                                    " step " + std::to_string(step + 1) +
                                    ": non-finite loss");
            const double total =
                losses::total_misleading_loss(l_cls, 0.0, 0.0, cfg.weights);
            if (!std::isfinite(total))
                throw NonFiniteLoss("pretrain epoch " + std::to_string(epoch + 1) +
                                    " step " + std::to_string(step + 1) +
                                    ": non-finite loss");
            opt.step(m.trainable.data, gbuf);
            res.log.push_back({++step, epoch + 1, l_cls, 0.0, 0.0, total});
        }
    }
    res.checkpoint = snapshot(m, cfg, kStagePretrain, cfg.epochs_pretrain);
    return res;
}

TrainResult misleading_train(const TrainConfig& cfg,
                             const data::DatasetManifest& manifest,
                             const Checkpoint& start) {
    validate(cfg);
    if (start.stage != kStagePretrain)
        throw CheckpointError("misleading_train needs a pretrain checkpoint, got stage '" +
                              start.stage + "'");
    if (!(cfg.model == start.cfg.model))
        throw CheckpointError("model config differs from the starting checkpoint's");
    model::Model m = restore(start);
    TrainSet ts = load_split(manifest, data::Split::train, cfg.model.input_size);
    if (ts.n_real == 0 || ts.n_fake == 0)
        throw SingleClassSplit("misleading training needs both labels in the train split");
    const auto lib = redlib::build_library(manifest, data::Split::train);
    const bool learn_bank = cfg.model.preprocess == srm::Preprocess::astray_srm;

    TrainResult res;
    model::Adam opt(m.trainable.size(), cfg.lr);
    std::vector<double> gbuf(m.trainable.size(), 0.0);
    std::vector<double> bank_grad(m.bank.kernel_count(), 0.0);
    std::vector<std::size_t> idx(ts.samples.size());
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs_misleading; ++epoch) {
        auto order_s = epoch_stream(cfg.model.seed, kMisleadStream, Role::order, epoch);
        auto aug_s = epoch_stream(cfg.model.seed, kMisleadStream, Role::augment, epoch);
        auto pair_s = epoch_stream(cfg.model.seed, kMisleadStream, Role::pairing, epoch);
        std::iota(idx.begin(), idx.end(), 0);
        order_s.shuffle(idx);
        for (std::size_t pos = 0; pos < idx.size(); pos += std::size_t(cfg.batch_size)) {
            const std::size_t batch_end =
                std::min(idx.size(), pos + std::size_t(cfg.batch_size));
            const int b_n = int(batch_end - pos);
            int n_f = 0;
            for (std::size_t k = pos; k < batch_end; ++k)
                if (ts.samples[idx[k]].label == data::Label::fake) ++n_f;

            double sum_mis = 0.0, sum_con = 0.0;
            std::vector<double> fin_scores(b_n);
            std::vector<int> fin_labels(b_n);
            std::fill(gbuf.begin(), gbuf.end(), 0.0);
            std::fill(bank_grad.begin(), bank_grad.end(), 0.0);
            for (int b = 0; b < b_n; ++b) {
                const auto& smp = ts.samples[idx[pos + b]];
                const bool fake = smp.label == data::Label::fake;
                const Tensor image =
                    cfg.augment ? augment_image(smp.image, aug_s) : smp.image;

                nets::FeatureStack red;
                const bool inject = fake || cfg.paired_reals;
                if (inject) {
                    const auto& partner = redlib::select_redundant(
                        lib, smp.subgroup, pair_s, cfg.use_bias_sampling);
                    // E_red reads the clean partner image: the redundant
                    // environment is stable, not augmented.
                    red = nets::extract_red_features(
                        *m.ered, ts.samples[ts.index.at(partner.id)].image);
                    res.pairings.emplace_back(smp.id, partner.id);
                }

                model::SamplePass cache;
                const auto sc =
                    model::forward_mislead(m, image, inject ? &red : nullptr, &cache);
                fin_scores[b] = sc.s_fin;
                fin_labels[b] = fake ? 1 : 0;

                double dlogit_mis = 0.0;
                std::vector<double> extra;
                if (fake) {
                    sum_mis += losses::misleading_cls_loss(sc.s_mis, true);
                    dlogit_mis = (sc.s_mis - 1.0) / n_f;
                    if (cfg.use_contrastive) {
                        std::vector<double> danchor;
                        sum_con += model::triplet_anchor_grad(
                            cache.vsub_final, red.final, cfg.weights.margin, danchor);
                        extra.resize(danchor.size());
                        for (std::size_t i = 0; i < danchor.size(); ++i)
                            extra[i] = danchor[i] * cfg.weights.alpha / n_f;
                    }
                }
                const double dlogit_fin =
                    cfg.weights.beta * (sc.s_fin - fin_labels[b]) / b_n;
                model::backward_mislead(m, cache, dlogit_mis, dlogit_fin, extra,
                                        gbuf.data(),
                                        learn_bank ? bank_grad.data() : nullptr);
            }
            const double l_cls = n_f > 0 ? sum_mis / n_f : 0.0;
            const double l_con =
                (n_f > 0 && cfg.use_contrastive) ? sum_con / n_f : 0.0;
            const double l_final = losses::binary_cls_loss(fin_scores, fin_labels);
            if (!std::isfinite(l_cls) || !std::isfinite(l_con) ||
                !std::isfinite(l_final))
                throw NonFiniteLoss("misleading epoch " + std::to_string(epoch + 1) +
                                    " step " + std::to_string(step + 1) +
                                    ": non-finite loss (l_cls=" + std::to_string(l_cls) +
                                    " l_con=" + std::to_string(l_con) +
                                    " l_final=" + std::to_string(l_final) + ")");
            const double total =
                losses::total_misleading_loss(l_cls, l_con, l_final, cfg.weights);
            if (!std::isfinite(total))
                throw NonFiniteLoss("misleading epoch " + std::to_string(epoch + 1) +
                                    " step " + std::to_string(step + 1) +
                                    ": non-finite loss (l_cls=" + std::to_string(l_cls) +
                                    " l_con=" + std::to_string(l_con) +
                                    " l_final=" + std::to_string(l_final) + ")");
            opt.step(m.trainable.data, gbuf);
            if (learn_bank) srm::update_kernels(m.bank, bank_grad, cfg.lambda_srm);
            res.log.push_back({++step, epoch + 1, l_cls, l_con, l_final, total});
        }
    }
    res.checkpoint = snapshot(m, cfg, kStageMisleading, cfg.epochs_misleading);
    return res;
}

std::vector<metrics::PredictionRecord> run_inference(
    const Checkpoint& ckpt, const data::DatasetManifest& manifest, data::Split split,
    const ImageHook& hook) {
    model::Model m = restore(ckpt);
    const bool fused = ckpt.stage == kStageMisleading;
    std::vector<metrics::PredictionRecord> out;
    for (const auto& e : manifest.entries) {
        if (e.split != split) continue;
        auto s = data::load_sample(manifest, e);
        if (s.image.h != m.cfg.input_size || s.image.w != m.cfg.input_size)
            throw ShapeMismatch("sample " + s.id + " is " + std::to_string(s.image.h) +
                                "x" + std::to_string(s.image.w) +
                                ", checkpoint wants " + std::to_string(m.cfg.input_size));
        if (hook) hook(s.image, e);
        metrics::PredictionRecord r;
        r.sample_id = s.id;
        r.score = fused ? model::infer_fused(m, s.image) : model::infer_pretrain(m, s.image);
        r.label = s.label == data::Label::fake ? 1 : 0;
        r.subgroup = s.subgroup;
        r.method = s.method;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace mislead::train
