#include "mislead/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

#include "CLI11.hpp"

#include "mislead/metrics.hpp"
#include "mislead/perturb.hpp"

namespace fs = std::filesystem;

namespace mislead::cli {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

void reject_unknown(const nlohmann::json& j,
                    std::initializer_list<const char*> allowed,
                    const std::string& scope) {
    if (!j.is_object())
        throw ConfigError(scope + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known |= (key == a);
        if (!known) throw ConfigError(scope + " has unknown key \"" + key + "\"");
    }
}

data::DemographicKey config_key(const std::string& text, const std::string& scope) {
    try {
        return data::parse_key(text);
    } catch (const Error& e) {
        throw ConfigError(scope + ": " + e.what());
    }
}

data::Split config_split(const std::string& text, const std::string& scope) {
    try {
        return data::parse_split(text);
    } catch (const Error& e) {
        throw ConfigError(scope + ": " + e.what());
    }
}

synth::SynthConfig synth_from_json(const nlohmann::json& j) {
    reject_unknown(j,
                   {"image_size", "n_per_split", "subgroup_proportions",
                    "fake_fraction", "fake_fraction_per_subgroup",
                    "fingerprint_strength", "attribute_signal_strength", "seed"},
                   "synth");
    synth::SynthConfig sc;
    for (const auto& k : data::all_keys())
        sc.subgroup_proportions[k] = 1.0 / double(data::all_keys().size());
    if (j.contains("image_size")) sc.image_size = j["image_size"].get<int>();
    if (j.contains("n_per_split")) {
        reject_unknown(j["n_per_split"], {"train", "val", "test"}, "synth.n_per_split");
        sc.n_per_split.clear();
        for (const auto& [k, v] : j["n_per_split"].items())
            sc.n_per_split[config_split(k, "synth.n_per_split")] = v.get<int>();
    }
    if (j.contains("subgroup_proportions")) {
        sc.subgroup_proportions.clear();
        for (const auto& [k, v] : j["subgroup_proportions"].items())
            sc.subgroup_proportions[config_key(k, "synth.subgroup_proportions")] =
                v.get<double>();
    }
    if (j.contains("fake_fraction")) sc.fake_fraction = j["fake_fraction"].get<double>();
    if (j.contains("fake_fraction_per_subgroup"))
        for (const auto& [k, v] : j["fake_fraction_per_subgroup"].items())
            sc.fake_fraction_per_subgroup[config_key(
                k, "synth.fake_fraction_per_subgroup")] = v.get<double>();
    if (j.contains("fingerprint_strength"))
        sc.fingerprint_strength = j["fingerprint_strength"].get<double>();
    if (j.contains("attribute_signal_strength"))
        sc.attribute_signal_strength = j["attribute_signal_strength"].get<double>();
    if (j.contains("seed")) sc.seed = j["seed"].get<std::uint64_t>();
    return sc;
}

Paths paths_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"manifest", "out_dir"}, "paths");
    Paths p;
    if (j.contains("manifest")) p.manifest = j["manifest"].get<std::string>();
    if (j.contains("out_dir")) p.out_dir = j["out_dir"].get<std::string>();
    return p;
}

EvalOpts eval_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"split", "group_by", "threshold", "seed"}, "report");
    EvalOpts o;
    if (j.contains("split"))
        o.split = config_split(j["split"].get<std::string>(), "report.split");
    if (j.contains("group_by"))
        o.group_by = metrics::parse_group_by(j["group_by"].get<std::string>());
    if (j.contains("threshold")) o.threshold = j["threshold"].get<double>();
    if (j.contains("seed")) o.seed = j["seed"].get<std::uint64_t>();
    return o;
}

RunConfig effective_config(const std::string& config_path,
                           const std::vector<std::string>& sets) {
    nlohmann::json tree = load_config_tree(config_path);
    for (const auto& s : sets) apply_override(tree, s);
    return run_config_from_json(tree);
}

// ---------------------------------------------------------------- commands

int cmd_synth(const std::string& config, const std::vector<std::string>& sets,
              const std::string& out) {
    const RunConfig rc = effective_config(config, sets);
    const auto manifest = synth::generate_dataset(rc.synth, out);

    std::map<data::DemographicKey, std::pair<int, int>> counts;  // real, fake
    for (const auto& e : manifest.entries) {
        auto& c = counts[e.subgroup];
        (e.label == data::Label::fake ? c.second : c.first)++;
    }
    std::cout << "subgroup  n_real  n_fake  total\n";
    for (const auto& [key, c] : counts) {
        char line[64];
        std::snprintf(line, sizeof line, "%-8s  %6d  %6d  %5d\n",
                      data::format_key(key).c_str(), c.first, c.second,
                      c.first + c.second);
        std::cout << line;
    }
    std::cout << "manifest: " << (fs::path(out) / "manifest.csv").string() << "\n";
    return 0;
}

int cmd_train(const std::string& config, const std::vector<std::string>& sets,
              const std::vector<std::string>& ablations) {
    RunConfig rc = effective_config(config, sets);
    for (const auto& a : ablations) {
        if (a == "no-bias") rc.train.use_bias_sampling = false;
        else if (a == "no-contrastive") rc.train.use_contrastive = false;
        else if (a == "no-scam") rc.train.model.use_scam = false;
        else
            throw ConfigError("unknown ablation \"" + a +
                              "\" (choices: no-bias, no-contrastive, no-scam)");
    }
    if (rc.paths.manifest.empty())
        throw ConfigError("paths.manifest is required for train");
    const auto manifest = data::parse_manifest(rc.paths.manifest);

    const fs::path out(rc.paths.out_dir);
    fs::create_directories(out);

    const auto pre = train::pretrain_dsub(rc.train, manifest);
    train::save_checkpoint(out / "pretrain.ckpt", pre.checkpoint);
    const auto mis = train::misleading_train(rc.train, manifest, pre.checkpoint);
    train::save_checkpoint(out / "misleading.ckpt", mis.checkpoint);

    auto log = pre.log;
    log.insert(log.end(), mis.log.begin(), mis.log.end());
    train::write_log_csv(out / "train_log.csv", log);

    std::cout << "pretrain checkpoint: " << (out / "pretrain.ckpt").string() << "\n"
              << "misleading checkpoint: " << (out / "misleading.ckpt").string()
              << "\n"
              << "training log: " << (out / "train_log.csv").string() << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint, manifest, out, config;
    std::vector<std::string> sets;
    std::optional<std::string> split, group_by, disturbance;
    std::optional<double> threshold;
    std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalArgs& a) {
    const RunConfig rc = effective_config(a.config, a.sets);
    EvalOpts opts = rc.report;
    if (a.split) opts.split = config_split(*a.split, "--split");
    if (a.group_by) opts.group_by = metrics::parse_group_by(*a.group_by);
    if (a.threshold) opts.threshold = *a.threshold;
    if (a.seed) opts.seed = *a.seed;

    const auto ckpt = train::load_checkpoint(a.checkpoint);
    const auto manifest = data::parse_manifest(a.manifest);

    std::vector<metrics::PredictionRecord> records;
    std::string dlabel;
    if (a.disturbance) {
        const auto d = perturb::parse_disturbance(*a.disturbance);
        records = perturb::disturbed_inference(ckpt, manifest, opts.split, d, opts.seed);
        dlabel = perturb::to_string(d);
    } else {
        records = train::run_inference(ckpt, manifest, opts.split);
    }

    auto report = metrics::subgroup_report(records, opts.threshold, opts.group_by);
    report.dataset = a.manifest;
    report.disturbance = dlabel;

    const fs::path out(a.out);
    fs::create_directories(out);
    metrics::write_predictions(out / "predictions.csv", records);
    metrics::write_report_json(out / "report.json", report);
    metrics::write_report_csv(out / "report.csv", report);
    std::cout << "predictions: " << (out / "predictions.csv").string() << "\n"
              << "report: " << (out / "report.json").string() << "\n"
              << "report csv: " << (out / "report.csv").string() << "\n";
    return 0;
}

std::vector<std::pair<std::string, metrics::MetricsReport>> read_reports(
    const std::vector<std::string>& paths) {
    std::vector<std::pair<std::string, metrics::MetricsReport>> out;
    std::set<std::string> used;
    for (const auto& p : paths) {
        std::string label = fs::path(p).stem().string();
        // "report.json" stems collide across eval output dirs; the directory
        // name is the informative part there.
        if (label == "report" && fs::path(p).has_parent_path() &&
            !fs::path(p).parent_path().filename().string().empty())
            label = fs::path(p).parent_path().filename().string();
        if (!used.insert(label).second) {
            int n = 2;
            while (!used.insert(label + "-" + std::to_string(n)).second) ++n;
            label += "-" + std::to_string(n);
        }
        out.emplace_back(label, metrics::read_report_json(p));
    }
    return out;
}

// First clean report (empty disturbance field) is the robustness baseline.
const metrics::MetricsReport* find_baseline(
    const std::vector<std::pair<std::string, metrics::MetricsReport>>& reports) {
    for (const auto& [label, rep] : reports)
        if (rep.disturbance.empty()) return &rep;
    return nullptr;
}

int cmd_report(const std::vector<std::string>& paths, const std::string& out_dir) {
    if (paths.empty()) throw ConfigError("report needs at least one report JSON");
    const auto reports = read_reports(paths);
    const fs::path out(out_dir);
    fs::create_directories(out);

    {
        std::ofstream f(out / "comparison.csv");
        if (!f) throw DataError("cannot write " + (out / "comparison.csv").string());
        f << "report,group,n_real,n_fake,auc,acc,fpr\n";
        const auto row = [&](const std::string& label, const std::string& group,
                             const metrics::GroupMetrics& g) {
            f << label << ',' << group << ',' << g.n_real << ',' << g.n_fake << ','
              << (g.auc ? fmt_double(*g.auc) : "") << ',' << fmt_double(g.acc) << ','
              << (g.fpr ? fmt_double(*g.fpr) : "") << '\n';
        };
        for (const auto& [label, rep] : reports) {
            row(label, "overall", rep.overall);
            for (const auto& [group, gm] : rep.per_group) row(label, group, gm);
        }
    }
    {
        std::ofstream f(out / "fairness.csv");
        if (!f) throw DataError("cannot write " + (out / "fairness.csv").string());
        f << "report,threshold,group_by,dataset,disturbance,f_fpr,f_mag_auc,"
             "f_mag_acc,f_meo\n";
        for (const auto& [label, rep] : reports)
            f << label << ',' << fmt_double(rep.threshold) << ','
              << metrics::to_string(rep.group_by) << ',' << rep.dataset << ','
              << rep.disturbance << ',' << fmt_double(rep.fairness.f_fpr) << ','
              << fmt_double(rep.fairness.f_mag_auc) << ','
              << fmt_double(rep.fairness.f_mag_acc) << ','
              << fmt_double(rep.fairness.f_meo) << '\n';
    }
    std::cout << "comparison: " << (out / "comparison.csv").string() << "\n"
              << "fairness: " << (out / "fairness.csv").string() << "\n";

    const auto* baseline = find_baseline(reports);
    bool any_disturbed = false;
    for (const auto& [label, rep] : reports) any_disturbed |= !rep.disturbance.empty();
    if (baseline && any_disturbed) {
        std::ofstream f(out / "deltas.csv");
        if (!f) throw DataError("cannot write " + (out / "deltas.csv").string());
        f << "disturbance,delta_auc,delta_f_fpr,delta_f_mag\n";
        for (const auto& [label, rep] : reports) {
            if (rep.disturbance.empty()) continue;
            const auto d = metrics::robustness_delta(*baseline, rep);
            f << rep.disturbance << ',' << fmt_double(d.delta_auc) << ','
              << fmt_double(d.delta_f_fpr) << ',' << fmt_double(d.delta_f_mag) << '\n';
        }
        std::cout << "deltas: " << (out / "deltas.csv").string() << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------- plotting

struct Series {
    std::string label;
    std::vector<std::optional<double>> values;  // one per tick
};

constexpr const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a169", "#c44e52",
                                    "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};

// Grouped vertical bars with a fixed y range; bars grow from the zero line
// (clamped into range). Legend sits to the right of the plot area.
std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& ticks,
                          const std::vector<Series>& series, double lo, double hi,
                          bool annotate_gap) {
    const int n = int(ticks.size());
    const int ns = int(series.size());
    const double left = 64, top = 48, bottom = 56, right = 200, plot_h = 260;
    const double slot = std::max(64.0, 26.0 * ns + 24.0);
    const double plot_w = std::max(360.0, slot * n);
    const double width = left + plot_w + right, height = top + plot_h + bottom;
    const auto ypix = [&](double v) { return top + (hi - v) / (hi - lo) * plot_h; };
    const double base = std::min(std::max(0.0, lo), hi);

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height
      << "\" font-family=\"sans-serif\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << left << "\" y=\"24\" font-size=\"15\">" << title
      << "</text>\n";
    s << "<text x=\"14\" y=\"" << top - 10 << "\" font-size=\"11\">" << y_label
      << "</text>\n";

    for (int g = 0; g <= 5; ++g) {
        const double v = lo + (hi - lo) * g / 5.0;
        const double y = ypix(v);
        s << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + plot_w
          << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n";
        s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
          << "\" font-size=\"11\" text-anchor=\"end\">" << fmt3(v) << "</text>\n";
    }
    if (lo < 0.0 && hi > 0.0)
        s << "<line x1=\"" << left << "\" y1=\"" << ypix(0.0) << "\" x2=\""
          << left + plot_w << "\" y2=\"" << ypix(0.0)
          << "\" stroke=\"#555555\"/>\n";

    const double bw = (slot - 20.0) / std::max(1, ns);
    for (int i = 0; i < n; ++i) {
        const double x0 = left + slot * i + 10.0;
        for (int k = 0; k < ns; ++k) {
            const auto& v = series[k].values[i];
            if (!v) continue;
            const double vv = std::clamp(*v, lo, hi);
            const double y1 = ypix(std::max(vv, base)), y2 = ypix(std::min(vv, base));
            s << "<rect x=\"" << x0 + bw * k << "\" y=\"" << y1 << "\" width=\""
              << bw - 3.0 << "\" height=\"" << std::max(0.5, y2 - y1)
              << "\" fill=\"" << kPalette[k % 8] << "\"/>\n";
        }
        s << "<text x=\"" << left + slot * i + slot / 2 << "\" y=\""
          << top + plot_h + 18 << "\" font-size=\"11\" text-anchor=\"middle\">"
          << ticks[i] << "</text>\n";
    }

    for (int k = 0; k < ns; ++k) {
        const double y = top + 16.0 * k;
        s << "<rect x=\"" << left + plot_w + 16 << "\" y=\"" << y - 9
          << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[k % 8] << "\"/>\n";
        std::string label = series[k].label;
        if (annotate_gap) {
            double mn = 1e300, mx = -1e300;
            for (const auto& v : series[k].values)
                if (v) {
                    mn = std::min(mn, *v);
                    mx = std::max(mx, *v);
                }
            if (mx >= mn) label += " (gap " + fmt3(mx - mn) + ")";
        }
        s << "<text x=\"" << left + plot_w + 30 << "\" y=\"" << y
          << "\" font-size=\"11\">" << label << "</text>\n";
    }

    // The max-min spread of the first series, drawn as dashed guides.
    if (annotate_gap && !series.empty()) {
        double mn = 1e300, mx = -1e300;
        for (const auto& v : series[0].values)
            if (v) {
                mn = std::min(mn, *v);
                mx = std::max(mx, *v);
            }
        if (mx > mn) {
            for (const double v : {mn, mx})
                s << "<line x1=\"" << left << "\" y1=\"" << ypix(v) << "\" x2=\""
                  << left + plot_w << "\" y2=\"" << ypix(v)
                  << "\" stroke=\"#c44e52\" stroke-dasharray=\"5,4\"/>\n";
            s << "<line x1=\"" << left + plot_w - 12 << "\" y1=\"" << ypix(mx)
              << "\" x2=\"" << left + plot_w - 12 << "\" y2=\"" << ypix(mn)
              << "\" stroke=\"#c44e52\"/>\n";
            s << "<text x=\"" << left + plot_w - 18 << "\" y=\""
              << (ypix(mx) + ypix(mn)) / 2 + 4
              << "\" font-size=\"11\" text-anchor=\"end\" fill=\"#c44e52\">gap "
              << fmt3(mx - mn) << "</text>\n";
        }
    }
    s << "</svg>\n";
    return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
}

int cmd_plot(const std::vector<std::string>& paths, const std::string& out_dir) {
    if (paths.empty()) throw EmptyReport("plot needs at least one report JSON");
    const auto reports = read_reports(paths);
    const fs::path out(out_dir);
    fs::create_directories(out);

    std::set<std::string> group_set;
    for (const auto& [label, rep] : reports)
        for (const auto& [g, gm] : rep.per_group) group_set.insert(g);
    const std::vector<std::string> ticks(group_set.begin(), group_set.end());

    const auto collect = [&](const auto& pick) {
        std::vector<Series> out_series;
        for (const auto& [label, rep] : reports) {
            Series s{label, {}};
            for (const auto& g : ticks) {
                const auto it = rep.per_group.find(g);
                s.values.push_back(it == rep.per_group.end()
                                       ? std::optional<double>{}
                                       : pick(it->second));
            }
            out_series.push_back(std::move(s));
        }
        return out_series;
    };

    write_text(out / "auc_bars.svg",
               bar_chart_svg("Per-group AUC", "AUC", ticks,
                             collect([](const metrics::GroupMetrics& g) { return g.auc; }),
                             0.0, 1.0, true));
    write_text(out / "fpr_bars.svg",
               bar_chart_svg("Per-group FPR", "FPR", ticks,
                             collect([](const metrics::GroupMetrics& g) { return g.fpr; }),
                             0.0, 1.0, true));
    std::cout << "wrote " << (out / "auc_bars.svg").string() << "\n"
              << "wrote " << (out / "fpr_bars.svg").string() << "\n";

    const auto* baseline = find_baseline(reports);
    std::vector<std::string> dticks;
    std::vector<std::optional<double>> dauc, dfpr, dmag;
    if (baseline) {
        for (const auto& [label, rep] : reports) {
            if (rep.disturbance.empty()) continue;
            const auto d = metrics::robustness_delta(*baseline, rep);
            dticks.push_back(rep.disturbance);
            dauc.push_back(d.delta_auc);
            dfpr.push_back(d.delta_f_fpr);
            dmag.push_back(d.delta_f_mag);
        }
    }
    if (!dticks.empty()) {
        double m = 0.1;
        for (const auto& vs : {dauc, dfpr, dmag})
            for (const auto& v : vs) m = std::max(m, std::abs(*v));
        m = std::ceil(m * 10.0) / 10.0;
        const std::vector<Series> ds = {{"dAUC", dauc}, {"dF_FPR", dfpr},
                                        {"dF_MAG", dmag}};
        write_text(out / "delta.svg",
                   bar_chart_svg("Robustness deltas vs clean", "delta", dticks, ds,
                                 -m, m, false));
        std::cout << "wrote " << (out / "delta.svg").string() << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------- dispatch

constexpr const char* kSynthFooter = R"(Config keys consumed (defaults):
  synth.image_size (64)
  synth.n_per_split.train (800) / .val (100) / .test (300)
  synth.subgroup_proportions.<G-R> (8 equal groups, 0.125 each)
  synth.fake_fraction (0.5)
  synth.fake_fraction_per_subgroup.<G-R> (unset; overrides fake_fraction per group)
  synth.fingerprint_strength (0.15)
  synth.attribute_signal_strength (0.6)
  synth.seed (0))";

constexpr const char* kTrainFooter = R"(Config keys consumed (defaults):
  paths.manifest (required)
  paths.out_dir (.)
  train.model.preprocess (astray_srm | srm_fixed | dct | none)
  train.model.input_size (64)
  train.model.feature_dim (128)
  train.model.dsub_widths ([16,32,64,128])
  train.model.daux_widths ([8,16])
  train.model.scam_stages ([2,3])
  train.model.use_scam (true)
  train.model.truncate_residual (true)
  train.model.seed (0)
  train.model.ered_seed (fixed default)
  train.lr (0.001)
  train.batch_size (16)
  train.epochs_pretrain (5)
  train.epochs_misleading (15)
  train.weights.alpha (0.05)
  train.weights.beta (1)
  train.weights.margin (1)
  train.lambda_srm (0.0001)
  train.use_bias_sampling (true)
  train.use_contrastive (true)
  train.paired_reals (false)
  train.augment (true))";

constexpr const char* kEvalFooter = R"(Config keys consumed (defaults; flags override):
  report.split (test)
  report.group_by (subgroup)
  report.threshold (0.5)
  report.seed (0))";

}  // namespace

nlohmann::json load_config_tree(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
}

void apply_override(nlohmann::json& tree, const std::string& keyval) {
    const auto eq = keyval.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key.path=value, got \"" + keyval + "\"");
    const std::string path = keyval.substr(0, eq);
    const std::string raw = keyval.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // bare words are strings

    try {
        nlohmann::json* node = &tree;
        std::size_t start = 0;
        while (true) {
            const auto dot = path.find('.', start);
            const std::string part =
                path.substr(start, dot == std::string::npos ? dot : dot - start);
            if (part.empty())
                throw ConfigError("--set key has an empty segment: \"" + path + "\"");
            if (dot == std::string::npos) {
                (*node)[part] = value;
                return;
            }
            node = &(*node)[part];
            start = dot + 1;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("--set " + keyval + ": " + e.what());
    }
}

RunConfig run_config_from_json(const nlohmann::json& tree) {
    try {
        reject_unknown(tree, {"synth", "train", "paths", "report"}, "config");
        RunConfig rc;
        for (const auto& k : data::all_keys())
            rc.synth.subgroup_proportions[k] = 1.0 / double(data::all_keys().size());
        if (tree.contains("synth")) rc.synth = synth_from_json(tree["synth"]);
        if (tree.contains("train"))
            rc.train = train::config_from_json_text(tree["train"].dump());
        if (tree.contains("paths")) rc.paths = paths_from_json(tree["paths"]);
        if (tree.contains("report")) rc.report = eval_from_json(tree["report"]);
        return rc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Misleading-learning pipeline for demographically fair deepfake "
                 "detection"};
    app.require_subcommand(1);

    std::string config, out;
    std::vector<std::string> sets, ablations, report_paths;

    auto* syn = app.add_subcommand("synth", "Generate a synthetic face-proxy dataset");
    syn->add_option("--config", config, "JSON run configuration file");
    syn->add_option("--set", sets, "Override a config key, e.g. synth.seed=5");
    syn->add_option("--out", out, "Output dataset directory")->required();
    syn->footer(kSynthFooter);

    auto* trn = app.add_subcommand("train", "Run redundant pretraining followed by "
                                            "misleading training");
    trn->add_option("--config", config, "JSON run configuration file");
    trn->add_option("--set", sets, "Override a config key, e.g. train.lr=0.01");
    trn->add_option("--ablation", ablations,
                    "Disable a component: no-bias, no-contrastive, no-scam");
    trn->footer(kTrainFooter);

    EvalArgs ev;
    std::string ev_split, ev_group_by, ev_disturbance;
    double ev_threshold = metrics::kDefaultThreshold;
    std::uint64_t ev_seed = 0;
    auto* evl = app.add_subcommand("eval", "Score a split and write predictions plus "
                                           "a subgroup report");
    evl->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    evl->add_option("--manifest", ev.manifest, "Dataset manifest CSV")->required();
    evl->add_option("--out", ev.out, "Output directory")->required();
    evl->add_option("--config", ev.config, "JSON run configuration file");
    evl->add_option("--set", ev.sets, "Override a config key");
    auto* o_split = evl->add_option("--split", ev_split, "train | val | test");
    auto* o_gb = evl->add_option("--group-by", ev_group_by, "subgroup | method");
    auto* o_dist = evl->add_option("--disturbance", ev_disturbance,
                                   "Disturbance spec KIND:INTENSITY, e.g. GB:3");
    auto* o_thr = evl->add_option("--threshold", ev_threshold, "Decision threshold");
    auto* o_seed = evl->add_option("--seed", ev_seed, "Disturbance seed");
    evl->footer(kEvalFooter);

    auto* rep = app.add_subcommand("report", "Merge report JSONs into comparison CSVs");
    rep->add_option("reports", report_paths, "Report JSON files");
    rep->add_option("--out", out, "Output directory")->required();

    auto* plt = app.add_subcommand("plot", "Render SVG charts from report JSONs");
    plt->add_option("reports", report_paths, "Report JSON files");
    plt->add_option("--out", out, "Output directory")->required();

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            return 2;
        }

        if (syn->parsed()) return cmd_synth(config, sets, out);
        if (trn->parsed()) return cmd_train(config, sets, ablations);
        if (evl->parsed()) {
            if (o_split->count()) ev.split = ev_split;
            if (o_gb->count()) ev.group_by = ev_group_by;
            if (o_dist->count()) ev.disturbance = ev_disturbance;
            if (o_thr->count()) ev.threshold = ev_threshold;
            if (o_seed->count()) ev.seed = ev_seed;
            return cmd_eval(ev);
        }
        if (rep->parsed()) return cmd_report(report_paths, out);
        if (plt->parsed()) return cmd_plot(report_paths, out);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mislead::cli
