#include "mislead/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mislead::metrics {

namespace {

using Groups = std::map<std::string, std::vector<const PredictionRecord*>>;

Groups group_records(std::span<const PredictionRecord> records, GroupBy group_by) {
    Groups g;
    if (group_by == GroupBy::subgroup) {
        for (const auto& r : records) g[data::format_key(r.subgroup)].push_back(&r);
        return g;
    }
    for (const auto& r : records) {
        if (r.label == 1) {
            if (!r.method)
                throw DataError("fake record " + r.sample_id + " lacks a method tag");
            g[data::to_string(*r.method)].push_back(&r);
        }
    }
    for (const auto& r : records) {
        if (r.label == 0)
            for (auto& [key, vec] : g) vec.push_back(&r);
    }
    return g;
}

double auc_of(std::span<const PredictionRecord* const> recs) {
    std::vector<double> pos, neg;
    for (const auto* r : recs)
        (r->label == 1 ? pos : neg).push_back(r->score);
    if (pos.empty() || neg.empty())
        throw SingleClass("AUC needs at least one record of each class");
    std::sort(neg.begin(), neg.end());
    std::uint64_t wins = 0, ties = 0;
    for (const double s : pos) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), s);
        const auto hi = std::upper_bound(neg.begin(), neg.end(), s);
        wins += std::uint64_t(lo - neg.begin());
        ties += std::uint64_t(hi - lo);
    }
    return double(2 * wins + ties) /
           double(2 * std::uint64_t(pos.size()) * neg.size());
}

std::vector<const PredictionRecord*> to_ptrs(
    std::span<const PredictionRecord> records) {
    std::vector<const PredictionRecord*> p;
    p.reserve(records.size());
    for (const auto& r : records) p.push_back(&r);
    return p;
}

struct Counts {
    int real = 0, fake = 0, fp = 0, tp = 0, correct = 0;
};

Counts count(std::span<const PredictionRecord* const> recs, double threshold) {
    Counts c;
    for (const auto* r : recs) {
        const bool pred = predicted_fake(r->score, threshold);
        if (r->label == 1) {
            ++c.fake;
            if (pred) ++c.tp;
        } else {
            ++c.real;
            if (pred) ++c.fp;
        }
        if (int(pred) == r->label) ++c.correct;
    }
    return c;
}

}  // namespace

std::string to_string(GroupBy g) {
    return g == GroupBy::subgroup ? "subgroup" : "method";
}

GroupBy parse_group_by(const std::string& s) {
    if (s == "subgroup") return GroupBy::subgroup;
    if (s == "method") return GroupBy::method;
    throw ConfigError("unknown grouping: " + s);
}

bool predicted_fake(double score, double threshold) { return score >= threshold; }

double roc_auc(std::span<const PredictionRecord> records) {
    const auto p = to_ptrs(records);
    return auc_of(p);
}

double accuracy(std::span<const PredictionRecord> records, double threshold) {
    if (records.empty()) throw DataError("accuracy over empty records");
    const auto p = to_ptrs(records);
    const Counts c = count(p, threshold);
    return double(c.correct) / double(records.size());
}

double f_fpr(std::span<const PredictionRecord> records, double threshold,
             GroupBy group_by, std::vector<std::string>* excluded) {
    const auto p = to_ptrs(records);
    const Counts overall = count(p, threshold);
    if (overall.real == 0)
        throw NoRealSamples("false-positive fairness needs real samples");
    const double fpr_overall = double(overall.fp) / double(overall.real);

    double sum = 0.0;
    for (const auto& [key, recs] : group_records(records, group_by)) {
        const Counts c = count(recs, threshold);
        if (c.real == 0) {
            if (excluded) excluded->push_back(key);
            continue;
        }
        sum += std::abs(double(c.fp) / double(c.real) - fpr_overall);
    }
    return sum;
}

double f_mag(std::span<const PredictionRecord> records, MagVariant variant,
             double threshold, GroupBy group_by,
             std::vector<std::string>* excluded) {
    std::vector<double> values;
    for (const auto& [key, recs] : group_records(records, group_by)) {
        if (variant == MagVariant::auc) {
            const Counts c = count(recs, threshold);
            if (c.real == 0 || c.fake == 0) {
                if (excluded) excluded->push_back(key);
                continue;
            }
            values.push_back(auc_of(recs));
        } else {
            if (recs.empty()) continue;
            const Counts c = count(recs, threshold);
            values.push_back(double(c.correct) / double(recs.size()));
        }
    }
    if (values.empty())
        throw FewerThanTwoGroups("no group supports the requested metric");
    if (values.size() == 1) return 0.0;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return *hi - *lo;
}

double f_meo(std::span<const PredictionRecord> records, double threshold,
             GroupBy group_by, std::vector<std::string>* excluded) {
    // rates[j]: P(predict fake | true fake), P(predict real | true fake),
    //           P(predict fake | true real), P(predict real | true real)
    std::vector<std::array<double, 4>> rates;
    for (const auto& [key, recs] : group_records(records, group_by)) {
        const Counts c = count(recs, threshold);
        if (c.real == 0 || c.fake == 0) {
            if (excluded) excluded->push_back(key);
            continue;
        }
        const double tpr = double(c.tp) / double(c.fake);
        const double fpr = double(c.fp) / double(c.real);
        rates.push_back({tpr, 1.0 - tpr, fpr, 1.0 - fpr});
    }
    if (rates.empty())
        throw NoValidGroupPair("no group has records of both classes");
    double worst = 0.0;
    for (int j = 0; j < 4; ++j) {
        double lo = rates[0][j], hi = rates[0][j];
        for (const auto& r : rates) {
            lo = std::min(lo, r[j]);
            hi = std::max(hi, r[j]);
        }
        worst = std::max(worst, hi - lo);
    }
    return worst;
}

MetricsReport subgroup_report(std::span<const PredictionRecord> records,
                              double threshold, GroupBy group_by) {
    if (records.empty()) throw DataError("report over empty records");
    MetricsReport rep;
    rep.threshold = threshold;
    rep.group_by = group_by;

    const auto all = to_ptrs(records);
    const Counts oc = count(all, threshold);
    rep.overall.n_real = oc.real;
    rep.overall.n_fake = oc.fake;
    rep.overall.acc = double(oc.correct) / double(records.size());
    rep.overall.auc = auc_of(all);
    if (oc.real > 0) rep.overall.fpr = double(oc.fp) / double(oc.real);

    for (const auto& [key, recs] : group_records(records, group_by)) {
        GroupMetrics gm;
        const Counts c = count(recs, threshold);
        gm.n_real = c.real;
        gm.n_fake = c.fake;
        gm.acc = recs.empty() ? 0.0 : double(c.correct) / double(recs.size());
        if (c.real > 0) gm.fpr = double(c.fp) / double(c.real);
        if (c.real > 0 && c.fake > 0) gm.auc = auc_of(recs);
        rep.per_group.emplace(key, gm);
    }

    rep.fairness.f_fpr =
        f_fpr(records, threshold, group_by, &rep.exclusions["f_fpr"]);
    rep.fairness.f_mag_auc = f_mag(records, MagVariant::auc, threshold, group_by,
                                   &rep.exclusions["f_mag_auc"]);
    rep.fairness.f_mag_acc = f_mag(records, MagVariant::acc, threshold, group_by,
                                   &rep.exclusions["f_mag_acc"]);
    rep.fairness.f_meo = f_meo(records, threshold, group_by,
                               &rep.exclusions["f_meo"]);
    for (auto it = rep.exclusions.begin(); it != rep.exclusions.end();)
        it = it->second.empty() ? rep.exclusions.erase(it) : std::next(it);
    return rep;
}

RobustnessDelta robustness_delta(const MetricsReport& clean,
                                 const MetricsReport& perturbed) {
    if (clean.group_by != perturbed.group_by ||
        clean.threshold != perturbed.threshold)
        throw MismatchedReports("reports use different grouping or threshold");
    if (!clean.overall.auc || !perturbed.overall.auc)
        throw MismatchedReports("reports lack an overall AUC");
    RobustnessDelta d;
    d.delta_f_fpr = perturbed.fairness.f_fpr - clean.fairness.f_fpr;
    d.delta_f_mag = perturbed.fairness.f_mag_auc - clean.fairness.f_mag_auc;
    d.delta_auc = *perturbed.overall.auc - *clean.overall.auc;
    return d;
}

namespace {

nlohmann::json group_json(const GroupMetrics& g) {
    nlohmann::json j;
    j["auc"] = g.auc ? nlohmann::json(*g.auc) : nlohmann::json(nullptr);
    j["acc"] = g.acc;
    j["fpr"] = g.fpr ? nlohmann::json(*g.fpr) : nlohmann::json(nullptr);
    j["n_real"] = g.n_real;
    j["n_fake"] = g.n_fake;
    return j;
}

std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["threshold"] = report.threshold;
    j["group_by"] = to_string(report.group_by);
    j["overall"] = group_json(report.overall);
    j["per_group"] = nlohmann::json::object();
    for (const auto& [key, gm] : report.per_group) j["per_group"][key] = group_json(gm);
    j["fairness"] = {{"f_fpr", report.fairness.f_fpr},
                     {"f_mag_auc", report.fairness.f_mag_auc},
                     {"f_mag_acc", report.fairness.f_mag_acc},
                     {"f_meo", report.fairness.f_meo}};
    j["exclusions"] = nlohmann::json::object();
    for (const auto& [metric, groups] : report.exclusions)
        j["exclusions"][metric] = groups;
    j["dataset"] = report.dataset;
    j["disturbance"] = report.disturbance;
    return j.dump(2) + "\n";
}

namespace {

void require_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                  const std::string& scope) {
    if (!j.is_object()) throw DataError(scope + " must be a JSON object");
    for (const char* k : keys)
        if (!j.contains(k)) throw DataError(scope + " is missing key \"" + k + "\"");
    for (const auto& [k, v] : j.items()) {
        bool known = false;
        for (const char* want : keys) known |= (k == want);
        if (!known) throw DataError(scope + " has unknown key \"" + k + "\"");
    }
}

GroupMetrics group_from_json(const nlohmann::json& j, const std::string& scope) {
    require_keys(j, {"auc", "acc", "fpr", "n_real", "n_fake"}, scope);
    GroupMetrics g;
    if (!j["auc"].is_null()) g.auc = j["auc"].get<double>();
    g.acc = j["acc"].get<double>();
    if (!j["fpr"].is_null()) g.fpr = j["fpr"].get<double>();
    g.n_real = j["n_real"].get<int>();
    g.n_fake = j["n_fake"].get<int>();
    return g;
}

}  // namespace

MetricsReport report_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed report JSON: ") + e.what());
    }
    try {
        require_keys(j,
                     {"threshold", "group_by", "overall", "per_group", "fairness",
                      "exclusions", "dataset", "disturbance"},
                     "report");
        MetricsReport r;
        r.threshold = j["threshold"].get<double>();
        r.group_by = parse_group_by(j["group_by"].get<std::string>());
        r.overall = group_from_json(j["overall"], "overall");
        if (!j["per_group"].is_object())
            throw DataError("per_group must be a JSON object");
        for (const auto& [key, v] : j["per_group"].items())
            r.per_group[key] = group_from_json(v, "per_group." + key);
        require_keys(j["fairness"], {"f_fpr", "f_mag_auc", "f_mag_acc", "f_meo"},
                     "fairness");
        r.fairness.f_fpr = j["fairness"]["f_fpr"].get<double>();
        r.fairness.f_mag_auc = j["fairness"]["f_mag_auc"].get<double>();
        r.fairness.f_mag_acc = j["fairness"]["f_mag_acc"].get<double>();
        r.fairness.f_meo = j["fairness"]["f_meo"].get<double>();
        if (!j["exclusions"].is_object())
            throw DataError("exclusions must be a JSON object");
        for (const auto& [metric, v] : j["exclusions"].items())
            r.exclusions[metric] = v.get<std::vector<std::string>>();
        r.dataset = j["dataset"].get<std::string>();
        r.disturbance = j["disturbance"].get<std::string>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed report JSON: ") + e.what());
    }
}

void write_report_json(const std::filesystem::path& path,
                       const MetricsReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << report_to_json(report);
}

MetricsReport read_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return report_from_json(buf.str());
}

void write_report_csv(const std::filesystem::path& path,
                      const MetricsReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "group,n_real,n_fake,auc,acc,fpr\n";
    const auto row = [&](const std::string& name, const GroupMetrics& g) {
        out << name << ',' << g.n_real << ',' << g.n_fake << ','
            << (g.auc ? fmt_double(*g.auc) : "") << ',' << fmt_double(g.acc) << ','
            << (g.fpr ? fmt_double(*g.fpr) : "") << '\n';
    };
    row("overall", report.overall);
    for (const auto& [key, gm] : report.per_group) row(key, gm);
}

void write_predictions(const std::filesystem::path& path,
                       std::span<const PredictionRecord> records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "sample_id,score,label,gender,race,method\n";
    for (const auto& r : records) {
        out << r.sample_id << ',' << fmt_double(r.score) << ',' << r.label << ','
            << data::to_string(r.subgroup.gender) << ','
            << data::to_string(r.subgroup.race) << ','
            << (r.method ? data::to_string(*r.method) : "") << '\n';
    }
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "sample_id,score,label,gender,race,method")
        throw DataError("bad prediction header in " + path.string());
    std::vector<PredictionRecord> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (line.back() == ',') cols.push_back("");
        if (cols.size() != 6)
            throw DataError("line " + std::to_string(line_no) + ": want 6 columns");
        PredictionRecord r;
        r.sample_id = cols[0];
        const auto res =
            std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), r.score);
        if (res.ec != std::errc() || res.ptr != cols[1].data() + cols[1].size())
            throw DataError("line " + std::to_string(line_no) + ": bad score");
        if (cols[2] != "0" && cols[2] != "1")
            throw DataError("line " + std::to_string(line_no) + ": bad label");
        r.label = cols[2] == "1" ? 1 : 0;
        r.subgroup.gender = data::parse_gender(cols[3]);
        r.subgroup.race = data::parse_race(cols[4]);
        if (!cols[5].empty()) r.method = data::parse_method(cols[5]);
        if (r.label == 1 && !r.method)
            throw DataError("line " + std::to_string(line_no) +
                            ": fake record needs a method");
        if (r.label == 0 && r.method)
            throw DataError("line " + std::to_string(line_no) +
                            ": real record carries a method");
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace mislead::metrics
