#include "mislead/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "mislead/image.hpp"

namespace mislead::data {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

const std::vector<std::string> kColumns = {"id",   "path",   "label", "gender",
                                           "race", "method", "split"};

}  // namespace

std::string to_string(Gender g) { return g == Gender::M ? "M" : "F"; }

std::string to_string(Race r) {
    switch (r) {
        case Race::A: return "A";
        case Race::B: return "B";
        case Race::W: return "W";
        default: return "O";
    }
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

std::string to_string(Method m) {
    switch (m) {
        case Method::DF: return "DF";
        case Method::F2F: return "F2F";
        case Method::FS: return "FS";
        case Method::NT: return "NT";
        case Method::FST: return "FST";
        default: return "SYNTH";
    }
}

Gender parse_gender(const std::string& s) {
    if (s == "M") return Gender::M;
    if (s == "F") return Gender::F;
    throw ManifestError("bad gender value '" + s + "'");
}

Race parse_race(const std::string& s) {
    if (s == "A") return Race::A;
    if (s == "B") return Race::B;
    if (s == "W") return Race::W;
    if (s == "O") return Race::O;
    throw ManifestError("bad race value '" + s + "'");
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ManifestError("bad split value '" + s + "'");
}

Method parse_method(const std::string& s) {
    if (s == "DF") return Method::DF;
    if (s == "F2F") return Method::F2F;
    if (s == "FS") return Method::FS;
    if (s == "NT") return Method::NT;
    if (s == "FST") return Method::FST;
    if (s == "SYNTH") return Method::SYNTH;
    throw ManifestError("bad method value '" + s + "'");
}

std::string format_key(DemographicKey k) {
    return to_string(k.gender) + "-" + to_string(k.race);
}

DemographicKey parse_key(const std::string& text) {
    const auto dash = text.find('-');
    if (dash == std::string::npos)
        throw ManifestError("bad subgroup key '" + text + "'");
    return {parse_gender(text.substr(0, dash)), parse_race(text.substr(dash + 1))};
}

const std::array<DemographicKey, 8>& all_keys() {
    static const std::array<DemographicKey, 8> keys = {{
        {Gender::M, Race::A},
        {Gender::M, Race::B},
        {Gender::M, Race::W},
        {Gender::M, Race::O},
        {Gender::F, Race::A},
        {Gender::F, Race::B},
        {Gender::F, Race::W},
        {Gender::F, Race::O},
    }};
    return keys;
}

const ManifestEntry* DatasetManifest::find(const std::string& id) const {
    for (const auto& e : entries)
        if (e.id == id) return &e;
    return nullptr;
}

DatasetManifest parse_manifest(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw ManifestError("cannot open manifest: " + csv_path.string());

    std::string line;
    if (!std::getline(in, line)) throw MissingColumn("empty manifest file");
    const auto header = split_csv_line(line);
    if (header != kColumns) {
        for (const auto& col : kColumns)
            if (std::find(header.begin(), header.end(), col) == header.end())
                throw MissingColumn("manifest missing column '" + col + "'");
        throw MissingColumn("manifest columns must be exactly id,path,label,gender,race,method,split");
    }

    DatasetManifest m;
    m.root = csv_path.has_parent_path() ? csv_path.parent_path()
                                        : std::filesystem::path(".");
    std::set<std::string> seen;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != kColumns.size())
            throw BadEnumValue(line_no, "line " + std::to_string(line_no) +
                                            ": expected 7 fields, got " +
                                            std::to_string(f.size()));
        ManifestEntry e;
        e.id = f[0];
        e.path = f[1];
        try {
            if (f[2] == "0")
                e.label = Label::real;
            else if (f[2] == "1")
                e.label = Label::fake;
            else
                throw ManifestError("bad label value '" + f[2] + "'");
            e.subgroup = {parse_gender(f[3]), parse_race(f[4])};
            if (!f[5].empty()) e.method = parse_method(f[5]);
            e.split = parse_split(f[6]);
        } catch (const ManifestError& err) {
            throw BadEnumValue(line_no,
                               "line " + std::to_string(line_no) + ": " + err.what());
        }
        if (e.label == Label::fake && !e.method)
            throw BadEnumValue(line_no, "line " + std::to_string(line_no) +
                                            ": fake sample without a method tag");
        if (e.label == Label::real && e.method)
            throw BadEnumValue(line_no, "line " + std::to_string(line_no) +
                                            ": real sample with a method tag");
        if (!seen.insert(e.id).second)
            throw DuplicateId(line_no, "line " + std::to_string(line_no) +
                                           ": duplicate id '" + e.id + "'");
        if (!std::filesystem::exists(m.root / e.path))
            throw MissingImageFile("missing image file: " + (m.root / e.path).string());
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& csv_path) {
    auto sorted = m.entries;
    std::sort(sorted.begin(), sorted.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });

    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw ManifestError("cannot write manifest: " + csv_path.string());
    out << "id,path,label,gender,race,method,split\n";
    for (const auto& e : sorted) {
        out << e.id << ',' << e.path << ',' << (e.label == Label::fake ? '1' : '0') << ','
            << to_string(e.subgroup.gender) << ',' << to_string(e.subgroup.race) << ','
            << (e.method ? to_string(*e.method) : "") << ',' << to_string(e.split)
            << '\n';
    }
}

Sample load_sample(const DatasetManifest& m, const ManifestEntry& e) {
    Sample s;
    s.id = e.id;
    s.image = img::load_png(m.root / e.path);
    s.label = e.label;
    s.subgroup = e.subgroup;
    s.method = e.method;
    s.split = e.split;
    return s;
}

std::map<DemographicKey, std::size_t> subgroup_counts(const DatasetManifest& m,
                                                      Split split) {
    std::map<DemographicKey, std::size_t> counts;
    for (const auto& k : all_keys()) counts[k] = 0;
    for (const auto& e : m.entries)
        if (e.split == split) ++counts[e.subgroup];
    return counts;
}

}  // namespace mislead::data
