#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mislead/common.hpp"
#include "mislead/tensor.hpp"

namespace mislead::data {

struct ManifestError : DataError {
    using DataError::DataError;
};
struct MissingColumn : ManifestError {
    using ManifestError::ManifestError;
};
struct BadEnumValue : ManifestError {
    int line;
    BadEnumValue(int line_, const std::string& msg) : ManifestError(msg), line(line_) {}
};
struct DuplicateId : ManifestError {
    int line;
    DuplicateId(int line_, const std::string& msg) : ManifestError(msg), line(line_) {}
};
struct MissingImageFile : ManifestError {
    using ManifestError::ManifestError;
};

enum class Gender { M, F };
enum class Race { A, B, W, O };
enum class Label { real = 0, fake = 1 };
enum class Split { train, val, test };
enum class Method { DF, F2F, FS, NT, FST, SYNTH };

// One of the 8 gender x race intersections.
struct DemographicKey {
    Gender gender;
    Race race;

    auto operator<=>(const DemographicKey&) const = default;
};

std::string format_key(DemographicKey k);           // "M-W"
DemographicKey parse_key(const std::string& text);  // throws ManifestError
const std::array<DemographicKey, 8>& all_keys();

std::string to_string(Gender g);
std::string to_string(Race r);
std::string to_string(Split s);
std::string to_string(Method m);
Gender parse_gender(const std::string& s);
Race parse_race(const std::string& s);
Split parse_split(const std::string& s);
Method parse_method(const std::string& s);

struct ManifestEntry {
    std::string id;
    std::string path;  // relative to manifest root
    Label label = Label::real;
    DemographicKey subgroup{};
    std::optional<Method> method;  // present iff label == fake
    Split split = Split::train;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    const ManifestEntry* find(const std::string& id) const;
};

// In-memory sample: image in [0,1] plus metadata.
struct Sample {
    std::string id;
    Tensor image;
    Label label = Label::real;
    DemographicKey subgroup{};
    std::optional<Method> method;
    Split split = Split::train;
};

// CSV with header `id,path,label,gender,race,method,split`. Paths are taken
// relative to the manifest file's directory. Image files are checked for
// existence here; decoding happens at load_sample time.
DatasetManifest parse_manifest(const std::filesystem::path& csv_path);

// Canonical form: entries sorted by id, fields formatted exactly as parsed.
// write(parse(f)) is byte-identical for a canonically ordered input.
void write_manifest(const DatasetManifest& m, const std::filesystem::path& csv_path);

Sample load_sample(const DatasetManifest& m, const ManifestEntry& e);

std::map<DemographicKey, std::size_t> subgroup_counts(const DatasetManifest& m,
                                                      Split split);

}  // namespace mislead::data
