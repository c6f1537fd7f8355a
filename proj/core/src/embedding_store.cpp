#include "semad/embedding_store.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semad/errors.hpp"

namespace semad {

namespace {

constexpr std::array<unsigned char, 4> kMagic{0x53, 0x45, 0x4D, 0x44};  // "SEMD"
constexpr std::uint8_t kDtypeF32 = 0;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

nlohmann::ordered_json record_to_json(const PromptRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["prompt"] = r.prompt;
    j["group"] = to_string(r.group);
    j["role"] = to_string(r.role);
    j["anchor_id"] = r.anchor_id ? nlohmann::ordered_json(*r.anchor_id) : nlohmann::ordered_json(nullptr);
    j["layer"] = r.layer ? nlohmann::ordered_json(*r.layer) : nlohmann::ordered_json(nullptr);
    return j;
}

PromptRecord record_from_json(const nlohmann::json& j, std::size_t index) {
    auto where = [&] { return "manifest record " + std::to_string(index); };
    if (!j.is_object()) throw ValidationError(where() + ": not an object");
    auto str_field = [&](const char* key) -> std::string {
        auto it = j.find(key);
        if (it == j.end() || !it->is_string()) throw ValidationError(where() + ": missing string field '" + key + "'");
        return it->get<std::string>();
    };
    PromptRecord r;
    r.id = str_field("id");
    r.prompt = str_field("prompt");
    r.group = parse_group(str_field("group"));
    r.role = parse_role(str_field("role"));
    if (auto it = j.find("anchor_id"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw ValidationError(where() + ": anchor_id must be a string or null");
        r.anchor_id = it->get<std::string>();
    }
    if (auto it = j.find("layer"); it != j.end() && !it->is_null()) {
        if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
            throw ValidationError(where() + ": layer must be a non-negative integer or null");
        r.layer = it->get<std::uint32_t>();
    }
    return r;
}

}  // namespace

std::string_view to_string(Group g) noexcept {
    switch (g) {
        case Group::trigger: return "trigger";
        case Group::target_relevant: return "target_relevant";
        case Group::control: return "control";
    }
    return "control";
}

std::string_view to_string(Role r) noexcept {
    switch (r) {
        case Role::anchor: return "anchor";
        case Role::neighbor: return "neighbor";
        case Role::standalone: return "standalone";
    }
    return "standalone";
}

Group parse_group(std::string_view s) {
    if (s == "trigger") return Group::trigger;
    if (s == "target_relevant") return Group::target_relevant;
    if (s == "control") return Group::control;
    throw ValidationError("unknown group '" + std::string(s) + "'");
}

Role parse_role(std::string_view s) {
    if (s == "anchor") return Role::anchor;
    if (s == "neighbor") return Role::neighbor;
    if (s == "standalone") return Role::standalone;
    throw ValidationError("unknown role '" + std::string(s) + "'");
}

EmbeddingSet::EmbeddingSet(std::size_t n, std::size_t d, std::vector<float> data, std::vector<PromptRecord> records)
    : n_(n), d_(d), data_(std::move(data)), records_(std::move(records)) {
    if (n_ == 0 || d_ == 0) throw ValidationError("embedding set must have n >= 1 and d >= 1");
    if (data_.size() != n_ * d_)
        throw ValidationError("length mismatch: matrix holds " + std::to_string(data_.size()) + " values, expected n*d = " +
                              std::to_string(n_ * d_));
    if (records_.size() != n_)
        throw ValidationError("length mismatch: " + std::to_string(records_.size()) + " records for n = " + std::to_string(n_));
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < d_; ++j)
            if (!std::isfinite(data_[i * d_ + j]))
                throw ValidationError("non-finite value at row " + std::to_string(i) + ", column " + std::to_string(j));
    index_.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i) {
        if (!index_.emplace(records_[i].id, i).second)
            throw ValidationError("duplicate id '" + records_[i].id + "' at row " + std::to_string(i));
    }
    for (std::size_t i = 0; i < n_; ++i) {
        const auto& r = records_[i];
        if (r.role == Role::neighbor && !r.anchor_id)
            throw ValidationError("neighbor '" + r.id + "' has no anchor_id");
        if (r.anchor_id && !index_.contains(*r.anchor_id))
            throw ValidationError("dangling anchor_id '" + *r.anchor_id + "' on record '" + r.id + "'");
    }
}

std::optional<std::size_t> EmbeddingSet::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

Eigen::VectorXd EmbeddingSet::row_vector(std::size_t i) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(d_));
    const auto r = row(i);
    for (std::size_t j = 0; j < d_; ++j) v(static_cast<Eigen::Index>(j)) = r[j];
    return v;
}

Eigen::MatrixXd EmbeddingSet::to_matrix() const {
    using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMajorF> m(data_.data(), static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(d_));
    return m.cast<double>();
}

EmbeddingSet EmbeddingSet::with_data(const Eigen::MatrixXd& m) const {
    if (static_cast<std::size_t>(m.rows()) != n_ || static_cast<std::size_t>(m.cols()) != d_)
        throw ValidationError("replacement matrix shape does not match the embedding set");
    std::vector<float> data(n_ * d_);
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < d_; ++j)
            data[i * d_ + j] = static_cast<float>(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    return EmbeddingSet(n_, d_, std::move(data), records_);
}

std::filesystem::path manifest_path(const std::filesystem::path& container) {
    auto p = container;
    p.replace_extension(".manifest.json");
    return p;
}

void write_set(const EmbeddingSet& set, const std::filesystem::path& path) {
    std::string bytes;
    bytes.reserve(kHeaderBytes + set.data().size() * 4);
    bytes.append(reinterpret_cast<const char*>(kMagic.data()), kMagic.size());
    put_u32(bytes, kFormatVersion);
    put_u64(bytes, set.rows());
    put_u64(bytes, set.dim());
    bytes.push_back(static_cast<char>(kDtypeF32));
    bytes.append(3, '\0');
    for (float v : set.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(v));

    nlohmann::ordered_json manifest;
    manifest["records"] = nlohmann::ordered_json::array();
    for (const auto& r : set.records()) manifest["records"].push_back(record_to_json(r));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed on '" + path.string() + "'");
    out.close();

    const auto mpath = manifest_path(path);
    std::ofstream mout(mpath, std::ios::trunc);
    if (!mout) throw IoError("cannot open '" + mpath.string() + "' for writing");
    mout << manifest.dump(2) << '\n';
    if (!mout) throw IoError("write failed on '" + mpath.string() + "'");
}

EmbeddingSet read_set(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on '" + path.string() + "'");

    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < kHeaderBytes) throw ValidationError("'" + path.string() + "': truncated header");
    if (!std::equal(kMagic.begin(), kMagic.end(), p)) throw ValidationError("'" + path.string() + "': bad magic");
    const auto version = static_cast<std::uint32_t>(get_le(p + 4, 4));
    if (version != kFormatVersion)
        throw ValidationError("'" + path.string() + "': version mismatch (found " + std::to_string(version) + ", expected 1)");
    const std::uint64_t n = get_le(p + 8, 8);
    const std::uint64_t d = get_le(p + 16, 8);
    if (p[24] != kDtypeF32) throw ValidationError("'" + path.string() + "': unsupported dtype " + std::to_string(p[24]));
    if (p[25] != 0 || p[26] != 0 || p[27] != 0) throw ValidationError("'" + path.string() + "': reserved bytes not zero");
    if (n == 0 || d == 0) throw ValidationError("'" + path.string() + "': n and d must be >= 1");

    const std::uint64_t payload = bytes.size() - kHeaderBytes;
    if (payload % 4 != 0 || d > UINT64_MAX / 4 / n || payload / 4 != n * d)
        throw ValidationError("'" + path.string() + "': length mismatch between header (n=" + std::to_string(n) +
                              ", d=" + std::to_string(d) + ") and payload of " + std::to_string(payload) + " bytes");

    std::vector<float> data(n * d);
    for (std::size_t k = 0; k < data.size(); ++k)
        data[k] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p + kHeaderBytes + 4 * k, 4)));

    const auto mpath = manifest_path(path);
    std::ifstream min(mpath);
    if (!min) throw IoError("cannot open manifest '" + mpath.string() + "'");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(min);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("'" + mpath.string() + "': malformed JSON: " + e.what());
    }
    if (!manifest.is_object() || !manifest.contains("records") || !manifest["records"].is_array())
        throw ValidationError("'" + mpath.string() + "': expected an object with a 'records' array");
    const auto& jrecords = manifest["records"];
    if (jrecords.size() != n)
        throw ValidationError("length mismatch: manifest has " + std::to_string(jrecords.size()) + " records, header n=" +
                              std::to_string(n));
    std::vector<PromptRecord> records;
    records.reserve(n);
    for (std::size_t i = 0; i < jrecords.size(); ++i) records.push_back(record_from_json(jrecords[i], i));

    return EmbeddingSet(n, d, std::move(data), std::move(records));
}

PairedEmbeddings pair(EmbeddingSet clean, EmbeddingSet modified) {
    if (clean.dim() != modified.dim())
        throw ValidationError("dimension mismatch: clean d=" + std::to_string(clean.dim()) +
                              ", modified d=" + std::to_string(modified.dim()));
    if (clean.rows() != modified.rows())
        throw ValidationError("row count mismatch: clean n=" + std::to_string(clean.rows()) +
                              ", modified n=" + std::to_string(modified.rows()));
    for (std::size_t i = 0; i < clean.rows(); ++i) {
        if (clean.record(i) != modified.record(i))
            throw ValidationError("metadata divergence at index " + std::to_string(i) + " ('" + clean.record(i).id +
                                  "' vs '" + modified.record(i).id + "')");
    }
    return PairedEmbeddings(std::move(clean), std::move(modified));
}

}  // namespace semad
