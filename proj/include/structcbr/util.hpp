#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace structcbr {

// Error taxonomy. The CLI maps config_error -> exit 2 and
// missing_artifact_error -> exit 3; everything else is a plain failure.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct missing_artifact_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct dimension_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct execution_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 1469598103934665603ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string to_hex(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

inline std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw missing_artifact_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << content;
}

inline std::string file_hash_hex(const std::string& path) {
    return to_hex(fnv1a64(slurp_file(path)));
}

// All randomness goes through explicitly seeded generators. Sub-streams are
// derived so parallel/per-example work stays deterministic.
using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    uint64_t bytes[2] = {base, stream};
    return fnv1a64(bytes, sizeof(bytes));
}

class Stopwatch {
  public:
    Stopwatch() : start_(clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(clock::now() - start_).count();
    }
    void reset() { start_ = clock::now(); }

  private:
    using clock = std::chrono::steady_clock;
    clock::time_point start_;
};

inline std::vector<std::string> split_ws_lower(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(cur), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace structcbr
