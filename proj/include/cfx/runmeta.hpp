#ifndef CFX_RUNMETA_HPP
#define CFX_RUNMETA_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cfx {

// Resolved run configuration echoed into every output file, either as a
// '#' comment line (CSV) or a "meta" object (JSON).
struct RunMeta {
    std::string config_hash;  // 16 hex digits
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> config;  // sorted key/value echo

    std::string comment() const {
        std::string out = "cfx config=" + config_hash + " seed=" + std::to_string(seed);
        for (const auto& [k, v] : config) out += " " + k + "=" + v;
        return out;
    }
};

}  // namespace cfx

#endif
