#pragma once

#include "fbsde/training.hpp"

namespace fbsde {

/// Fully resolved run configuration: the problem instance plus training
/// setup, and a flat echo of every resolved key for logging.
struct ResolvedConfig {
    std::string problem_name;
    std::optional<int> problem_dim;
    std::map<std::string, double> problem_overrides;
    TrainConfig train;
    std::vector<std::pair<std::string, std::string>> echo;

    PDEProblem make() const { return make_problem(problem_name, problem_dim, problem_overrides); }
};

/// Parse the flat sectioned key = value format. Sections: [problem],
/// [network], [loss], [train]. '#' starts a comment. Unknown keys and type
/// mismatches are rejected with the offending line number.
ResolvedConfig load_config(const std::string& path, const std::string& preset = "paper",
                           std::optional<uint64_t> seed_override = {});

/// Same, from an in-memory string (tests).
ResolvedConfig parse_config(const std::string& text, const std::string& preset = "paper",
                            std::optional<uint64_t> seed_override = {});

/// 64-bit FNV-1a of a file's bytes, hex-encoded; manifests pin configs by it.
std::string file_hash_hex(const std::string& path);

} // namespace fbsde
