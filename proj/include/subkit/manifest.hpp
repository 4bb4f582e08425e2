#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace subkit {

// FNV-1a hash of a file's raw bytes, as 16 hex digits.
std::string file_hash_hex(const std::string& path);

// Everything needed to reproduce a run byte-for-byte. Written as JSON into
// the output directory; when a run resumes into a directory that already
// holds a manifest, the recorded hashes must match the current inputs.
struct RunManifest {
    std::string tool_version;
    std::string config_path;
    std::string config_hash;
    std::string dataset_path;
    std::string dataset_hash;
    std::string plan_path;
    std::string plan_hash;
    std::vector<std::uint64_t> seeds;
    std::string output_dir;

    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);

    // Recomputes the input hashes from the recorded paths; throws DataError
    // naming the first field whose hash no longer matches.
    void verify_hashes() const;

    // Field-level comparison against another manifest (for resuming).
    std::vector<std::string> diff(const RunManifest& other) const;
};

}  // namespace subkit
