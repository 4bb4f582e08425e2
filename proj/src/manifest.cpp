#include "subkit/manifest.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "subkit/common.hpp"
#include "subkit/rng.hpp"

namespace subkit {

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("hash: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    char out[24];
    std::snprintf(out, sizeof out, "%016" PRIx64, fnv1a64(bytes));
    return out;
}

void RunManifest::save(const std::string& path) const {
    nlohmann::json j;
    j["tool_version"] = tool_version;
    j["config_path"] = config_path;
    j["config_hash"] = config_hash;
    j["dataset_path"] = dataset_path;
    j["dataset_hash"] = dataset_hash;
    j["plan_path"] = plan_path;
    j["plan_hash"] = plan_hash;
    j["seeds"] = seeds;
    j["output_dir"] = output_dir;
    std::ofstream out(path);
    if (!out) throw DataError("manifest: cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest: invalid JSON in '" + path + "': " + e.what());
    }
    RunManifest m;
    try {
        m.tool_version = j.at("tool_version").get<std::string>();
        m.config_path = j.at("config_path").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.dataset_path = j.at("dataset_path").get<std::string>();
        m.dataset_hash = j.at("dataset_hash").get<std::string>();
        m.plan_path = j.at("plan_path").get<std::string>();
        m.plan_hash = j.at("plan_hash").get<std::string>();
        m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        m.output_dir = j.at("output_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest: missing or malformed field in '" + path + "': " + e.what());
    }
    return m;
}

void RunManifest::verify_hashes() const {
    if (!config_path.empty() && file_hash_hex(config_path) != config_hash)
        throw DataError("manifest: config file '" + config_path + "' no longer matches its hash");
    if (!dataset_path.empty() && file_hash_hex(dataset_path) != dataset_hash)
        throw DataError("manifest: dataset '" + dataset_path + "' no longer matches its hash");
    if (!plan_path.empty() && file_hash_hex(plan_path) != plan_hash)
        throw DataError("manifest: fold plan '" + plan_path + "' no longer matches its hash");
}

std::vector<std::string> RunManifest::diff(const RunManifest& other) const {
    std::vector<std::string> out;
    if (tool_version != other.tool_version) out.push_back("tool_version");
    if (config_hash != other.config_hash) out.push_back("config_hash");
    if (dataset_hash != other.dataset_hash) out.push_back("dataset_hash");
    if (plan_hash != other.plan_hash) out.push_back("plan_hash");
    if (seeds != other.seeds) out.push_back("seeds");
    return out;
}

}  // namespace subkit
