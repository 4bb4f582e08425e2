#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "subkit/common.hpp"
#include "subkit/manifest.hpp"

using namespace subkit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;

    TempDir() : path(fs::temp_directory_path() / "subkit-manifest-test") {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }

    std::string file(const std::string& name, const std::string& content) const {
        const auto p = path / name;
        std::ofstream out(p, std::ios::binary);
        out << content;
        return p.string();
    }
};

RunManifest sample(const TempDir& dir) {
    RunManifest m;
    m.tool_version = "0.1.0";
    m.config_path = dir.file("a.cfg", "epochs = 2\n");
    m.config_hash = file_hash_hex(m.config_path);
    m.dataset_path = dir.file("data.csv", "id,query,title,locale,label\n");
    m.dataset_hash = file_hash_hex(m.dataset_path);
    m.plan_path = dir.file("plan.csv", "example_id,fold\n");
    m.plan_hash = file_hash_hex(m.plan_path);
    m.seeds = {7, 8, 9};
    m.output_dir = (dir.path / "out").string();
    return m;
}

}  // namespace

TEST_CASE("file_hash_hex: deterministic, content-sensitive, 16 hex digits") {
    TempDir dir;
    const auto a = dir.file("a.txt", "hello");
    const auto b = dir.file("b.txt", "hello");
    const auto c = dir.file("c.txt", "hello!");
    CHECK(file_hash_hex(a) == file_hash_hex(a));
    CHECK(file_hash_hex(a) == file_hash_hex(b));
    CHECK(file_hash_hex(a) != file_hash_hex(c));
    CHECK(file_hash_hex(a).size() == 16);
    CHECK_THROWS_AS(file_hash_hex((dir.path / "missing").string()), DataError);
}

TEST_CASE("manifest round trip preserves every field") {
    TempDir dir;
    const auto m = sample(dir);
    const auto path = (dir.path / "manifest.json").string();
    m.save(path);
    const auto back = RunManifest::load(path);
    CHECK(back.tool_version == m.tool_version);
    CHECK(back.config_path == m.config_path);
    CHECK(back.config_hash == m.config_hash);
    CHECK(back.dataset_path == m.dataset_path);
    CHECK(back.dataset_hash == m.dataset_hash);
    CHECK(back.plan_path == m.plan_path);
    CHECK(back.plan_hash == m.plan_hash);
    CHECK(back.seeds == m.seeds);
    CHECK(back.output_dir == m.output_dir);
    CHECK(back.diff(m).empty());
}

TEST_CASE("manifest load rejects missing files, bad JSON and missing fields") {
    TempDir dir;
    CHECK_THROWS_AS(RunManifest::load((dir.path / "nope.json").string()), DataError);
    const auto bad = dir.file("bad.json", "{not json");
    CHECK_THROWS_AS(RunManifest::load(bad), DataError);
    const auto partial = dir.file("partial.json", "{\"tool_version\": \"0.1.0\"}");
    CHECK_THROWS_AS(RunManifest::load(partial), DataError);
}

TEST_CASE("verify_hashes flags the first stale input by name") {
    TempDir dir;
    auto m = sample(dir);
    CHECK_NOTHROW(m.verify_hashes());

    std::ofstream(m.dataset_path, std::ios::binary) << "id,query,title,locale,label\n1,q,t,us,1\n";
    try {
        m.verify_hashes();
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("dataset") != std::string::npos);
    }

    // empty paths are skipped entirely
    m.dataset_path.clear();
    CHECK_NOTHROW(m.verify_hashes());
}

TEST_CASE("diff names exactly the fields that changed") {
    TempDir dir;
    const auto m = sample(dir);
    auto other = m;
    CHECK(m.diff(other).empty());
    other.tool_version = "0.2.0";
    other.seeds = {7};
    other.config_path = "elsewhere.cfg";  // path moves are fine; hashes govern
    CHECK(m.diff(other) == std::vector<std::string>{"tool_version", "seeds"});
}
