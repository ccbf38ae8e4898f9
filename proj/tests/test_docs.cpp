#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// every TEST_CASE name registered anywhere in the test tree
std::set<std::string> registered_test_names() {
    std::set<std::string> names;
    const fs::path tests_dir = fs::path(HITCERT_SOURCE_DIR) / "tests";
    for (const auto& entry : fs::directory_iterator(tests_dir)) {
        if (entry.path().extension() != ".cpp") continue;
        const std::string text = slurp(entry.path());
        const std::string marker = "TEST_CASE(\"";
        std::size_t pos = 0;
        while ((pos = text.find(marker, pos)) != std::string::npos) {
            pos += marker.size();
            const std::size_t end = text.find('"', pos);
            REQUIRE(end != std::string::npos);
            names.insert(text.substr(pos, end - pos));
            pos = end;
        }
    }
    return names;
}

} // namespace

TEST_CASE("docs: every verification matrix row names an existing test") {
    const fs::path matrix_path = fs::path(HITCERT_SOURCE_DIR) / "docs" / "verification.md";
    REQUIRE(fs::exists(matrix_path));
    const std::string matrix = slurp(matrix_path);
    const std::set<std::string> tests = registered_test_names();

    // matrix rows carry their test references in backticks
    std::vector<std::string> referenced;
    std::size_t pos = 0;
    while ((pos = matrix.find('`', pos)) != std::string::npos) {
        const std::size_t end = matrix.find('`', pos + 1);
        REQUIRE(end != std::string::npos);
        referenced.push_back(matrix.substr(pos + 1, end - pos - 1));
        pos = end + 1;
    }
    REQUIRE(referenced.size() >= 20); // the matrix covers every in-scope guarantee

    for (const std::string& name : referenced) {
        INFO("verification.md references '" << name << "'");
        REQUIRE(tests.count(name) == 1);
    }
}
