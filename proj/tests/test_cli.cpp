#include <catch2/catch_amalgamated.hpp>

#include <hitcert/report.hpp>
#include <hitcert/rng.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using hitcert::Json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(HITCERT_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult result;
    char buf[4096];
    std::size_t got;
    while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) result.out.append(buf, got);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

struct Workspace {
    fs::path dir;
    Workspace() {
        dir = fs::temp_directory_path() /
              ("hitcert_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Workspace() { std::error_code ec; fs::remove_all(dir, ec); }
    std::string file(const std::string& name, const std::string& content) const {
        const fs::path p = dir / name;
        std::ofstream out(p, std::ios::binary);
        out << content;
        return p.string();
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return text;
}

// small synthetic pair: calibration scores spread over [0,1], one strong candidate
std::string pool_csv() {
    std::string text = "f0,f1,y,mu\n";
    hitcert::RngStream rng(31337, 0);
    for (int i = 0; i < 40; ++i) {
        const double x0 = rng.next_gaussian();
        const double x1 = rng.next_gaussian();
        const double mu = 1.0 / (1.0 + std::exp(-(1.5 * x0 + 0.5 * x1 - 1.0)));
        const int y = rng.next_unit() < mu ? 1 : 0;
        text += hitcert::format_double17(x0) + "," + hitcert::format_double17(x1) + "," +
                std::to_string(y) + "," + hitcert::format_double17(mu) + "\n";
    }
    return text;
}

std::string batch_csv() {
    std::string text = "f0,f1,mu\n";
    hitcert::RngStream rng(31338, 0);
    for (int j = 0; j < 4; ++j) {
        const double x0 = rng.next_gaussian() + 1.0;
        const double x1 = rng.next_gaussian();
        const double mu = 1.0 / (1.0 + std::exp(-(1.5 * x0 + 0.5 * x1 - 1.0)));
        text += hitcert::format_double17(x0) + "," + hitcert::format_double17(x1) + "," +
                hitcert::format_double17(mu) + "\n";
    }
    return text;
}

} // namespace

TEST_CASE("cli: certify emits a parseable deterministic report") {
    Workspace ws;
    const std::string pool = ws.file("pool.csv", pool_csv());
    const std::string batch = ws.file("batch.csv", batch_csv());
    const std::string out1 = ws.path("r1.json");
    const std::string out2 = ws.path("r2.json");

    const std::string args = "certify --pool " + pool + " --batch " + batch +
                             " --alpha 0.2 --permutations 300 --seed 99 --weights "
                             "analytic:mu=1,0 --out ";
    REQUIRE(run_cli(args + out1).exit_code == 0);
    REQUIRE(run_cli(args + out2).exit_code == 0);
    REQUIRE(read_file(out1) == read_file(out2)); // byte-identical

    const Json report = Json::parse(read_file(out1));
    REQUIRE(report.contains("config"));
    REQUIRE(report.contains("p_value"));
    REQUIRE(report.contains("certified"));
    REQUIRE_FALSE(report.contains("timings"));
    REQUIRE(report["config"]["seed"].get<std::uint64_t>() == 99);
    const double p = report["p_value"].get<double>();
    REQUIRE(p > 0.0);
    REQUIRE(p <= 1.0);
}

TEST_CASE("cli: design report carries the profile and certify matches its last prefix") {
    Workspace ws;
    const std::string pool = ws.file("pool.csv", pool_csv());
    const std::string batch = ws.file("batch.csv", batch_csv());
    const std::string dout = ws.path("design.json");
    const std::string cout_path = ws.path("certify.json");

    REQUIRE(run_cli("design --pool " + pool + " --batch " + batch +
                    " --alpha 0.3 --permutations 300 --seed 7 --weights analytic:mu=1,0 --out " +
                    dout)
                .exit_code == 0);
    REQUIRE(run_cli("certify --pool " + pool + " --batch " + batch +
                    " --alpha 0.3 --permutations 300 --seed 7 --weights analytic:mu=1,0 --out " +
                    cout_path)
                .exit_code == 0);

    const Json design = Json::parse(read_file(dout));
    const Json certify = Json::parse(read_file(cout_path));
    REQUIRE(design["raw_p"].size() == 4);
    REQUIRE(design["monotone_p"].size() == 4);
    // same seed, same substream per prefix: certify equals the last raw p
    REQUIRE(design["raw_p"][3].get<double>() == certify["p_value"].get<double>());

    const std::size_t n_hat = design["n_hat"].get<std::size_t>();
    const auto shortlist = design["shortlist"].get<std::vector<std::size_t>>();
    REQUIRE(shortlist.size() == n_hat);
    for (std::size_t j = 0; j < n_hat; ++j) REQUIRE(shortlist[j] == j);
    const std::string status = design["status"].get<std::string>();
    if (n_hat == 0)
        REQUIRE(status == "not_confident_enough");
    else
        REQUIRE(status == "certified");
}

TEST_CASE("cli: strict mode signals the not-confident outcome via exit code 3") {
    Workspace ws;
    // calibration scores all above the candidates: certification cannot pass
    std::string pool_text = "f0,y,mu\n";
    for (int i = 0; i < 30; ++i)
        pool_text += std::to_string(i * 0.1) + ",0,0.9\n";
    const std::string pool = ws.file("pool.csv", pool_text);
    const std::string batch = ws.file("batch.csv", "f0,mu\n0.5,0.1\n0.6,0.2\n");

    const RunResult strict = run_cli("design --pool " + pool + " --batch " + batch +
                                     " --alpha 0.05 --permutations 200 --seed 3 --strict");
    REQUIRE(strict.exit_code == 3);
    const RunResult lax = run_cli("design --pool " + pool + " --batch " + batch +
                                  " --alpha 0.05 --permutations 200 --seed 3");
    REQUIRE(lax.exit_code == 0);
    const Json report = Json::parse(lax.out);
    REQUIRE(report["status"].get<std::string>() == "not_confident_enough");
    REQUIRE(report["shortlist"].empty());
    REQUIRE(report["n_hat"].get<int>() == 0);
}

TEST_CASE("cli: malformed input exits with code 2") {
    Workspace ws;
    const std::string pool = ws.file("pool.csv", "f0,y,mu\n0.5,2,0.2\n");
    const std::string batch = ws.file("batch.csv", "f0,mu\n0.5,0.2\n");
    REQUIRE(run_cli("certify --pool " + pool + " --batch " + batch).exit_code == 2);

    const std::string all_active = ws.file("pool2.csv", "f0,y,mu\n0.5,1,0.2\n");
    REQUIRE(run_cli("certify --pool " + all_active + " --batch " + batch).exit_code == 2);

    REQUIRE(run_cli("certify --pool missing.csv --batch " + batch).exit_code == 2);
    REQUIRE(run_cli("nonsense-subcommand").exit_code == 2);
}

TEST_CASE("cli: estimate-weights output feeds back as file weights") {
    Workspace ws;
    const std::string pool = ws.file("pool.csv", pool_csv());
    const std::string batch = ws.file("batch.csv", batch_csv());
    const std::string wcsv = ws.path("weights.csv");
    const std::string wout = ws.path("west.json");

    REQUIRE(run_cli("estimate-weights --pool " + pool + " --batch " + batch +
                    " --weights-out " + wcsv + " --seed 5 --out " + wout)
                .exit_code == 0);
    const Json west = Json::parse(read_file(wout));
    REQUIRE(west["n_pool"].get<int>() == 40);
    REQUIRE(west["n_batch"].get<int>() == 4);
    REQUIRE(west.contains("bandwidth_p"));

    const RunResult reused = run_cli("certify --pool " + pool + " --batch " + batch +
                                     " --weights file:" + wcsv +
                                     " --alpha 0.2 --permutations 200 --seed 5");
    REQUIRE(reused.exit_code == 0);
    const Json report = Json::parse(reused.out);
    REQUIRE(report["config"]["weights_resolved"]["kind"].get<std::string>() == "file");
}

TEST_CASE("cli: diagnose balance and gap run end to end") {
    Workspace ws;
    const std::string pool = ws.file("pool.csv", pool_csv());
    const std::string batch = ws.file("batch.csv", batch_csv());

    const RunResult balance = run_cli("diagnose --mode balance --pool " + pool + " --batch " +
                                      batch + " --weights analytic:mu=1,0");
    REQUIRE(balance.exit_code == 0);
    const Json brep = Json::parse(balance.out);
    REQUIRE(brep["per_feature_imbalance_before"].size() == 2);
    REQUIRE(brep["per_feature_imbalance_after"].size() == 2);

    const RunResult gap = run_cli("diagnose --mode gap --pool " + pool + " --batch " + batch +
                                  " --weights analytic:mu=1,0 --reference-weights uniform "
                                  "--t 0.3 --permutations 200 --seed 11");
    REQUIRE(gap.exit_code == 0);
    const Json grep = Json::parse(gap.out);
    REQUIRE(grep.contains("bound"));
    REQUIRE(grep["bound"].get<double>() >= 0.3);
    REQUIRE(grep.contains("p_estimated"));
}

TEST_CASE("cli: diagnose shiftcheck consumes the group column") {
    Workspace ws;
    std::string text = "f0,y,mu,group\n";
    hitcert::RngStream rng(777, 0);
    for (int i = 0; i < 300; ++i) {
        const bool shifted = i < 180;
        const double x = rng.next_gaussian() + (shifted ? 1.0 : 0.0);
        const double mu = 1.0 / (1.0 + std::exp(-(1.5 * x - 1.0)));
        const int y = rng.next_unit() < mu ? 1 : 0;
        text += hitcert::format_double17(x) + "," + std::to_string(y) + "," +
                hitcert::format_double17(mu) + "," + (shifted ? "g1" : "g2") + "\n";
    }
    const std::string pool = ws.file("pool.csv", text);
    const RunResult rr = run_cli("diagnose --mode shiftcheck --pool " + pool +
                                 " --top-groups 1 --permutations 200 --seed 13 "
                                 "--alphas 0.1,0.3");
    REQUIRE(rr.exit_code == 0);
    const Json rep = Json::parse(rr.out);
    REQUIRE(rep["pseudo_test_groups"][0].get<std::string>() == "g1");
    REQUIRE(rep["kl_weighted"].is_number());
    REQUIRE(rep["error_weighted"].size() == 2);
}

TEST_CASE("cli: budget sweeps alphas across inputs") {
    Workspace ws;
    const std::string pool = ws.file("pool.csv", pool_csv());
    const std::string b1 = ws.file("b1.csv", batch_csv());
    const std::string b2 = ws.file("b2.csv", batch_csv());
    const RunResult rr = run_cli("budget --pool " + pool + " --batch " + b1 + "," + b2 +
                                 " --alphas 0.1,0.3,0.5 --total 5 --permutations 200 "
                                 "--weights analytic:mu=1,0 --seed 17");
    REQUIRE(rr.exit_code == 0);
    const Json rep = Json::parse(rr.out);
    REQUIRE(rep["sweep"].size() == 3);
    std::size_t used = 0;
    for (const auto& set : rep["chosen_sets"]) used += set.size();
    REQUIRE(used <= 5);
}

TEST_CASE("cli: simulate null preset is worker-count independent") {
    Workspace ws;
    const std::string cfg = ws.file("cfg.json",
                                    "{\"dimension\":1,\"shift_mu\":[0.5],\"label_coef\":[1.0],"
                                    "\"label_intercept\":-0.5,\"n_calibration\":30,"
                                    "\"batch_size\":3,\"trials\":40,\"alpha_grid\":[0.1,0.3],"
                                    "\"seed\":2718,\"permutations\":100}");
    const std::string r1 = ws.path("sim1.json");
    const std::string r2 = ws.path("sim2.json");
    REQUIRE(run_cli("simulate --preset null --config " + cfg + " --threads 1 --out " + r1)
                .exit_code == 0);
    REQUIRE(run_cli("simulate --preset null --config " + cfg + " --threads 4 --out " + r2)
                .exit_code == 0);
    REQUIRE(read_file(r1) == read_file(r2)); // byte-identical across worker counts

    const Json rep = Json::parse(read_file(r1));
    REQUIRE(rep["per_alpha"].size() == 2);
    REQUIRE(rep["config"]["spec"]["trials"].get<int>() == 40);
}

TEST_CASE("cli: ood filter reports surviving candidate indices") {
    Workspace ws;
    const std::string pool = ws.file("pool.csv", pool_csv());
    // second candidate is far out of distribution
    const std::string batch = ws.file(
        "batch.csv", "f0,f1,mu\n0.5,0.2,0.7\n40,40,0.9\n0.1,-0.3,0.6\n");
    const RunResult rr = run_cli("design --pool " + pool + " --batch " + batch +
                                 " --alpha 0.3 --permutations 200 --seed 19 "
                                 "--ood-quantile 0.05");
    REQUIRE(rr.exit_code == 0);
    const Json rep = Json::parse(rr.out);
    const auto kept = rep["config"]["ood"]["kept_indices"].get<std::vector<std::size_t>>();
    REQUIRE(kept == std::vector<std::size_t>{0, 2});
    REQUIRE(rep["raw_p"].size() == 2);
    for (const auto& j : rep["shortlist"]) {
        const std::size_t original = j.get<std::size_t>();
        REQUIRE(original != 1); // the filtered row cannot be shortlisted
    }
}
