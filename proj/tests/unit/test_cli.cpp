#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "refjoint/io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kData = REFJOINT_TOY_DIR;
const fs::path kGolden = REFJOINT_GOLDEN_DIR;
const std::string kCli = REFJOINT_CLI_PATH;

fs::path scratch() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("refjoint_cli_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct CliRun {
    int status;
    std::string err;
};

CliRun run(const std::string& args, const std::string& env = "") {
    const fs::path err = scratch() / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + kCli + " " + args + " 2>" + err.string();
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(err)};
}

std::string toy(const std::string& name) { return (kData / name).string(); }

// Compares against a checked-in golden file; REFJOINT_UPDATE_GOLDEN=1 rewrites it.
void expect_golden(const fs::path& produced, const std::string& golden_name) {
    const fs::path golden = kGolden / golden_name;
    if (std::getenv("REFJOINT_UPDATE_GOLDEN")) fs::copy_file(produced, golden, fs::copy_options::overwrite_existing);
    ASSERT_TRUE(fs::exists(golden)) << golden;
    EXPECT_EQ(slurp(produced), slurp(golden)) << golden_name;
}

std::vector<std::vector<std::string>> table(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#') rows.push_back(refjoint::io::split(line, '\t'));
    return rows;
}

std::string inputs(const std::string& summary = "summary.tsv") {
    return "--summary " + toy(summary) + " --panel " + toy("panel.tsv");
}

}  // namespace

TEST(Cli, EstimateGolden) {
    for (const std::string method : {"empirical", "gaussian", "naive"}) {
        const fs::path out = scratch() / ("est_" + method);
        const CliRun r = run("estimate " + inputs() + " --method " + method + " --out " + out.string());
        ASSERT_EQ(r.status, 0) << r.err;
        expect_golden(out.string() + ".tsv", "estimate_" + method + ".tsv");
    }
}

TEST(Cli, PsatGolden) {
    const fs::path out = scratch() / "psat";
    const CliRun r = run("psat " + inputs() + " --select tag=rs1,t=z:10 --out " + out.string());
    ASSERT_EQ(r.status, 0) << r.err;
    expect_golden(out.string() + ".tsv", "psat_mle.tsv");
    const auto rows = table(slurp(out.string() + ".tsv"));
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[0][2], "beta_tilde");
    EXPECT_NE(rows[1][1], rows[1][2]);  // the MLE moved the tag coefficient
}

TEST(Cli, PsatBelowThresholdExitsTwo) {
    const fs::path out = scratch() / "psat_null";
    const CliRun r = run("psat " + inputs("summary_null.tsv") + " --select tag=rs1,t=z:4 --out " + out.string());
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(slurp(out.string() + ".tsv").find("not selected"), std::string::npos);
    const auto manifest = nlohmann::json::parse(slurp(out.string() + ".manifest.json"));
    EXPECT_FALSE(manifest["selected"].get<bool>());
}

TEST(Cli, PermutedPanelGivesIdenticalReport) {
    std::ifstream in(toy("panel.tsv"));
    const refjoint::io::PanelTable t = refjoint::io::parse_panel(in);
    std::vector<std::string> ids(t.ids.rbegin(), t.ids.rend());
    const fs::path permuted = scratch() / "panel_rev.tsv";
    {
        std::ofstream out(permuted);
        refjoint::io::write_panel(out, ids, t.values.rowwise().reverse().eval());
    }
    const fs::path a = scratch() / "perm_a", b = scratch() / "perm_b";
    ASSERT_EQ(run("estimate " + inputs() + " --out " + a.string()).status, 0);
    ASSERT_EQ(run("estimate --summary " + toy("summary.tsv") + " --panel " + permuted.string() + " --out " + b.string())
                  .status,
              0);
    EXPECT_EQ(slurp(a.string() + ".tsv"), slurp(b.string() + ".tsv"));
}

TEST(Cli, NullDataNaiveAndCorrectedAgree) {
    const fs::path out = scratch() / "null_emp";
    ASSERT_EQ(run("estimate " + inputs("summary_null.tsv") + " --method empirical --out " + out.string()).status, 0);
    for (const auto& row : table(slurp(out.string() + ".tsv"))) {
        if (row[0] == "id") continue;
        EXPECT_NEAR(std::stod(row[2]), std::stod(row[3]), 1e-10) << row[0];
    }
}

TEST(Cli, EnvironmentOverridesFlags) {
    const fs::path out = scratch() / "env";
    ASSERT_EQ(run("estimate " + inputs() + " --out " + out.string(), "REFJOINT_METHOD=naive").status, 0);
    for (const auto& row : table(slurp(out.string() + ".tsv"))) {
        if (row[0] == "id") continue;
        EXPECT_EQ(row[2], row[3]);
    }
}

TEST(Cli, ManifestReproducesRun) {
    const fs::path out = scratch() / "manifest";
    ASSERT_EQ(run("estimate " + inputs() + " --method gaussian --sigma2 one --threshold-alpha 0.01 --out " +
                  out.string())
                  .status,
              0);
    const auto m = nlohmann::json::parse(slurp(out.string() + ".manifest.json"));
    EXPECT_EQ(m["n_o"].get<int>(), 2000);
    EXPECT_EQ(m["n_r"].get<int>(), 200);
    EXPECT_EQ(m["sigma2"].get<double>(), 1.0);
    const fs::path again = scratch() / "manifest_again";
    std::string args = "estimate --summary " + m["summary"].get<std::string>() + " --panel " +
                       m["panel"].get<std::string>() + " --method " + m["method"].get<std::string>() + " --alpha " +
                       refjoint::io::fmt(m["alpha"].get<double>()) + " --sigma2 " +
                       m["sigma2_policy"].get<std::string>() + " --threshold-alpha " +
                       refjoint::io::fmt(m["threshold_alpha"].get<double>()) + " --out " + again.string();
    ASSERT_EQ(run(args).status, 0);
    EXPECT_EQ(slurp(out.string() + ".tsv"), slurp(again.string() + ".tsv"));
}

TEST(Cli, ErrorsArePrefixedAndExitOne) {
    std::ofstream(scratch() / "bad_summary.tsv") << "id\tbeta\tn\nrs1\t0.1\t10\nrs9\t0.1\t10\n";
    const CliRun r = run("estimate --summary " + (scratch() / "bad_summary.tsv").string() + " --panel " +
                      toy("panel.tsv"));
    EXPECT_EQ(r.status, 1);
    EXPECT_EQ(r.err.rfind("refjoint: error[IdMismatch]:", 0), 0u) << r.err;
    EXPECT_NE(r.err.find("rs9"), std::string::npos);

    std::ofstream(scratch() / "mixed_n.tsv") << "id\tbeta\tn\nrs1\t0.1\t10\nrs2\t0.1\t11\n";
    const CliRun n = run("estimate --summary " + (scratch() / "mixed_n.tsv").string() + " --panel " + toy("panel.tsv"));
    EXPECT_EQ(n.status, 1);
    EXPECT_EQ(n.err.rfind("refjoint: error[InconsistentN]:", 0), 0u) << n.err;
}

TEST(Cli, SimulateGolden) {
    const fs::path out = scratch() / "sim";
    const CliRun r = run("simulate --config " + toy("sim.cfg") + " --out " + out.string());
    ASSERT_EQ(r.status, 0) << r.err;
    expect_golden(out.string() + ".results.tsv", "simulate.results.tsv");
    expect_golden(out.string() + ".long.tsv", "simulate.long.tsv");
    const fs::path threaded = scratch() / "sim_threads";
    ASSERT_EQ(run("simulate --config " + toy("sim.cfg") + " --threads 3 --out " + threaded.string()).status, 0);
    EXPECT_EQ(slurp(out.string() + ".results.tsv"), slurp(threaded.string() + ".results.tsv"));
}
