#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace refjoint;

TEST(Summary, ParsesWellFormedFile) {
    std::istringstream in("# comment\nid\tbeta\tn\nrs1\t0.1\t500\nrs2\t-0.2\t500\n\nrs3\t0\t500\n");
    const MarginalSummary s = io::parse_summary(in);
    EXPECT_EQ(s.p(), 3);
    EXPECT_EQ(s.n_o, 500);
    EXPECT_EQ(s.ids, (std::vector<std::string>{"rs1", "rs2", "rs3"}));
    EXPECT_EQ(s.beta_m(1), -0.2);
}

TEST(Summary, DifferingSampleSizesAreRejected) {
    std::istringstream in("id\tbeta\tn\nrs1\t0.1\t500\nrs2\t0.1\t501\n");
    EXPECT_THROW(io::parse_summary(in), InconsistentN);
}

TEST(Summary, ParseErrorsNameTheLine) {
    std::istringstream in("id\tbeta\tn\nrs1\t0.1\t500\nrs2\tabc\t500\n");
    try {
        io::parse_summary(in, "s.tsv");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("s.tsv:3"), std::string::npos) << e.what();
    }
    std::istringstream bad_header("id\tb\tn\n");
    EXPECT_THROW(io::parse_summary(bad_header), ParseError);
    std::istringstream dup("id\tbeta\tn\na\t0\t5\na\t0\t5\n");
    EXPECT_THROW(io::parse_summary(dup), ParseError);
    std::istringstream empty("id\tbeta\tn\n");
    EXPECT_THROW(io::parse_summary(empty), ParseError);
}

TEST(Summary, WriteThenReadIsIdentity) {
    MarginalSummary s;
    s.beta_m = (Vector(3) << 0.1, -1.0 / 3.0, 2.5e-17).finished();
    s.n_o = 12345;
    s.ids = {"a", "b", "c"};
    std::stringstream buf;
    io::write_summary(buf, s);
    const MarginalSummary back = io::parse_summary(buf);
    EXPECT_EQ(back.beta_m, s.beta_m);
    EXPECT_EQ(back.ids, s.ids);
    EXPECT_EQ(back.n_o, s.n_o);
}

TEST(Panel, ColumnsAreAlignedById) {
    std::istringstream in("c\ta\tb\n1\t2\t3\n4\t5\t6\n");
    const io::PanelTable t = io::parse_panel(in);
    const Matrix m = io::align_panel(t, {"a", "b", "c"});
    EXPECT_EQ(m(0, 0), 2.0);
    EXPECT_EQ(m(1, 2), 4.0);
}

TEST(Panel, PermutedColumnsGiveIdenticalCorrelation) {
    const Matrix raw = testutil::gaussian_rows(50, ar1_sigma(3, 0.4), 71);
    const std::vector<std::string> ids{"x", "y", "z"};
    std::stringstream a, b;
    io::write_panel(a, ids, raw);
    Matrix perm(50, 3);
    perm << raw.col(2), raw.col(0), raw.col(1);
    io::write_panel(b, {"z", "x", "y"}, perm);
    const Matrix ma = io::align_panel(io::parse_panel(a), ids);
    const Matrix mb = io::align_panel(io::parse_panel(b), ids);
    EXPECT_EQ(correlation(standardize(ma)).matrix, correlation(standardize(mb)).matrix);
}

TEST(Panel, MissingAndExtraIdsAreListed) {
    std::istringstream in("a\tb\tq\n1\t2\t3\n4\t5\t7\n");
    const io::PanelTable t = io::parse_panel(in);
    try {
        io::align_panel(t, {"a", "b", "c"});
        FAIL();
    } catch (const IdMismatch& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("missing from panel: c"), std::string::npos) << msg;
        EXPECT_NE(msg.find("not in summary: q"), std::string::npos) << msg;
    }
}

TEST(Panel, GenotypeDosagesStandardize) {
    std::istringstream in("a\tb\n0\t2\n1\t1\n2\t0\n0\t1\n1\t2\n");
    const Matrix m = io::align_panel(io::parse_panel(in), {"a", "b"});
    const CovariateMatrix x = standardize(m);
    EXPECT_NEAR(x.values().col(0).squaredNorm() / 5.0, 1.0, 1e-14);
}

TEST(Panel, RaggedRowsAreParseErrors) {
    std::istringstream in("a\tb\n1\t2\n3\n");
    EXPECT_THROW(io::parse_panel(in), ParseError);
    std::istringstream nan_cell("a\tb\n1\tx\n");
    EXPECT_THROW(io::parse_panel(nan_cell), ParseError);
}

TEST(Prune, KeepsEarlierOfCorrelatedPair) {
    Matrix raw = testutil::gaussian_rows(200, Matrix::Identity(3, 3), 72);
    raw.col(2) = raw.col(0) * 2.0 + 1e-3 * raw.col(1);
    const auto kept = io::prune_correlated(standardize(raw), 0.99);
    EXPECT_EQ(kept, (std::vector<Index>{0, 1}));
}

TEST(Scenarios, GridExpandsCartesianProduct) {
    std::istringstream in(
        "name = fig\n"
        "p = 20  # covariates\n"
        "n_o = 1000 | 10000\n"
        "h = 0.05 | 0.1 | 0.2\n"
        "causal = 1, 20\n"
        "tag = 3\n"
        "select = z:0.05:20000\n"
        "methods = naive, vc_empirical\n"
        "reps = 5\n");
    const auto grid = io::parse_scenarios(in);
    ASSERT_EQ(grid.size(), 6u);
    EXPECT_EQ(grid[0].name, "fig[n_o=1000,h=0.05]");
    EXPECT_EQ(grid[5].name, "fig[n_o=10000,h=0.2]");
    EXPECT_EQ(grid[4].n_o, 10000);
    EXPECT_EQ(grid[4].h, 0.1);
    EXPECT_EQ(grid[0].causal, (std::vector<Index>{0, 19}));
    EXPECT_EQ(*grid[0].tag_index, 2);
    EXPECT_EQ(grid[0].threshold_rule.kind, SelectionRule::Kind::z_level);
    EXPECT_EQ(grid[0].methods.size(), 2u);
    EXPECT_EQ(grid[0].beta_threshold.alpha, grid[0].alpha);
}

TEST(Scenarios, SingleScenarioKeepsName) {
    std::istringstream in("name = one\nreps = 3\nmethods = full, naive, vc_gaussian\n");
    const auto grid = io::parse_scenarios(in);
    ASSERT_EQ(grid.size(), 1u);
    EXPECT_EQ(grid[0].name, "one");
    EXPECT_EQ(grid[0].reps, 3);
}

TEST(Scenarios, BadInputIsRejected) {
    std::istringstream unknown("colour = red\n");
    EXPECT_THROW(io::parse_scenarios(unknown), ParseError);
    std::istringstream zero_index("causal = 0\n");
    EXPECT_THROW(io::parse_scenarios(zero_index), ParseError);
    std::istringstream no_eq("p 20\n");
    EXPECT_THROW(io::parse_scenarios(no_eq), ParseError);
    std::istringstream out_of_range("p = 5\ncausal = 6\n");
    EXPECT_THROW(io::parse_scenarios(out_of_range), InvalidArgument);
}

TEST(Writers, SeventeenDigitsAndLongFormat) {
    EXPECT_EQ(io::fmt(0.1), "0.10000000000000001");
    ScenarioResult r;
    r.name = "s";
    r.reps = 2;
    MethodSummary m;
    m.label = "naive";
    m.fdr = {0.25, 0.125};
    r.methods.push_back(m);
    std::ostringstream out;
    io::write_long_rows(out, r);
    EXPECT_EQ(out.str(), "s\tnaive\tfdr\t0.25\t0.125\ns\tnaive\tpower\t0\t0\ns\tnaive\tuncond_power\t0\t0\n");
}
