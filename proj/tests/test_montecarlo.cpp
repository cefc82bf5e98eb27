#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <boost/math/distributions/binomial.hpp>

#include "support.hpp"

using namespace lcm;

namespace {

SimulationPlan preset(int R, std::vector<std::int64_t> sizes, std::vector<double> l8) {
  SimulationPlan p = read_plan(test::data_path("sim_preset.json"));
  p.replications = R;
  p.sample_sizes = std::move(sizes);
  p.lambda8 = std::move(l8);
  return p;
}

std::size_t count_lines(const std::filesystem::path& f) {
  std::ifstream is(f);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
  }
  return n;
}

}  // namespace

TEST(DaleBand, Endpoints) {
  const auto [lo, hi] = dale_band(0.05);
  EXPECT_NEAR(lo, 0.0357624585, 1e-9);
  EXPECT_NEAR(hi, 0.0694971769, 1e-9);
  EXPECT_NEAR(lo, 0.035746, 1e-4);
  EXPECT_NEAR(hi, 0.069479, 1e-4);
  EXPECT_THROW(dale_band(0.0), std::domain_error);
}

TEST(Intervals, ClopperPearson) {
  auto [lo, hi] = clopper_pearson(0, 10);
  EXPECT_EQ(lo, 0.0);
  EXPECT_NEAR(hi, 1.0 - std::pow(0.025, 0.1), 1e-10);
  std::tie(lo, hi) = clopper_pearson(10, 10);
  EXPECT_NEAR(lo, std::pow(0.025, 0.1), 1e-10);
  EXPECT_EQ(hi, 1.0);
  std::tie(lo, hi) = clopper_pearson(50, 1000);
  EXPECT_LT(lo, 0.05);
  EXPECT_GT(hi, 0.05);
  EXPECT_THROW(clopper_pearson(3, 2), std::domain_error);
}

TEST(Intervals, BinomialAcceptanceCoverage) {
  for (double p0 : {0.05, 0.5, 0.9281}) {
    for (int n : {50, 500, 1000}) {
      const auto [lo, hi] = binomial_acceptance(p0, n, 0.99);
      boost::math::binomial_distribution<> dist(n, p0);
      const int xl = static_cast<int>(std::lround(lo * n));
      const int xh = static_cast<int>(std::lround(hi * n));
      const double below = xl > 0 ? boost::math::cdf(dist, xl - 1) : 0.0;
      const double above = 1.0 - boost::math::cdf(dist, xh);
      EXPECT_LE(below, 0.005 + 1e-12);
      EXPECT_LE(above, 0.005 + 1e-12);
      EXPECT_LE(lo, p0);
      EXPECT_GE(hi, p0);
    }
  }
}

TEST(Plan, PresetIsConsistent) {
  const SimulationPlan p = read_plan(test::data_path("sim_preset.json"));
  EXPECT_EQ(p.null_design.k, 5);
  EXPECT_EQ(p.null_design.m, 10);
  EXPECT_EQ(p.null_design.n_params(), 13);
  EXPECT_EQ(p.alternative_design().n_params(), 14);
  // lambda8 = 0 reproduces the null distribution.
  const Vector p0 = manifest_distribution(p.null_design, p.theta0).p;
  const Vector p1 = manifest_distribution(p.alternative_design(), p.alternative_theta(0.0)).p;
  EXPECT_LT((p0 - p1).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(resolve_plan_dof(p), 19);
  SimulationPlan bad = p;
  bad.replications = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Simulation, DeterministicAndThreadIndependent) {
  SimulationPlan p = preset(6, {200}, {0.0, 2.0});
  const SizePowerTable a = run_simulation(p);
  const SizePowerTable b = run_simulation(p);
  p.threads = 3;
  const SizePowerTable c = run_simulation(p);
  ASSERT_EQ(a.cells.size(), 8u);
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    EXPECT_EQ(a.cells[i].rejections, b.cells[i].rejections);
    EXPECT_EQ(a.cells[i].rejections, c.cells[i].rejections);
    EXPECT_EQ(a.cells[i].failures, c.cells[i].failures);
    EXPECT_EQ(a.cells[i].replications + a.cells[i].failures, 6);
  }
  // A replication does not depend on the cell's replication count.
  SimulationPlan one = preset(1, {200}, {0.0});
  SimulationPlan two = preset(2, {200}, {0.0});
  const auto r1 = run_simulation(one);
  const auto r1b = run_simulation(one);
  EXPECT_EQ(r1.cells[0].rejections, r1b.cells[0].rejections);
  EXPECT_LE(r1.cells[0].rejections, run_simulation(two).cells[0].rejections);
}

TEST(Simulation, CellBookkeeping) {
  const SizePowerTable t = run_simulation(preset(20, {300}, {2.0}));
  EXPECT_EQ(t.dof, 19);
  EXPECT_NEAR(t.critical, chi2_quantile(0.95, 19), 1e-12);
  for (const auto& c : t.cells) {
    EXPECT_NEAR(c.rate, static_cast<double>(c.rejections) / c.replications, 0.0);
    EXPECT_LE(c.ci_lo, c.rate);
    EXPECT_GE(c.ci_hi, c.rate);
    const auto band = dale_band(0.05);
    EXPECT_EQ(c.in_dale_band, c.rate >= band.first && c.rate <= band.second);
  }
  // A strong alternative is detected most of the time.
  EXPECT_GT(t.at(300, 0.0, 2.0).rate, 0.5);
  EXPECT_THROW(t.at(301, 0.0, 2.0), std::out_of_range);
}

TEST(PowerCurves, FilesAndEdgeCases) {
  const auto dir = std::filesystem::temp_directory_path() / "lcm_power_curves_test";
  std::filesystem::remove_all(dir);
  SizePowerTable t = run_simulation(preset(2, {200, 300}, {0.0, 1.0, 2.0}));
  const auto files = emit_power_curves(t, dir);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].filename(), "power_N200.csv");
  EXPECT_EQ(count_lines(files[0]), 4u);
  {
    std::ifstream is(files[1]);
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "lambda8,a=-0.5,a=0,a=0.666667,a=1");
  }
  // No a values: header only.
  t.a_values.clear();
  const auto empty = emit_power_curves(t, dir, "empty");
  EXPECT_EQ(count_lines(empty[0]), 1u);
  t.sample_sizes.clear();
  EXPECT_THROW(emit_power_curves(t, dir), std::invalid_argument);
  std::filesystem::remove_all(dir);
}
