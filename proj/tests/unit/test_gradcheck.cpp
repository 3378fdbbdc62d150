#include <gtest/gtest.h>

#include <map>

#include "pdeco/gradcheck.hpp"

using namespace pdeco;

namespace {

const std::vector<check::CheckResult>& clean_suite() {
  static const auto results = check::run_suite({});
  return results;
}

}  // namespace

TEST(Gradcheck, CleanSuitePasses) {
  const auto& results = clean_suite();
  EXPECT_GE(results.size(), 11u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed) << r.name << " max error " << r.max_error << " tolerance " << r.tolerance;
    EXPECT_GE(r.max_error, 0.0);
    EXPECT_GT(r.tolerance, 0.0);
  }
}

TEST(Gradcheck, ReportIsInAFixedOrder) {
  const auto again = check::run_suite({});
  ASSERT_EQ(again.size(), clean_suite().size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    EXPECT_EQ(again[i].name, clean_suite()[i].name);
    EXPECT_EQ(again[i].max_error, clean_suite()[i].max_error);
  }
}

TEST(Gradcheck, EachCorruptionIsCaughtByItsCheck) {
  const std::map<std::string, std::string> hooks = {
      {"random_graph_first_order", "random_graph_first_order"},
      {"softmax_jacobian", "softmax_jacobian"},
      {"aggregate_jacobian", "aggregate_jacobian_autodiff"},
      {"backproject_jvp", "backproject_jvp_autodiff"},
      {"adjoint_sensitivity", "adjoint_vs_fd"},
      {"rno_sensitivity", "rno_sensitivity_vs_fd"},
      {"training_loss_gradient", "training_loss_gradient"},
  };
  for (const auto& [hook, check_name] : hooks) {
    check::SuiteOptions opts;
    opts.corrupt = hook;
    opts.random_graphs = 5;
    bool found = false;
    for (const auto& r : check::run_suite(opts)) {
      if (r.name != check_name) continue;
      found = true;
      EXPECT_FALSE(r.passed) << hook << " corruption went unnoticed";
    }
    EXPECT_TRUE(found) << check_name;
  }
}

TEST(FdGradient, QuadraticIsExact) {
  const std::vector<double> x{1.0, -2.0, 0.5};
  const auto g = check::fd_gradient(
      [](std::span<const double> v) { return 3 * v[0] * v[0] + v[1] * v[2]; }, x, 1e-3);
  EXPECT_NEAR(g[0], 6.0, 1e-9);
  EXPECT_NEAR(g[1], 0.5, 1e-9);
  EXPECT_NEAR(g[2], -2.0, 1e-9);
  EXPECT_EQ(check::relative_error(g, g), 0.0);
}
