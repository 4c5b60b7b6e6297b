#include <gtest/gtest.h>

#include "json.hpp"
#include "refquery/error.hpp"
#include "refquery/metrics.hpp"

using namespace refquery;
using namespace refquery::metrics;

namespace {
using F = std::vector<float>;
using S = std::vector<std::uint8_t>;
}  // namespace

TEST(Mae, Fixtures) {
  EXPECT_EQ(mae(F{1, 2, 3}, F{1, 2, 3}), 0.0);
  EXPECT_EQ(mae(F{0, 10}, F{5, 5}), 5.0);
  EXPECT_DOUBLE_EQ(mae(F{0, 30}, F{15, 15}), 3 * mae(F{0, 10}, F{5, 5}));
  EXPECT_DOUBLE_EQ(mae(F{1, 4, 9}, F{8, 11, 16}), 7.0);  // constant offset
  EXPECT_THROW(mae(F{}, F{}), EmptyInputError);
  EXPECT_THROW(mae(F{1}, F{1, 2}), InvalidShapeError);
}

TEST(F1, Fixtures) {
  const F1Result perfect = f1(S{0, 1, 1, 0}, F{0.1f, 0.9f, 0.6f, 0.2f});
  EXPECT_EQ(perfect.f1, 1.0);

  // TP=2, FP=1, FN=1, TN=1
  const F1Result r = f1(S{1, 1, 1, 0, 0}, F{0.9f, 0.5f, 0.1f, 0.7f, 0.2f});
  EXPECT_EQ(r.tp, 2u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_EQ(r.tn, 1u);
  EXPECT_DOUBLE_EQ(r.f1, 4.0 / 6.0);

  const F1Result none = f1(S{0, 0, 0}, F{0.1f, 0.2f, 0.3f});
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(none.tn, 3u);

  EXPECT_THROW(f1(S{}, F{}), EmptyInputError);
}

TEST(F1, ThresholdInclusiveAndMonotoneInvariant) {
  const S truth{1, 0, 1, 0, 1};
  const F p{0.5f, 0.49f, 0.8f, 0.51f, 0.2f};
  const F1Result a = f1(truth, p);
  F squashed;
  for (float v : p) squashed.push_back(0.5f + (v - 0.5f) * 0.1f);
  const F1Result b = f1(truth, squashed);
  EXPECT_EQ(a.tp, b.tp);
  EXPECT_EQ(a.fp, b.fp);
  EXPECT_EQ(a.fn, b.fn);
  EXPECT_EQ(a.tp + a.fn, 3u);
  EXPECT_EQ(a.tp, 2u);  // 0.5 counts as ON
}

TEST(Report, TableAndJson) {
  EvalReport rep;
  rep.rows.push_back(score_appliance("kettle", F{0, 2000, 0}, S{0, 1, 0}, F{0, 2000, 0},
                                     F{0.1f, 0.9f, 0.2f}));
  rep.rows.push_back(score_appliance("fridge", F{0, 10}, S{0, 1}, F{5, 5}, F{0.9f, 0.9f}));
  EXPECT_EQ(rep.rows[0].mae, 0.0);
  EXPECT_EQ(rep.rows[0].f1.f1, 1.0);
  EXPECT_EQ(rep.rows[1].off_mean_watts, 5.0);
  EXPECT_DOUBLE_EQ(rep.mean_mae(), 2.5);
  EXPECT_DOUBLE_EQ(rep.mean_f1(), (1.0 + 2.0 / 3.0) / 2);
  const std::string table = format_table(rep);
  EXPECT_NE(table.find("kettle"), std::string::npos);
  EXPECT_NE(table.find("average"), std::string::npos);
  const auto j = nlohmann::json::parse(format_json(rep));
  EXPECT_EQ(j["appliances"].size(), 2u);
  EXPECT_DOUBLE_EQ(j["average"]["mae"].get<double>(), 2.5);
}
