#include "corrcast/series.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "corrcast/correlation.hpp"
#include "oracles.hpp"

namespace corrcast {
namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  const auto dir = std::filesystem::temp_directory_path() / "corrcast_series_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path) << content;
  return path;
}

TEST(LoadCsv, MinimalGrid) {
  const auto path = temp_file("ok.csv",
                              "timestamp,site_id,wind_speed_mps\n"
                              "2015-06-21T00:00:00,F10,5.1\n"
                              "2015-06-21T00:00:00,F11,4.0\n"
                              "2015-06-21T00:10:00,F10,5.3\n"
                              "2015-06-21T00:10:00,F11,4.2\n"
                              "2015-06-21T00:20:00,F11,4.4\n"
                              "2015-06-21T00:20:00,F10,5.0\n");
  const auto coords = temp_file("coords.csv", "site_id,x_km,y_km,altitude_m\nF11,1.5,2,80\n");
  const auto g = load_csv(path, coords, std::string("F10"));
  ASSERT_EQ(g.site_count(), 2u);
  EXPECT_EQ(g.length(), 3u);
  EXPECT_EQ(g.target_site, "F10");
  EXPECT_EQ(g.series_of("F11").values, (std::vector<double>{4.0, 4.2, 4.4}));
  EXPECT_DOUBLE_EQ(g.sites[g.index_of("F11")].x_km, 1.5);
  EXPECT_EQ(format_timestamp(g.series[0].start_time), "2015-06-21T00:00:00");
}

TEST(LoadCsv, NegativeSpeedNamesRow) {
  const auto path = temp_file("neg.csv",
                              "timestamp,site_id,wind_speed_mps\n"
                              "2015-06-21T00:00:00,A,1\n"
                              "2015-06-21T00:10:00,A,-0.5\n");
  try {
    load_csv(path);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(LoadCsv, MissingSlotIsAlignmentError) {
  const auto path = temp_file("gap.csv",
                              "timestamp,site_id,wind_speed_mps\n"
                              "2015-06-21T00:00:00,A,1\n"
                              "2015-06-21T00:00:00,B,1\n"
                              "2015-06-21T00:10:00,A,1\n"
                              "2015-06-21T00:20:00,A,1\n"
                              "2015-06-21T00:20:00,B,1\n");
  EXPECT_THROW(load_csv(path), ValidationError);
}

TEST(LoadCsv, MisalignedSitesAndMalformedRows) {
  const auto shifted = temp_file("shift.csv",
                                 "timestamp,site_id,wind_speed_mps\n"
                                 "2015-06-21T00:00:00,A,1\n"
                                 "2015-06-21T00:10:00,A,1\n"
                                 "2015-06-21T00:10:00,B,1\n"
                                 "2015-06-21T00:20:00,B,1\n");
  EXPECT_THROW(load_csv(shifted), ValidationError);
  const auto bad = temp_file("bad.csv", "timestamp,site_id,wind_speed_mps\n2015-06-21T00:00:00,A\n");
  try {
    load_csv(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  const auto header = temp_file("hdr.csv", "time,site,speed\n");
  EXPECT_THROW(load_csv(header), ParseError);
  const auto nan = temp_file("nan.csv", "timestamp,site_id,wind_speed_mps\n2015-06-21T00:00:00,A,nan\n");
  EXPECT_THROW(load_csv(nan), ValidationError);
}

TEST(LoadCsv, WriteThenLoadIsExact) {
  const auto g = synth_field(3, 50, 2.0, 0.9, 0.4, 12);
  const auto dir = std::filesystem::temp_directory_path() / "corrcast_series_test";
  std::filesystem::create_directories(dir);
  write_csv(g, dir / "rt.csv", dir / "rt_sites.csv");
  const auto back = load_csv(dir / "rt.csv", dir / "rt_sites.csv");
  ASSERT_EQ(back.site_count(), g.site_count());
  for (std::size_t i = 0; i < g.site_count(); ++i) {
    EXPECT_EQ(back.series[i].values, g.series[i].values);
    EXPECT_EQ(back.sites[i].x_km, g.sites[i].x_km);
  }
}

TEST(Timestamp, ParsesVariants) {
  EXPECT_TRUE(parse_timestamp("2015-06-21T00:10"));
  EXPECT_TRUE(parse_timestamp("2015-06-21 00:10:00"));
  EXPECT_TRUE(parse_timestamp("2015-06-21T00:10:00Z"));
  EXPECT_FALSE(parse_timestamp("2015-02-30T00:00:00"));
  EXPECT_FALSE(parse_timestamp("yesterday"));
  EXPECT_EQ(*parse_timestamp("2015-06-21T00:10:00") - *parse_timestamp("2015-06-21T00:00:00"), kCadence);
}

TEST(Describe, ConstantSeries) {
  const std::vector<double> v{1, 1, 1};
  const auto s = describe(v);
  EXPECT_EQ(s.min, 1);
  EXPECT_EQ(s.mean, 1);
  EXPECT_EQ(s.max, 1);
  EXPECT_EQ(s.std, 0);
  EXPECT_EQ(s.skewness, 0);
  EXPECT_EQ(s.excess_kurtosis, 0);
}

TEST(Describe, OneToFour) {
  // mean 2.5; central moments m2 = 1.25, m3 = 0, m4 = (2*5.0625 + 2*0.0625)/4 = 2.5625
  const std::vector<double> v{1, 2, 3, 4};
  const auto s = describe(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(1.25), 1e-15);
  EXPECT_NEAR(s.skewness, 0.0, 1e-15);
  EXPECT_NEAR(s.excess_kurtosis, 2.5625 / (1.25 * 1.25) - 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(s.q1, 1.75);
  EXPECT_DOUBLE_EQ(s.q3, 3.25);
}

TEST(Describe, SymmetricSeriesHasZeroSkew) {
  // Skewness depends on the value distribution only: {1,1,2,2,3,3} is
  // symmetric about 2, whereas (1,2,3,2,1) is not ({1,1,2,2,3}).
  const std::vector<double> v{1, 2, 3, 3, 2, 1};
  EXPECT_NEAR(describe(v).skewness, 0.0, 1e-12);
  const std::vector<double> lopsided{1, 2, 3, 2, 1};
  EXPECT_GT(describe(lopsided).skewness, 0.0);
}

TEST(Describe, MomentsArePermutationInvariant) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    auto v = oracle::random_vector(rng, 3 + rng() % 50, 0, 15);
    const auto a = describe(v);
    std::shuffle(v.begin(), v.end(), rng);
    const auto b = describe(v);
    EXPECT_EQ(a.min, b.min);
    EXPECT_EQ(a.max, b.max);
    EXPECT_NEAR(a.mean, b.mean, 1e-12);
    EXPECT_NEAR(a.std, b.std, 1e-12);
    EXPECT_NEAR(a.skewness, b.skewness, 1e-10);
    EXPECT_NEAR(a.excess_kurtosis, b.excess_kurtosis, 1e-10);
    EXPECT_NEAR(a.q1, b.q1, 1e-12);
    EXPECT_LE(a.min, a.q1);
    EXPECT_LE(a.q1, a.q3);
    EXPECT_LE(a.q3, a.max);
  }
}

TEST(Describe, EmptyIsError) { EXPECT_THROW(describe(std::span<const double>{}), ValidationError); }

TEST(SplitCv, ExpandingFoldsOfTableShape) {
  const auto folds = split_cv(1440, 360, 3);
  ASSERT_EQ(folds.size(), 3u);
  const std::size_t tr[] = {360, 720, 1080};
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(folds[k].train_len(), tr[k]);
    EXPECT_EQ(folds[k].test_len(), 360u);
    EXPECT_EQ(folds[k].train_begin, 0u);
    EXPECT_EQ(folds[k].train_end, folds[k].test_begin);
  }
}

TEST(SplitCv, SmallestAndInsufficient) {
  const auto one = split_cv(2, 1, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].train_begin, 0u);
  EXPECT_EQ(one[0].train_end, 1u);
  EXPECT_EQ(one[0].test_end, 2u);
  EXPECT_THROW(split_cv(1000, 360, 3), ValidationError);
  const auto shifted = split_cv(2000, 100, 2, 500);
  EXPECT_EQ(shifted[1].train_begin, 500u);
  EXPECT_EQ(shifted[1].test_end, 800u);
}

TEST(SynthField, DeterministicAndValid) {
  const auto a = synth_field(5, 400, 3.0, 0.9, 0.5, 7);
  const auto b = synth_field(5, 400, 3.0, 0.9, 0.5, 7);
  const auto c = synth_field(5, 400, 3.0, 0.9, 0.5, 8);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.series[i].values, b.series[i].values);
  EXPECT_NE(a.series[0].values, c.series[0].values);
  EXPECT_NO_THROW(validate_grid(a));
}

TEST(SynthField, InfiniteDecayWithoutNoiseGivesIdenticalSites) {
  const auto g = synth_field(4, 300, std::numeric_limits<double>::infinity(), 0.9, 0.0, 3);
  for (std::size_t i = 1; i < 4; ++i) {
    EXPECT_EQ(g.series[i].values, g.series[0].values);
    EXPECT_NEAR(pearson(g.series[0].values, g.series[i].values).rho, 1.0, 1e-12);
  }
}

TEST(SynthField, InnovationCorrelationDecaysWithDistance) {
  SynthParams p;
  p.n_sites = 2;
  p.n_periods = 20000;
  p.spatial_decay_km = 1.0;
  p.temporal_rho = 0.8;
  p.noise_std = 0.3;
  p.seed = 99;
  const auto g = synth_field(p);
  ASSERT_NEAR(std::hypot(g.sites[1].x_km - g.sites[0].x_km, g.sites[1].y_km - g.sites[0].y_km), 1.0, 1e-12);
  std::vector<std::vector<double>> innov(2);
  for (int s = 0; s < 2; ++s) {
    const auto& v = g.series[s].values;
    for (std::size_t t = 1; t < v.size(); ++t) {
      const double d_now = v[t] - diurnal_base(p, t);
      const double d_prev = v[t - 1] - diurnal_base(p, t - 1);
      innov[s].push_back(d_now - p.temporal_rho * d_prev);
    }
  }
  EXPECT_NEAR(oracle::pearson(innov[0], innov[1]), std::exp(-1.0), 0.05);
}

TEST(SynthField, RejectsBadParameters) {
  EXPECT_THROW(synth_field(0, 10, 1, 0.5, 0.1, 1), ValidationError);
  EXPECT_THROW(synth_field(2, 10, 1, 1.0, 0.1, 1), ValidationError);
  EXPECT_THROW(synth_field(2, 10, -1, 0.5, 0.1, 1), ValidationError);
  EXPECT_THROW(synth_field(2, 10, 1, 0.5, -0.1, 1), ValidationError);
}

TEST(SynthUpwind, UpwindSitesLeadTheTarget) {
  SynthParams p;
  p.n_sites = 3;
  p.n_periods = 500;
  p.seed = 4;
  const auto g = synth_upwind_field(p, 2, 10, 0.0);
  ASSERT_EQ(g.site_count(), 5u);
  const auto& target = g.target().values;
  const auto& up = g.series_of("U1").values;
  for (std::size_t t = 0; t + 10 < 500; ++t) EXPECT_DOUBLE_EQ(up[t], target[t + 10]);
}

}  // namespace
}  // namespace corrcast
