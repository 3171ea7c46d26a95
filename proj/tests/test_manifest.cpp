#include <gtest/gtest.h>

#include <map>
#include <random>

#include "oracles.hpp"
#include "sheet/manifest.hpp"

using namespace sheet;

namespace {

RatedUtterance row(std::string wav, std::string id, std::string sys, std::string lis, double score,
                   std::string ds = "default") {
  return {std::move(wav), std::move(id), std::move(sys), std::move(lis), score, std::move(ds)};
}

}  // namespace

TEST(ReadManifest, ThreeValidRows) {
  const std::string text =
      "wav_path,sample_id,system_id,listener_id,score\n"
      "a.wav,a,sysA,l1,3.5\n"
      "b.wav,b,sysA,l1,4\n"
      "c.wav,c,sysB,l2,1\n";
  const auto rows = parse_manifest(text, DatasetSpec{});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].wav_path, "a.wav");
  EXPECT_EQ(rows[1].sample_id, "b");
  EXPECT_EQ(rows[2].system_id, "sysB");
  EXPECT_EQ(rows[2].listener_id, "l2");
  EXPECT_DOUBLE_EQ(rows[0].score, 3.5);
  EXPECT_EQ(rows[0].dataset_id, "default");
}

TEST(ReadManifest, ScoreOutOfRangeReportsRow) {
  const std::string text =
      "wav_path,sample_id,score\n"
      "a.wav,a,3\n"
      "b.wav,b,7.0\n";
  try {
    parse_manifest(text, DatasetSpec{});
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.row(), 1);
    EXPECT_EQ(e.exit_code(), 2);
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(ReadManifest, MissingColumnNamed) {
  try {
    parse_manifest("wav_path,score\na.wav,3\n", DatasetSpec{});
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("sample_id"), std::string::npos);
  }
}

TEST(ReadManifest, DuplicateSampleListener) {
  EXPECT_THROW(parse_manifest("wav_path,sample_id,listener_id,score\na.wav,a,l1,3\na.wav,a,l1,4\n", DatasetSpec{}),
               ValidationError);
  EXPECT_NO_THROW(parse_manifest("wav_path,sample_id,listener_id,score\na.wav,a,l1,3\na.wav,a,l2,4\n", DatasetSpec{}));
}

TEST(ReadManifest, UnparsableScore) {
  EXPECT_THROW(parse_manifest("wav_path,sample_id,score\na.wav,a,good\n", DatasetSpec{}), ValidationError);
}

TEST(ReadManifest, CustomScoreRange) {
  DatasetSpec spec;
  spec.score_min = 0;
  spec.score_max = 10;
  EXPECT_NO_THROW(parse_manifest("wav_path,sample_id,score\na.wav,a,7.0\n", spec));
}

TEST(ReadManifest, BvccShaped) {
  oracle::TempDir dir("bvcc");
  std::vector<RatedUtterance> rows;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> score(1, 5);
  for (int s = 0; s < 187; ++s)
    for (int u = 0; u < 2; ++u)
      for (int l = 0; l < 8; ++l) {
        const std::string sys = "sys" + std::to_string(s);
        const std::string id = sys + "-utt" + std::to_string(u);
        rows.push_back(row(id + ".wav", id, sys, "listener" + std::to_string(l), score(rng), "bvcc"));
      }
  write_manifest(rows, dir / "bvcc.csv");
  const auto back = read_manifest(dir / "bvcc.csv", DatasetSpec{});
  EXPECT_EQ(back.size(), 187u * 2 * 8);
  EXPECT_EQ(count_distinct_systems(back), 187u);
  EXPECT_EQ(count_distinct_samples(back), 187u * 2);
  EXPECT_EQ(aggregate_by_listener(back).size(), 187u * 2);
}

TEST(WriteManifest, EmptyListIsHeaderOnly) {
  oracle::TempDir dir("empty");
  write_manifest({}, dir / "m.csv");
  EXPECT_EQ(oracle::slurp(dir / "m.csv"), "wav_path,sample_id,system_id,listener_id,score,dataset_id\n");
  EXPECT_TRUE(read_manifest(dir / "m.csv", DatasetSpec{}).empty());
}

TEST(WriteManifest, ThreeRowsByteIdentical) {
  oracle::TempDir dir("three");
  const std::vector<RatedUtterance> rows = {row("x/a.wav", "a", "s1", "l1", 3.25), row("x/b.wav", "b", "s1", "l1", 1),
                                            row("x/c.wav", "c", "s2", "l2", 4.1)};
  write_manifest(rows, dir / "m1.csv");
  const auto back = read_manifest(dir / "m1.csv", DatasetSpec{});
  EXPECT_EQ(back, rows);
  write_manifest(back, dir / "m2.csv");
  EXPECT_EQ(oracle::slurp(dir / "m1.csv"), oracle::slurp(dir / "m2.csv"));
}

TEST(WriteManifest, UnwritablePath) {
  EXPECT_THROW(write_manifest({}, "/nonexistent-dir/m.csv"), IoError);
}

TEST(WriteManifest, RandomPathsRoundTrip) {
  oracle::TempDir dir("rt");
  std::mt19937_64 rng(2024);
  const std::string alphabet = "abc XYZ,\"'\n;|/\\._-09";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(1, 24);
  std::uniform_real_distribution<double> score(1.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RatedUtterance> rows;
    for (int i = 0; i < 20; ++i) {
      std::string path;
      for (std::size_t n = len(rng); n > 0; --n) path += alphabet[pick(rng)];
      std::optional<std::string> lis;
      if (i % 3) lis = "l," + std::to_string(i % 4);
      rows.push_back({path, "id\"" + std::to_string(i), std::nullopt, lis, score(rng), "d,s"});
    }
    write_manifest(rows, dir / "m.csv");
    ASSERT_EQ(read_manifest(dir / "m.csv", DatasetSpec{}), rows) << "trial " << trial;
  }
}

TEST(AggregateByListener, ConstantScores) {
  const auto out = aggregate_by_listener({row("a", "a", "s", "1", 4), row("a", "a", "s", "2", 4), row("a", "a", "s", "3", 4)});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].score, 4.0);
  EXPECT_FALSE(out[0].listener_id.has_value());
}

TEST(AggregateByListener, TwoScores) {
  const auto out = aggregate_by_listener({row("a", "a", "s", "1", 1), row("a", "a", "s", "2", 5)});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].score, 3.0);
}

TEST(AggregateByListener, MatchesGroupByOracle) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> sample(0, 11);
  std::uniform_real_distribution<double> score(1.0, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<RatedUtterance> rows;
    for (int i = 0; i < 50; ++i)
      rows.push_back(row("w", "s" + std::to_string(sample(rng)), "sys", "l" + std::to_string(i), score(rng)));
    std::map<std::string, std::vector<double>> groups;
    for (const auto& r : rows) groups[r.sample_id].push_back(r.score);

    const auto out = aggregate_by_listener(rows);
    ASSERT_EQ(out.size(), groups.size());
    for (const auto& r : out) EXPECT_NEAR(r.score, oracle::mean(groups.at(r.sample_id)), 1e-12);
  }
}

TEST(AggregateByListener, FirstAppearanceOrder) {
  const auto out = aggregate_by_listener({row("b", "b", "s", "1", 2), row("a", "a", "s", "1", 3), row("b", "b", "s", "2", 4)});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].sample_id, "b");
  EXPECT_EQ(out[1].sample_id, "a");
}
