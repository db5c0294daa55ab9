#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dpf/metrics.hpp"
#include "dpf/rng.hpp"
#include "support.hpp"

using namespace dpf;

namespace {

Mask make_mask(const LayoutPtr& layout, std::vector<std::uint8_t> bits) { return Mask(layout, std::move(bits)); }

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::vector<StepRecord> sample_records(std::size_t n) {
  std::vector<StepRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    StepRecord r;
    r.step = static_cast<std::int64_t>(i * 10);
    r.epoch = static_cast<std::int64_t>(i);
    r.lr = 0.1 / (1.0 + static_cast<double>(i));
    r.train_loss = 1.0 / 3.0 + static_cast<double>(i);
    r.sparsity_target = 0.5;
    r.sparsity_achieved = 0.5;
    r.flips = static_cast<std::int64_t>(i);
    r.iou = 0.9;
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST(Iou, Examples) {
  const auto layout = Layout::flat(4);
  const auto a = make_mask(layout, {0, 1, 1, 0});
  EXPECT_DOUBLE_EQ(mask_iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(mask_iou(a, make_mask(layout, {1, 0, 0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(mask_iou(a, make_mask(layout, {0, 0, 1, 1})), 1.0 / 3.0);
  const auto empty = make_mask(layout, {0, 0, 0, 0});
  EXPECT_DOUBLE_EQ(mask_iou(empty, empty), 1.0);
}

TEST(Iou, LengthMismatch) {
  EXPECT_THROW(mask_iou(Mask::ones(Layout::flat(3)), Mask::ones(Layout::flat(4))), std::invalid_argument);
}

TEST(Flips, Examples) {
  const auto layout = Layout::flat(8);
  const auto a = make_mask(layout, {1, 0, 1, 0, 1, 0, 1, 0});
  EXPECT_EQ(flip_ratio(a, a), 0.0);
  EXPECT_EQ(flip_ratio(a, make_mask(layout, {0, 1, 0, 1, 0, 1, 0, 1})), 1.0);
  EXPECT_EQ(flip_ratio(a, make_mask(layout, {1, 0, 1, 0, 1, 0, 1, 1})), 0.125);
  EXPECT_EQ(flip_count(a, make_mask(layout, {1, 1, 1, 0, 1, 0, 1, 1})), 2u);
}

TEST(Flips, IouOneIffNoFlipsAtEqualSupport) {
  Rng rng(3);
  const auto layout = Layout::flat(12);
  for (int k = 0; k < 50; ++k) {
    std::vector<std::uint8_t> a(12, 0), b(12, 0);
    std::vector<std::size_t> idx(12);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int j = 0; j < 5; ++j) a[idx[j]] = 1;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int j = 0; j < 5; ++j) b[idx[j]] = 1;
    if (k % 5 == 0) b = a;
    const auto ma = make_mask(layout, a);
    const auto mb = make_mask(layout, b);
    EXPECT_EQ(mask_iou(ma, mb) == 1.0, flip_ratio(ma, mb) == 0.0);
  }
}

TEST(History, StepsStrictlyIncrease) {
  MaskHistory h;
  h.push(0, Mask::ones(Layout::flat(2)));
  EXPECT_THROW(h.push(0, Mask::ones(Layout::flat(2))), std::invalid_argument);
  h.push(5, Mask::ones(Layout::flat(2)));
  EXPECT_EQ(h.size(), 2u);
}

TEST(History, RetentionKeepsNewest) {
  MaskHistory h(2);
  for (std::int64_t s = 0; s < 5; ++s) h.push(s, Mask::ones(Layout::flat(2)));
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h.entries()[0].step, 3);
  EXPECT_EQ(h.entries()[1].step, 4);
}

TEST(LastChange, ConstantHistoryIsZero) {
  MaskHistory h;
  const auto layout = Layout::flat(4);
  for (std::int64_t s = 0; s < 40; s += 4) h.push(s, make_mask(layout, {1, 0, 1, 0}));
  for (double v : last_change_curve(h, 5, 8)) EXPECT_EQ(v, 0.0);
}

TEST(LastChange, SingleFlipInLastEpoch) {
  MaskHistory h;
  const auto layout = Layout::flat(4);
  h.push(0, make_mask(layout, {1, 0, 1, 0}));
  h.push(30, make_mask(layout, {1, 0, 1, 0}));
  h.push(36, make_mask(layout, {0, 1, 1, 0}));  // epoch 4 of 5 at 8 steps per epoch
  const auto c = last_change_curve(h, 5, 8);
  EXPECT_EQ(c, (std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.0}));
}

TEST(LastChange, MatchesBruteForceAndIsNonIncreasing) {
  Rng rng(11);
  const auto layout = Layout::flat(30);
  MaskHistory h;
  std::bernoulli_distribution coin(0.5);
  for (std::int64_t s = 0; s < 200; s += 7) {
    std::vector<std::uint8_t> bits(30);
    for (auto& b : bits) b = coin(rng) ? 1 : 0;
    h.push(s, Mask(layout, bits));
  }
  const auto curve = last_change_curve(h, 10, 20);
  EXPECT_EQ(curve, dpf::testing::brute_force_last_change(h, 10, 20));
  for (std::size_t e = 1; e < curve.size(); ++e) EXPECT_LE(curve[e], curve[e - 1]);
  EXPECT_EQ(curve.back(), 0.0);
}

TEST(LastChange, EmptyHistoryRejected) {
  EXPECT_THROW(last_change_curve(MaskHistory{}, 3, 1), std::invalid_argument);
}

TEST(Emit, HeaderOnlyForEmptyCsv) {
  std::ostringstream out;
  write_records(out, {}, RecordFormat::csv);
  EXPECT_EQ(out.str(), std::string(kCsvHeader) + "\n");
}

TEST(Emit, CsvRoundTripsDoubles) {
  const auto recs = sample_records(3);
  std::ostringstream out;
  write_records(out, recs, RecordFormat::csv);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::istringstream row(line);
  std::string field;
  for (int i = 0; i < 4; ++i) std::getline(row, field, ',');
  EXPECT_EQ(std::stod(field), recs[0].train_loss);
}

TEST(Emit, JsonAndCsvCountsMatch) {
  const auto recs = sample_records(7);
  std::ostringstream csv, js;
  write_records(csv, recs, RecordFormat::csv);
  write_records(js, recs, RecordFormat::json);
  const auto parsed = nlohmann::json::parse(js.str());
  ASSERT_TRUE(parsed.is_array());
  EXPECT_EQ(parsed.size(), recs.size());
  EXPECT_EQ(count_lines(csv.str()), recs.size() + 1);
  EXPECT_EQ(parsed[2]["flips"].get<std::int64_t>(), 2);
  EXPECT_EQ(parsed[1]["lr"].get<double>(), recs[1].lr);
}

TEST(Emit, DeterministicBytes) {
  const auto recs = sample_records(5);
  std::ostringstream a, b;
  write_records(a, recs, RecordFormat::csv);
  write_records(b, recs, RecordFormat::csv);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Emit, BadPathNamesThePath) {
  const std::filesystem::path bad = "/nonexistent_dir_dpf/metrics.csv";
  try {
    emit(sample_records(1), bad, RecordFormat::csv);
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(bad.string()), std::string::npos);
  }
}

TEST(MaskLog, RoundTrip) {
  const auto layout = Layout::flat(13);
  MaskHistory h;
  Rng rng(2);
  std::bernoulli_distribution coin(0.3);
  for (std::int64_t s = 0; s < 50; s += 16) {
    std::vector<std::uint8_t> bits(13);
    for (auto& b : bits) b = coin(rng) ? 1 : 0;
    h.push(s, Mask(layout, bits));
  }
  const auto path = std::filesystem::temp_directory_path() / "dpf_masklog_test.bin";
  write_mask_history(h, path);
  const auto back = read_mask_history(path, layout);
  ASSERT_EQ(back.size(), h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    EXPECT_EQ(back.entries()[k].step, h.entries()[k].step);
    EXPECT_EQ(back.entries()[k].mask, h.entries()[k].mask);
  }
  std::filesystem::remove(path);
}
