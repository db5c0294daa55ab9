#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "dpf/param_vector.hpp"

namespace dpf {

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double sparsity_target = 0.0;
  double sparsity_achieved = 0.0;
  double delta = 0.0;
  std::int64_t flips = 0;  // mask bits changed since the previous record
  double iou = 1.0;        // against the mask at the previous record
};

struct MaskSnapshot {
  std::int64_t step = 0;
  Mask mask;
};

/// Masks observed at mask-update events, in strictly increasing step order.
/// `retain == 0` keeps everything; otherwise only the newest `retain` entries.
class MaskHistory {
 public:
  explicit MaskHistory(std::size_t retain = 0) : retain_(retain) {}

  /// Throws std::invalid_argument if `step` does not exceed the last step.
  void push(std::int64_t step, Mask mask);

  std::span<const MaskSnapshot> entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::size_t retain_;
  std::vector<MaskSnapshot> entries_;
};

/// Intersection over union of the kept sets, over prunable coordinates.
/// Defined as 1 when both kept sets are empty.
double mask_iou(const Mask& a, const Mask& b);

/// Number of prunable coordinates whose bits differ.
std::size_t flip_count(const Mask& a, const Mask& b);

/// flip_count / number of prunable coordinates.
double flip_ratio(const Mask& a, const Mask& b);

/// For every epoch e, the fraction of prunable coordinates whose bit changes
/// at some mask-update event in a later epoch. An event's epoch is
/// step / steps_per_epoch, clamped to the last epoch, so the final entry is 0.
std::vector<double> last_change_curve(const MaskHistory& history, std::int64_t epochs,
                                      std::int64_t steps_per_epoch);

enum class RecordFormat { csv, json };

inline constexpr const char* kCsvHeader =
    "step,epoch,lr,train_loss,train_acc,test_loss,test_acc,sparsity_target,sparsity_achieved,"
    "delta,flips,iou";

void write_records(std::ostream& out, std::span<const StepRecord> records, RecordFormat format);

/// Writes records to `path`; throws std::runtime_error naming the path on I/O failure.
void emit(std::span<const StepRecord> records, const std::filesystem::path& path,
          RecordFormat format);

/// Binary mask log: "DPFM", u32 version, u64 dim, u64 count, then per entry
/// i64 step followed by ceil(dim/8) LSB-first packed bytes. Little-endian.
void write_mask_history(const MaskHistory& history, const std::filesystem::path& path);
MaskHistory read_mask_history(const std::filesystem::path& path, const LayoutPtr& layout);

}  // namespace dpf
