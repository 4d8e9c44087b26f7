#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lvat/nets.hpp"
#include "lvat/rng.hpp"
#include "lvat/tensor.hpp"

namespace lvat {

// In-memory dataset. `labels` may be empty (fully unlabeled data). When the
// labeled mask is non-empty it marks which rows expose their label to
// training; unmasked labels are still kept for evaluation.
struct Dataset {
  enum class Split { Train, Test };

  Tensor features;  // [N x D]
  std::vector<int> labels;
  std::vector<std::uint8_t> labeled_mask;
  int num_classes = 0;
  Split split = Split::Train;
  // Side length bookkeeping for image-like data; 0 means plain point data.
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  std::size_t size() const { return features.rank() == 2 ? features.shape[0] : 0; }
  std::size_t dim() const { return features.rank() == 2 ? features.shape[1] : 0; }
  bool has_labels() const { return !labels.empty(); }
  bool is_grid() const { return grid_h > 0 && grid_w > 0; }
  std::vector<std::size_t> labeled_indices() const;
};

// Two interleaving half circles of radius 1 with additive Gaussian noise,
// class 0 on the upper moon. n is split evenly (class 0 takes the remainder).
Dataset gen_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed);

// Two concentric circles, radius 1.0 (class 0) and 0.5 (class 1), plus noise.
Dataset gen_circles(std::size_t n, double noise_sigma, std::uint64_t seed);

// size x size images in [0, 1]: k glyph templates plus Gaussian pixel noise,
// label = template index. Supports 2 <= k <= 8 fixed procedural glyphs.
Dataset gen_grid_patterns(std::size_t n, std::size_t size, std::uint64_t seed, std::size_t k = 4,
                          double noise_sigma = 0.1);

// Marks a class-balanced random subset of n_labeled rows as labeled (counts
// per class differ by at most one). Features and labels are untouched.
Dataset subsample_labels(const Dataset& ds, std::size_t n_labeled, std::uint64_t seed);

// Per-dimension affine transform fitted on one dataset (usually the train
// split) and applied to others, so test data never leaks into the statistics.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;
};
Standardizer fit_standardizer(const Dataset& ds);
void apply_standardizer(const Standardizer& s, Dataset& ds);

struct AugmentConfig {
  std::size_t max_translate = 0;  // pixels, uniform in [-t, t] per axis
  bool hflip = false;
  bool enabled() const { return max_translate > 0 || hflip; }
};

// Random integer translation (edge-replicating) and horizontal flip on a batch
// of flattened h x w images. Rejects non-grid data when anything is enabled.
Tensor augment(const Tensor& batch, std::size_t h, std::size_t w, const AugmentConfig& cfg,
               SplitMix64& rng);
Tensor hflip_batch(const Tensor& batch, std::size_t h, std::size_t w);

// Deterministic shuffled index stream: each epoch is a fresh Fisher-Yates
// shuffle of all indices, cut into batches (the last one may be short), so one
// epoch covers the index set exactly once.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> indices, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  std::size_t epoch_batches() const;

 private:
  std::vector<std::size_t> indices_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  SplitMix64 rng_;
};

BatchStream make_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                         bool labeled_only);

// Row selection into a fresh [B x D] tensor.
Tensor gather_rows(const Tensor& features, const std::vector<std::size_t>& idx);
std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& idx);

// CSV round trip: header row, one sample per line, label column last and left
// empty for rows without an exposed label. Doubles carry 17 significant
// digits so reloading is value-exact.
void save_dataset_csv(const std::string& path, const Dataset& ds);
Dataset load_dataset_csv(const std::string& path);

// Checkpoint JSON: {"header": {...}, "params": {name: {"shape": [...],
// "values": [...]}}}. Serialization is canonical (sorted keys, shortest
// round-trip doubles), so save -> load -> save is byte-identical.
struct Checkpoint {
  nlohmann::json header;
  ParamSet params;
};
void save_checkpoint(const std::string& path, const nlohmann::json& header,
                     const ParamSet& params);
Checkpoint load_checkpoint(const std::string& path);

// Training metrics CSV with a fixed column set.
struct MetricsRow {
  long step = 0;
  double lr = 0.0;
  double loss_sl = 0.0;
  double loss_usl = 0.0;
  double loss_total = 0.0;
  double test_error = 0.0;
};
void save_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

// 17-significant-digit formatting shared by every writer.
std::string format_double(double v);

}  // namespace lvat
