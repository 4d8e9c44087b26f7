#include "lvat/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace lvat {

std::vector<std::size_t> Dataset::labeled_indices() const {
  std::vector<std::size_t> idx;
  if (!labeled_mask.empty()) {
    for (std::size_t i = 0; i < labeled_mask.size(); ++i) {
      if (labeled_mask[i]) idx.push_back(i);
    }
  } else if (has_labels()) {
    idx.resize(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }
  return idx;
}

namespace {

void check_gen_sizes(const char* name, std::size_t n, std::size_t k, double noise_sigma) {
  if (n < 2 * k) {
    throw std::invalid_argument(std::string(name) + ": need at least " + std::to_string(2 * k) +
                                " samples for " + std::to_string(k) + " classes");
  }
  if (noise_sigma < 0.0) {
    throw std::invalid_argument(std::string(name) + ": negative noise_sigma");
  }
}

}  // namespace

Dataset gen_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
  check_gen_sizes("gen_two_moons", n, 2, noise_sigma);
  const std::size_t n0 = n - n / 2;
  const std::size_t n1 = n / 2;
  SplitMix64 rng(seed);

  Dataset ds;
  ds.features = Tensor::zeros({n, 2});
  ds.labels.resize(n);
  ds.num_classes = 2;
  for (std::size_t i = 0; i < n0; ++i) {
    const double t = std::numbers::pi * static_cast<double>(i) /
                     static_cast<double>(std::max<std::size_t>(n0 - 1, 1));
    ds.features.values[i * 2] = std::cos(t) + noise_sigma * rng.normal();
    ds.features.values[i * 2 + 1] = std::sin(t) + noise_sigma * rng.normal();
    ds.labels[i] = 0;
  }
  for (std::size_t i = 0; i < n1; ++i) {
    const double t = std::numbers::pi * static_cast<double>(i) /
                     static_cast<double>(std::max<std::size_t>(n1 - 1, 1));
    const std::size_t row = n0 + i;
    ds.features.values[row * 2] = 1.0 - std::cos(t) + noise_sigma * rng.normal();
    ds.features.values[row * 2 + 1] = 0.5 - std::sin(t) + noise_sigma * rng.normal();
    ds.labels[row] = 1;
  }
  return ds;
}

Dataset gen_circles(std::size_t n, double noise_sigma, std::uint64_t seed) {
  check_gen_sizes("gen_circles", n, 2, noise_sigma);
  const std::size_t n0 = n - n / 2;
  const std::size_t n1 = n / 2;
  SplitMix64 rng(seed);

  Dataset ds;
  ds.features = Tensor::zeros({n, 2});
  ds.labels.resize(n);
  ds.num_classes = 2;
  const double radii[2] = {1.0, 0.5};
  const std::size_t counts[2] = {n0, n1};
  std::size_t row = 0;
  for (int cls = 0; cls < 2; ++cls) {
    for (std::size_t i = 0; i < counts[cls]; ++i, ++row) {
      const double t =
          2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(counts[cls]);
      ds.features.values[row * 2] = radii[cls] * std::cos(t) + noise_sigma * rng.normal();
      ds.features.values[row * 2 + 1] = radii[cls] * std::sin(t) + noise_sigma * rng.normal();
      ds.labels[row] = cls;
    }
  }
  return ds;
}

namespace {

// Procedural glyphs, one per class, drawn as foreground/background intensity.
bool glyph_pixel(std::size_t cls, std::size_t r, std::size_t c, std::size_t s) {
  const std::size_t band = std::max<std::size_t>(1, s / 8);
  const double mid = (static_cast<double>(s) - 1.0) / 2.0;
  switch (cls) {
    case 0:  // vertical stripes
      return c % 2 == 0;
    case 1:  // horizontal stripes
      return r % 2 == 0;
    case 2:  // checkerboard
      return (r + c) % 2 == 0;
    case 3:  // border ring
      return r == 0 || c == 0 || r == s - 1 || c == s - 1;
    case 4:  // main diagonal band
      return (r > c ? r - c : c - r) <= band;
    case 5:  // anti-diagonal band
      return (r + c > s - 1 ? r + c - (s - 1) : (s - 1) - r - c) <= band;
    case 6: {  // centered disk
      const double dr = static_cast<double>(r) - mid;
      const double dc = static_cast<double>(c) - mid;
      return dr * dr + dc * dc <= (static_cast<double>(s) / 3.0) * (static_cast<double>(s) / 3.0);
    }
    case 7:  // plus sign
      return std::abs(static_cast<double>(r) - mid) <= static_cast<double>(band) ||
             std::abs(static_cast<double>(c) - mid) <= static_cast<double>(band);
    default:
      return false;
  }
}

}  // namespace

Dataset gen_grid_patterns(std::size_t n, std::size_t size, std::uint64_t seed, std::size_t k,
                          double noise_sigma) {
  if (k < 2 || k > 8) {
    throw std::invalid_argument("gen_grid_patterns: k must be in [2, 8], got " +
                                std::to_string(k));
  }
  if (size < 4) {
    throw std::invalid_argument("gen_grid_patterns: size must be >= 4, got " +
                                std::to_string(size));
  }
  check_gen_sizes("gen_grid_patterns", n, k, noise_sigma);
  SplitMix64 rng(seed);

  const std::size_t d = size * size;
  Dataset ds;
  ds.features = Tensor::zeros({n, d});
  ds.labels.resize(n);
  ds.num_classes = static_cast<int>(k);
  ds.grid_h = size;
  ds.grid_w = size;
  constexpr double kForeground = 0.85;
  constexpr double kBackground = 0.15;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % k;
    ds.labels[i] = static_cast<int>(cls);
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t c = 0; c < size; ++c) {
        const double base = glyph_pixel(cls, r, c, size) ? kForeground : kBackground;
        const double v = base + noise_sigma * rng.normal();
        ds.features.values[i * d + r * size + c] = std::min(1.0, std::max(0.0, v));
      }
    }
  }
  return ds;
}

Dataset subsample_labels(const Dataset& ds, std::size_t n_labeled, std::uint64_t seed) {
  if (!ds.has_labels()) {
    throw std::invalid_argument("subsample_labels: dataset has no labels");
  }
  if (n_labeled > ds.size()) {
    throw std::invalid_argument("subsample_labels: n_labeled " + std::to_string(n_labeled) +
                                " exceeds dataset size " + std::to_string(ds.size()));
  }
  const std::size_t k = static_cast<std::size_t>(ds.num_classes);
  std::vector<std::vector<std::size_t>> per_class(k);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    per_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }

  Dataset out = ds;
  out.labeled_mask.assign(ds.size(), 0);
  SplitMix64 rng(seed);
  const std::size_t base = n_labeled / k;
  const std::size_t extra = n_labeled % k;
  for (std::size_t cls = 0; cls < k; ++cls) {
    const std::size_t quota = base + (cls < extra ? 1 : 0);
    if (quota > per_class[cls].size()) {
      throw std::invalid_argument("subsample_labels: class " + std::to_string(cls) + " has only " +
                                  std::to_string(per_class[cls].size()) + " rows, need " +
                                  std::to_string(quota));
    }
    rng.shuffle(per_class[cls]);
    for (std::size_t i = 0; i < quota; ++i) out.labeled_mask[per_class[cls][i]] = 1;
  }
  return out;
}

Standardizer fit_standardizer(const Dataset& ds) {
  const std::size_t n = ds.size(), d = ds.dim();
  if (n == 0) throw std::invalid_argument("fit_standardizer: empty dataset");
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += ds.features.values[i * d + j];
  }
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = ds.features.values[i * d + j] - s.mean[j];
      s.stddev[j] += diff * diff;
    }
  }
  for (double& v : s.stddev) {
    v = std::sqrt(v / static_cast<double>(n));
    // Constant dimensions pass through unscaled.
    if (v < 1e-12) v = 1.0;
  }
  return s;
}

void apply_standardizer(const Standardizer& s, Dataset& ds) {
  const std::size_t n = ds.size(), d = ds.dim();
  if (s.mean.size() != d) {
    throw std::invalid_argument("apply_standardizer: fitted on " + std::to_string(s.mean.size()) +
                                " dims, dataset has " + std::to_string(d));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double& v = ds.features.values[i * d + j];
      v = (v - s.mean[j]) / s.stddev[j];
    }
  }
}

Tensor hflip_batch(const Tensor& batch, std::size_t h, std::size_t w) {
  if (batch.rank() != 2 || batch.shape[1] != h * w || h == 0 || w == 0) {
    throw std::invalid_argument("hflip_batch: batch " + shape_str(batch.shape) +
                                " is not a stack of " + std::to_string(h) + "x" +
                                std::to_string(w) + " images");
  }
  Tensor out = detach(batch);
  const std::size_t b = batch.shape[0];
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        out.values[i * h * w + r * w + c] = batch.values[i * h * w + r * w + (w - 1 - c)];
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& batch, std::size_t h, std::size_t w, const AugmentConfig& cfg,
               SplitMix64& rng) {
  if (!cfg.enabled()) return detach(batch);
  if (batch.rank() != 2 || h == 0 || w == 0 || batch.shape[1] != h * w) {
    throw std::invalid_argument("augment: translation/flip requested on non-grid data of shape " +
                                shape_str(batch.shape));
  }
  const std::size_t b = batch.shape[0];
  const long t = static_cast<long>(cfg.max_translate);
  Tensor out = Tensor::zeros(batch.shape);
  for (std::size_t i = 0; i < b; ++i) {
    long dy = 0, dx = 0;
    if (t > 0) {
      dy = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * t + 1))) - t;
      dx = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * t + 1))) - t;
    }
    const bool flip = cfg.hflip && rng.below(2) == 1;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        // Shift content by (dy, dx), replicating edge pixels.
        long sr = static_cast<long>(r) - dy;
        long sc = static_cast<long>(c) - dx;
        sr = std::min<long>(std::max<long>(sr, 0), static_cast<long>(h) - 1);
        sc = std::min<long>(std::max<long>(sc, 0), static_cast<long>(w) - 1);
        const std::size_t src_c = flip ? w - 1 - static_cast<std::size_t>(sc)
                                       : static_cast<std::size_t>(sc);
        out.values[i * h * w + r * w + c] =
            batch.values[i * h * w + static_cast<std::size_t>(sr) * w + src_c];
      }
    }
  }
  return out;
}

BatchStream::BatchStream(std::vector<std::size_t> indices, std::size_t batch_size,
                         std::uint64_t seed)
    : indices_(std::move(indices)), batch_size_(batch_size), rng_(seed) {
  if (indices_.empty()) throw std::invalid_argument("BatchStream: empty index set");
  if (batch_size_ == 0) throw std::invalid_argument("BatchStream: batch_size must be >= 1");
  cursor_ = indices_.size();  // first next() starts a fresh shuffled epoch
}

std::vector<std::size_t> BatchStream::next() {
  if (cursor_ >= indices_.size()) {
    rng_.shuffle(indices_);
    cursor_ = 0;
  }
  const std::size_t take = std::min(batch_size_, indices_.size() - cursor_);
  std::vector<std::size_t> batch(indices_.begin() + static_cast<long>(cursor_),
                                 indices_.begin() + static_cast<long>(cursor_ + take));
  cursor_ += take;
  return batch;
}

std::size_t BatchStream::epoch_batches() const {
  return (indices_.size() + batch_size_ - 1) / batch_size_;
}

BatchStream make_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                         bool labeled_only) {
  std::vector<std::size_t> idx;
  if (labeled_only) {
    idx = ds.labeled_indices();
    if (idx.empty()) {
      throw std::invalid_argument("make_batches: labeled_only requested but no labeled rows");
    }
  } else {
    idx.resize(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }
  return BatchStream(std::move(idx), batch_size, seed);
}

Tensor gather_rows(const Tensor& features, const std::vector<std::size_t>& idx) {
  if (features.rank() != 2) {
    throw std::invalid_argument("gather_rows: expected rank-2 features");
  }
  const std::size_t d = features.shape[1];
  Tensor out = Tensor::zeros({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= features.shape[0]) {
      throw std::invalid_argument("gather_rows: row " + std::to_string(idx[i]) + " out of range");
    }
    std::copy(features.values.begin() + static_cast<long>(idx[i] * d),
              features.values.begin() + static_cast<long>((idx[i] + 1) * d),
              out.values.begin() + static_cast<long>(i * d));
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (const std::size_t i : idx) {
    if (i >= labels.size()) {
      throw std::invalid_argument("gather_labels: row " + std::to_string(i) + " out of range");
    }
    out.push_back(labels[i]);
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void save_dataset_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset_csv: cannot open '" + path + "' for writing");
  const std::size_t n = ds.size(), d = ds.dim();
  // Metadata comment so grids and class counts survive the round trip.
  out << "# k=" << ds.num_classes;
  if (ds.is_grid()) out << " h=" << ds.grid_h << " w=" << ds.grid_w;
  out << "\n";
  for (std::size_t j = 0; j < d; ++j) out << "f" << j << ",";
  out << "label\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out << format_double(ds.features.values[i * d + j]) << ",";
    const bool exposed =
        ds.has_labels() && (ds.labeled_mask.empty() || ds.labeled_mask[i] != 0);
    if (exposed) out << ds.labels[i];
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_dataset_csv: write to '" + path + "' failed");
}

Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("load_dataset_csv: '" + path + "' is empty");
  }

  Dataset ds;
  int meta_k = 0;
  if (!line.empty() && line[0] == '#') {
    std::istringstream meta(line.substr(1));
    std::string token;
    while (meta >> token) {
      const auto eq = token.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = token.substr(0, eq);
      const long value = std::stol(token.substr(eq + 1));
      if (key == "k") meta_k = static_cast<int>(value);
      if (key == "h") ds.grid_h = static_cast<std::size_t>(value);
      if (key == "w") ds.grid_w = static_cast<std::size_t>(value);
    }
    if (!std::getline(in, line)) {
      throw std::runtime_error("load_dataset_csv: '" + path + "' has no header row");
    }
  }
  std::size_t d = 0;
  {
    std::istringstream header(line);
    std::string cell;
    std::vector<std::string> cols;
    while (std::getline(header, cell, ',')) cols.push_back(cell);
    if (cols.size() < 2 || cols.back() != "label") {
      throw std::runtime_error("load_dataset_csv: '" + path +
                               "' header must end with a label column");
    }
    d = cols.size() - 1;
  }

  std::vector<double> values;
  std::vector<int> labels;
  std::vector<std::uint8_t> mask;
  bool any_label = false, all_labeled = true;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    if (cells.size() != d + 1) {
      throw std::runtime_error("load_dataset_csv: '" + path + "' line " +
                               std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                               " cells, expected " + std::to_string(d + 1));
    }
    for (std::size_t j = 0; j < d; ++j) values.push_back(std::stod(cells[j]));
    if (cells[d].empty()) {
      labels.push_back(-1);
      mask.push_back(0);
      all_labeled = false;
    } else {
      labels.push_back(std::stoi(cells[d]));
      mask.push_back(1);
      any_label = true;
    }
  }
  const std::size_t n = labels.size();
  ds.features = Tensor::from(std::move(values), {n, d});
  if (!any_label) {
    ds.labels.clear();
    ds.labeled_mask.clear();
  } else {
    ds.labels = std::move(labels);
    if (all_labeled) {
      ds.labeled_mask.clear();
    } else {
      ds.labeled_mask = std::move(mask);
    }
  }
  if (meta_k > 0) {
    ds.num_classes = meta_k;
  } else if (any_label) {
    int max_label = 0;
    for (const int l : ds.labels) max_label = std::max(max_label, l);
    ds.num_classes = max_label + 1;
  }
  return ds;
}

void save_checkpoint(const std::string& path, const nlohmann::json& header,
                     const ParamSet& params) {
  nlohmann::json doc;
  doc["header"] = header;
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [name, tensor] : params) {
    nlohmann::json entry;
    entry["shape"] = tensor.shape;
    entry["values"] = tensor.values;
    p[name] = std::move(entry);
  }
  doc["params"] = std::move(p);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "' for writing");
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("save_checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: '" + path + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("header") || !doc.contains("params") ||
      !doc["params"].is_object()) {
    throw std::runtime_error("load_checkpoint: '" + path +
                             "' lacks the {header, params} structure");
  }
  Checkpoint ck;
  ck.header = doc["header"];
  for (const auto& [name, entry] : doc["params"].items()) {
    if (!entry.contains("shape") || !entry.contains("values")) {
      throw std::runtime_error("load_checkpoint: parameter '" + name +
                               "' lacks shape/values in '" + path + "'");
    }
    Shape shape = entry["shape"].get<Shape>();
    std::vector<double> values = entry["values"].get<std::vector<double>>();
    if (values.size() != numel(shape)) {
      throw std::runtime_error("load_checkpoint: parameter '" + name + "' has " +
                               std::to_string(values.size()) + " values for shape " +
                               shape_str(shape) + " in '" + path + "'");
    }
    ck.params.set(name, Tensor::from(std::move(values), std::move(shape)));
  }
  return ck;
}

void save_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_metrics_csv: cannot open '" + path + "' for writing");
  out << "step,lr,loss_sl,loss_usl,loss_total,test_error\n";
  for (const MetricsRow& r : rows) {
    out << r.step << "," << format_double(r.lr) << "," << format_double(r.loss_sl) << ","
        << format_double(r.loss_usl) << "," << format_double(r.loss_total) << ","
        << format_double(r.test_error) << "\n";
  }
  if (!out) throw std::runtime_error("save_metrics_csv: write to '" + path + "' failed");
}

}  // namespace lvat
