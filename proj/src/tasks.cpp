#include "mtopt/tasks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mtopt/errors.hpp"
#include "mtopt/random.hpp"

namespace mtopt {

VectorXd QuadraticTasks::losses(const VectorXd& theta) const {
  if (theta.size() != dim()) throw DimensionError("quadratic: theta has the wrong length");
  VectorXd out(task_count());
  for (int i = 0; i < task_count(); ++i)
    out(i) = scales[static_cast<std::size_t>(i)] * (theta - centers[static_cast<std::size_t>(i)]).squaredNorm();
  return out;
}

GradientSet<double> QuadraticTasks::grads(const VectorXd& theta) const {
  if (theta.size() != dim()) throw DimensionError("quadratic: theta has the wrong length");
  RowMatrix<double> rows(task_count(), dim());
  for (int i = 0; i < task_count(); ++i)
    rows.row(i) = (2.0 * scales[static_cast<std::size_t>(i)] * (theta - centers[static_cast<std::size_t>(i)])).transpose();
  return GradientSet<double>(std::move(rows), Space::Parameter);
}

VectorXd QuadraticTasks::unitary_optimum() const {
  VectorXd acc = VectorXd::Zero(dim());
  double total = 0.0;
  for (int i = 0; i < task_count(); ++i) {
    acc += scales[static_cast<std::size_t>(i)] * centers[static_cast<std::size_t>(i)];
    total += scales[static_cast<std::size_t>(i)];
  }
  return acc / total;
}

double QuadraticTasks::summed_curvature() const {
  return 2.0 * std::accumulate(scales.begin(), scales.end(), 0.0);
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw UsageError("unknown split '" + s + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

const Batch& TaskSuite::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return train;
}

TaskSuite make_conflicting_quadratics(const VectorXd& c1, const VectorXd& c2, double kappa) {
  if (c1.size() < 1 || c1.size() != c2.size()) throw DimensionError("quadratics: centers need equal length >= 1");
  if (!(kappa > 0.0)) throw ValidationError("quadratics: kappa must be > 0");
  if (!all_finite(c1) || !all_finite(c2)) throw ValidationError("quadratics: centers must be finite");
  TaskSuite s;
  s.name = "quadratics";
  s.kinds = {LossKind::Mse, LossKind::Mse};
  s.output_dims = {1, 1};
  s.quadratic = QuadraticTasks{{c1, c2}, {1.0, kappa}};
  s.metadata["kappa"] = kappa;
  s.metadata["dim"] = static_cast<double>(c1.size());
  return s;
}

namespace {

struct SplitSizes {
  Eigen::Index train, val, test;
};

SplitSizes split_sizes(Eigen::Index n) {
  const auto train = static_cast<Eigen::Index>(std::floor(0.70 * static_cast<double>(n)));
  const auto val = static_cast<Eigen::Index>(std::floor(0.15 * static_cast<double>(n)));
  SplitSizes s{train, val, n - train - val};
  if (s.train < 1 || s.val < 1 || s.test < 1)
    throw ValidationError("suite needs enough samples for non-empty 70/15/15 splits");
  return s;
}

void fill_splits(TaskSuite& suite, const MatrixXd& x, const std::vector<MatrixXd>& y) {
  const SplitSizes sz = split_sizes(x.rows());
  auto take = [&](Eigen::Index start, Eigen::Index len) {
    Batch b;
    b.inputs = x.middleRows(start, len);
    for (const auto& t : y) b.targets.push_back(t.middleRows(start, len));
    return b;
  };
  suite.train = take(0, sz.train);
  suite.val = take(sz.train, sz.val);
  suite.test = take(sz.train + sz.val, sz.test);
}

}  // namespace

TaskSuite make_blob_classification(const BlobSpec& spec) {
  if (spec.tasks < 1 || spec.classes < 2 || spec.input_dim < 1)
    throw ValidationError("blobs: need tasks >= 1, classes >= 2, input_dim >= 1");
  if (!(spec.separation >= 0.0)) throw ValidationError("blobs: separation must be >= 0");
  if (!(spec.label_noise >= 0.0 && spec.label_noise <= 1.0)) throw ValidationError("blobs: noise must lie in [0, 1]");
  if (spec.samples < 1) throw ValidationError("blobs: samples must be positive");
  split_sizes(spec.samples);

  const int k = spec.classes;
  const int clusters = 2 * k;
  Rng center_rng = make_stream(spec.seed, 0);
  Rng label_rng = make_stream(spec.seed, 1);
  Rng sample_rng = make_stream(spec.seed, 2);
  Rng noise_rng = make_stream(spec.seed, 3);

  MatrixXd centers(clusters, spec.input_dim);
  for (int q = 0; q < clusters; ++q)
    for (int j = 0; j < spec.input_dim; ++j) centers(q, j) = spec.separation * standard_normal(center_rng);

  std::vector<std::vector<int>> cluster_class(static_cast<std::size_t>(spec.tasks));
  for (auto& map : cluster_class) {
    std::vector<int> perm(static_cast<std::size_t>(clusters));
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, label_rng);
    for (int& p : perm) p %= k;
    map = std::move(perm);
  }

  MatrixXd x(spec.samples, spec.input_dim);
  std::vector<MatrixXd> y(static_cast<std::size_t>(spec.tasks), MatrixXd(spec.samples, 1));
  for (int n = 0; n < spec.samples; ++n) {
    const auto q = static_cast<int>(uniform_index(sample_rng, static_cast<std::uint64_t>(clusters)));
    for (int j = 0; j < spec.input_dim; ++j) x(n, j) = centers(q, j) + standard_normal(sample_rng);
    for (int t = 0; t < spec.tasks; ++t) {
      int label = cluster_class[static_cast<std::size_t>(t)][static_cast<std::size_t>(q)];
      if (spec.label_noise > 0.0 && bernoulli(noise_rng, spec.label_noise))
        label = static_cast<int>(uniform_index(noise_rng, static_cast<std::uint64_t>(k)));
      y[static_cast<std::size_t>(t)](n, 0) = label;
    }
  }

  TaskSuite s;
  s.name = "blobs";
  s.kinds.assign(static_cast<std::size_t>(spec.tasks), LossKind::CrossEntropy);
  s.output_dims.assign(static_cast<std::size_t>(spec.tasks), k);
  fill_splits(s, x, y);
  s.metadata["classes"] = k;
  s.metadata["separation"] = spec.separation;
  s.metadata["label_noise"] = spec.label_noise;
  s.metadata["bayes_accuracy"] = (1.0 - spec.label_noise) + spec.label_noise / k;
  s.metadata["seed"] = static_cast<double>(spec.seed);
  return s;
}

TaskSuite make_scale_imbalanced_regression(const RegressionSpec& spec) {
  if (!(spec.ratio > 0.0)) throw ValidationError("regression: ratio must be > 0");
  if (spec.input_dim < 1 || spec.samples < 1) throw ValidationError("regression: invalid sizes");
  if (!(spec.noise >= 0.0)) throw ValidationError("regression: noise must be >= 0");
  split_sizes(spec.samples);

  Rng w_rng = make_stream(spec.seed, 0);
  Rng x_rng = make_stream(spec.seed, 1);
  Rng n_rng = make_stream(spec.seed, 2);
  const int d = spec.input_dim;
  MatrixXd w(2, d);
  for (int t = 0; t < 2; ++t) {
    for (int j = 0; j < d; ++j) w(t, j) = standard_normal(w_rng);
    w.row(t) *= 2.0 / w.row(t).norm();
  }
  const double amp = std::sqrt(spec.ratio);
  MatrixXd x(spec.samples, d);
  std::vector<MatrixXd> y(2, MatrixXd(spec.samples, 1));
  for (int n = 0; n < spec.samples; ++n) {
    for (int j = 0; j < d; ++j) x(n, j) = standard_normal(x_rng);
    y[0](n, 0) = w.row(0).dot(x.row(n)) + spec.noise * standard_normal(n_rng);
    y[1](n, 0) = amp * (w.row(1).dot(x.row(n)) + spec.noise * standard_normal(n_rng));
  }
  TaskSuite s;
  s.name = "regression";
  s.kinds = {LossKind::Mse, LossKind::Mse};
  s.output_dims = {1, 1};
  fill_splits(s, x, y);
  s.metadata["ratio"] = spec.ratio;
  s.metadata["seed"] = static_cast<double>(spec.seed);
  return s;
}

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const char* what) {
  if (offset + 4 > bytes.size())
    throw IngestionError(std::string("truncated IDX header (") + what + ")", offset);
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes) {
  const std::uint32_t magic = read_be32(bytes, 0, "magic");
  if (magic != 0x00000803u) throw IngestionError("bad IDX image magic", 0);
  IdxImages img;
  img.count = read_be32(bytes, 4, "count");
  img.rows = read_be32(bytes, 8, "rows");
  img.cols = read_be32(bytes, 12, "cols");
  if (img.rows == 0 || img.cols == 0) throw IngestionError("IDX image with zero extent", 8);
  const std::uint64_t need = std::uint64_t{img.count} * img.rows * img.cols;
  if (bytes.size() - 16 < need) throw IngestionError("truncated IDX image data", bytes.size());
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return img;
}

std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes) {
  const std::uint32_t magic = read_be32(bytes, 0, "magic");
  if (magic != 0x00000801u) throw IngestionError("bad IDX label magic", 0);
  const std::uint32_t count = read_be32(bytes, 4, "count");
  if (bytes.size() - 8 < count) throw IngestionError("truncated IDX label data", bytes.size());
  std::vector<std::uint8_t> labels(bytes.begin() + 8, bytes.begin() + 8 + count);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] > 9) throw IngestionError("IDX label out of range", 8 + i);
  return labels;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path + "'", 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

VectorXd compose_pair(const std::uint8_t* a, const std::uint8_t* b, int rows, int cols, int canvas, int offset) {
  if (offset < 0 || rows + offset > canvas || cols + offset > canvas)
    throw DimensionError("compose_pair: digits do not fit on the canvas");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(canvas) * static_cast<std::size_t>(canvas), 0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      auto& top = px[static_cast<std::size_t>(r * canvas + c)];
      top = std::max(top, a[r * cols + c]);
      auto& bottom = px[static_cast<std::size_t>((r + offset) * canvas + c + offset)];
      bottom = std::max(bottom, b[r * cols + c]);
    }
  VectorXd out(canvas * canvas);
  for (std::size_t i = 0; i < px.size(); ++i) out(static_cast<Eigen::Index>(i)) = px[i] / 255.0;
  return out;
}

TaskSuite make_multimnist(const IdxImages& images, const std::vector<std::uint8_t>& labels,
                          const MultiMnistSpec& spec) {
  if (labels.size() != images.count) throw IngestionError("image and label counts differ", 4);
  if (images.count < 4) throw ValidationError("multimnist: need at least 4 source images");
  const auto rows = static_cast<int>(images.rows);
  const auto cols = static_cast<int>(images.cols);
  const std::uint32_t n = images.count;
  std::uint32_t train_sources = spec.train_sources;
  if (n < 60000) train_sources = static_cast<std::uint32_t>(std::uint64_t{n} * 5 / 6);
  train_sources = std::clamp<std::uint32_t>(train_sources, 1, n - 2);
  const std::uint32_t rest = n - train_sources;
  const std::uint32_t val_sources = rest / 2;

  Rng rng = make_stream(spec.seed, 0);
  const std::size_t stride = std::size_t{images.rows} * images.cols;
  auto build = [&](std::uint32_t begin, std::uint32_t len) {
    Batch b;
    b.inputs.resize(len, spec.canvas * spec.canvas);
    b.targets.assign(2, MatrixXd(len, 1));
    for (std::uint32_t i = 0; i < len; ++i) {
      const std::uint32_t first = begin + i;
      const auto second = begin + static_cast<std::uint32_t>(uniform_index(rng, len));
      b.inputs.row(i) = compose_pair(&images.pixels[first * stride], &images.pixels[second * stride], rows, cols,
                                     spec.canvas, spec.offset)
                            .transpose();
      b.targets[0](i, 0) = labels[first];
      b.targets[1](i, 0) = labels[second];
    }
    return b;
  };
  TaskSuite s;
  s.name = "multimnist";
  s.kinds = {LossKind::CrossEntropy, LossKind::CrossEntropy};
  s.output_dims = {10, 10};
  s.train = build(0, train_sources);
  s.val = build(train_sources, val_sources);
  s.test = build(train_sources + val_sources, rest - val_sources);
  s.metadata["classes"] = 10;
  s.metadata["canvas"] = spec.canvas;
  s.metadata["offset"] = spec.offset;
  s.metadata["seed"] = static_cast<double>(spec.seed);
  return s;
}

TaskSuite load_multimnist(const std::string& image_path, const std::string& label_path, const MultiMnistSpec& spec) {
  return make_multimnist(parse_idx_images(read_file_bytes(image_path)), parse_idx_labels(read_file_bytes(label_path)),
                         spec);
}

namespace {

constexpr char kSuiteMagic[4] = {'M', 'T', 'S', 'U'};
constexpr std::uint32_t kSuiteVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void matrix(const MatrixXd& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  void batch(const Batch& b) {
    matrix(b.inputs);
    u32(static_cast<std::uint32_t>(b.targets.size()));
    for (const auto& t : b.targets) matrix(t);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint8_t byte() {
    const int c = in_.get();
    if (c == std::char_traits<char>::eof()) throw IngestionError("truncated suite file", pos_);
    ++pos_;
    return static_cast<std::uint8_t>(c);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{byte()} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{byte()} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s;
    for (std::uint32_t i = 0; i < n; ++i) s.push_back(static_cast<char>(byte()));
    return s;
  }
  MatrixXd matrix() {
    const std::uint64_t r = u64(), c = u64();
    if (r > (1ull << 32) || c > (1ull << 32)) throw IngestionError("implausible matrix shape", pos_);
    MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
    return m;
  }
  Batch batch() {
    Batch b;
    b.inputs = matrix();
    const std::uint32_t n = u32();
    for (std::uint32_t i = 0; i < n; ++i) b.targets.push_back(matrix());
    return b;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::istream& in_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_suite(const TaskSuite& suite, std::ostream& out) {
  out.write(kSuiteMagic, 4);
  Writer w(out);
  w.u32(kSuiteVersion);
  w.str(suite.name);
  w.u32(static_cast<std::uint32_t>(suite.kinds.size()));
  for (std::size_t i = 0; i < suite.kinds.size(); ++i) {
    w.str(to_string(suite.kinds[i]));
    w.u32(static_cast<std::uint32_t>(suite.output_dims.at(i)));
  }
  w.batch(suite.train);
  w.batch(suite.val);
  w.batch(suite.test);
  w.u32(static_cast<std::uint32_t>(suite.metadata.size()));
  for (const auto& [k, v] : suite.metadata) {
    w.str(k);
    w.f64(v);
  }
  w.u32(suite.quadratic ? 1u : 0u);
  if (suite.quadratic) {
    w.u32(static_cast<std::uint32_t>(suite.quadratic->task_count()));
    for (int i = 0; i < suite.quadratic->task_count(); ++i) {
      w.matrix(suite.quadratic->centers[static_cast<std::size_t>(i)]);
      w.f64(suite.quadratic->scales[static_cast<std::size_t>(i)]);
    }
  }
}

TaskSuite read_suite(std::istream& in) {
  Reader r(in);
  for (char expected : kSuiteMagic)
    if (static_cast<char>(r.byte()) != expected) throw IngestionError("bad suite magic", 0);
  const std::uint32_t version = r.u32();
  if (version != kSuiteVersion) throw IngestionError("unsupported suite version " + std::to_string(version), 4);
  TaskSuite s;
  s.name = r.str();
  const std::uint32_t m = r.u32();
  for (std::uint32_t i = 0; i < m; ++i) {
    s.kinds.push_back(loss_kind_from_string(r.str()));
    s.output_dims.push_back(static_cast<int>(r.u32()));
  }
  s.train = r.batch();
  s.val = r.batch();
  s.test = r.batch();
  const std::uint32_t meta = r.u32();
  for (std::uint32_t i = 0; i < meta; ++i) {
    std::string k = r.str();
    s.metadata[k] = r.f64();
  }
  if (r.u32() != 0) {
    QuadraticTasks q;
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      q.centers.push_back(r.matrix().col(0));
      q.scales.push_back(r.f64());
    }
    s.quadratic = std::move(q);
  }
  return s;
}

std::vector<std::uint8_t> suite_bytes(const TaskSuite& suite) {
  std::ostringstream out(std::ios::binary);
  write_suite(suite, out);
  const std::string s = out.str();
  return {s.begin(), s.end()};
}

}  // namespace mtopt
