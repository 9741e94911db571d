#include "hdovd/detector.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "hdovd/rng.hpp"

namespace hdovd {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

ProjectionMode parse_projection_mode(const std::string& s) {
  if (s == "progressive") return ProjectionMode::Progressive;
  if (s == "parallel") return ProjectionMode::Parallel;
  if (s == "same-space") return ProjectionMode::SameSpace;
  throw std::invalid_argument("unknown projection mode '" + s + "' (progressive, parallel, same-space)");
}

std::string to_string(ProjectionMode m) {
  switch (m) {
    case ProjectionMode::Progressive: return "progressive";
    case ProjectionMode::Parallel: return "parallel";
    case ProjectionMode::SameSpace: return "same-space";
  }
  return "progressive";
}

void DetectorConfig::validate() const {
  if (input_channels < 1 || channels < 1 || hidden < 1 || dim < 2) {
    throw std::invalid_argument("detector widths must be positive");
  }
  if (grid_cols < 1 || grid_rows < 1) throw std::invalid_argument("query grid must be non-empty");
  if (layers < 1) throw std::invalid_argument("detector needs at least one layer");
  if (!(image_size > 0.0)) throw std::invalid_argument("image size must be positive");
}

std::vector<Mat*> DetectorParams::tensors() {
  std::vector<Mat*> t{&Wb, &bb, &G, &Z};
  for (std::size_t l = 0; l < W.size(); ++l) {
    for (Mat* m : {&W[l], &U[l], &c[l], &V[l], &v[l]}) t.push_back(m);
  }
  for (Mat* m : {&P, &M1, &m1, &M2, &m2}) t.push_back(m);
  return t;
}

std::vector<const Mat*> DetectorParams::tensors() const {
  auto mut = const_cast<DetectorParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

DetectorParams DetectorParams::zeros_like() const {
  DetectorParams z = *this;
  for (Mat* m : z.tensors()) m->setZero();
  return z;
}

bool operator==(const DetectorParams& a, const DetectorParams& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i]->rows() != tb[i]->rows() || ta[i]->cols() != tb[i]->cols()) return false;
    if (std::memcmp(ta[i]->data(), tb[i]->data(), sizeof(double) * static_cast<std::size_t>(ta[i]->size())) != 0) {
      return false;
    }
  }
  return true;
}

OutputGrads OutputGrads::zeros(const DetectorConfig& cfg) {
  OutputGrads g;
  const int n = cfg.queries();
  for (int l = 0; l < cfg.layers; ++l) {
    g.d_q.push_back(Mat::Zero(n, cfg.dim));
    g.d_q_hat.push_back(Mat::Zero(n, cfg.dim));
    g.d_box.push_back(Mat::Zero(n, 4));
  }
  g.d_global = Vec::Zero(cfg.dim);
  return g;
}

namespace {

Mat gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd) {
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = sd * rng.normal();
  }
  return m;
}

struct Tap {
  Eigen::Index index;
  double weight;
};

/// Bilinear taps of a level with the given stride at an image-space point.
std::array<Tap, 4> taps(const FeatureMap& level, double stride, double px, double py) {
  const double u = std::clamp(px / stride - 0.5, 0.0, static_cast<double>(level.width - 1));
  const double v = std::clamp(py / stride - 0.5, 0.0, static_cast<double>(level.height - 1));
  const int x0 = static_cast<int>(u);
  const int y0 = static_cast<int>(v);
  const int x1 = std::min(x0 + 1, level.width - 1);
  const int y1 = std::min(y0 + 1, level.height - 1);
  const double lx = u - x0;
  const double ly = v - y0;
  auto idx = [&](int y, int x) { return static_cast<Eigen::Index>(y) * level.width + x; };
  return {Tap{idx(y0, x0), (1 - ly) * (1 - lx)}, Tap{idx(y0, x1), (1 - ly) * lx},
          Tap{idx(y1, x0), ly * (1 - lx)}, Tap{idx(y1, x1), ly * lx}};
}

double level_stride(const DetectorConfig& cfg, const FeatureMap& level) {
  return cfg.image_size / level.width;
}

Mat relu(const Mat& m) { return m.cwiseMax(0.0); }

Mat relu_mask(const Mat& grad, const Mat& pre) {
  return grad.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
}

Mat row_bias(const Mat& bias, Eigen::Index rows) {
  return Mat::Ones(rows, 1) * bias.transpose();
}

}  // namespace

Detector::Detector(DetectorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(hash_combine(seed, fnv1a("detector-init")));
  const int cin = cfg_.input_channels;
  const int c = cfg_.channels;
  const int h = cfg_.hidden;
  const int d = cfg_.dim;
  auto& p = params_;
  p.Wb = gaussian(rng, cin, c, std::sqrt(2.0 / cin));
  p.bb = Mat::Zero(c, 1);
  p.G = gaussian(rng, d, c, 1.0 / std::sqrt(c));
  p.Z = gaussian(rng, cfg_.queries(), h, 0.5);
  for (int l = 0; l < cfg_.layers; ++l) {
    p.W.push_back(gaussian(rng, h, 2 * c, std::sqrt(1.0 / c)));
    p.U.push_back(gaussian(rng, h, h, 0.5 / std::sqrt(h)));
    p.c.push_back(Mat::Zero(h, 1));
    p.V.push_back(gaussian(rng, 4, h, 0.01 / std::sqrt(h)));
    p.v.push_back(Mat::Constant(4, 1, cfg_.box_bias));
  }
  p.P = gaussian(rng, d, h, 1.0 / std::sqrt(h));
  const int text_in = cfg_.projection == ProjectionMode::Parallel ? h : d;
  p.M1 = gaussian(rng, d, text_in, std::sqrt(2.0 / text_in));
  p.m1 = Mat::Zero(d, 1);
  p.M2 = gaussian(rng, d, d, 1.0 / std::sqrt(d));
  p.m2 = Mat::Zero(d, 1);
}

Detector::Detector(DetectorConfig cfg, DetectorParams params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  if (static_cast<int>(params_.W.size()) != cfg_.layers) {
    throw std::invalid_argument("parameter layer count differs from config");
  }
}

ForwardResult Detector::forward(FeaturePyramid input) const {
  if (input.size() != 2) throw std::invalid_argument("detector expects a two-level pyramid");
  const auto& p = params_;
  const int n = cfg_.queries();
  const double s = cfg_.image_size;
  ForwardResult out;
  out.input = std::move(input);
  for (const auto& level : out.input) {
    if (level.channels() != cfg_.input_channels) {
      throw std::invalid_argument("input channel count differs from detector config");
    }
    Mat pre = level.values * p.Wb + row_bias(p.bb, level.values.rows());
    out.features.push_back({level.height, level.width, relu(pre)});
    out.backbone_pre.push_back(std::move(pre));
  }
  const auto weights = global_feature_weights(out.features);
  out.pooled = Vec::Zero(cfg_.channels);
  for (std::size_t l = 0; l < weights.size(); ++l) out.pooled += out.features[l].values.transpose() * weights[l];
  out.global = p.G * out.pooled;

  const int c = cfg_.channels;
  for (int l = 0; l < cfg_.layers; ++l) {
    LayerOutput lo;
    lo.points.resize(n, 2);
    for (int k = 0; k < n; ++k) {
      if (l == 0) {
        lo.points(k, 0) = (k % cfg_.grid_cols + 0.5) * s / cfg_.grid_cols;
        lo.points(k, 1) = (k / cfg_.grid_cols + 0.5) * s / cfg_.grid_rows;
      } else {
        const Box& b = out.layers.back().boxes[static_cast<std::size_t>(k)];
        lo.points(k, 0) = b.center_x();
        lo.points(k, 1) = b.center_y();
      }
    }
    lo.sampled = Mat::Zero(n, 2 * c);
    for (int k = 0; k < n; ++k) {
      for (int lv = 0; lv < 2; ++lv) {
        const FeatureMap& f = out.features[static_cast<std::size_t>(lv)];
        for (const Tap& t : taps(f, level_stride(cfg_, f), lo.points(k, 0), lo.points(k, 1))) {
          lo.sampled.block(k, lv * c, 1, c) += t.weight * f.values.row(t.index);
        }
      }
    }
    const Mat& prev = l == 0 ? p.Z : out.layers.back().h;
    lo.pre = lo.sampled * p.W[l].transpose() + prev * p.U[l].transpose() + row_bias(p.c[l], n);
    lo.h = relu(lo.pre);
    lo.a = lo.h * p.V[l].transpose() + row_bias(p.v[l], n);
    for (int k = 0; k < n; ++k) {
      const double px = lo.points(k, 0);
      const double py = lo.points(k, 1);
      lo.boxes.push_back(Box{px - s * softplus(lo.a(k, 0)), py - s * softplus(lo.a(k, 1)),
                             px + s * softplus(lo.a(k, 2)), py + s * softplus(lo.a(k, 3))});
    }
    lo.q = lo.h * p.P.transpose();
    switch (cfg_.projection) {
      case ProjectionMode::Progressive:
        lo.t_pre = lo.q * p.M1.transpose() + row_bias(p.m1, n);
        lo.q_hat = relu(lo.t_pre) * p.M2.transpose() + row_bias(p.m2, n);
        break;
      case ProjectionMode::Parallel:
        lo.t_pre = lo.h * p.M1.transpose() + row_bias(p.m1, n);
        lo.q_hat = relu(lo.t_pre) * p.M2.transpose() + row_bias(p.m2, n);
        break;
      case ProjectionMode::SameSpace:
        lo.q_hat = lo.q;
        break;
    }
    out.layers.push_back(std::move(lo));
  }
  return out;
}

void Detector::backward(const ForwardResult& fwd, const OutputGrads& dout, DetectorParams& g) const {
  const auto& p = params_;
  const int n = cfg_.queries();
  const int c = cfg_.channels;
  const double s = cfg_.image_size;
  std::vector<Mat> d_feat;
  for (const auto& f : fwd.features) d_feat.push_back(Mat::Zero(f.values.rows(), f.values.cols()));

  Mat dh_next = Mat::Zero(n, cfg_.hidden);
  for (int l = cfg_.layers - 1; l >= 0; --l) {
    const LayerOutput& lo = fwd.layers[static_cast<std::size_t>(l)];
    Mat dh = dh_next;

    Mat da(n, 4);
    for (int k = 0; k < n; ++k) {
      for (int j = 0; j < 4; ++j) {
        const double sign = j < 2 ? -1.0 : 1.0;
        da(k, j) = sign * s * sigmoid(lo.a(k, j)) * dout.d_box[l](k, j);
      }
    }
    g.V[l] += da.transpose() * lo.h;
    g.v[l] += da.colwise().sum().transpose();
    dh += da * p.V[l];

    Mat dq = dout.d_q[l];
    const Mat& dq_hat = dout.d_q_hat[l];
    if (cfg_.projection == ProjectionMode::SameSpace) {
      dq += dq_hat;
    } else {
      const Mat r = relu(lo.t_pre);
      g.M2 += dq_hat.transpose() * r;
      g.m2 += dq_hat.colwise().sum().transpose();
      const Mat dt = relu_mask(dq_hat * p.M2, lo.t_pre);
      g.m1 += dt.colwise().sum().transpose();
      if (cfg_.projection == ProjectionMode::Progressive) {
        g.M1 += dt.transpose() * lo.q;
        dq += dt * p.M1;
      } else {
        g.M1 += dt.transpose() * lo.h;
        dh += dt * p.M1;
      }
    }
    g.P += dq.transpose() * lo.h;
    dh += dq * p.P;

    const Mat dpre = relu_mask(dh, lo.pre);
    const Mat& prev = l == 0 ? p.Z : fwd.layers[static_cast<std::size_t>(l - 1)].h;
    g.W[l] += dpre.transpose() * lo.sampled;
    g.U[l] += dpre.transpose() * prev;
    g.c[l] += dpre.colwise().sum().transpose();
    const Mat dsampled = dpre * p.W[l];
    if (l == 0) {
      g.Z += dpre * p.U[l];
    } else {
      dh_next = dpre * p.U[l];
    }
    for (int k = 0; k < n; ++k) {
      for (int lv = 0; lv < 2; ++lv) {
        const FeatureMap& f = fwd.features[static_cast<std::size_t>(lv)];
        for (const Tap& t : taps(f, level_stride(cfg_, f), lo.points(k, 0), lo.points(k, 1))) {
          d_feat[static_cast<std::size_t>(lv)].row(t.index) += t.weight * dsampled.block(k, lv * c, 1, c);
        }
      }
    }
  }

  g.G += dout.d_global * fwd.pooled.transpose();
  const Vec d_pooled = p.G.transpose() * dout.d_global;
  const auto weights = global_feature_weights(fwd.features);
  for (std::size_t lv = 0; lv < d_feat.size(); ++lv) {
    d_feat[lv] += weights[lv] * d_pooled.transpose();
    const Mat dpre = relu_mask(d_feat[lv], fwd.backbone_pre[lv]);
    g.Wb += fwd.input[lv].values.transpose() * dpre;
    g.bb += dpre.colwise().sum().transpose();
  }
}

namespace {

constexpr char kMagic[8] = {'H', 'O', 'V', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error("truncated checkpoint: " + path.string());
  }
  return v;
}

}  // namespace

void Detector::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  for (int v : {cfg_.input_channels, cfg_.channels, cfg_.hidden, cfg_.dim, cfg_.grid_cols, cfg_.grid_rows,
                cfg_.layers, static_cast<int>(cfg_.projection)}) {
    put<std::int32_t>(out, v);
  }
  put(out, cfg_.image_size);
  put(out, cfg_.box_bias);
  const auto ts = params_.tensors();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ts.size()));
  for (const Mat* m : ts) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m->rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m->cols()));
    out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(sizeof(double) * m->size()));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Detector Detector::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint: " + path.string() + " (run train first)");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  if (take<std::uint32_t>(in, path) != kVersion) throw std::runtime_error("unsupported checkpoint version");
  DetectorConfig cfg;
  cfg.input_channels = take<std::int32_t>(in, path);
  cfg.channels = take<std::int32_t>(in, path);
  cfg.hidden = take<std::int32_t>(in, path);
  cfg.dim = take<std::int32_t>(in, path);
  cfg.grid_cols = take<std::int32_t>(in, path);
  cfg.grid_rows = take<std::int32_t>(in, path);
  cfg.layers = take<std::int32_t>(in, path);
  const int mode = take<std::int32_t>(in, path);
  if (mode < 0 || mode > 2) throw std::runtime_error("corrupt checkpoint projection mode");
  cfg.projection = static_cast<ProjectionMode>(mode);
  cfg.image_size = take<double>(in, path);
  cfg.box_bias = take<double>(in, path);
  cfg.validate();

  // Shapes come from a freshly initialized model; the file must agree.
  Detector d(cfg, 0);
  auto ts = d.params_.tensors();
  if (take<std::uint32_t>(in, path) != ts.size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (Mat* m : ts) {
    const auto rows = take<std::uint32_t>(in, path);
    const auto cols = take<std::uint32_t>(in, path);
    if (rows != m->rows() || cols != m->cols()) throw std::runtime_error("checkpoint tensor shape mismatch");
    if (!in.read(reinterpret_cast<char*>(m->data()), static_cast<std::streamsize>(sizeof(double) * m->size()))) {
      throw std::runtime_error("truncated checkpoint: " + path.string());
    }
  }
  return d;
}

}  // namespace hdovd
