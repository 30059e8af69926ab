#include "dmsa/aspp.hpp"

#include <cmath>
#include <sstream>

#include "dmsa/conv.hpp"
#include "dmsa/ops.hpp"

namespace dmsa {

namespace {

constexpr std::array<DilationRates, 10> kDefaultTable = {{
    {1, 6, 12, 18},  // _0
    {1, 1, 2, 3},    // _1
    {1, 1, 3, 5},    // _2
    {1, 1, 2, 3},    // _3
    {1, 1, 3, 5},    // _4
    {1, 1, 2, 3},    // _5
    {1, 1, 3, 5},    // _6
    {1, 1, 2, 3},    // _7
    {1, 3, 6, 9},    // _8
    {1, 3, 6, 9},    // _9
}};

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor eye(std::size_t n, double value = 1.0) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = value;
  return Tensor({n, n}, std::move(v));
}

}  // namespace

DilationSchedule::DilationSchedule() : table_(kDefaultTable) {}

DilationSchedule::DilationSchedule(const std::array<DilationRates, 10>& table) : table_(table) {
  for (const auto& row : table_)
    for (auto r : row)
      if (r < 1) throw GeometryError("dilation schedule: every rate must be >= 1");
}

DilationRates DilationSchedule::rates(std::size_t epoch) const {
  if (epoch < 1) throw Error("dilation schedule: epochs are 1-based, got 0");
  return table_[epoch % 10];
}

DilationRates dilation_schedule(std::size_t epoch) { return DilationSchedule().rates(epoch); }

std::string rates_str(const DilationRates& rates) {
  std::ostringstream os;
  os << '[' << rates[0] << ',' << rates[1] << ',' << rates[2] << ',' << rates[3] << ']';
  return os.str();
}

void AsppParams::validate() const {
  if (fusion.rank() != 2) throw ShapeError("aspp: fusion must be [C,5C], got " + shape_str(fusion.shape()));
  const std::size_t c = fusion.dim(0);
  if (fusion.dim(1) != 5 * c) throw ShapeError("aspp: fusion must be [C,5C], got " + shape_str(fusion.shape()));
  for (std::size_t b = 0; b < 4; ++b) {
    const std::size_t k = b == 0 ? 1 : 3;
    if (depthwise[b].shape() != Shape{c, k, k}) {
      throw ShapeError("aspp: branch " + std::to_string(b) + " depthwise kernel " +
                       shape_str(depthwise[b].shape()) + ", expected " + shape_str({c, k, k}));
    }
    if (pointwise[b].shape() != Shape{c, c}) {
      throw ShapeError("aspp: branch " + std::to_string(b) + " pointwise kernel " +
                       shape_str(pointwise[b].shape()) + ", expected " + shape_str({c, c}));
    }
  }
  if (pool.shape() != Shape{c, c}) throw ShapeError("aspp: pool kernel " + shape_str(pool.shape()));
  if (fusion_bias.shape() != Shape{c}) throw ShapeError("aspp: fusion bias " + shape_str(fusion_bias.shape()));
}

AsppParams AsppParams::random(std::size_t channels, std::mt19937_64& rng, double stddev) {
  AsppParams p;
  for (std::size_t b = 0; b < 4; ++b) {
    const std::size_t k = b == 0 ? 1 : 3;
    p.depthwise[b] = random_tensor({channels, k, k}, rng, stddev);
    p.pointwise[b] = random_tensor({channels, channels}, rng, stddev);
  }
  p.pool = random_tensor({channels, channels}, rng, stddev);
  p.fusion = random_tensor({channels, 5 * channels}, rng, stddev);
  p.fusion_bias = Tensor::zeros({channels});
  return p;
}

AsppParams AsppParams::identity(std::size_t channels) {
  AsppParams p;
  for (std::size_t b = 0; b < 4; ++b) {
    const std::size_t k = b == 0 ? 1 : 3;
    std::vector<double> dw(channels * k * k, 0.0);
    for (std::size_t c = 0; c < channels; ++c) dw[c * k * k + (k * k) / 2] = 1.0;
    p.depthwise[b] = Tensor({channels, k, k}, std::move(dw));
    p.pointwise[b] = eye(channels);
  }
  p.pool = Tensor::zeros({channels, channels});
  std::vector<double> fusion(channels * 5 * channels, 0.0);
  for (std::size_t o = 0; o < channels; ++o)
    for (std::size_t b = 0; b < 4; ++b) fusion[o * 5 * channels + b * channels + o] = 0.25;
  p.fusion = Tensor({channels, 5 * channels}, std::move(fusion));
  p.fusion_bias = Tensor::zeros({channels});
  return p;
}

AsppParams AsppParams::zeros(std::size_t channels) {
  AsppParams p;
  for (std::size_t b = 0; b < 4; ++b) {
    const std::size_t k = b == 0 ? 1 : 3;
    p.depthwise[b] = Tensor::zeros({channels, k, k});
    p.pointwise[b] = Tensor::zeros({channels, channels});
  }
  p.pool = Tensor::zeros({channels, channels});
  p.fusion = Tensor::zeros({channels, 5 * channels});
  p.fusion_bias = Tensor::zeros({channels});
  return p;
}

Tensor aspp_forward(const Tensor& feature, const DilationRates& rates, const AsppParams& params) {
  params.validate();
  if (feature.rank() != 3 || feature.dim(1) != feature.dim(2)) {
    throw ShapeError("aspp_forward: feature must be [C,H,H], got " + shape_str(feature.shape()));
  }
  const std::size_t c = feature.dim(0), h = feature.dim(1);
  if (c != params.channels()) {
    throw ShapeError("aspp_forward: feature has " + std::to_string(c) + " channels, parameters expect " +
                     std::to_string(params.channels()));
  }

  std::vector<Tensor> branches;
  branches.reserve(5);
  for (std::size_t b = 0; b < 4; ++b) {
    ConvGeometry g;
    g.input_size = h;
    if (b == 0) {
      g.kernel_size = 1;
      g.dilation = rates[0];
      g.padding = 0;
    } else {
      g.kernel_size = 3;
      g.dilation = rates[b];
      g.padding = rates[b];
    }
    branches.push_back(depthwise_separable_conv(feature, params.depthwise[b], params.pointwise[b], g));
  }
  Tensor pooled = ops::reshape(ops::global_avg_pool(feature), {c, 1});
  Tensor mixed = ops::reshape(ops::matmul(params.pool, pooled), {c});
  branches.push_back(ops::broadcast_spatial(mixed, h, h));

  Tensor stacked = ops::concat(branches, 0);
  Tensor flat = ops::reshape(stacked, {5 * c, h * h});
  Tensor fused = ops::reshape(ops::matmul(params.fusion, flat), {c, h, h});
  return ops::add_channel_bias(fused, params.fusion_bias);
}

Tensor inject_attention_head(const Tensor& head, const DilationRates& rates, const AsppParams& params,
                             bool residual) {
  if (head.rank() != 2 || head.dim(0) != head.dim(1) || head.dim(0) < 2) {
    throw ShapeError("attention head must be [N+1,N+1], got " + shape_str(head.shape()));
  }
  const std::size_t n = head.dim(0) - 1;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) {
    throw ShapeError("attention injection needs a square patch grid, got N=" + std::to_string(n));
  }

  Tensor cls_row = ops::slice(head, 0, 0, 1);
  Tensor rows = ops::slice(head, 0, 1, n);
  Tensor cls_col = ops::slice(rows, 1, 0, 1);
  Tensor spatial = ops::slice(rows, 1, 1, n);

  Tensor refined = ops::reshape(aspp_forward(ops::reshape(spatial, {n, side, side}), rates, params), {n, n});
  if (residual) refined = ops::add(refined, spatial);
  Tensor probs = ops::softmax(ops::relu(refined), 1);
  Tensor mass = ops::add_scalar(ops::scale(ops::reshape(cls_col, {n}), -1.0), 1.0);
  Tensor body = ops::concat({cls_col, ops::scale_rows(probs, mass)}, 1);
  return ops::concat({cls_row, body}, 0);
}

AttentionMap attention_aspp_inject(const AttentionMap& attn, std::size_t epoch, const AsppParams& params,
                                   const DilationSchedule& schedule, bool residual) {
  const auto rates = schedule.rates(epoch);
  const std::size_t t = attn.tokens();
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < attn.heads(); ++h) {
    heads.push_back(ops::reshape(inject_attention_head(attn.head(h), rates, params, residual), {1, t, t}));
  }
  return {ops::concat(heads, 0)};
}

}  // namespace dmsa
