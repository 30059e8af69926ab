#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <string>

#include "dmsa/attention.hpp"
#include "dmsa/tensor.hpp"

namespace dmsa {

using DilationRates = std::array<std::size_t, 4>;

/// Epoch-indexed ASPP dilation table, keyed by epoch mod 10.
class DilationSchedule {
 public:
  /// The default table:
  ///   _1,_3,_5,_7 -> [1,1,2,3]
  ///   _2,_4,_6    -> [1,1,3,5]
  ///   _8,_9       -> [1,3,6,9]
  ///   _0          -> [1,6,12,18]  (the static DeepLabV3+ rates)
  DilationSchedule();
  /// Override hook; entry i is used when epoch % 10 == i.
  explicit DilationSchedule(const std::array<DilationRates, 10>& table);

  /// Rates for a 1-based epoch.
  DilationRates rates(std::size_t epoch) const;
  const std::array<DilationRates, 10>& table() const { return table_; }

 private:
  std::array<DilationRates, 10> table_;
};

/// Rates from the default table.
DilationRates dilation_schedule(std::size_t epoch);

std::string rates_str(const DilationRates& rates);

/// Four depthwise-separable branches, an image-pooling branch and a 1x1
/// fusion back to C channels. Branch 0 carries a 1x1 depthwise kernel, the
/// other three carry 3x3 kernels.
struct AsppParams {
  std::array<Tensor, 4> depthwise;  // [C,1,1] then 3 x [C,3,3]
  std::array<Tensor, 4> pointwise;  // [C,C]
  Tensor pool;                      // [C,C]
  Tensor fusion;                    // [C,5C]
  Tensor fusion_bias;               // [C]

  std::size_t channels() const { return fusion.dim(0); }
  void validate() const;

  static AsppParams random(std::size_t channels, std::mt19937_64& rng, double stddev = 0.02);
  /// Every branch passes its input through unchanged (centre-tap depthwise,
  /// identity pointwise), the pooling branch is zero and fusion averages the
  /// four spatial branches.
  static AsppParams identity(std::size_t channels);
  static AsppParams zeros(std::size_t channels);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t b = 0; b < 4; ++b) {
      f(prefix + "branch" + std::to_string(b) + ".depthwise", depthwise[b]);
      f(prefix + "branch" + std::to_string(b) + ".pointwise", pointwise[b]);
    }
    f(prefix + "pool", pool);
    f(prefix + "fusion", fusion);
    f(prefix + "fusion_bias", fusion_bias);
  }
};

/// ASPP over a square feature map [C,H,H]. Dilated branches use padding = rate
/// so every branch keeps the input size.
Tensor aspp_forward(const Tensor& feature, const DilationRates& rates, const AsppParams& params);

/// One attention head [N+1,N+1]: the N x N patch block is read as N query
/// channels over a sqrt(N) x sqrt(N) key grid, refined by ASPP, relu'd and
/// row-softmaxed, then scaled so each row keeps its class-token weight and
/// still sums to 1. The class-token row and column pass through untouched.
/// With `residual`, ASPP output is added to the original weights before relu.
Tensor inject_attention_head(const Tensor& head, const DilationRates& rates, const AsppParams& params,
                             bool residual = false);

AttentionMap attention_aspp_inject(const AttentionMap& attn, std::size_t epoch, const AsppParams& params,
                                   const DilationSchedule& schedule = DilationSchedule(),
                                   bool residual = false);

}  // namespace dmsa
