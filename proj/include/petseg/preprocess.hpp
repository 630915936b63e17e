#pragma once

#include <string_view>
#include <vector>

#include "petseg/tensor.hpp"
#include "petseg/volume.hpp"

namespace petseg {

enum class ChannelName { Suv, Ct, CtSoft, CtLung, SuvHot, CoarseMask };

std::string_view to_string(ChannelName name);
ChannelName channel_name_from_string(std::string_view s);

struct Window {
  ChannelName name;
  double lo;
  double hi;
};

// Fixed input windows, in model channel order.
inline constexpr Window kStandardWindows[5] = {
    {ChannelName::Suv, 0.0, 30.0},
    {ChannelName::Ct, -150.0, 300.0},
    {ChannelName::CtSoft, -100.0, 100.0},
    {ChannelName::CtLung, -1000.0, -200.0},
    {ChannelName::SuvHot, 2.0, 10.0},
};

// clamp((v - lo) / (hi - lo), 0, 1); the result is a Probability grid.
VolumeGrid window_normalize(const VolumeGrid& grid, double lo, double hi);

// Ordered channels in [0, 1] on one geometry.
class ChannelStack {
 public:
  ChannelStack(std::vector<VolumeGrid> channels, std::vector<ChannelName> names);

  const Geometry& geometry() const { return channels_.front().geometry(); }
  const Shape3& shape() const { return geometry().shape; }
  std::size_t size() const { return channels_.size(); }
  const VolumeGrid& channel(std::size_t i) const { return channels_[i]; }
  const VolumeGrid& channel(ChannelName name) const;
  const std::vector<VolumeGrid>& channels() const { return channels_; }
  const std::vector<ChannelName>& names() const { return names_; }
  // -1 when absent.
  int index_of(ChannelName name) const;
  bool is_standard() const;
  bool is_refiner() const;

  friend bool operator==(const ChannelStack&, const ChannelStack&) = default;

 private:
  std::vector<VolumeGrid> channels_;
  std::vector<ChannelName> names_;
};

ChannelStack build_channel_stack(const VolumeGrid& suv, const VolumeGrid& ct);

// Standard stack + COARSE_MASK as the sixth channel. The mask may be binary or
// a probability map; it must share the stack geometry.
ChannelStack with_coarse_mask(const ChannelStack& stack, const VolumeGrid& coarse);

// Single-sample tensor [1][C][z][y][x].
Tensor<float> to_tensor(const ChannelStack& stack);
Tensor<float> to_tensor(const VolumeGrid& grid);

// Box crop starting at `start` (may be negative or overrun the volume);
// voxels outside the source are `fill`. Geometry origin follows the crop.
VolumeGrid crop(const VolumeGrid& grid, const std::array<int, 3>& start, const Shape3& shape, float fill = 0.0f);
ChannelStack crop(const ChannelStack& stack, const std::array<int, 3>& start, const Shape3& shape);

// Zero-padded copy of a single-sample tensor region (same semantics as crop).
Tensor<float> crop_tensor(const Tensor<float>& t, const std::array<int, 3>& start, const Shape3& shape);

}  // namespace petseg
