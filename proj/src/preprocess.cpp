#include "petseg/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "petseg/error.hpp"

namespace petseg {

std::string_view to_string(ChannelName name) {
  switch (name) {
    case ChannelName::Suv: return "SUV";
    case ChannelName::Ct: return "CT";
    case ChannelName::CtSoft: return "CT_Soft";
    case ChannelName::CtLung: return "CT_Lung";
    case ChannelName::SuvHot: return "SUV_hot";
    case ChannelName::CoarseMask: return "COARSE_MASK";
  }
  return "?";
}

ChannelName channel_name_from_string(std::string_view s) {
  for (auto n : {ChannelName::Suv, ChannelName::Ct, ChannelName::CtSoft, ChannelName::CtLung, ChannelName::SuvHot,
                 ChannelName::CoarseMask}) {
    if (to_string(n) == s) return n;
  }
  throw ValidationError("unknown channel name '" + std::string(s) + "'");
}

VolumeGrid window_normalize(const VolumeGrid& grid, double lo, double hi) {
  if (!(lo < hi)) throw ValidationError("window_normalize: lo must be < hi");
  const auto in = grid.values();
  std::vector<float> out(in.size());
  const double scale = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = (static_cast<double>(in[i]) - lo) * scale;
    // NaN maps to 0.
    out[i] = v > 0.0 ? static_cast<float>(std::min(v, 1.0)) : 0.0f;
  }
  return VolumeGrid(grid.geometry(), VolumeKind::Probability, std::move(out));
}

ChannelStack::ChannelStack(std::vector<VolumeGrid> channels, std::vector<ChannelName> names)
    : channels_(std::move(channels)), names_(std::move(names)) {
  if (channels_.empty()) throw ValidationError("channel stack must not be empty");
  if (channels_.size() != names_.size()) throw ValidationError("channel stack: names/channels size mismatch");
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    require_same_geometry(channels_.front().geometry(), channels_[i].geometry(), "channel stack");
    for (float v : channels_[i].values()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw ValidationError("channel stack: channel " + std::string(to_string(names_[i])) + " outside [0,1]");
      }
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (names_[j] == names_[i]) throw ValidationError("channel stack: duplicate channel name");
    }
  }
}

int ChannelStack::index_of(ChannelName name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return -1;
}

const VolumeGrid& ChannelStack::channel(ChannelName name) const {
  const int i = index_of(name);
  if (i < 0) throw ValidationError("channel stack has no " + std::string(to_string(name)) + " channel");
  return channels_[i];
}

bool ChannelStack::is_standard() const {
  if (names_.size() != 5) return false;
  for (int i = 0; i < 5; ++i) {
    if (names_[i] != kStandardWindows[i].name) return false;
  }
  return true;
}

bool ChannelStack::is_refiner() const {
  if (names_.size() != 6 || names_[5] != ChannelName::CoarseMask) return false;
  for (int i = 0; i < 5; ++i) {
    if (names_[i] != kStandardWindows[i].name) return false;
  }
  return true;
}

ChannelStack build_channel_stack(const VolumeGrid& suv, const VolumeGrid& ct) {
  require_same_geometry(suv.geometry(), ct.geometry(), "build_channel_stack (suv vs ct)");
  std::vector<VolumeGrid> channels;
  std::vector<ChannelName> names;
  for (const Window& w : kStandardWindows) {
    const bool pet = w.name == ChannelName::Suv || w.name == ChannelName::SuvHot;
    channels.push_back(window_normalize(pet ? suv : ct, w.lo, w.hi));
    names.push_back(w.name);
  }
  return ChannelStack(std::move(channels), std::move(names));
}

ChannelStack with_coarse_mask(const ChannelStack& stack, const VolumeGrid& coarse) {
  if (!stack.is_standard()) throw ValidationError("with_coarse_mask: expected the standard 5-channel stack");
  require_same_geometry(stack.geometry(), coarse.geometry(), "with_coarse_mask");
  if (coarse.kind() != VolumeKind::BinaryMask && coarse.kind() != VolumeKind::Probability) {
    throw ValidationError("with_coarse_mask: coarse mask must be a binary mask or probability map");
  }
  std::vector<VolumeGrid> channels = stack.channels();
  std::vector<ChannelName> names = stack.names();
  channels.push_back(coarse.with_kind(VolumeKind::Probability));
  names.push_back(ChannelName::CoarseMask);
  return ChannelStack(std::move(channels), std::move(names));
}

Tensor<float> to_tensor(const ChannelStack& stack) {
  Tensor<float> t(1, static_cast<int>(stack.size()), stack.shape());
  for (std::size_t c = 0; c < stack.size(); ++c) {
    const auto v = stack.channel(c).values();
    std::copy(v.begin(), v.end(), t.channel(0, static_cast<int>(c)));
  }
  return t;
}

Tensor<float> to_tensor(const VolumeGrid& grid) {
  Tensor<float> t(1, 1, grid.shape());
  std::copy(grid.values().begin(), grid.values().end(), t.data());
  return t;
}

namespace {

void copy_box(const float* src, const Shape3& ss, const std::array<int, 3>& start, float* dst, const Shape3& ds) {
  for (int z = 0; z < ds.nz; ++z) {
    const int sz = z + start[2];
    if (sz < 0 || sz >= ss.nz) continue;
    for (int y = 0; y < ds.ny; ++y) {
      const int sy = y + start[1];
      if (sy < 0 || sy >= ss.ny) continue;
      const int x0 = std::max(0, -start[0]);
      const int x1 = std::min(ds.nx, ss.nx - start[0]);
      if (x1 <= x0) continue;
      std::copy(src + ss.index(x0 + start[0], sy, sz), src + ss.index(x1 + start[0], sy, sz), dst + ds.index(x0, y, z));
    }
  }
}

}  // namespace

VolumeGrid crop(const VolumeGrid& grid, const std::array<int, 3>& start, const Shape3& shape, float fill) {
  Geometry g;
  g.shape = shape;
  g.spacing = grid.spacing();
  for (int a = 0; a < 3; ++a) g.origin[a] = grid.origin()[a] + start[a] * grid.spacing()[a];
  std::vector<float> out(shape.voxels(), fill);
  copy_box(grid.values().data(), grid.shape(), start, out.data(), shape);
  return VolumeGrid(g, grid.kind(), std::move(out));
}

ChannelStack crop(const ChannelStack& stack, const std::array<int, 3>& start, const Shape3& shape) {
  std::vector<VolumeGrid> channels;
  for (const auto& c : stack.channels()) channels.push_back(crop(c, start, shape, 0.0f));
  return ChannelStack(std::move(channels), stack.names());
}

Tensor<float> crop_tensor(const Tensor<float>& t, const std::array<int, 3>& start, const Shape3& shape) {
  Tensor<float> out(t.batch(), t.channels(), shape);
  for (int n = 0; n < t.batch(); ++n) {
    for (int c = 0; c < t.channels(); ++c) copy_box(t.channel(n, c), t.spatial(), start, out.channel(n, c), shape);
  }
  return out;
}

}  // namespace petseg
