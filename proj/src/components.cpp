#include "petseg/components.hpp"

#include "petseg/error.hpp"

namespace petseg {

namespace {

class DisjointSet {
 public:
  std::int32_t make() {
    parent_.push_back(static_cast<std::int32_t>(parent_.size()));
    return parent_.back();
  }
  std::int32_t find(std::int32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) parent_[b] = a;
    else parent_[a] = b;
  }

 private:
  std::vector<std::int32_t> parent_;
};

}  // namespace

std::vector<std::size_t> ComponentLabels::sizes() const {
  std::vector<std::size_t> s(static_cast<std::size_t>(count) + 1, 0);
  for (auto l : labels) ++s[static_cast<std::size_t>(l)];
  return s;
}

ComponentLabels label_components(std::span<const float> mask, const Shape3& shape) {
  if (mask.size() != shape.voxels()) throw GeometryError("label_components: size mismatch");
  ComponentLabels out;
  out.shape = shape;
  out.labels.assign(mask.size(), 0);

  // Provisional labels start at 1; index 0 of the set is the background.
  DisjointSet sets;
  sets.make();
  for (int z = 0; z < shape.nz; ++z) {
    for (int y = 0; y < shape.ny; ++y) {
      for (int x = 0; x < shape.nx; ++x) {
        const std::size_t i = shape.index(x, y, z);
        if (mask[i] == 0.0f) continue;
        std::int32_t label = 0;
        // The 13 neighbours already visited in raster order.
        for (int dz = -1; dz <= 0; ++dz) {
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
              const int nx = x + dx, ny = y + dy, nz = z + dz;
              if (nx < 0 || ny < 0 || nz < 0 || nx >= shape.nx || ny >= shape.ny) continue;
              const std::int32_t nl = out.labels[shape.index(nx, ny, nz)];
              if (nl == 0) continue;
              if (label == 0) label = nl;
              else sets.unite(label, nl);
            }
          }
        }
        out.labels[i] = label == 0 ? sets.make() : label;
      }
    }
  }

  std::vector<std::int32_t> remap;
  for (auto& l : out.labels) {
    if (l == 0) continue;
    const std::int32_t r = sets.find(l);
    if (static_cast<std::size_t>(r) >= remap.size()) remap.resize(static_cast<std::size_t>(r) + 1, 0);
    if (remap[r] == 0) remap[r] = ++out.count;
    l = remap[r];
  }
  return out;
}

VolumeGrid connected_components(const VolumeGrid& mask, int* count) {
  if (mask.kind() != VolumeKind::BinaryMask) throw ValidationError("connected_components expects a binary mask");
  ComponentLabels cc = label_components(mask.values(), mask.shape());
  if (count) *count = cc.count;
  std::vector<float> values(cc.labels.begin(), cc.labels.end());
  return VolumeGrid(mask.geometry(), VolumeKind::LabelMap, std::move(values));
}

}  // namespace petseg
