#include "petseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>

#include "petseg/error.hpp"

namespace petseg::nifti {

namespace {

#pragma pack(push, 1)
struct Header {
  int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  int32_t extents;
  int16_t session_error;
  char regular;
  char dim_info;
  int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  int16_t intent_code;
  int16_t datatype;
  int16_t bitpix;
  int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348);

constexpr int16_t kDtUInt8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtInt32 = 8;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kDtFloat64 = 64;
constexpr int16_t kDtInt8 = 256;
constexpr int16_t kDtUInt16 = 512;

struct GzCloser {
  void operator()(gzFile_s* f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

void read_exact(gzFile f, void* dst, std::size_t bytes, const std::filesystem::path& path) {
  auto* out = static_cast<char*>(dst);
  while (bytes > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) throw IoError("truncated NIfTI file: " + path.string());
    out += got;
    bytes -= static_cast<std::size_t>(got);
  }
}

using Mat34 = std::array<std::array<double, 4>, 3>;

Mat34 affine_from_header(const Header& h) {
  Mat34 m{};
  if (h.sform_code > 0) {
    for (int c = 0; c < 4; ++c) {
      m[0][c] = h.srow_x[c];
      m[1][c] = h.srow_y[c];
      m[2][c] = h.srow_z[c];
    }
    return m;
  }
  const double dx = h.pixdim[1] > 0 ? h.pixdim[1] : 1.0;
  const double dy = h.pixdim[2] > 0 ? h.pixdim[2] : 1.0;
  const double dz = h.pixdim[3] > 0 ? h.pixdim[3] : 1.0;
  if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
    const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    const double r[3][3] = {
        {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
        {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
        {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b},
    };
    const double scale[3] = {dx, dy, dz * qfac};
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) m[row][col] = r[row][col] * scale[col];
    }
    m[0][3] = h.qoffset_x;
    m[1][3] = h.qoffset_y;
    m[2][3] = h.qoffset_z;
    return m;
  }
  m[0][0] = dx;
  m[1][1] = dy;
  m[2][2] = dz;
  return m;
}

template <typename T>
void convert(const std::vector<char>& raw, std::vector<float>& out, double slope, double inter) {
  const std::size_t n = raw.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<float>(static_cast<double>(v) * slope + inter);
  }
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing file: " + path.string());
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  Header h{};
  read_exact(f.get(), &h, sizeof(h), path);
  if (h.sizeof_hdr != 348) throw IoError("not a little-endian NIfTI-1 file: " + path.string());
  if (std::memcmp(h.magic, "n+1", 4) != 0) throw IoError("unsupported NIfTI magic (single-file n+1 expected): " + path.string());

  const int ndim = h.dim[0];
  if (ndim < 3 || ndim > 4) throw IoError("expected a 3D or 4D volume: " + path.string());
  Shape3 in_shape{h.dim[1], h.dim[2], h.dim[3]};
  if (in_shape.nx < 1 || in_shape.ny < 1 || in_shape.nz < 1) throw IoError("invalid dimensions in " + path.string());
  const int channels = ndim == 4 ? std::max<int>(1, h.dim[4]) : 1;

  const std::size_t n = in_shape.voxels() * static_cast<std::size_t>(channels);
  std::size_t elem = 0;
  switch (h.datatype) {
    case kDtUInt8:
    case kDtInt8: elem = 1; break;
    case kDtInt16:
    case kDtUInt16: elem = 2; break;
    case kDtInt32:
    case kDtFloat32: elem = 4; break;
    case kDtFloat64: elem = 8; break;
    default: throw IoError("unsupported NIfTI datatype " + std::to_string(h.datatype));
  }
  const auto skip = static_cast<long>(h.vox_offset) - static_cast<long>(sizeof(Header));
  if (skip < 0) throw IoError("invalid vox_offset in " + path.string());
  std::vector<char> ext(static_cast<std::size_t>(skip));
  if (skip > 0) read_exact(f.get(), ext.data(), ext.size(), path);
  std::vector<char> raw(n * elem);
  read_exact(f.get(), raw.data(), raw.size(), path);

  const double slope = (h.scl_slope == 0.0f || !std::isfinite(h.scl_slope)) ? 1.0 : h.scl_slope;
  const double inter = std::isfinite(h.scl_inter) && h.scl_slope != 0.0f ? h.scl_inter : 0.0;
  std::vector<float> flat;
  switch (h.datatype) {
    case kDtUInt8: convert<uint8_t>(raw, flat, slope, inter); break;
    case kDtInt8: convert<int8_t>(raw, flat, slope, inter); break;
    case kDtInt16: convert<int16_t>(raw, flat, slope, inter); break;
    case kDtUInt16: convert<uint16_t>(raw, flat, slope, inter); break;
    case kDtInt32: convert<int32_t>(raw, flat, slope, inter); break;
    case kDtFloat32: convert<float>(raw, flat, slope, inter); break;
    case kDtFloat64: convert<double>(raw, flat, slope, inter); break;
    default: break;
  }

  // Canonicalize: voxel axis i maps onto world axis perm[i] with sign flip[i].
  const Mat34 m = affine_from_header(h);
  std::array<int, 3> perm{};
  std::array<bool, 3> flip{};
  std::array<double, 3> step{};
  std::array<bool, 3> used{};
  for (int i = 0; i < 3; ++i) {
    int best = 0;
    for (int j = 1; j < 3; ++j) {
      if (std::abs(m[j][i]) > std::abs(m[best][i])) best = j;
    }
    const double len = std::abs(m[best][i]);
    if (len <= 0.0) throw IoError("degenerate orientation matrix in " + path.string());
    for (int j = 0; j < 3; ++j) {
      if (j != best && std::abs(m[j][i]) > 1e-3 * len) {
        throw IoError("oblique orientation is not supported: " + path.string());
      }
    }
    if (used[best]) throw IoError("degenerate orientation matrix in " + path.string());
    used[best] = true;
    perm[i] = best;
    flip[i] = m[best][i] < 0;
    step[i] = len;
  }

  Image img;
  img.channels = channels;
  Shape3 out_shape;
  for (int i = 0; i < 3; ++i) {
    out_shape[perm[i]] = in_shape[i];
    img.geometry.spacing[perm[i]] = step[i];
  }
  img.geometry.shape = out_shape;
  std::array<double, 3> first_index{};
  for (int i = 0; i < 3; ++i) first_index[i] = flip[i] ? in_shape[i] - 1 : 0;
  for (int j = 0; j < 3; ++j) {
    img.geometry.origin[j] = m[j][3] + m[j][0] * first_index[0] + m[j][1] * first_index[1] + m[j][2] * first_index[2];
  }

  const bool identity = perm == std::array<int, 3>{0, 1, 2} && !flip[0] && !flip[1] && !flip[2];
  if (identity) {
    img.data = std::move(flat);
    return img;
  }
  img.data.resize(n);
  const std::size_t vox = in_shape.voxels();
  for (int c = 0; c < channels; ++c) {
    const float* src = flat.data() + c * vox;
    float* dst = img.data.data() + c * vox;
    for (int z = 0; z < in_shape.nz; ++z) {
      for (int y = 0; y < in_shape.ny; ++y) {
        for (int x = 0; x < in_shape.nx; ++x) {
          const int in_idx[3] = {x, y, z};
          int out_idx[3];
          for (int i = 0; i < 3; ++i) out_idx[perm[i]] = flip[i] ? in_shape[i] - 1 - in_idx[i] : in_idx[i];
          dst[out_shape.index(out_idx[0], out_idx[1], out_idx[2])] = src[in_shape.index(x, y, z)];
        }
      }
    }
  }
  return img;
}

void write_image(const std::filesystem::path& path, const Image& image, StorageType type) {
  const Geometry& g = image.geometry;
  if (image.data.size() != g.shape.voxels() * static_cast<std::size_t>(image.channels)) {
    throw ValidationError("NIfTI image data size does not match geometry");
  }
  Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = image.channels > 1 ? 4 : 3;
  h.dim[1] = static_cast<int16_t>(g.shape.nx);
  h.dim[2] = static_cast<int16_t>(g.shape.ny);
  h.dim[3] = static_cast<int16_t>(g.shape.nz);
  h.dim[4] = static_cast<int16_t>(image.channels);
  for (int i = 5; i < 8; ++i) h.dim[i] = 1;
  switch (type) {
    case StorageType::UInt8: h.datatype = kDtUInt8; h.bitpix = 8; break;
    case StorageType::Int32: h.datatype = kDtInt32; h.bitpix = 32; break;
    case StorageType::Float32: h.datatype = kDtFloat32; h.bitpix = 32; break;
  }
  h.pixdim[0] = 1.0f;
  for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(g.spacing[a]);
  h.pixdim[4] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // mm
  std::strncpy(h.descrip, "petseg", sizeof(h.descrip));
  h.qform_code = 1;
  h.sform_code = 1;
  h.qoffset_x = static_cast<float>(g.origin[0]);
  h.qoffset_y = static_cast<float>(g.origin[1]);
  h.qoffset_z = static_cast<float>(g.origin[2]);
  h.srow_x[0] = static_cast<float>(g.spacing[0]);
  h.srow_y[1] = static_cast<float>(g.spacing[1]);
  h.srow_z[2] = static_cast<float>(g.spacing[2]);
  h.srow_x[3] = h.qoffset_x;
  h.srow_y[3] = h.qoffset_y;
  h.srow_z[3] = h.qoffset_z;
  std::memcpy(h.magic, "n+1", 4);

  std::vector<char> payload;
  const std::size_t n = image.data.size();
  switch (type) {
    case StorageType::UInt8:
      payload.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        payload[i] = static_cast<char>(static_cast<uint8_t>(std::clamp(std::lround(image.data[i]), 0L, 255L)));
      }
      break;
    case StorageType::Int32:
      payload.resize(n * 4);
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = static_cast<int32_t>(std::lround(image.data[i]));
        std::memcpy(payload.data() + 4 * i, &v, 4);
      }
      break;
    case StorageType::Float32:
      payload.resize(n * 4);
      std::memcpy(payload.data(), image.data.data(), n * 4);
      break;
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    GzHandle f(gzopen(tmp.string().c_str(), "wb6"));
    if (!f) throw IoError("cannot write " + tmp.string());
    const char extension[4] = {0, 0, 0, 0};
    bool ok = gzwrite(f.get(), &h, sizeof(h)) == static_cast<int>(sizeof(h));
    ok = ok && gzwrite(f.get(), extension, 4) == 4;
    std::size_t off = 0;
    while (ok && off < payload.size()) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(payload.size() - off, 1u << 30));
      ok = gzwrite(f.get(), payload.data() + off, chunk) == static_cast<int>(chunk);
      off += chunk;
    }
    if (!ok) throw IoError("failed writing " + tmp.string());
    if (gzclose(f.release()) != Z_OK) throw IoError("failed closing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

VolumeGrid read_volume(const std::filesystem::path& path, VolumeKind kind) {
  Image img = read_image(path);
  if (img.channels != 1) throw IoError("expected a single-channel volume: " + path.string());
  try {
    return VolumeGrid(img.geometry, kind, std::move(img.data));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

namespace {
StorageType storage_for(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::BinaryMask: return StorageType::UInt8;
    case VolumeKind::LabelMap: return StorageType::Int32;
    default: return StorageType::Float32;
  }
}
}  // namespace

void write_volume(const std::filesystem::path& path, const VolumeGrid& grid) {
  Image img{grid.geometry(), 1, std::vector<float>(grid.values().begin(), grid.values().end())};
  write_image(path, img, storage_for(grid.kind()));
}

std::vector<VolumeGrid> read_channels(const std::filesystem::path& path, VolumeKind kind) {
  Image img = read_image(path);
  std::vector<VolumeGrid> out;
  const std::size_t vox = img.geometry.shape.voxels();
  for (int c = 0; c < img.channels; ++c) {
    out.emplace_back(img.geometry, kind,
                     std::vector<float>(img.data.begin() + static_cast<std::ptrdiff_t>(c * vox),
                                        img.data.begin() + static_cast<std::ptrdiff_t>((c + 1) * vox)));
  }
  return out;
}

void write_channels(const std::filesystem::path& path, const std::vector<VolumeGrid>& channels) {
  if (channels.empty()) throw ValidationError("no channels to write");
  Image img;
  img.geometry = channels.front().geometry();
  img.channels = static_cast<int>(channels.size());
  for (const auto& ch : channels) {
    require_same_geometry(img.geometry, ch.geometry(), "write_channels");
    img.data.insert(img.data.end(), ch.values().begin(), ch.values().end());
  }
  write_image(path, img, storage_for(channels.front().kind()));
}

}  // namespace petseg::nifti
