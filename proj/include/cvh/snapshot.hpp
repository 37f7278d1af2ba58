#pragma once

// Binary field snapshots.
//
//   bytes 0..3   "CVHF"
//   u32          format version (1)
//   u32 x 3      storage lattice extents (x, y, z)
//   u32          placement code (node 0, edge 1, face 2, cell 3, two_scale 4)
//   u32          component count
//   [two_scale only] u32 x 3   cell lattice extents (x, y, z)
//   f64 ...      values in (component, z, y, x) order; for two-scale data
//                (component, Z, Y, X, z, y, x) with the macro index outermost.
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cvh/error.hpp"
#include "cvh/grid.hpp"

namespace cvh {

inline constexpr std::uint32_t kSnapshotVersion = 1;

struct SnapshotHeader {
  std::array<std::uint32_t, 3> dims{};
  Placement placement = Placement::node;
  std::uint32_t ncomp = 0;
  std::array<std::uint32_t, 3> ydims{};  // two-scale only
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}
inline void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}
inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw PreconditionError("snapshot truncated");
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  pos += 4;
  return v;
}
inline double get_f64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw PreconditionError("snapshot truncated");
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  pos += 8;
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline std::string encode_snapshot(const SnapshotHeader& hdr, const std::vector<double>& values) {
  std::string out = "CVHF";
  detail::put_u32(out, kSnapshotVersion);
  for (auto d : hdr.dims) detail::put_u32(out, d);
  detail::put_u32(out, static_cast<std::uint32_t>(hdr.placement));
  detail::put_u32(out, hdr.ncomp);
  if (hdr.placement == Placement::two_scale)
    for (auto d : hdr.ydims) detail::put_u32(out, d);
  out.reserve(out.size() + 8 * values.size());
  for (double v : values) detail::put_f64(out, v);
  return out;
}

inline std::vector<double> decode_snapshot(const std::string& bytes, SnapshotHeader& hdr) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "CVHF") != 0) throw PreconditionError("snapshot: bad magic");
  std::size_t pos = 4;
  if (detail::get_u32(bytes, pos) != kSnapshotVersion) throw PreconditionError("snapshot: unsupported version");
  for (auto& d : hdr.dims) d = detail::get_u32(bytes, pos);
  hdr.placement = static_cast<Placement>(detail::get_u32(bytes, pos));
  hdr.ncomp = detail::get_u32(bytes, pos);
  std::size_t count = std::size_t{hdr.ncomp} * hdr.dims[0] * hdr.dims[1] * hdr.dims[2];
  if (hdr.placement == Placement::two_scale) {
    for (auto& d : hdr.ydims) d = detail::get_u32(bytes, pos);
    count *= std::size_t{hdr.ydims[0]} * hdr.ydims[1] * hdr.ydims[2];
  }
  if (bytes.size() - pos != 8 * count) throw PreconditionError("snapshot: payload size does not match header");
  std::vector<double> values(count);
  for (auto& v : values) v = detail::get_f64(bytes, pos);
  return values;
}

template <Placement P, int NC>
std::string encode_snapshot(const Field<P, NC>& f) {
  SnapshotHeader hdr;
  for (int a = 0; a < 3; ++a) hdr.dims[static_cast<std::size_t>(a)] = static_cast<std::uint32_t>(f.dims()[a]);
  hdr.placement = P;
  hdr.ncomp = NC;
  return encode_snapshot(hdr, f.data());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw PreconditionError("cannot open " + path + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw PreconditionError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PreconditionError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace cvh
