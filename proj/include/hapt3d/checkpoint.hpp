#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "hapt3d/error.hpp"
#include "hapt3d/network.hpp"

namespace hapt3d {

// Binary checkpoint layout (all integers u64 little-endian, values f64 LE):
//   "HAPT3D01"
//   u64 config_len, config text (NetworkConfig key=value lines)
//   u64 array_count
//   per array: u64 name_len, name bytes, u64 rows, u64 cols, rows*cols f64
// Arrays are the network parameters and normalization buffers in creation
// order.
inline constexpr char kCheckpointMagic[9] = "HAPT3D01";

namespace ckpt_detail {


inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) {
    if (n > data_.size() - pos_) throw FormatError("checkpoint: truncated file");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  std::string out(kCheckpointMagic, 8);
  const std::string cfg = net.config().serialize();
  ckpt_detail::put_u64(out, cfg.size());
  out += cfg;
  const auto& ps = net.params();
  ckpt_detail::put_u64(out, ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Parameter& p = ps[i];
    ckpt_detail::put_u64(out, p.name.size());
    out += p.name;
    ckpt_detail::put_u64(out, p.value.rows());
    ckpt_detail::put_u64(out, p.value.cols());
    for (double v : p.value.values()) ckpt_detail::put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint: write failed for " + path.string());
}

inline std::unique_ptr<Network> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ckpt_detail::Reader r(std::move(data));
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw FormatError("checkpoint: bad magic");
  const auto cfg_len = r.u64();
  auto net = std::make_unique<Network>(NetworkConfig::deserialize(r.bytes(cfg_len)));
  auto& ps = net->params();
  const auto count = r.u64();
  if (count != ps.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(ps.size()) + " arrays, found " +
                      std::to_string(count));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u64());
    const auto rows = r.u64(), cols = r.u64();
    if (!ps.contains(name)) throw FormatError("checkpoint: unknown array '" + name + "'");
    Parameter& p = ps.at(name);
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw FormatError("checkpoint: shape mismatch for '" + name + "'");
    }
    for (auto& v : p.value.values()) v = r.f64();
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return net;
}

}  // namespace hapt3d
