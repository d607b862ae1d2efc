#pragma once

#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"

namespace hapt3d {

// ASCII PLY with one vertex element: x y z red green blue (doubles, colors in
// [0,1]) followed by integer semantic, tree_id and instance_id columns. -1
// encodes an absent id. Doubles are written in shortest round-trip form, so a
// save/load cycle is bit-exact.
namespace ply_detail {

inline constexpr std::array<const char*, 9> kRequired = {
    "x", "y", "z", "red", "green", "blue", "semantic", "tree_id", "instance_id"};

inline void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

inline double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw FormatError("ply: bad number '" + std::string(tok) + "' on data line " +
                      std::to_string(line));
  }
  return v;
}

}  // namespace ply_detail

inline LabeledCloud load_ply(const std::filesystem::path& path,
                             ValidationMode mode = ValidationMode::kGroundTruth) {
  std::ifstream in(path);
  if (!in) throw IoError("ply: cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
    throw FormatError("ply: missing magic in " + path.string());
  }
  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false, ascii = false;
  std::vector<std::string> props;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "end_header") break;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      ascii = fmt == "ascii";
    } else if (word == "element") {
      std::string name;
      std::size_t count = 0;
      ss >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = count;
        seen_vertex = true;
      } else if (!seen_vertex) {
        throw FormatError("ply: element '" + name + "' precedes vertex element");
      }
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ss >> type;
      if (type == "list") throw FormatError("ply: list properties unsupported on vertex");
      ss >> name;
      props.push_back(name);
    }
  }
  if (!ascii) throw FormatError("ply: only 'format ascii 1.0' is supported");
  if (!seen_vertex) throw FormatError("ply: no vertex element");

  std::array<int, 9> column{};
  for (std::size_t r = 0; r < ply_detail::kRequired.size(); ++r) {
    int found = -1;
    for (std::size_t c = 0; c < props.size(); ++c) {
      if (props[c] == ply_detail::kRequired[r]) found = static_cast<int>(c);
    }
    if (found < 0) {
      throw FormatError(std::string("ply: missing vertex property '") + ply_detail::kRequired[r] +
                        "'");
    }
    column[r] = found;
  }

  LabeledCloud cloud;
  cloud.points.reserve(vertex_count);
  std::vector<std::string_view> toks;
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (!std::getline(in, line)) {
      throw FormatError("ply: expected " + std::to_string(vertex_count) + " vertices, got " +
                        std::to_string(i));
    }
    toks.clear();
    std::string_view sv(line);
    std::size_t pos = 0;
    while (pos < sv.size()) {
      while (pos < sv.size() && (sv[pos] == ' ' || sv[pos] == '\t' || sv[pos] == '\r')) ++pos;
      std::size_t end = pos;
      while (end < sv.size() && sv[end] != ' ' && sv[end] != '\t' && sv[end] != '\r') ++end;
      if (end > pos) toks.push_back(sv.substr(pos, end - pos));
      pos = end;
    }
    if (toks.size() < props.size()) {
      throw FormatError("ply: data line " + std::to_string(i) + " has too few values");
    }
    auto num = [&](int r) { return ply_detail::parse_double(toks[column[r]], i); };
    auto id = [&](int r) -> std::optional<int> {
      const double v = num(r);
      if (v != static_cast<int>(v)) throw FormatError("ply: non-integer id on data line " + std::to_string(i));
      if (v == -1.0) return std::nullopt;
      return static_cast<int>(v);
    };
    PointRecord p;
    p.position = {num(0), num(1), num(2)};
    p.color = {num(3), num(4), num(5)};
    const double sem = num(6);
    if (sem != static_cast<int>(sem)) throw FormatError("ply: non-integer semantic on data line " + std::to_string(i));
    p.semantic = static_cast<int>(sem);
    p.tree_id = id(7);
    p.instance_id = id(8);
    cloud.points.push_back(p);
  }
  validate(cloud, mode);
  return cloud;
}

inline void save_ply(const LabeledCloud& cloud, const std::filesystem::path& path,
                     ValidationMode mode = ValidationMode::kGroundTruth) {
  validate(cloud, mode);
  std::string out;
  out.reserve(96 * cloud.size() + 256);
  out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
  out +=
      "property double x\nproperty double y\nproperty double z\n"
      "property double red\nproperty double green\nproperty double blue\n"
      "property int semantic\nproperty int tree_id\nproperty int instance_id\nend_header\n";
  for (const auto& p : cloud.points) {
    for (double v : p.position) {
      ply_detail::append_double(out, v);
      out += ' ';
    }
    for (double v : p.color) {
      ply_detail::append_double(out, v);
      out += ' ';
    }
    out += std::to_string(p.semantic);
    out += ' ';
    out += std::to_string(p.tree_id.value_or(-1));
    out += ' ';
    out += std::to_string(p.instance_id.value_or(-1));
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("ply: cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("ply: write failed for " + path.string());
}

}  // namespace hapt3d
