#pragma once

// (state, velocity) sample sets and their text file format.
//
// File layout:
//   line 1   : "#revmap-dataset " followed by a one-line JSON header
//              (state_dim, action_source, stride, gamma, arm, seed,
//               trajectory_lengths, ...)
//   line 2.. : d state values then d velocity values, comma separated,
//              shortest round-trip decimal of the 64-bit values.

#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "revmap/autodiff.hpp"

namespace revmap {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) throw InputError("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError("cannot parse number '" + std::string(s) + "'");
  return v;
}

struct Dataset {
  Mat states;      // N x d
  Mat velocities;  // N x d
  nlohmann::json header = nlohmann::json::object();

  Eigen::Index size() const { return states.rows(); }
  Eigen::Index state_dim() const { return states.cols(); }

  Dataset subset(const std::vector<Eigen::Index>& rows) const {
    Dataset out;
    out.header = header;
    out.states.resize(static_cast<Eigen::Index>(rows.size()), states.cols());
    out.velocities.resize(static_cast<Eigen::Index>(rows.size()), velocities.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.states.row(static_cast<Eigen::Index>(i)) = states.row(rows[i]);
      out.velocities.row(static_cast<Eigen::Index>(i)) = velocities.row(rows[i]);
    }
    return out;
  }
};

inline constexpr const char* kDatasetMagic = "#revmap-dataset ";

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  if (ds.states.rows() != ds.velocities.rows() || ds.states.cols() != ds.velocities.cols())
    throw ShapeError("write_dataset: states and velocities disagree in shape");
  nlohmann::json header = ds.header;
  header["state_dim"] = ds.state_dim();
  header["samples"] = ds.size();
  os << kDatasetMagic << header.dump() << '\n';
  std::string line;
  for (Eigen::Index r = 0; r < ds.size(); ++r) {
    line.clear();
    for (Eigen::Index c = 0; c < ds.state_dim(); ++c) {
      if (c) line += ',';
      line += format_double(ds.states(r, c));
    }
    for (Eigen::Index c = 0; c < ds.state_dim(); ++c) {
      line += ',';
      line += format_double(ds.velocities(r, c));
    }
    os << line << '\n';
  }
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FileError("cannot open '" + path + "' for writing");
  write_dataset(os, ds);
  if (!os) throw FileError("failed writing '" + path + "'");
}

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind(kDatasetMagic, 0) != 0) throw InputError("dataset: missing header line");
  Dataset ds;
  try {
    ds.header = nlohmann::json::parse(line.substr(std::string(kDatasetMagic).size()));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("dataset: malformed header: ") + e.what());
  }
  const auto d = ds.header.at("state_dim").get<Eigen::Index>();
  if (d < 1) throw InputError("dataset: state_dim must be positive");
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t start = 0;
    Eigen::Index count = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view tok(line.data() + start, (comma == std::string::npos ? line.size() : comma) - start);
      values.push_back(parse_double(tok));
      ++count;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (count != 2 * d)
      throw InputError("dataset: row " + std::to_string(rows + 1) + " has " + std::to_string(count) + " values, expected " +
                       std::to_string(2 * d));
    ++rows;
  }
  ds.states.resize(rows, d);
  ds.velocities.resize(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < d; ++c) {
      ds.states(r, c) = values[static_cast<std::size_t>(r * 2 * d + c)];
      ds.velocities(r, c) = values[static_cast<std::size_t>(r * 2 * d + d + c)];
    }
  if (ds.header.contains("samples") && ds.header["samples"].get<Eigen::Index>() != rows)
    throw InputError("dataset: header sample count disagrees with body");
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError("cannot open dataset '" + path + "'");
  return read_dataset(is);
}

}  // namespace revmap
