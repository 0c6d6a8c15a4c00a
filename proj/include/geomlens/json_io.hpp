#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "geomlens/dist.hpp"
#include "geomlens/errors.hpp"
#include "geomlens/linalg.hpp"
#include "geomlens/netlab.hpp"

namespace geomlens {

/// Fixed 17-significant-digit decimal formatting. Round-trips any double
/// exactly and keeps serialized reports byte-identical across runs.
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace jsonio {

inline std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string vector_json(const Vec& v) {
  std::string out = "[";
  for (Index i = 0; i < v.size(); ++i) {
    if (i) out.push_back(',');
    out += fmt17(v(i));
  }
  out.push_back(']');
  return out;
}

inline std::string row_list_json(const Mat& m) {
  std::string out = "[";
  for (Index r = 0; r < m.rows(); ++r) {
    if (r) out.push_back(',');
    out += vector_json(m.row(r).transpose());
  }
  out.push_back(']');
  return out;
}

/// Row-major flat encoding with an explicit shape header.
inline std::string matrix_json(const Mat& m) {
  std::string out = "{\"rows\":" + std::to_string(m.rows()) +
                    ",\"cols\":" + std::to_string(m.cols()) + ",\"data\":[";
  bool first = true;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (!first) out.push_back(',');
      first = false;
      out += fmt17(m(r, c));
    }
  }
  out += "]}";
  return out;
}

inline std::string labels_json(const std::vector<std::string>& labels) {
  std::string out = "[";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out.push_back(',');
    out += quoted(labels[i]);
  }
  out.push_back(']');
  return out;
}

inline Mat matrix_from_json(const nlohmann::json& node) {
  const Index rows = node.at("rows").get<Index>();
  const Index cols = node.at("cols").get<Index>();
  const auto& data = node.at("data");
  if (static_cast<Index>(data.size()) != rows * cols) {
    throw IoError("matrix data length does not match its shape");
  }
  Mat m(rows, cols);
  Index i = 0;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = data.at(i++).get<double>();
  }
  return m;
}

inline Mat row_list_from_json(const nlohmann::json& node) {
  if (!node.is_array() || node.empty()) throw IoError("expected a non-empty row list");
  const Index rows = static_cast<Index>(node.size());
  const Index cols = static_cast<Index>(node.at(0).size());
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(node.at(r).size()) != cols) {
      throw IoError("ragged row list");
    }
    for (Index c = 0; c < cols; ++c) m(r, c) = node.at(r).at(c).get<double>();
  }
  return m;
}

}  // namespace jsonio

inline std::string dist_to_json(const JointDistribution& j) {
  return "{\"p_xy\":" + jsonio::row_list_json(j.pxy()) +
         ",\"labels_x\":" + jsonio::labels_json(j.labels_x()) +
         ",\"labels_y\":" + jsonio::labels_json(j.labels_y()) + "}";
}

inline JointDistribution dist_from_json(const std::string& text) {
  nlohmann::json node;
  try {
    node = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad distribution JSON: ") + e.what());
  }
  Mat p_xy = jsonio::row_list_from_json(node.at("p_xy"));
  std::vector<std::string> lx, ly;
  if (node.contains("labels_x")) lx = node.at("labels_x").get<std::vector<std::string>>();
  if (node.contains("labels_y")) ly = node.at("labels_y").get<std::vector<std::string>>();
  return JointDistribution(std::move(p_xy), std::move(lx), std::move(ly));
}

inline std::string net_to_json(const NetworkParams& net) {
  std::string out = "{\"input_dim\":" + std::to_string(net.input_dim) +
                    ",\"layers\":[";
  bool first = true;
  const auto emit = [&](const NetLayer& layer) {
    if (!first) out.push_back(',');
    first = false;
    out += "{\"activation\":" + jsonio::quoted(layer.act.name()) +
           ",\"w\":" + jsonio::matrix_json(layer.w) +
           ",\"b\":" + jsonio::vector_json(layer.b) + "}";
  };
  for (const NetLayer& layer : net.hidden) emit(layer);
  emit(net.output);
  out += "]}";
  return out;
}

inline NetworkParams net_from_json(const std::string& text) {
  nlohmann::json node;
  try {
    node = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad network JSON: ") + e.what());
  }
  NetworkParams net;
  net.input_dim = node.at("input_dim").get<Index>();
  const auto& layers = node.at("layers");
  if (layers.empty()) throw IoError("network needs at least the output layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    NetLayer layer;
    layer.act = Activation::parse(layers.at(i).at("activation").get<std::string>());
    layer.w = jsonio::matrix_from_json(layers.at(i).at("w"));
    Vec b(layers.at(i).at("b").size());
    for (Index k = 0; k < b.size(); ++k) b(k) = layers.at(i).at("b").at(k).get<double>();
    layer.b = std::move(b);
    if (i + 1 == layers.size()) {
      net.output = std::move(layer);
    } else {
      net.hidden.push_back(std::move(layer));
    }
  }
  net.validate();
  return net;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace geomlens
