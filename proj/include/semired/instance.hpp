// Generated problem instances and their JSON archive layout.
#pragma once

#include "semired/loss.hpp"
#include "semired/model.hpp"
#include "semired/optimizer.hpp"
#include "semired/separable_problem.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <memory>
#include <string>

namespace semired {

struct ProblemInstance {
  std::string name;
  SeparableModel model;
  LossModel loss = LossModel::least_squares(Vector());
  BoundBox box;
  Vector x0;
  Vector x_true;  // empty when unknown
  nlohmann::json config;

  Index n_y() const { return model.n_y; }
  Index n_z() const { return model.n_z; }
  std::shared_ptr<SeparableProblem> problem() const {
    return std::make_shared<SeparableProblem>(model, loss);
  }
};

namespace b64 {

inline constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve(4 * ((n + 2) / 3));
  for (std::size_t i = 0; i < n; i += 3) {
    std::uint32_t v = static_cast<std::uint32_t>(data[i]) << 16;
    if (i + 1 < n) v |= static_cast<std::uint32_t>(data[i + 1]) << 8;
    if (i + 2 < n) v |= data[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < n ? kAlphabet[(v >> 6) & 63] : '=';
    out += i + 2 < n ? kAlphabet[v & 63] : '=';
  }
  return out;
}

inline std::string decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw ConfigError("base64: length is not a multiple of 4");
  std::string out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      if (c == '=') {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = value(c);
      if (d < 0) throw ConfigError("base64: invalid character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out += static_cast<char>((v >> 16) & 0xff);
    if (pad < 2) out += static_cast<char>((v >> 8) & 0xff);
    if (pad < 1) out += static_cast<char>(v & 0xff);
  }
  return out;
}

}  // namespace b64

/// Little-endian IEEE doubles, base64 encoded.
inline std::string encode_array(const Vector& v) {
  std::string bytes(static_cast<std::size_t>(v.size()) * 8, '\0');
  for (Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits = 0;
    const double d = v[i];
    std::memcpy(&bits, &d, 8);
    for (int k = 0; k < 8; ++k) {
      bytes[static_cast<std::size_t>(i) * 8 + static_cast<std::size_t>(k)] =
          static_cast<char>((bits >> (8 * k)) & 0xff);
    }
  }
  return b64::encode(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
}

inline Vector decode_array(const std::string& text) {
  const std::string bytes = b64::decode(text);
  if (bytes.size() % 8 != 0) throw ConfigError("decode_array: byte count is not a multiple of 8");
  Vector out(static_cast<Index>(bytes.size() / 8));
  for (Index i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) {
      bits |= static_cast<std::uint64_t>(
                  static_cast<unsigned char>(bytes[static_cast<std::size_t>(i) * 8 +
                                                   static_cast<std::size_t>(k)]))
              << (8 * k);
    }
    double d = 0.0;
    std::memcpy(&d, &bits, 8);
    out[i] = d;
  }
  return out;
}

/// Config echo plus data arrays; enough to regenerate and audit a run.
inline nlohmann::json instance_to_json(const ProblemInstance& inst) {
  nlohmann::json j;
  j["problem"] = inst.name;
  j["config"] = inst.config;
  j["loss"] = std::string(to_string(inst.loss.kind()));
  j["n_y"] = inst.model.n_y;
  j["n_z"] = inst.model.n_z;
  j["n_blocks"] = inst.model.n_blocks;
  j["rows_per_block"] = inst.model.rows_per_block;
  j["encoding"] = "base64 little-endian float64";
  j["data"] = encode_array(inst.loss.data());
  j["lo"] = encode_array(inst.box.lo);
  j["up"] = encode_array(inst.box.up);
  j["x0"] = encode_array(inst.x0);
  if (inst.x_true.size() > 0) j["x_true"] = encode_array(inst.x_true);
  return j;
}

}  // namespace semired
