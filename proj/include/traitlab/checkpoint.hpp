// Copyright 2026 The traitlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "traitlab/error.hpp"
#include "traitlab/lora.hpp"
#include "traitlab/tinylm.hpp"

// Binary container layout (all integers little-endian):
//
//   bytes 0..3   magic "TLAB"
//   u32          format version
//   u32          payload kind (1 = model, 2 = adapters)
//   u64          header length N
//   N bytes      UTF-8 JSON header
//   rest         float64 tensor data, row-major, in header order
//
// The header holds the configuration and a "tensors" array of
// {name, rows, cols, offset} where offset counts doubles from the start of
// the data section.
namespace traitlab::checkpoint {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kMagic[4] = {'T', 'L', 'A', 'B'};
inline constexpr std::uint32_t kVersion = 1;

enum class Kind : std::uint32_t { Model = 1, Adapters = 2 };

struct Container {
  Kind kind = Kind::Model;
  nlohmann::ordered_json config;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw ParseError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string encode(const Container& c) {
  nlohmann::ordered_json header;
  header["config"] = c.config;
  header["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : c.tensors) {
    header["tensors"].push_back(
        {{"name", name}, {"rows", m.rows()}, {"cols", m.cols()},
         {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size());
  }
  const std::string h = header.dump();
  std::string out(kMagic, 4);
  detail::put(out, kVersion);
  detail::put(out, static_cast<std::uint32_t>(c.kind));
  detail::put(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  for (const auto& [name, m] : c.tensors) {
    out.append(reinterpret_cast<const char*>(m.data()),
               static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  return out;
}

inline Container decode(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError("not a traitlab checkpoint (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = detail::get<std::uint32_t>(bytes, pos);
  if (version != kVersion) {
    throw ParseError("unsupported checkpoint version " +
                     std::to_string(version));
  }
  Container c;
  c.kind = static_cast<Kind>(detail::get<std::uint32_t>(bytes, pos));
  const auto hlen = detail::get<std::uint64_t>(bytes, pos);
  if (pos + hlen > bytes.size()) throw ParseError("checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  pos += hlen;
  const std::size_t data = pos;
  c.config = header.at("config");
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto off = t.at("offset").get<std::uint64_t>();
    const std::size_t begin = data + off * sizeof(double);
    const std::size_t n = static_cast<std::size_t>(rows * cols);
    if (rows < 0 || cols < 0 || begin + n * sizeof(double) > bytes.size()) {
      throw ParseError("checkpoint tensor '" +
                       t.at("name").get<std::string>() + "' out of bounds");
    }
    Matrix m(rows, cols);
    std::memcpy(m.data(), bytes.data() + begin, n * sizeof(double));
    c.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return c;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Model parameters
// ---------------------------------------------------------------------------

inline std::string serialize(const tinylm::Parameters& p) {
  Container c;
  c.kind = Kind::Model;
  c.config = tinylm::to_json(p.config);
  p.for_each([&c](const std::string& name, const Matrix& m) {
    c.tensors.emplace_back(name, m);
  });
  return encode(c);
}

inline tinylm::Parameters deserialize_model(std::string_view bytes) {
  Container c = decode(bytes);
  if (c.kind != Kind::Model) throw ParseError("checkpoint is not a model");
  tinylm::Parameters p =
      tinylm::zero_parameters(tinylm::model_config_from_json(c.config));
  std::map<std::string, Matrix*> slots;
  p.for_each([&slots](const std::string& n, Matrix& m) { slots[n] = &m; });
  for (auto& [name, m] : c.tensors) {
    auto it = slots.find(name);
    if (it == slots.end()) throw ParseError("unexpected tensor '" + name + "'");
    if (it->second->rows() != m.rows() || it->second->cols() != m.cols()) {
      throw ParseError("tensor '" + name + "' has shape " + shape_string(m) +
                       ", expected " + shape_string(*it->second));
    }
    *it->second = std::move(m);
    slots.erase(it);
  }
  if (!slots.empty()) {
    throw ParseError("checkpoint lacks tensor '" + slots.begin()->first + "'");
  }
  return p;
}

inline void save_model(const std::string& path, const tinylm::Parameters& p) {
  write_file(path, serialize(p));
}

inline tinylm::Parameters load_model(const std::string& path) {
  return deserialize_model(read_file(path));
}

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

inline std::string serialize(const peft::AdapterSet& a) {
  Container c;
  c.kind = Kind::Adapters;
  c.config = {{"rank", a.rank}, {"alpha", a.alpha}, {"dropout", a.dropout}};
  auto& targets = c.config["targets"] = nlohmann::ordered_json::array();
  for (const auto& [name, ad] : a.adapters) {
    targets.push_back({{"name", name}, {"scale", ad.scale},
                       {"dropout", ad.dropout}, {"merged", ad.merged}});
    c.tensors.emplace_back(name + ".l1", ad.l1);
    c.tensors.emplace_back(name + ".l2", ad.l2);
  }
  return encode(c);
}

inline peft::AdapterSet deserialize_adapters(std::string_view bytes) {
  Container c = decode(bytes);
  if (c.kind != Kind::Adapters) {
    throw ParseError("checkpoint does not hold adapters");
  }
  peft::AdapterSet a;
  a.rank = c.config.value("rank", Eigen::Index{0});
  a.alpha = c.config.value("alpha", 0.0);
  a.dropout = c.config.value("dropout", 0.0);
  std::map<std::string, Matrix> tensors;
  for (auto& [n, m] : c.tensors) tensors[n] = std::move(m);
  for (const auto& t : c.config.at("targets")) {
    const std::string name = t.at("name").get<std::string>();
    auto l1 = tensors.find(name + ".l1");
    auto l2 = tensors.find(name + ".l2");
    if (l1 == tensors.end() || l2 == tensors.end()) {
      throw ParseError("adapter '" + name + "' lacks L1/L2");
    }
    peft::LoraAdapter ad;
    ad.l1 = std::move(l1->second);
    ad.l2 = std::move(l2->second);
    ad.scale = t.at("scale").get<double>();
    ad.dropout = t.value("dropout", 0.0);
    ad.merged = t.value("merged", false);
    if (ad.l1.cols() != ad.l2.rows()) {
      throw ParseError("adapter '" + name + "' has inconsistent rank");
    }
    a.adapters.emplace(name, std::move(ad));
  }
  return a;
}

inline void save_adapters(const std::string& path, const peft::AdapterSet& a) {
  write_file(path, serialize(a));
}

inline peft::AdapterSet load_adapters(const std::string& path) {
  return deserialize_adapters(read_file(path));
}

}  // namespace traitlab::checkpoint
