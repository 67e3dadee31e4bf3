// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "bbcq/error.hpp"
#include "bbcq/io.hpp"
#include "bbcq/random.hpp"
#include "json_util.hpp"

namespace bbcq {

static_assert(std::endian::native == std::endian::little, "payloads are written in host order");

namespace {

using nlohmann::json;

[[noreturn]] void manifest_error(const std::string& msg) { throw Error(ErrorKind::kManifest, "manifest: " + msg); }

}  // namespace

namespace detail {

json spec_to_json(const ModelSpec& s) {
  return json{{"num_blocks", s.num_blocks}, {"embed_dim", s.embed_dim},     {"num_heads", s.num_heads},
              {"mlp_ratio", s.mlp_ratio},   {"patch_count", s.patch_count}, {"num_classes", s.num_classes},
              {"init_seed", s.init_seed}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  try {
    s.num_blocks = j.at("num_blocks").get<std::size_t>();
    s.embed_dim = j.at("embed_dim").get<std::size_t>();
    s.num_heads = j.at("num_heads").get<std::size_t>();
    s.mlp_ratio = j.at("mlp_ratio").get<double>();
    s.patch_count = j.at("patch_count").get<std::size_t>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    manifest_error(std::string("bad spec: ") + e.what());
  }
  try {
    validate_spec(s);
  } catch (const Error& e) {
    manifest_error(e.what());
  }
  return s;
}

}  // namespace detail

namespace {

using detail::spec_from_json;
using detail::spec_to_json;

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  std::memcpy(&v, in.data(), 8);
  return v;
}

}  // namespace

std::string write_container(const Container& c) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const ContainerTensor& t : c.tensors) {
    const std::size_t n = shape_numel(t.shape);
    const std::size_t have = t.dtype == DType::kF64 ? t.f64.size() : t.i64.size();
    if (have != n) {
      throw Error(ErrorKind::kContract, "tensor '" + t.name + "' holds " + std::to_string(have) +
                                            " values for shape " + shape_to_string(t.shape));
    }
    tensors.push_back(json{{"name", t.name},
                           {"shape", t.shape},
                           {"dtype", t.dtype == DType::kF64 ? "f64" : "i64"},
                           {"offset", offset},
                           {"nbytes", n * 8}});
    offset += n * 8;
  }
  const json manifest{{"format", std::string(kContainerMagic)},
                      {"kind", c.kind},
                      {"spec", spec_to_json(c.spec)},
                      {"tensors", std::move(tensors)}};
  const std::string text = manifest.dump();

  std::string out;
  out.reserve(16 + text.size() + offset);
  out.append(kContainerMagic);
  put_u64(out, text.size());
  out.append(text);
  for (const ContainerTensor& t : c.tensors) {
    if (t.dtype == DType::kF64) {
      out.append(reinterpret_cast<const char*>(t.f64.data()), t.f64.size() * 8);
    } else {
      out.append(reinterpret_cast<const char*>(t.i64.data()), t.i64.size() * 8);
    }
  }
  return out;
}

Container read_container(std::string_view bytes) {
  const std::string_view family = kContainerMagic.substr(0, 6);
  if (bytes.substr(0, std::min<std::size_t>(bytes.size(), 6)) != family.substr(0, std::min<std::size_t>(bytes.size(), 6))) {
    throw Error(ErrorKind::kMagic, "not a BBCVIT container (bad magic)");
  }
  if (bytes.size() < 16) {
    throw Error(ErrorKind::kLength, "file truncated: " + std::to_string(bytes.size()) + " bytes is shorter than the header");
  }
  if (bytes.substr(0, 8) != kContainerMagic) {
    throw Error(ErrorKind::kVersion,
                "unsupported container version '" + std::string(bytes.substr(6, 2)) + "', expected '01'");
  }
  const std::uint64_t mlen = get_u64(bytes.substr(8, 8));
  if (mlen > bytes.size() - 16) {
    throw Error(ErrorKind::kLength, "manifest length " + std::to_string(mlen) + " exceeds file size");
  }
  json manifest;
  try {
    manifest = json::parse(bytes.substr(16, mlen));
  } catch (const json::exception& e) {
    manifest_error(std::string("invalid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(16 + mlen);

  Container c;
  std::uint64_t expected = 0;
  try {
    if (manifest.at("format").get<std::string>() != kContainerMagic) manifest_error("format field mismatch");
    c.kind = manifest.at("kind").get<std::string>();
    c.spec = spec_from_json(manifest.at("spec"));
    for (const json& e : manifest.at("tensors")) {
      ContainerTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      const std::string dtype = e.at("dtype").get<std::string>();
      if (dtype == "f64") {
        t.dtype = DType::kF64;
      } else if (dtype == "i64") {
        t.dtype = DType::kI64;
      } else {
        manifest_error("tensor '" + t.name + "' has unknown dtype '" + dtype + "'");
      }
      if (t.shape.empty()) manifest_error("tensor '" + t.name + "' has an empty shape");
      for (std::size_t d : t.shape) {
        if (d == 0) manifest_error("tensor '" + t.name + "' has a zero dimension");
      }
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (offset != expected) manifest_error("tensor '" + t.name + "' is not contiguous");
      if (nbytes != shape_numel(t.shape) * 8) manifest_error("tensor '" + t.name + "' byte count disagrees with shape");
      expected += nbytes;
      c.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    manifest_error(std::string("malformed entry: ") + e.what());
  }
  if (payload.size() != expected) {
    throw Error(ErrorKind::kLength, "payload holds " + std::to_string(payload.size()) + " bytes, manifest declares " +
                                        std::to_string(expected));
  }
  std::size_t pos = 0;
  for (ContainerTensor& t : c.tensors) {
    const std::size_t n = shape_numel(t.shape);
    if (t.dtype == DType::kF64) {
      t.f64.resize(n);
      std::memcpy(t.f64.data(), payload.data() + pos, n * 8);
    } else {
      t.i64.resize(n);
      std::memcpy(t.i64.data(), payload.data() + pos, n * 8);
    }
    pos += n * 8;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Model files

std::string serialize_model(const Model& model) {
  Container c;
  c.kind = "model";
  c.spec = model.spec;
  for (const auto& [name, t] : named_parameters(model)) {
    c.tensors.push_back(ContainerTensor{name, t->shape(), DType::kF64, t->values(), {}});
  }
  return write_container(c);
}

Model deserialize_model(std::string_view bytes) {
  Container c = read_container(bytes);
  if (c.kind != "model") manifest_error("expected a model file, found kind '" + c.kind + "'");

  // Shapes follow from the spec alone; build a zero model to compare against.
  const ModelSpec& s = c.spec;
  const std::size_t d = s.embed_dim, f = s.mlp_hidden();
  Model m;
  m.spec = s;
  m.w_embed = Tensor(Shape{d, d});
  m.blocks.resize(s.num_blocks);
  for (BlockParams& p : m.blocks) {
    p.ln1_gamma = p.ln1_beta = p.ln2_gamma = p.ln2_beta = p.b_mlp2 = Tensor(Shape{d});
    p.w_q = p.w_k = p.w_v = p.w_o = Tensor(Shape{d, d});
    p.w_mlp1 = Tensor(Shape{d, f});
    p.b_mlp1 = Tensor(Shape{f});
    p.w_mlp2 = Tensor(Shape{f, d});
  }
  m.w_head = Tensor(Shape{d, s.num_classes});

  auto slots = named_parameters(m);
  if (slots.size() != c.tensors.size()) {
    manifest_error("spec declares " + std::to_string(s.num_blocks) + " blocks (" + std::to_string(slots.size()) +
                   " tensors), file holds " + std::to_string(c.tensors.size()) + " tensors");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    ContainerTensor& t = c.tensors[i];
    if (t.name != slots[i].first) manifest_error("tensor " + std::to_string(i) + " is '" + t.name + "', expected '" + slots[i].first + "'");
    if (t.shape != slots[i].second->shape()) {
      manifest_error("tensor '" + t.name + "' has shape " + shape_to_string(t.shape) + ", spec requires " +
                     shape_to_string(slots[i].second->shape()));
    }
    if (t.dtype != DType::kF64) manifest_error("tensor '" + t.name + "' must be f64");
    for (double v : t.f64) {
      if (!std::isfinite(v)) manifest_error("tensor '" + t.name + "' holds a non-finite value");
    }
    *const_cast<Tensor*>(slots[i].second) = Tensor(t.shape, std::move(t.f64));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Dataset files

std::string serialize_dataset(const Dataset& data) {
  Container c;
  c.kind = "dataset";
  c.spec = data.spec;
  c.tensors.push_back(ContainerTensor{"inputs", data.inputs.shape(), DType::kF64, data.inputs.values(), {}});
  c.tensors.push_back(ContainerTensor{"labels", Shape{data.labels.size()}, DType::kI64, {}, data.labels});
  return write_container(c);
}

Dataset deserialize_dataset(std::string_view bytes) {
  Container c = read_container(bytes);
  if (c.kind != "dataset") manifest_error("expected a dataset file, found kind '" + c.kind + "'");
  if (c.tensors.size() != 2 || c.tensors[0].name != "inputs" || c.tensors[1].name != "labels") {
    manifest_error("dataset must hold exactly 'inputs' then 'labels'");
  }
  ContainerTensor& in = c.tensors[0];
  ContainerTensor& lab = c.tensors[1];
  if (in.dtype != DType::kF64 || lab.dtype != DType::kI64) manifest_error("dataset dtypes must be f64 inputs, i64 labels");
  if (in.shape.size() != 3 || lab.shape.size() != 1 || in.shape[0] != lab.shape[0]) {
    manifest_error("inputs " + shape_to_string(in.shape) + " and labels " + shape_to_string(lab.shape) +
                   " do not describe one batch");
  }
  if (in.shape[1] != c.spec.patch_count || in.shape[2] != c.spec.embed_dim) {
    manifest_error("inputs " + shape_to_string(in.shape) + " disagree with the declared spec");
  }
  Dataset d;
  d.spec = c.spec;
  d.inputs = Tensor(in.shape, std::move(in.f64));
  d.labels = std::move(lab.i64);
  for (std::int64_t l : d.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= c.spec.num_classes) manifest_error("label " + std::to_string(l) + " out of range");
  }
  return d;
}

void check_dataset(const Dataset& data, const ModelSpec& spec) {
  const Shape& s = data.inputs.shape();
  if (s.size() != 3 || s[1] != spec.patch_count || s[2] != spec.embed_dim || s[0] != data.labels.size()) {
    throw Error(ErrorKind::kDimension, "dataset inputs " + shape_to_string(s) + " do not match model [B x " +
                                           std::to_string(spec.patch_count) + " x " + std::to_string(spec.embed_dim) +
                                           "]");
  }
  for (std::int64_t l : data.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= spec.num_classes) {
      throw Error(ErrorKind::kIndex, "label " + std::to_string(l) + " outside [0, " +
                                         std::to_string(spec.num_classes) + ")");
    }
  }
}

Dataset generate_dataset(const ModelSpec& spec, std::size_t count, std::uint64_t seed, std::uint64_t stream) {
  validate_spec(spec);
  if (count == 0) throw Error(ErrorKind::kConfig, "dataset size must be >= 1");
  const std::size_t n = spec.patch_count, d = spec.embed_dim, classes = spec.num_classes;

  Rng rule_rng(derive_seed(seed, 0));
  std::vector<double> rule(d * classes);
  for (double& v : rule) v = rule_rng.normal();

  Rng rng(derive_seed(seed, stream + 1));
  Dataset out;
  out.spec = spec;
  out.inputs = Tensor(Shape{count, n, d});
  out.labels.resize(count);
  auto x = out.inputs.data();
  for (double& v : x) v = rng.normal();

  std::vector<double> mean(d), score(classes);
  for (std::size_t b = 0; b < count; ++b) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < d; ++j) mean[j] += x[(b * n + t) * d + j];
    }
    std::fill(score.begin(), score.end(), 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      const double m = mean[j] / static_cast<double>(n);
      for (std::size_t c = 0; c < classes; ++c) score[c] += m * rule[j * classes + c];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (score[c] > score[best]) best = c;
    }
    out.labels[b] = static_cast<std::int64_t>(best);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorKind::kIo, "read failed for '" + path + "'");
  return std::move(ss).str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
}

}  // namespace bbcq
