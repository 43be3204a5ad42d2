#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "bpct/bytes.hpp"
#include "bpct/gan/models.hpp"

namespace bpct::gan {

// Layout:
//   "BPCT-CKPT1", u32 manifest length, manifest text,
//   f32 payload of every "param" line in manifest order,
//   for VQ models: K*D f32 codebook entries then K u64 usage counts.
// Manifest lines are "key=value" for the model config, then
// "param <name> <rank> <dims...>" and, for VQ, "codebook <K> <D>".
inline constexpr std::string_view kCheckpointMagic{"BPCT-CKPT1", 10};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string manifest_for(const Generator& gen) {
  const ModelConfig& c = gen.config();
  std::ostringstream m;
  m << "model=" << to_string(c.kind) << "\n"
    << "vol_dim=" << c.vol_dim << "\n"
    << "base_channels=" << c.base_channels << "\n"
    << "attn_reduction=" << c.attn_reduction << "\n"
    << "attn_lambda_rec=" << format_double(c.attn_lambda_rec) << "\n"
    << "vq_k=" << c.vq_k << "\n"
    << "vq_d=" << c.vq_d << "\n"
    << "vq_beta=" << format_double(c.vq_beta) << "\n"
    << "seed=" << c.seed << "\n";
  for (const auto& [name, t] : gen.params().entries()) {
    if (name == "codebook") continue;
    m << "param " << name << " " << t.rank();
    for (std::size_t d : t.shape()) m << " " << d;
    m << "\n";
  }
  if (c.kind == ModelKind::VQ) m << "codebook " << c.vq_k << " " << c.vq_d << "\n";
  return m.str();
}

[[noreturn]] inline void bad_manifest(const std::string& where) { throw FormatError(FormatErrc::BadManifest, where); }

template <typename T>
T parse_number(const std::string& s, const std::string& where) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) bad_manifest(where);
  return v;
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(Generator& gen) {
  const std::string manifest = detail::manifest_for(gen);
  bytes::Writer w;
  w.raw(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(manifest.size()));
  w.raw(manifest);
  std::vector<float> buf;
  for (const auto& [name, t] : gen.params().entries()) {
    if (name == "codebook") continue;
    buf.assign(t.data().begin(), t.data().end());
    w.f32s(buf);
  }
  if (auto* book = gen.codebook()) {
    buf.assign(book->entries.data().begin(), book->entries.data().end());
    w.f32s(buf);
    for (std::uint64_t u : book->usage) w.u64(u);
  }
  return w.data();
}

inline std::unique_ptr<Generator> decode_checkpoint(std::span<const char> data, const std::string& where) {
  bytes::Reader r(data, where);
  if (!r.expect(kCheckpointMagic)) throw FormatError(FormatErrc::BadMagic, where);
  const std::uint32_t len = r.u32();
  if (len > r.remaining()) throw FormatError(FormatErrc::Truncated, where);
  const std::string manifest = r.str(len);

  ModelConfig cfg;
  struct ParamLine {
    std::string name;
    Shape shape;
  };
  std::vector<ParamLine> params;
  std::size_t book_k = 0, book_d = 0;
  std::istringstream lines(manifest);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq != std::string::npos && line.rfind("param ", 0) != 0) {
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      try {
        if (key == "model") cfg.kind = parse_model_kind(val);
        else if (key == "vol_dim") cfg.vol_dim = detail::parse_number<std::size_t>(val, where);
        else if (key == "base_channels") cfg.base_channels = detail::parse_number<std::size_t>(val, where);
        else if (key == "attn_reduction") cfg.attn_reduction = detail::parse_number<std::size_t>(val, where);
        else if (key == "attn_lambda_rec") cfg.attn_lambda_rec = detail::parse_number<double>(val, where);
        else if (key == "vq_k") cfg.vq_k = detail::parse_number<std::size_t>(val, where);
        else if (key == "vq_d") cfg.vq_d = detail::parse_number<std::size_t>(val, where);
        else if (key == "vq_beta") cfg.vq_beta = detail::parse_number<double>(val, where);
        else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(val, where);
        else detail::bad_manifest(where);
      } catch (const ValidationError&) {
        detail::bad_manifest(where);
      }
      continue;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "param") {
      ParamLine p;
      std::size_t rank = 0;
      if (!(ls >> p.name >> rank) || rank > 8) detail::bad_manifest(where);
      p.shape.resize(rank);
      for (auto& d : p.shape) {
        if (!(ls >> d)) detail::bad_manifest(where);
      }
      params.push_back(std::move(p));
    } else if (tag == "codebook") {
      if (!(ls >> book_k >> book_d)) detail::bad_manifest(where);
    } else {
      detail::bad_manifest(where);
    }
  }

  std::unique_ptr<Generator> gen;
  try {
    gen = make_generator(cfg);
  } catch (const ValidationError&) {
    detail::bad_manifest(where);
  }
  std::vector<std::pair<std::string, Tensor>> expected;
  for (const auto& e : gen->params().entries()) {
    if (e.first != "codebook") expected.push_back(e);
  }
  if (expected.size() != params.size()) detail::bad_manifest(where);
  std::vector<float> buf;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = expected[i];
    if (params[i].name != name || params[i].shape != t.shape()) detail::bad_manifest(where);
    buf.resize(t.numel());
    r.f32s(buf);
    auto dst = t.mutable_data();
    for (std::size_t j = 0; j < buf.size(); ++j) dst[j] = buf[j];
  }
  if (auto* book = gen->codebook()) {
    if (book_k != cfg.vq_k || book_d != cfg.vq_d) detail::bad_manifest(where);
    buf.resize(book_k * book_d);
    r.f32s(buf);
    auto dst = book->entries.mutable_data();
    for (std::size_t j = 0; j < buf.size(); ++j) dst[j] = buf[j];
    for (auto& u : book->usage) u = r.u64();
  } else if (book_k != 0) {
    detail::bad_manifest(where);
  }
  r.finish();
  return gen;
}

inline void save_checkpoint(Generator& gen, const std::filesystem::path& path) {
  bytes::write_file(path, encode_checkpoint(gen));
}

inline std::unique_ptr<Generator> load_checkpoint(const std::filesystem::path& path) {
  const auto buf = bytes::read_file(path);
  return decode_checkpoint(buf, path.string());
}

}  // namespace bpct::gan
