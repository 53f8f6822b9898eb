#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bfs/errors.hpp"
#include "bfs/model.hpp"
#include "bfs/version.hpp"

namespace bfs {

using nlohmann::json;

namespace {

json conv_to_json(const ConvSpec& c) {
  return json{{"kh", c.kh},       {"kw", c.kw},   {"stride_f", c.stride_f},
              {"stride_t", c.stride_t}, {"same", c.same}, {"c_in", c.c_in},
              {"c_out", c.c_out}, {"bn", c.bn},   {"relu", c.relu}};
}

ConvSpec conv_from_json(const json& j) {
  ConvSpec c;
  c.kh = j.at("kh");
  c.kw = j.at("kw");
  c.stride_f = j.at("stride_f");
  c.stride_t = j.at("stride_t");
  c.same = j.at("same");
  c.c_in = j.at("c_in");
  c.c_out = j.at("c_out");
  c.bn = j.at("bn");
  c.relu = j.at("relu");
  return c;
}

json arch_to_json(const ArchitectureSpec& a) {
  json head = json::array();
  for (const ConvSpec& c : a.head) head.push_back(conv_to_json(c));
  return json{{"input_freq", a.input_freq},
              {"stem", conv_to_json(a.stem)},
              {"pool_extent", a.pool_extent},
              {"pool_stride", a.pool_stride},
              {"pool_ceil", a.pool_ceil},
              {"n_resblocks", a.n_resblocks},
              {"res_channels", a.res_channels},
              {"head", head}};
}

ArchitectureSpec arch_from_json(const json& j) {
  ArchitectureSpec a;
  a.input_freq = j.at("input_freq");
  a.stem = conv_from_json(j.at("stem"));
  a.pool_extent = j.at("pool_extent");
  a.pool_stride = j.at("pool_stride");
  a.pool_ceil = j.at("pool_ceil");
  a.n_resblocks = j.at("n_resblocks");
  a.res_channels = j.at("res_channels");
  a.head.clear();
  for (const json& c : j.at("head")) a.head.push_back(conv_from_json(c));
  return a;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

}  // namespace

std::string make_train_metadata(const ArchitectureSpec& arch, const TrainConfig& config,
                                const SimRanges& ranges, double final_loss,
                                std::size_t update_count) {
  json j{{"arch", arch_to_json(arch)},
         {"train",
          {{"epochs", config.epochs},
           {"updates_per_epoch", config.updates_per_epoch},
           {"batch_size", config.batch_size},
           {"traces_per_sample", config.traces_per_sample},
           {"alpha0", config.alpha0},
           {"decay", config.decay},
           {"lr_rule", config.lr_rule == TrainConfig::LrRule::kInverseTime ? "inverse_time"
                                                                           : "linear"},
           {"fixed_corpus", config.fixed_corpus},
           {"seed", config.seed}}},
         {"ranges",
          {{"bfs", {ranges.bfs_lo, ranges.bfs_hi}},
           {"sw", {ranges.sw_lo, ranges.sw_hi}},
           {"snr", {ranges.snr_lo, ranges.snr_hi}}}},
         {"final_loss", final_loss},
         {"updates", update_count},
         {"tool_version", kVersion}};
  return j.dump();
}

ArchitectureSpec ModelCheckpoint::arch() const {
  json j;
  try {
    j = json::parse(metadata_json);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  try {
    return arch_from_json(j.at("arch"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata missing architecture: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt) {
  // Payload is serialized first so the header checksum can cover it.
  std::ostringstream payload;
  {
    const std::uint64_t meta_len = ckpt.metadata_json.size();
    put(payload, &meta_len, 8);
    put(payload, ckpt.metadata_json.data(), ckpt.metadata_json.size());
    const std::uint32_t n_records = static_cast<std::uint32_t>(ckpt.records.size());
    put(payload, &n_records, 4);
    for (const auto& [name, values] : ckpt.records) {
      const std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
      put(payload, &name_len, 4);
      put(payload, name.data(), name.size());
      const std::uint64_t count = values.size();
      put(payload, &count, 8);
      put(payload, values.data(), values.size() * 8);
    }
  }
  const std::string body = payload.str();
  const std::uint64_t checksum = fnv1a(body.data(), body.size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path);
  put(out, "BFSN", 4);
  put(out, &ckpt.version, 4);
  put(out, &checksum, 8);
  put(out, body.data(), body.size());
  if (!out) throw FormatError("write failed: " + path);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open for reading: " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t off = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (off + n > raw.size()) {
      throw FormatError(std::string("truncated checkpoint while reading ") + what,
                        static_cast<long long>(off));
    }
  };

  need(4, "magic");
  if (std::memcmp(raw.data(), "BFSN", 4) != 0) throw FormatError("bad magic, expected BFSN", 0);
  off = 4;

  ModelCheckpoint ckpt;
  need(4, "version");
  std::memcpy(&ckpt.version, raw.data() + off, 4);
  off += 4;
  if (ckpt.version != 1) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version), 4);
  }

  need(8, "checksum");
  std::uint64_t checksum = 0;
  std::memcpy(&checksum, raw.data() + off, 8);
  off += 8;
  const std::uint64_t actual = fnv1a(raw.data() + off, raw.size() - off);
  if (actual != checksum) {
    throw FormatError("checksum mismatch: payload is corrupt", static_cast<long long>(off));
  }

  need(8, "metadata length");
  std::uint64_t meta_len = 0;
  std::memcpy(&meta_len, raw.data() + off, 8);
  off += 8;
  need(meta_len, "metadata");
  ckpt.metadata_json.assign(raw.data() + off, meta_len);
  off += meta_len;

  need(4, "record count");
  std::uint32_t n_records = 0;
  std::memcpy(&n_records, raw.data() + off, 4);
  off += 4;
  ckpt.records.reserve(n_records);
  for (std::uint32_t r = 0; r < n_records; ++r) {
    need(4, "record name length");
    std::uint32_t name_len = 0;
    std::memcpy(&name_len, raw.data() + off, 4);
    off += 4;
    need(name_len, "record name");
    std::string name(raw.data() + off, name_len);
    off += name_len;
    need(8, "record value count");
    std::uint64_t count = 0;
    std::memcpy(&count, raw.data() + off, 8);
    off += 8;
    need(count * 8, "record values");
    std::vector<double> values(count);
    std::memcpy(values.data(), raw.data() + off, count * 8);
    off += count * 8;
    ckpt.records.emplace_back(std::move(name), std::move(values));
  }
  if (off != raw.size()) {
    throw FormatError("trailing bytes after last record", static_cast<long long>(off));
  }
  return ckpt;
}

}  // namespace bfs
