#include "tdom/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tdom/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "payload layout assumes a little-endian host");

namespace tdom::ckpt {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'O', 'M'};

uint64_t fnv1a(const void* data, size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}

std::string shape_txt(const grad::Shape& s) {
  std::string t = "[";
  for (int i = 0; i < s.nd; ++i) t += (i ? "," : "") + std::to_string(s.d[i]);
  return t + "]";
}

[[noreturn]] void corrupt(const std::string& path, const std::string& why) {
  throw RuntimeFailure("corrupt checkpoint " + path + ": " + why);
}

}  // namespace

Checkpoint from_params(const grad::ParamStore<float>& ps,
                       const std::string& config_hash,
                       const std::string& mode) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.mode = mode;
  for (const auto& e : ps.entries)
    c.tensors.push_back({e.name, e.shape, e.value});
  return c;
}

void to_params(const Checkpoint& c, grad::ParamStore<float>& ps) {
  if (c.tensors.size() != ps.entries.size())
    throw RuntimeFailure("checkpoint holds " +
                         std::to_string(c.tensors.size()) +
                         " tensors, parameter store expects " +
                         std::to_string(ps.entries.size()));
  for (size_t i = 0; i < c.tensors.size(); ++i) {
    auto& dst = ps.entries[i];
    const auto& src = c.tensors[i];
    if (src.name != dst.name || !(src.shape == dst.shape))
      throw RuntimeFailure("checkpoint tensor mismatch at " + src.name);
    dst.value = src.data;
  }
}

void write_checkpoint(const std::string& path, const Checkpoint& c) {
  std::vector<float> payload;
  std::ostringstream man;
  man << "config_hash " << c.config_hash << "\n";
  man << "mode " << c.mode << "\n";
  size_t offset = 0;
  for (const auto& t : c.tensors) {
    if (long(t.data.size()) != t.shape.numel())
      throw ContractError("tensor " + t.name + " data does not match shape");
    man << "tensor " << t.name << " " << shape_txt(t.shape) << " " << offset << " "
        << t.data.size() << "\n";
    payload.insert(payload.end(), t.data.begin(), t.data.end());
    offset += t.data.size();
  }
  man << "digest "
      << hex64(fnv1a(payload.data(), payload.size() * sizeof(float))) << "\n";
  std::string manifest = man.str();

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    uint16_t ver = c.version;
    uint32_t mlen = uint32_t(manifest.size());
    out.write(reinterpret_cast<const char*>(&ver), sizeof ver);
    out.write(reinterpret_cast<const char*>(&mlen), sizeof mlen);
    out.write(manifest.data(), manifest.size());
    out.write(reinterpret_cast<const char*>(payload.data()),
              payload.size() * sizeof(float));
    if (!out) throw RuntimeFailure("short checkpoint write: " + path);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw RuntimeFailure("cannot move checkpoint into place: " + path + ": " +
                         ec.message());
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot read checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    corrupt(path, "bad magic bytes");
  uint16_t ver = 0;
  uint32_t mlen = 0;
  in.read(reinterpret_cast<char*>(&ver), sizeof ver);
  in.read(reinterpret_cast<char*>(&mlen), sizeof mlen);
  if (!in) corrupt(path, "truncated header");
  if (ver != kVersion)
    throw RuntimeFailure("checkpoint " + path + " has version " +
                         std::to_string(ver) + ", expected " +
                         std::to_string(kVersion));
  if (mlen == 0 || mlen > (1u << 24)) corrupt(path, "implausible manifest size");
  std::string manifest(mlen, '\0');
  in.read(manifest.data(), mlen);
  if (size_t(in.gcount()) != mlen) corrupt(path, "truncated manifest");

  Checkpoint c;
  c.version = ver;
  size_t expect_floats = 0;
  std::string digest;
  std::istringstream ms(manifest);
  std::string line;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "config_hash") {
      ls >> c.config_hash;
    } else if (tag == "mode") {
      ls >> c.mode;
    } else if (tag == "digest") {
      ls >> digest;
    } else if (tag == "tensor") {
      Checkpoint::Entry e;
      std::string shape_txt;
      size_t offset = 0, count = 0;
      if (!(ls >> e.name >> shape_txt >> offset >> count))
        corrupt(path, "malformed tensor line: " + line);
      if (offset != expect_floats)
        corrupt(path, "non-contiguous tensor offsets at " + e.name);
      // shape text is [d0,d1,...]
      if (shape_txt.size() < 2 || shape_txt.front() != '[' ||
          shape_txt.back() != ']')
        corrupt(path, "malformed shape for " + e.name);
      std::istringstream ss(shape_txt.substr(1, shape_txt.size() - 2));
      std::string dim;
      grad::Shape sh;
      sh.nd = 0;
      while (std::getline(ss, dim, ','))
        sh.d[sh.nd++] = int(std::stol(dim));
      e.shape = sh;
      if (long(count) != sh.numel())
        corrupt(path, "shape/count mismatch for " + e.name);
      e.data.resize(count);
      expect_floats += count;
      c.tensors.push_back(std::move(e));
    } else {
      corrupt(path, "unknown manifest tag: " + tag);
    }
  }
  if (digest.empty()) corrupt(path, "missing payload digest");

  std::vector<float> payload(expect_floats);
  in.read(reinterpret_cast<char*>(payload.data()),
          payload.size() * sizeof(float));
  if (size_t(in.gcount()) != payload.size() * sizeof(float))
    corrupt(path, "truncated payload");
  char extra;
  if (in.read(&extra, 1)) corrupt(path, "trailing bytes after payload");
  if (hex64(fnv1a(payload.data(), payload.size() * sizeof(float))) != digest)
    corrupt(path, "payload digest mismatch");
  size_t off = 0;
  for (auto& t : c.tensors) {
    std::copy(payload.begin() + off, payload.begin() + off + t.data.size(),
              t.data.begin());
    off += t.data.size();
  }
  return c;
}

void check_compat(const Checkpoint& c, const std::string& expected_hash,
                  const std::string& expected_mode) {
  if (!expected_hash.empty() && c.config_hash != expected_hash)
    throw RuntimeFailure("checkpoint config hash " + c.config_hash +
                         " does not match the active config " + expected_hash);
  if (!expected_mode.empty() && c.mode != expected_mode)
    throw RuntimeFailure("checkpoint was trained in mode " + c.mode +
                         ", the active config expects " + expected_mode);
}

}  // namespace tdom::ckpt
