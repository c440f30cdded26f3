#include "evtact/checkpoint.hpp"

#include <cstring>

#include <json.hpp>

#include "evtact/common.hpp"
#include "evtact/config.hpp"

using nlohmann::json;

namespace evt {

namespace {

constexpr char kMagic[] = "EVTA1\n";
constexpr size_t kMagicLen = 6;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Cursor {
 public:
  Cursor(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(read_le(4)); }
  std::uint64_t u64() { return read_le(8); }

  std::string str(size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void doubles(double* dst, size_t count) {
    need(count * 8);
    std::memcpy(dst, bytes_.data() + pos_, count * 8);
    pos_ += count * 8;
  }

  size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("checkpoint " + path_ + ": " + what,
                     static_cast<std::int64_t>(pos_));
  }

 private:
  void need(size_t n) {
    if (bytes_.size() - pos_ < n) fail("truncated archive");
  }

  std::uint64_t read_le(int n) {
    need(static_cast<size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += static_cast<size_t>(n);
    return v;
  }

  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

const Mat* Archive::find(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return &m;
  return nullptr;
}

void write_archive(const std::string& path, const Archive& a) {
  std::string out(kMagic, kMagicLen);
  put_u64(out, a.meta_json.size());
  out += a.meta_json;
  for (const auto& [name, m] : a.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    size_t off = out.size();
    out.resize(off + static_cast<size_t>(m.size()) * 8);
    std::memcpy(out.data() + off, m.data(), static_cast<size_t>(m.size()) * 8);
  }
  write_file(path, out);
}

Archive read_archive(const std::string& path) {
  std::string bytes = read_file(path);
  Cursor cur(bytes, path);
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0)
    cur.fail("bad magic, expected EVTA1");
  cur.str(kMagicLen);
  Archive a;
  std::uint64_t meta_len = cur.u64();
  a.meta_json = cur.str(meta_len);
  while (!cur.at_end()) {
    std::uint32_t name_len = cur.u32();
    if (name_len == 0 || name_len > 4096) cur.fail("implausible tensor name length");
    std::string name = cur.str(name_len);
    std::uint64_t rows = cur.u64();
    std::uint64_t cols = cur.u64();
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24))
      cur.fail("implausible shape for tensor " + name);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    cur.doubles(m.data(), static_cast<size_t>(rows * cols));
    a.tensors.emplace_back(std::move(name), std::move(m));
  }
  return a;
}

void save_model(const std::string& path, const ModelConfig& cfg,
                const ModelParams& params) {
  Archive a;
  json meta;
  meta["kind"] = "model";
  meta["model"] = model_config_to_json(cfg);
  a.meta_json = meta.dump();
  visit_params(const_cast<ModelParams&>(params),
               [&](const std::string& name, Mat& m) {
                 a.tensors.emplace_back(name, m);
               });
  write_archive(path, a);
}

void load_model(const std::string& path, ModelConfig& cfg, ModelParams& params) {
  Archive a = read_archive(path);
  json meta;
  try {
    meta = json::parse(a.meta_json);
  } catch (const json::parse_error& e) {
    throw ParseError("checkpoint " + path + ": meta is not JSON: " + e.what());
  }
  if (!meta.contains("model"))
    throw ParseError("checkpoint " + path + ": meta lacks a model config");
  cfg = model_config_from_json(meta["model"], "model");
  cfg.validate();
  params = init_params(cfg, 0);
  size_t used = 0;
  visit_params(params, [&](const std::string& name, Mat& m) {
    const Mat* stored = a.find(name);
    if (!stored)
      throw ParseError("checkpoint " + path + ": missing tensor " + name);
    if (stored->rows() != m.rows() || stored->cols() != m.cols())
      throw ParseError("checkpoint " + path + ": tensor " + name + " is " +
                       std::to_string(stored->rows()) + "x" +
                       std::to_string(stored->cols()) + ", expected " +
                       std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    m = *stored;
    ++used;
  });
  if (used != a.tensors.size())
    throw ParseError("checkpoint " + path + ": archive holds " +
                     std::to_string(a.tensors.size()) + " tensors, model expects " +
                     std::to_string(used));
}

}  // namespace evt
