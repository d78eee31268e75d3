#include "dgail/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dgail {

using nlohmann::json;

static const char kMagic[] = "DGAILCKPT\n";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

static void append_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

static std::uint64_t read_u64(const std::string& s, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

std::string checkpoint_bytes(const ag::ParamStore& store) {
  json manifest;
  manifest["version"] = 1;
  manifest["arrays"] = json::array();
  for (const auto& [name, p] : store.params)
    manifest["arrays"].push_back(
        {{"name", name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  const std::string mtext = manifest.dump();

  std::string out;
  out += kMagic;
  append_u64(out, mtext.size());
  out += mtext;
  for (const auto& [name, p] : store.params) {
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        double v = p.value(r, c);
        char buf[8];
        std::memcpy(buf, &v, 8);
        out.append(buf, 8);
      }
  }
  return out;
}

void save_checkpoint(const ag::ParamStore& store, const std::string& path) {
  write_file(path, checkpoint_bytes(store));
}

ag::ParamStore load_checkpoint(const std::string& path) {
  const std::string data = read_file(path);
  const std::size_t magic_len = std::strlen(kMagic);
  if (data.size() < magic_len + 8 || data.compare(0, magic_len, kMagic) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const std::uint64_t mlen = read_u64(data, magic_len);
  const std::size_t mstart = magic_len + 8;
  if (data.size() < mstart + mlen) throw std::runtime_error("truncated checkpoint: " + path);
  const json manifest = json::parse(data.substr(mstart, mlen));
  if (manifest.at("version").get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported version");

  ag::ParamStore store;
  std::size_t at = mstart + mlen;
  for (const auto& arr : manifest.at("arrays")) {
    const std::string name = arr.at("name").get<std::string>();
    const Eigen::Index rows = arr.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = arr.at("cols").get<Eigen::Index>();
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (at + 8 > data.size()) throw std::runtime_error("truncated checkpoint: " + path);
        double v;
        std::memcpy(&v, data.data() + at, 8);
        m(r, c) = v;
        at += 8;
      }
    store.add(name, std::move(m));
  }
  return store;
}

std::string checkpoint_prefix_bytes(const std::string& path, const std::string& prefix) {
  return checkpoint_prefix_bytes(load_checkpoint(path), prefix);
}

std::string checkpoint_prefix_bytes(const ag::ParamStore& store, const std::string& prefix) {
  std::string out;
  for (const auto& [name, p] : store.params) {
    if (name.rfind(prefix, 0) != 0) continue;
    out += name;
    out.push_back('\0');
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        double v = p.value(r, c);
        char buf[8];
        std::memcpy(buf, &v, 8);
        out.append(buf, 8);
      }
  }
  return out;
}

}  // namespace dgail
