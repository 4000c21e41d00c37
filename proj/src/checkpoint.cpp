#include "selrank/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace selrank {

namespace {

constexpr const char* kMagic = "SELRANK-CKPT-1";

void write_f32_le(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  const unsigned char bytes[4] = {
      static_cast<unsigned char>(bits & 0xff),
      static_cast<unsigned char>((bits >> 8) & 0xff),
      static_cast<unsigned char>((bits >> 16) & 0xff),
      static_cast<unsigned char>((bits >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

float read_f32_le(std::istream& is) {
  unsigned char bytes[4];
  is.read(reinterpret_cast<char*>(bytes), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated payload");
  const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                             (static_cast<std::uint32_t>(bytes[1]) << 8) |
                             (static_cast<std::uint32_t>(bytes[2]) << 16) |
                             (static_cast<std::uint32_t>(bytes[3]) << 24);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& params,
                     const std::map<std::string, std::string>& config) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os << kMagic << "\n";
  for (const auto& [key, value] : config) os << "cfg " << key << " " << value << "\n";
  std::int64_t offset = 0;
  for (const auto& [name, t] : params) {
    os << "param " << name << " " << t.rank() << " " << t.rows() << " "
       << t.cols() << " " << offset << "\n";
    offset += t.size();
  }
  os << "end\n";
  for (const auto& [name, t] : params) {
    const Mat& v = t.value();
    for (Index r = 0; r < v.rows(); ++r)
      for (Index c = 0; c < v.cols(); ++c)
        write_f32_le(os, static_cast<float>(v(r, c)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

std::map<std::string, std::string> load_checkpoint(const std::string& path,
                                                   ParameterStore& out) {
  if (out.size() != 0)
    throw std::invalid_argument("checkpoint: target store is not empty");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::string line;
  if (!std::getline(is, line) || line != kMagic)
    throw std::runtime_error("checkpoint: bad magic in " + path);

  std::map<std::string, std::string> config;
  struct Entry {
    std::string name;
    int rank;
    Index rows, cols;
    std::int64_t offset;
  };
  std::vector<Entry> entries;
  while (std::getline(is, line)) {
    if (line == "end") break;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "cfg") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      config[key] = value;
    } else if (tag == "param") {
      Entry e;
      ls >> e.name >> e.rank >> e.rows >> e.cols >> e.offset;
      if (!ls) throw std::runtime_error("checkpoint: malformed param line: " + line);
      entries.push_back(std::move(e));
    } else {
      throw std::runtime_error("checkpoint: unknown header line: " + line);
    }
  }

  std::int64_t expected = 0;
  for (const auto& e : entries) {
    if (e.offset != expected)
      throw std::runtime_error("checkpoint: non-contiguous offset for " + e.name);
    expected += e.rows * e.cols;
  }
  for (const auto& e : entries) {
    Mat m(e.rows, e.cols);
    for (Index r = 0; r < e.rows; ++r)
      for (Index c = 0; c < e.cols; ++c)
        m(r, c) = static_cast<double>(read_f32_le(is));
    out.put(e.name, Tensor::leaf(std::move(m), e.rank));
  }
  return config;
}

}  // namespace selrank
