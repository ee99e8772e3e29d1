#include "demix/numerics/checkpoint.hpp"

#include "demix/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace demix {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'M', 'X', 'C', 'K', 'P', 'T', '\0'};

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  const char* raw(std::size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const nlohmann::json& header, const ParameterSet<float>& params) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointFormatVersion);
  const std::string h = header.dump();
  put<std::uint64_t>(out, h.size());
  out += h;
  put<std::uint64_t>(out, params.size());
  for (const auto& [name, tensor] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put<std::uint64_t>(out, d);
    put<std::uint8_t>(out, 4);
    out.append(reinterpret_cast<const char*>(tensor.ptr()), tensor.size() * sizeof(float));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw DataError("not a checkpoint file");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointFormatVersion) {
    throw DataError("unsupported checkpoint format version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto header_len = in.get<std::uint64_t>();
  try {
    ck.header = nlohmann::json::parse(in.take(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const auto n = in.get<std::uint64_t>();
  for (std::uint64_t r = 0; r < n; ++r) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name = in.take(name_len);
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint64_t>();
    const auto elem = in.get<std::uint8_t>();
    const std::size_t count = shape_size(shape);
    Tensor<float> t(shape);
    if (elem == 4) {
      std::memcpy(t.ptr(), in.raw(count * 4), count * 4);
    } else if (elem == 8) {
      const char* p = in.raw(count * 8);
      for (std::size_t i = 0; i < count; ++i) {
        double v;
        std::memcpy(&v, p + i * 8, 8);
        t[i] = static_cast<float>(v);
      }
    } else {
      throw DataError("parameter '" + name + "' has unsupported element width");
    }
    ck.parameters.add(std::move(name), std::move(t));
  }
  if (!in.done()) throw DataError("trailing bytes after checkpoint records");
  return ck;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write failed for '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                      const ParameterSet<float>& params) {
  write_file_atomic(path, serialize_checkpoint(header, params));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace demix
