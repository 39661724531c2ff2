#include "rdl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <unordered_set>

#include "rdl/errors.hpp"
#include "rdl/io.hpp"

namespace rdl::tg {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'L', 'B'};

template <typename U>
void put_le(std::string &out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
void put_elements(std::string &out, const Tensor<T> &t) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  out.reserve(out.size() + t.numel() * sizeof(T));
  for (T v : t.values()) put_le(out, std::bit_cast<Bits>(v));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char *what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char *what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char *what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("ckpt/1 truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
Tensor<T> get_elements(Reader &r, Shape shape) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<T> data(shape_numel(shape));
  for (auto &v : data) v = std::bit_cast<T>(r.get<Bits>("tensor data"));
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

const CheckpointEntry *Checkpoint::find(std::string_view name) const {
  for (const auto &e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint &ckpt) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  std::unordered_set<std::string> seen;
  for (const auto &e : ckpt.entries) {
    if (!seen.insert(e.name).second) throw FormatError("duplicate checkpoint entry '" + e.name + "'");
    if (e.name.size() > 0xFFFF) throw FormatError("checkpoint entry name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    std::visit(
        [&](const auto &t) {
          using T = typename std::decay_t<decltype(t)>::value_type;
          out.push_back(static_cast<char>(std::is_same_v<T, float> ? 0 : 1));
          if (t.rank() > 255) throw FormatError("tensor rank above 255");
          out.push_back(static_cast<char>(t.rank()));
          for (int d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
          put_elements(out, t);
        },
        e.tensor);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) throw FormatError("not a ckpt/1 file: bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + ", expected ckpt/1");
  }
  const auto count = r.get<std::uint32_t>("entry count");
  Checkpoint ckpt;
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(r.take(len, "name"));
    if (!seen.insert(name).second) throw FormatError("duplicate checkpoint entry '" + name + "'");
    const auto dtype = r.get<std::uint8_t>("dtype");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto &d : shape) d = static_cast<int>(r.get<std::uint32_t>("dims"));
    if (dtype == 0) {
      ckpt.entries.push_back({std::move(name), get_elements<float>(r, std::move(shape))});
    } else if (dtype == 1) {
      ckpt.entries.push_back({std::move(name), get_elements<double>(r, std::move(shape))});
    } else {
      throw FormatError("unknown dtype tag " + std::to_string(dtype) + " for '" + name + "'");
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint at byte " + std::to_string(r.pos()));
  return ckpt;
}

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt) {
  io::write_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace rdl::tg
