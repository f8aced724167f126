#include "knowcl/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace knowcl::io {

namespace {

template <class T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

template <class T>
T decode_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(p[i]) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

}  // namespace

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  write_text(path, doc.dump(2) + "\n");
}

void append_f32le(std::vector<std::uint8_t>& out, std::span<const float> values) {
  out.reserve(out.size() + values.size() * 4);
  for (float v : values) append_le(out, v);
}

void append_i32le(std::vector<std::uint8_t>& out, std::span<const std::int32_t> values) {
  out.reserve(out.size() + values.size() * 4);
  for (std::int32_t v : values) append_le(out, v);
}

void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t value) { append_le(out, value); }
void append_u64le(std::vector<std::uint8_t>& out, std::uint64_t value) { append_le(out, value); }

std::vector<float> decode_f32le(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0) {
    throw std::invalid_argument("f32 block length is not a multiple of 4");
  }
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = decode_le<float>(bytes.data() + 4 * i);
  return out;
}

std::vector<std::int32_t> decode_i32le(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0) {
    throw std::invalid_argument("i32 block length is not a multiple of 4");
  }
  std::vector<std::int32_t> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = decode_le<std::int32_t>(bytes.data() + 4 * i);
  }
  return out;
}

std::uint32_t decode_u32le(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw std::invalid_argument("truncated u32");
  return decode_le<std::uint32_t>(bytes.data());
}

std::uint64_t decode_u64le(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw std::invalid_argument("truncated u64");
  return decode_le<std::uint64_t>(bytes.data());
}

const nlohmann::json& require(const nlohmann::json& obj, const std::string& key,
                              const std::string& context) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw std::invalid_argument(context + ": missing key \"" + key + "\"");
  }
  return obj.at(key);
}

}  // namespace knowcl::io
