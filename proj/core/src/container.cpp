#include "tba/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "tba/error.hpp"

namespace tba {

namespace {

constexpr std::size_t kPreamble = 16;

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void append_f32_le(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  std::uint8_t* dst = out.data() + start;
  for (float f : values) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    dst[0] = static_cast<std::uint8_t>(bits);
    dst[1] = static_cast<std::uint8_t>(bits >> 8);
    dst[2] = static_cast<std::uint8_t>(bits >> 16);
    dst[3] = static_cast<std::uint8_t>(bits >> 24);
    dst += 4;
  }
}

void read_f32_le(const std::uint8_t* src, std::span<float> out) {
  for (auto& f : out) {
    const std::uint32_t bits = static_cast<std::uint32_t>(src[0]) |
                               (static_cast<std::uint32_t>(src[1]) << 8) |
                               (static_cast<std::uint32_t>(src[2]) << 16) |
                               (static_cast<std::uint32_t>(src[3]) << 24);
    f = std::bit_cast<float>(bits);
    src += 4;
  }
}

struct Entry {
  std::string name;
  std::string dtype;
  Shape shape;
  std::uint64_t offset;
  std::uint64_t nbytes;
};

Entry parse_entry(const std::string& name, const nlohmann::json& j, const std::string& source) {
  auto fail = [&](const std::string& why) {
    return HeaderError(source + ": entry '" + name + "': " + why);
  };
  if (!j.is_object()) throw fail("index entry is not an object");
  for (const char* key : {"dtype", "shape", "offset", "nbytes"}) {
    if (!j.contains(key)) throw fail(std::string("missing field '") + key + "'");
  }
  Entry e;
  e.name = name;
  if (!j["dtype"].is_string()) throw fail("dtype is not a string");
  e.dtype = j["dtype"].get<std::string>();
  if (!j["shape"].is_array()) throw fail("shape is not an array");
  for (const auto& d : j["shape"]) {
    if (!d.is_number_unsigned() && !(d.is_number_integer() && d.get<long long>() >= 0)) {
      throw fail("shape entries must be non-negative integers");
    }
    e.shape.push_back(d.get<std::size_t>());
  }
  for (const char* key : {"offset", "nbytes"}) {
    const auto& v = j[key];
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw fail(std::string(key) + " must be a non-negative integer");
    }
  }
  e.offset = j["offset"].get<std::uint64_t>();
  e.nbytes = j["nbytes"].get<std::uint64_t>();
  const bool reserved = is_reserved_name(name);
  if (reserved) {
    if (e.dtype != "u8") throw fail("reserved document must have dtype u8");
    if (e.shape.size() != 1 || e.shape[0] != e.nbytes) throw fail("document shape must be [nbytes]");
  } else {
    if (e.dtype != "f32") throw fail("unsupported dtype '" + e.dtype + "' (v1 supports f32)");
    if (shape_numel(e.shape) * 4 != e.nbytes) throw fail("nbytes does not match shape");
  }
  return e;
}

}  // namespace

bool is_reserved_name(const std::string& name) { return name.rfind("__", 0) == 0; }

const Tensor& Container::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw MissingWeightError(name);
  return it->second;
}

const nlohmann::json& Container::document(const std::string& name) const {
  auto it = documents.find(name);
  if (it == documents.end()) throw MissingWeightError(name);
  return it->second;
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  nlohmann::json index = nlohmann::json::object();
  std::vector<std::uint8_t> payload;
  // Payload order is the sorted name order, so the bytes are a pure function
  // of the contents.
  std::map<std::string, std::string> docs;
  for (const auto& [name, doc] : c.documents) {
    if (!is_reserved_name(name)) {
      throw ArgumentError("document name '" + name + "' must start with \"__\"");
    }
    docs[name] = doc.dump();
  }
  std::vector<std::string> names;
  for (const auto& [name, _] : docs) names.push_back(name);
  for (const auto& [name, _] : c.tensors) {
    if (is_reserved_name(name)) throw ArgumentError("tensor name '" + name + "' is reserved");
    names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    const std::uint64_t offset = payload.size();
    if (auto it = docs.find(name); it != docs.end()) {
      payload.insert(payload.end(), it->second.begin(), it->second.end());
      index[name] = {{"dtype", "u8"},
                     {"shape", {it->second.size()}},
                     {"offset", offset},
                     {"nbytes", it->second.size()}};
    } else {
      const Tensor& t = c.tensors.at(name);
      append_f32_le(payload, t.values());
      index[name] = {{"dtype", "f32"},
                     {"shape", t.shape()},
                     {"offset", offset},
                     {"nbytes", static_cast<std::uint64_t>(t.numel()) * 4}};
    }
  }
  const std::string header = index.dump();
  std::vector<std::uint8_t> out(std::begin(kContainerMagic), std::end(kContainerMagic));
  out.reserve(kPreamble + header.size() + payload.size());
  put_u64_le(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() < kPreamble) {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
      throw BadMagicError(source + ": not a tensor container (bad magic)");
    }
    throw TruncatedError(source + ": file shorter than the 16-byte preamble");
  }
  if (std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
    throw BadMagicError(source + ": not a tensor container (bad magic)");
  }
  const std::uint64_t header_len = get_u64_le(bytes.data() + 8);
  if (header_len > bytes.size() - kPreamble) {
    throw TruncatedError(source + ": header length " + std::to_string(header_len) +
                         " exceeds file size");
  }
  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + kPreamble);
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(header_begin, header_begin + header_len);
  } catch (const nlohmann::json::parse_error& e) {
    throw HeaderError(source + ": header is not valid JSON: " + e.what());
  }
  if (!index.is_object()) throw HeaderError(source + ": header must be a JSON object");

  const std::uint64_t payload_start = kPreamble + header_len;
  const std::uint64_t payload_size = bytes.size() - payload_start;
  std::vector<Entry> entries;
  for (auto it = index.begin(); it != index.end(); ++it) {
    entries.push_back(parse_entry(it.key(), it.value(), source));
  }
  for (const auto& e : entries) {
    if (e.offset > payload_size || e.nbytes > payload_size - e.offset) {
      throw TruncatedError(source + ": payload of '" + e.name + "' runs past end of file");
    }
  }
  std::vector<const Entry*> by_offset;
  for (const auto& e : entries)
    if (e.nbytes > 0) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(),
            [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    const Entry& prev = *by_offset[i - 1];
    if (prev.offset + prev.nbytes > by_offset[i]->offset) {
      throw OverlapError(source + ": entries '" + prev.name + "' and '" + by_offset[i]->name +
                         "' overlap");
    }
  }

  Container c;
  const std::uint8_t* payload = bytes.data() + payload_start;
  for (const auto& e : entries) {
    if (is_reserved_name(e.name)) {
      const auto* p = reinterpret_cast<const char*>(payload + e.offset);
      try {
        c.documents[e.name] = nlohmann::json::parse(p, p + e.nbytes);
      } catch (const nlohmann::json::parse_error& err) {
        throw HeaderError(source + ": document '" + e.name + "' is not valid JSON: " + err.what());
      }
    } else {
      Tensor t(e.shape);
      read_f32_le(payload + e.offset, t.values());
      c.tensors.emplace(e.name, std::move(t));
    }
  }
  return c;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error while reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

void save_container(const Container& c, const std::filesystem::path& path) {
  write_file(path, encode_container(c));
}

Container load_container(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_container(bytes, path.string());
}

std::string fingerprint(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string fingerprint(const Container& c) { return fingerprint(encode_container(c)); }

}  // namespace tba
