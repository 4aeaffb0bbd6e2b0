#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tba/tensor.hpp"

namespace tba {

// Named-tensor file, version 1:
//   bytes 0..7    magic "NTCv1\0\0\0"
//   bytes 8..15   header length L, unsigned 64-bit little-endian
//   bytes 16..16+L  UTF-8 JSON object: name -> {"dtype","shape","offset","nbytes"}
//   payload       starts at 16+L; offsets are relative to it
// Tensors are dtype "f32", row-major little-endian. Names beginning with "__"
// (e.g. "__config__", "__meta__") hold JSON documents stored as UTF-8 bytes
// with dtype "u8".
struct Container {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, nlohmann::json> documents;

  bool has(const std::string& name) const { return tensors.contains(name); }
  // Throws MissingWeightError naming the key.
  const Tensor& tensor(const std::string& name) const;
  const nlohmann::json& document(const std::string& name) const;
};

inline constexpr char kContainerMagic[8] = {'N', 'T', 'C', 'v', '1', '\0', '\0', '\0'};

bool is_reserved_name(const std::string& name);

std::vector<std::uint8_t> encode_container(const Container& c);
// `source` is used in error messages only.
Container decode_container(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");

void save_container(const Container& c, const std::filesystem::path& path);
Container load_container(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fingerprint(std::span<const std::uint8_t> bytes);
std::string fingerprint(const Container& c);

}  // namespace tba
