#pragma once

#include <exception>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace tba::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFile = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitInternal = 1;

int exit_code_for(const std::exception& e);

// Everything needed to re-run a command: the resolved options plus the
// fingerprints of the files it read and wrote. Written as run.json.
class RunRecord {
 public:
  RunRecord(std::string command, std::filesystem::path out_dir);

  nlohmann::json& config() { return config_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }
  std::filesystem::path output(const std::string& name) const { return out_dir_ / name; }

  void add_input(const std::string& role, const std::filesystem::path& path);
  // Registers a file written into the output directory.
  void add_output(const std::filesystem::path& path);
  void set(const std::string& key, nlohmann::json value) { results_[key] = std::move(value); }

  // Writes run.json. Keys are sorted and no timestamps are recorded, so two
  // identical runs produce identical bytes.
  void write() const;

 private:
  std::string command_;
  std::filesystem::path out_dir_;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json results_ = nlohmann::json::object();
  std::vector<std::pair<std::string, std::filesystem::path>> inputs_;
  std::vector<std::filesystem::path> outputs_;
};

std::string file_fingerprint(const std::filesystem::path& path);

}  // namespace tba::cli
